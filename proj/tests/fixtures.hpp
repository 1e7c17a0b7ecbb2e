#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "psgrank/corpus.hpp"
#include "psgrank/features.hpp"
#include "psgrank/index.hpp"
#include "psgrank/passage.hpp"
#include "psgrank/synthetic.hpp"

namespace psgrank::testing {

/// Relative closeness with a tiny absolute floor for values that should be 0.
inline bool close(double a, double b, double rel = 1e-9) {
    return std::fabs(a - b) <= rel * std::max(std::fabs(a), std::fabs(b)) + 1e-14;
}

/// Small deterministic corpus with query terms, stopwords, sentence breaks
/// and repeated bigrams, plus hand-made semantic resources.
struct Fixture {
    std::shared_ptr<const Analyzer> analyzer;
    std::shared_ptr<const CorpusStore> store;
    std::shared_ptr<const PositionalIndex> index;
    std::shared_ptr<const PassageCatalog> catalog;
    std::vector<Query> queries;
    SemanticResources resources;
    std::size_t window = 0;
};

inline std::string fixture_text(Rng& rng, std::size_t len) {
    static const std::vector<std::string> words = {
        "river",  "bank",   "money", "loan",  "water", "fish",  "stone", "bridge", "market", "trade",
        "forest", "tree",   "leaf",  "green", "storm", "cloud", "rain",  "light",  "road",   "city",
        "the",    "of",     "and",   "to",    "in",    "is",    "a",     "with"};
    std::string text;
    for (std::size_t i = 0; i < len; ++i) {
        if (i > 0) {
            text += rng.below(9) == 0 ? ". " : " ";
        }
        // Plant a recurring bigram so ordered/unordered SDM counts are non-trivial.
        if (rng.below(7) == 0) {
            text += "river bank";
            ++i;
            continue;
        }
        text += words[rng.below(words.size())];
    }
    return text + ".";
}

inline Fixture make_fixture(std::size_t docs = 40, std::size_t window = 20, bool esa = true,
                            std::uint64_t seed = 11) {
    Fixture f;
    f.window = window;
    f.analyzer = std::make_shared<const Analyzer>();
    Rng rng(seed);
    std::ostringstream jsonl;
    for (std::size_t d = 0; d < docs; ++d) {
        nlohmann::json rec;
        rec["id"] = "doc" + std::to_string(100 + d);
        rec["text"] = d == 0 ? "" : fixture_text(rng, 5 + rng.below(60));
        jsonl << rec.dump() << '\n';
    }
    std::istringstream in(jsonl.str());
    auto ingest = ingest_jsonl_stream(in, f.analyzer);
    f.store = std::make_shared<const CorpusStore>(std::move(ingest.store));
    f.index = build_index(f.store);
    f.catalog = std::make_shared<const PassageCatalog>(f.store, SegmentationParams{SegmentationParams::Mode::window, window});
    const std::vector<std::pair<std::string, std::string>> topics = {
        {"q1", "river bank"},
        {"q2", "money loan trade"},
        {"q3", "storm the rain rain"},
        {"q4", "green forest zzzunknown"},
        {"q5", "bridge"}};
    for (const auto& [id, text] : topics) {
        f.queries.push_back(make_query(*f.analyzer, id, text));
    }
    const auto stem = [&](const std::string& w) { return analyze_term(*f.analyzer, w); };
    f.resources.embeddings = {{stem("river"), {1.0, 0.0, 0.5}}, {stem("bank"), {0.8, 0.2, 0.1}},
                              {stem("money"), {0.0, 1.0, 0.3}}, {stem("water"), {0.9, -0.1, 0.4}},
                              {stem("storm"), {0.1, 0.1, 1.0}}, {stem("rain"), {0.2, 0.0, 0.9}},
                              {stem("tree"), {-0.5, 0.4, 0.2}}};
    f.resources.embedding_dim = 3;
    f.resources.has_embeddings = true;
    f.resources.synonyms = {{stem("river"), {stem("water")}}, {stem("loan"), {stem("money"), stem("trade")}},
                            {stem("storm"), {stem("cloud")}}};
    f.resources.has_synonyms = true;
    f.resources.entities = {{"q1", {"E:river", "E:bank"}}, {"q2", {"E:money"}}, {"q3", {}},
                            {"doc101#0", {"E:river"}}, {"doc102#0", {"E:river", "E:bank", "E:x"}},
                            {"doc103#1", {"E:money"}}};
    f.resources.has_entities = true;
    if (esa) {
        f.resources.esa = std::make_shared<const EsaSpace>(f.index);
    }
    return f;
}

/// Small synthetic collection for experiment-level tests.
inline SyntheticParams small_synthetic(std::uint64_t seed = 3) {
    SyntheticParams p;
    p.seed = seed;
    p.documents = 90;
    p.queries = 5;
    p.relevant_per_query = 4;
    p.distractors_per_query = 4;
    p.window = 40;
    p.vocabulary = 600;
    return p;
}

/// Config with small grids for a dataset written by write_dataset; paths are
/// relative to the dataset directory.
inline nlohmann::ordered_json dataset_config(const SyntheticParams& p) {
    nlohmann::ordered_json cfg = {
        {"corpus", "corpus.jsonl"},
        {"topics", "topics.tsv"},
        {"doc_qrels", "qrels.txt"},
        {"passage_qrels", "passage_qrels.tsv"},
        {"resources", {{"embeddings", "embeddings.txt"}, {"synonyms", "synonyms.txt"}, {"entities", "entities.tsv"}, {"esa", false}}},
        {"segmentation", {{"mode", "window"}, {"window_len", p.window}}},
        {"methods", {"LM", "RRF", "JPDs"}},
        {"seed", 5},
        {"grids",
         {{"mu", {1000.0}},
          {"svm_c", {0.1}},
          {"alpha", {0.0, 0.5, 1.0}},
          {"nu", {0.0, 60.0}},
          {"qsf_lambda", {0.2, 0.8}},
          {"docpsg_lambda", {0.3, 0.7}},
          {"sdm_weight", {0.0, 0.2, 0.8, 1.0}},
          {"plm_sigma", {50.0}},
          {"plm_lambda", {0.4}},
          {"plm_beta", {0.4}}}},
        {"training", {{"epochs", 10}}}};
    return cfg;
}

inline nlohmann::ordered_json write_dataset(const std::filesystem::path& dir, const SyntheticParams& p) {
    std::filesystem::remove_all(dir);
    write_synthetic(generate_synthetic(p), dir);
    return dataset_config(p);
}

}  // namespace psgrank::testing
