#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "psgrank/common.hpp"
#include "psgrank/ltr.hpp"
#include "psgrank/passage.hpp"

namespace psgrank {

using Json = nlohmann::ordered_json;

inline const std::vector<std::string>& document_methods() {
    static const std::vector<std::string> m = {"LM",          "SDM",        "DocPsg",      "init-LTR",
                                               "RRF",         "SMPD",       "JPDs",        "JPDs-second",
                                               "JPDs-third",  "JPDs-lowest", "JPD-2",      "JPDm-avg",
                                               "JPDm-max",    "JPDm-min",   "FPD"};
    return m;
}

inline const std::vector<std::string>& passage_methods() {
    static const std::vector<std::string> m = {"QSF", "PLM", "PsgLTR"};
    return m;
}

inline bool is_document_method(const std::string& m) {
    const auto& d = document_methods();
    return std::find(d.begin(), d.end(), m) != d.end();
}

inline bool is_passage_method(const std::string& m) {
    const auto& p = passage_methods();
    return std::find(p.begin(), p.end(), m) != p.end();
}

/// Methods that learn a ranking function.
inline bool is_learned_method(const std::string& m) {
    return m == "init-LTR" || m == "SMPD" || m.rfind("JPD", 0) == 0 || m == "FPD" || m == "PsgLTR";
}

/// Methods that consume the passage ranking G(C_LTR).
inline bool uses_passage_ranking(const std::string& m) {
    return m == "RRF" || m == "SMPD" || m.rfind("JPDs", 0) == 0 || m == "JPD-2" || m == "FPD";
}

/// Methods that need the learned document list C_LTR.
inline bool uses_doc_ranker(const std::string& m) {
    return m == "init-LTR" || m == "RRF" || m == "SMPD" || m.rfind("JPD", 0) == 0 || m == "FPD";
}

struct Grids {
    double mu_init = 1000.0;
    std::vector<double> mu = {500.0, 1500.0, 2500.0};
    std::vector<double> svm_c = {0.0001, 0.01, 0.1};
    std::vector<double> alpha = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
    std::vector<double> nu = {0.0, 30.0, 60.0, 90.0, 100.0};
    std::vector<double> qsf_lambda = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
    std::vector<double> docpsg_lambda = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
    /// Values each SDM weight may take; only triples summing to 1 are used.
    std::vector<double> sdm_weight = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
    std::vector<double> plm_sigma = {50.0, 100.0, 150.0, 200.0, 250.0, 300.0};
    std::vector<double> plm_lambda = {0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
    std::vector<double> plm_beta = {0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
};

struct TrainingParams {
    std::size_t epochs = 30;
    std::size_t max_pairs = 1'000'000;
    std::size_t restarts = 3;
    std::size_t max_passes = 25;
};

struct ExperimentConfig {
    std::filesystem::path base_dir;
    std::string corpus;
    std::string corpus_format = "jsonl";
    std::string topics;
    std::string doc_qrels;
    std::string passage_qrels;
    std::string stopwords;  // empty = bundled list
    std::string stemmer = "light-en-v1";
    std::string embeddings;
    std::string synonyms;
    std::string entities;
    bool esa = true;
    SegmentationParams segmentation;
    std::vector<std::string> methods = {"LM", "RRF", "JPDs"};
    std::string trainer = "pairwise_hinge";
    std::string passage_ranker = "ltr";
    bool include_query_length = false;
    std::vector<std::string> exclude_features;
    std::uint64_t seed = 1;
    std::size_t workers = 1;
    std::size_t doc_cutoff = 1000;
    std::size_t passage_cutoff = 1500;
    double validation_fraction = 0.2;
    Grids grids;
    TrainingParams training;
    std::string significance_baseline = "LM";
    std::string passage_baseline = "QSF";
    double significance_alpha = 0.05;
    std::size_t corrections = 0;  // 0 = number of comparisons
    std::string output = "run";

    [[nodiscard]] std::filesystem::path resolve(const std::string& p) const {
        if (p.empty()) {
            return {};
        }
        std::filesystem::path path(p);
        return path.is_absolute() ? path : base_dir / path;
    }

    [[nodiscard]] Json to_json() const {
        Json j;
        j["corpus"] = corpus;
        j["corpus_format"] = corpus_format;
        j["topics"] = topics;
        j["doc_qrels"] = doc_qrels;
        j["passage_qrels"] = passage_qrels;
        j["stopwords"] = stopwords;
        j["stemmer"] = stemmer;
        j["resources"] = {{"embeddings", embeddings}, {"synonyms", synonyms}, {"entities", entities},
                          {"esa", esa}};
        j["segmentation"] = {
            {"mode", segmentation.mode == SegmentationParams::Mode::window ? "window" : "sentence"},
            {"window_len", segmentation.window_len}};
        j["methods"] = methods;
        j["trainer"] = trainer;
        j["passage_ranker"] = passage_ranker;
        j["include_query_length"] = include_query_length;
        j["exclude_features"] = exclude_features;
        j["seed"] = seed;
        j["workers"] = workers;
        j["cutoffs"] = {{"docs", doc_cutoff}, {"passages", passage_cutoff}};
        j["validation_fraction"] = validation_fraction;
        j["grids"] = {{"mu_init", grids.mu_init},       {"mu", grids.mu},
                      {"svm_c", grids.svm_c},           {"alpha", grids.alpha},
                      {"nu", grids.nu},                 {"qsf_lambda", grids.qsf_lambda},
                      {"docpsg_lambda", grids.docpsg_lambda}, {"sdm_weight", grids.sdm_weight},
                      {"plm_sigma", grids.plm_sigma},   {"plm_lambda", grids.plm_lambda},
                      {"plm_beta", grids.plm_beta}};
        j["training"] = {{"epochs", training.epochs},
                         {"max_pairs", training.max_pairs},
                         {"restarts", training.restarts},
                         {"max_passes", training.max_passes}};
        j["significance"] = {{"baseline", significance_baseline},
                             {"passage_baseline", passage_baseline},
                             {"alpha", significance_alpha},
                             {"corrections", corrections}};
        j["output"] = output;
        return j;
    }

    /// Every problem with the configuration, empty when valid. File
    /// existence is checked here so that nothing runs on a broken config.
    [[nodiscard]] std::vector<std::string> problems() const {
        std::vector<std::string> out;
        const auto need_file = [&](const std::string& key, const std::string& value, bool required) {
            if (value.empty()) {
                if (required) {
                    out.push_back(key + ": required path is missing");
                }
                return;
            }
            if (!std::filesystem::exists(resolve(value))) {
                out.push_back(key + ": file not found: " + resolve(value).string());
            }
        };
        need_file("corpus", corpus, true);
        need_file("topics", topics, true);
        need_file("doc_qrels", doc_qrels, false);
        need_file("passage_qrels", passage_qrels, false);
        need_file("stopwords", stopwords, false);
        need_file("resources.embeddings", embeddings, false);
        need_file("resources.synonyms", synonyms, false);
        need_file("resources.entities", entities, false);
        if (doc_qrels.empty() && passage_qrels.empty()) {
            out.emplace_back("doc_qrels/passage_qrels: at least one judgment file is required");
        }
        if (corpus_format != "jsonl" && corpus_format != "trecweb") {
            out.push_back("corpus_format: '" + corpus_format + "' is not one of jsonl, trecweb");
        }
        if (stemmer != "light-en-v1" && stemmer != "light" && stemmer != "identity" && stemmer != "none") {
            out.push_back("stemmer: '" + stemmer + "' is not one of light-en-v1, identity");
        }
        if (segmentation.mode == SegmentationParams::Mode::window && segmentation.window_len == 0) {
            out.emplace_back("segmentation.window_len: must be >= 1");
        }
        if (methods.empty()) {
            out.emplace_back("methods: at least one method is required");
        }
        std::string allowed;
        for (const auto& m : document_methods()) {
            allowed += m + ", ";
        }
        for (const auto& m : passage_methods()) {
            allowed += m + ", ";
        }
        allowed.resize(allowed.size() - 2);
        std::set<std::string> seen;
        bool learned = false;
        bool passage_needed = false;
        for (const auto& m : methods) {
            if (!is_document_method(m) && !is_passage_method(m)) {
                out.push_back("methods: unknown method '" + m + "' (allowed: " + allowed + ")");
                continue;
            }
            if (!seen.insert(m).second) {
                out.push_back("methods: '" + m + "' listed twice");
            }
            learned = learned || is_learned_method(m) ||
                      (uses_passage_ranking(m) && passage_ranker == "ltr") || uses_doc_ranker(m);
            passage_needed = passage_needed || is_passage_method(m) || uses_passage_ranking(m);
        }
        if (trainer != "pairwise_hinge" && trainer != "coordinate_ascent") {
            out.push_back("trainer: '" + trainer + "' is not one of pairwise_hinge, coordinate_ascent");
        }
        if (passage_ranker != "ltr" && passage_ranker != "qsf") {
            out.push_back("passage_ranker: '" + passage_ranker + "' is not one of ltr, qsf");
        }
        if (passage_needed && passage_qrels.empty() &&
            (passage_ranker == "ltr" || seen.count("QSF") || seen.count("PLM") || seen.count("PsgLTR"))) {
            out.emplace_back("passage_qrels: required by the configured passage methods");
        }
        if (doc_cutoff == 0) {
            out.emplace_back("cutoffs.docs: must be >= 1");
        }
        if (passage_cutoff == 0) {
            out.emplace_back("cutoffs.passages: must be >= 1");
        }
        if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
            out.emplace_back("validation_fraction: must be in (0,1)");
        }
        if (workers == 0) {
            out.emplace_back("workers: must be >= 1");
        }
        if (!(grids.mu_init > 0.0)) {
            out.emplace_back("grids.mu_init: must be positive");
        }
        const auto grid = [&](const std::string& name, const std::vector<double>& g, bool used, double lo,
                              double hi) {
            if (!used) {
                return;
            }
            if (g.empty()) {
                out.push_back("grids." + name + ": must be non-empty");
            }
            for (double v : g) {
                if (!(v >= lo && v <= hi)) {
                    out.push_back("grids." + name + ": value " + format_double(v) + " outside [" +
                                  format_double(lo) + ", " + format_double(hi) + "]");
                }
            }
        };
        const auto has = [&](const std::string& m) { return seen.count(m) > 0; };
        const bool has_rr = has("RRF") || has("SMPD") || has("FPD");
        constexpr double kBig = 1e12;
        grid("mu", grids.mu, learned || has("SDM") || has("DocPsg") || passage_needed, 1e-9, kBig);
        grid("svm_c", grids.svm_c, learned && trainer == "pairwise_hinge", 1e-12, kBig);
        grid("alpha", grids.alpha, has("RRF") || has("FPD"), 0.0, 1.0);
        grid("nu", grids.nu, has_rr, 0.0, kBig);
        grid("qsf_lambda", grids.qsf_lambda, passage_needed, 0.0, 1.0);
        grid("docpsg_lambda", grids.docpsg_lambda, has("DocPsg"), 0.0, 1.0);
        grid("sdm_weight", grids.sdm_weight, has("SDM"), 0.0, 1.0);
        grid("plm_sigma", grids.plm_sigma, has("PLM"), 1e-9, kBig);
        grid("plm_lambda", grids.plm_lambda, has("PLM"), 0.0, 1.0);
        grid("plm_beta", grids.plm_beta, has("PLM"), 0.0, 1.0);
        if (learned && trainer == "coordinate_ascent" && training.max_passes == 0 && training.restarts == 0) {
            out.emplace_back("training: coordinate ascent needs restarts >= 1");
        }
        if (learned && trainer == "pairwise_hinge" && training.epochs == 0) {
            out.emplace_back("training.epochs: must be >= 1");
        }
        if (!(significance_alpha > 0.0 && significance_alpha < 1.0)) {
            out.emplace_back("significance.alpha: must be in (0,1)");
        }
        if (!exclude_features.empty() &&
            std::none_of(methods.begin(), methods.end(), [](const std::string& m) { return is_learned_method(m); })) {
            out.emplace_back("exclude_features: requires a learned method");
        }
        return out;
    }

    void validate() const {
        const auto p = problems();
        if (!p.empty()) {
            std::string msg = "invalid configuration (" + std::to_string(p.size()) + " problem" +
                              (p.size() == 1 ? "" : "s") + "):";
            for (const auto& s : p) {
                msg += "\n  - " + s;
            }
            throw ValidationError(msg);
        }
    }
};

namespace detail {

template <typename T>
void read_field(const Json& j, const char* key, T& out, const std::string& path, std::vector<std::string>& errors) {
    if (!j.contains(key)) {
        return;
    }
    try {
        out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        errors.push_back(path + key + ": wrong type");
    }
}

}  // namespace detail

/// Builds a config from JSON. Unknown keys and type errors are reported
/// together with the semantic problems.
inline ExperimentConfig config_from_json(const Json& j, const std::filesystem::path& base_dir) {
    ExperimentConfig c;
    c.base_dir = base_dir;
    std::vector<std::string> errors;
    static const std::set<std::string> kTop = {
        "corpus",  "corpus_format", "topics",  "doc_qrels",   "passage_qrels", "stopwords",
        "stemmer", "resources",     "segmentation", "methods", "trainer",      "passage_ranker",
        "include_query_length", "exclude_features", "seed", "workers", "cutoffs", "validation_fraction",
        "grids",   "training",      "significance", "output"};
    if (!j.is_object()) {
        throw ValidationError("configuration must be a JSON object");
    }
    for (const auto& [k, _] : j.items()) {
        if (kTop.count(k) == 0) {
            errors.push_back(k + ": unknown key");
        }
    }
    using detail::read_field;
    read_field(j, "corpus", c.corpus, "", errors);
    read_field(j, "corpus_format", c.corpus_format, "", errors);
    read_field(j, "topics", c.topics, "", errors);
    read_field(j, "doc_qrels", c.doc_qrels, "", errors);
    read_field(j, "passage_qrels", c.passage_qrels, "", errors);
    read_field(j, "stopwords", c.stopwords, "", errors);
    read_field(j, "stemmer", c.stemmer, "", errors);
    read_field(j, "methods", c.methods, "", errors);
    read_field(j, "trainer", c.trainer, "", errors);
    read_field(j, "passage_ranker", c.passage_ranker, "", errors);
    read_field(j, "include_query_length", c.include_query_length, "", errors);
    read_field(j, "exclude_features", c.exclude_features, "", errors);
    read_field(j, "seed", c.seed, "", errors);
    read_field(j, "workers", c.workers, "", errors);
    read_field(j, "validation_fraction", c.validation_fraction, "", errors);
    read_field(j, "output", c.output, "", errors);
    if (j.contains("resources")) {
        const auto& r = j["resources"];
        read_field(r, "embeddings", c.embeddings, "resources.", errors);
        read_field(r, "synonyms", c.synonyms, "resources.", errors);
        read_field(r, "entities", c.entities, "resources.", errors);
        read_field(r, "esa", c.esa, "resources.", errors);
    }
    if (j.contains("segmentation")) {
        const auto& s = j["segmentation"];
        std::string mode = "window";
        read_field(s, "mode", mode, "segmentation.", errors);
        if (mode == "window") {
            c.segmentation.mode = SegmentationParams::Mode::window;
        } else if (mode == "sentence") {
            c.segmentation.mode = SegmentationParams::Mode::sentence;
        } else {
            errors.push_back("segmentation.mode: '" + mode + "' is not one of window, sentence");
        }
        read_field(s, "window_len", c.segmentation.window_len, "segmentation.", errors);
    }
    if (j.contains("cutoffs")) {
        read_field(j["cutoffs"], "docs", c.doc_cutoff, "cutoffs.", errors);
        read_field(j["cutoffs"], "passages", c.passage_cutoff, "cutoffs.", errors);
    }
    if (j.contains("grids")) {
        const auto& g = j["grids"];
        read_field(g, "mu_init", c.grids.mu_init, "grids.", errors);
        read_field(g, "mu", c.grids.mu, "grids.", errors);
        read_field(g, "svm_c", c.grids.svm_c, "grids.", errors);
        read_field(g, "alpha", c.grids.alpha, "grids.", errors);
        read_field(g, "nu", c.grids.nu, "grids.", errors);
        read_field(g, "qsf_lambda", c.grids.qsf_lambda, "grids.", errors);
        read_field(g, "docpsg_lambda", c.grids.docpsg_lambda, "grids.", errors);
        read_field(g, "sdm_weight", c.grids.sdm_weight, "grids.", errors);
        read_field(g, "plm_sigma", c.grids.plm_sigma, "grids.", errors);
        read_field(g, "plm_lambda", c.grids.plm_lambda, "grids.", errors);
        read_field(g, "plm_beta", c.grids.plm_beta, "grids.", errors);
    }
    if (j.contains("training")) {
        const auto& t = j["training"];
        read_field(t, "epochs", c.training.epochs, "training.", errors);
        read_field(t, "max_pairs", c.training.max_pairs, "training.", errors);
        read_field(t, "restarts", c.training.restarts, "training.", errors);
        read_field(t, "max_passes", c.training.max_passes, "training.", errors);
    }
    if (j.contains("significance")) {
        const auto& s = j["significance"];
        read_field(s, "baseline", c.significance_baseline, "significance.", errors);
        read_field(s, "passage_baseline", c.passage_baseline, "significance.", errors);
        read_field(s, "alpha", c.significance_alpha, "significance.", errors);
        read_field(s, "corrections", c.corrections, "significance.", errors);
    }
    auto semantic = c.problems();
    errors.insert(errors.end(), semantic.begin(), semantic.end());
    if (!errors.empty()) {
        std::string msg = "invalid configuration (" + std::to_string(errors.size()) + " problem" +
                          (errors.size() == 1 ? "" : "s") + "):";
        for (const auto& s : errors) {
            msg += "\n  - " + s;
        }
        throw ValidationError(msg);
    }
    return c;
}

/// Applies "a.b.c=value" to a JSON document. Values are parsed as JSON
/// scalars when possible, otherwise taken as strings. Only scalar fields
/// may be overridden.
inline void apply_override(Json& j, const std::string& assignment) {
    auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw ValidationError("override must be key=value: " + assignment);
    }
    const auto path = split_char(assignment.substr(0, eq), '.');
    const std::string raw = assignment.substr(eq + 1);
    Json value;
    try {
        value = Json::parse(raw);
    } catch (const nlohmann::json::exception&) {
        value = raw;
    }
    if (!value.is_primitive()) {
        throw ValidationError("override of '" + assignment.substr(0, eq) + "' must be a scalar");
    }
    Json* node = &j;
    for (std::size_t i = 0; i + 1 < path.size(); ++i) {
        if (!node->contains(path[i])) {
            (*node)[path[i]] = Json::object();
        }
        node = &(*node)[path[i]];
        if (!node->is_object()) {
            throw ValidationError("override path '" + assignment.substr(0, eq) + "' is not an object");
        }
    }
    if (node->contains(path.back()) && !(*node)[path.back()].is_primitive()) {
        throw ValidationError("override of '" + assignment.substr(0, eq) + "' must target a scalar field");
    }
    (*node)[path.back()] = value;
}

inline Json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ValidationError("cannot open config file: " + path.string());
    }
    try {
        return Json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("malformed config file " + path.string() + ": " + e.what());
    }
}

}  // namespace psgrank
