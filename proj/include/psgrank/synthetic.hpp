#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "psgrank/common.hpp"
#include "psgrank/corpus.hpp"

namespace psgrank {

/// Knobs of the synthetic passage-retrieval task. Each query has a few rare
/// topic terms. Relevant documents are long and mention the topic inside a
/// single aligned window; distractor documents have the same length and a
/// similar number of mentions spread thinly over every window, so only
/// passage-level evidence separates them. Some filler documents carry a stray topic term.
struct SyntheticParams {
    std::uint64_t seed = 7;
    std::size_t documents = 500;
    std::size_t queries = 30;
    std::size_t terms_per_query = 3;
    std::size_t relevant_per_query = 8;
    std::size_t distractors_per_query = 8;
    std::size_t window = 300;
    std::size_t vocabulary = 3000;
    double stopword_rate = 0.3;
    std::size_t embedding_dim = 8;
};

struct SyntheticDoc {
    std::string id;
    std::string text;
};

struct SyntheticSpan {
    std::string query_id;
    std::string doc_id;
    std::size_t start = 0;
    std::size_t end = 0;
};

struct SyntheticData {
    std::vector<SyntheticDoc> docs;
    std::vector<std::pair<std::string, std::string>> topics;
    /// (query, doc, grade)
    std::vector<std::tuple<std::string, std::string, int>> qrels;
    std::vector<SyntheticSpan> spans;
    std::vector<std::string> embedding_lines;
    std::vector<std::string> synonym_lines;
    /// (item, entity, confidence)
    std::vector<std::tuple<std::string, std::string, double>> entities;
};

namespace detail {

class TextBuilder {
  public:
    /// Appends one word; a sentence break is inserted every few words.
    void word(const std::string& w, Rng& rng) {
        if (!text_.empty()) {
            text_ += ' ';
        }
        starts_.push_back(text_.size());
        text_ += w;
        if (++since_break_ >= 12 && rng.below(4) == 0) {
            text_ += '.';
            since_break_ = 0;
        }
    }

    [[nodiscard]] std::size_t tokens() const { return starts_.size(); }
    [[nodiscard]] std::size_t start_of(std::size_t token) const { return starts_[token]; }
    [[nodiscard]] std::size_t end_of(std::size_t token, const std::vector<std::string>& words) const {
        return starts_[token] + words[token].size();
    }
    [[nodiscard]] const std::string& text() const { return text_; }

  private:
    std::string text_;
    std::vector<std::size_t> starts_;
    std::size_t since_break_ = 0;
};

}  // namespace detail

/// Deterministic generator; identical params give identical output.
inline SyntheticData generate_synthetic(const SyntheticParams& p) {
    if (p.documents < p.queries * (p.relevant_per_query + p.distractors_per_query)) {
        throw ValidationError("synthetic corpus too small for the requested queries");
    }
    if (p.window < 20) {
        throw ValidationError("synthetic window must be at least 20 tokens");
    }
    Rng rng(p.seed);
    const LightStemmer stemmer;
    const auto stop = default_stopwords();

    // Pronounceable words ending in a vowel are fixed points of the stemmer.
    static constexpr std::string_view kCons = "bdfgkmnprtvz";
    static constexpr std::string_view kVow = "aeiou";
    std::set<std::string> used;
    const auto fresh_word = [&](std::size_t syllables) {
        while (true) {
            std::string w;
            for (std::size_t s = 0; s < syllables; ++s) {
                w += kCons[rng.below(kCons.size())];
                w += kVow[rng.below(kVow.size())];
            }
            if (stemmer.stem(w) == w && !stop.contains(w) && used.insert(w).second) {
                return w;
            }
        }
    };
    std::vector<std::string> background;
    for (std::size_t i = 0; i < p.vocabulary; ++i) {
        background.push_back(fresh_word(3));
    }
    std::vector<double> zipf(background.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < zipf.size(); ++i) {
        acc += 1.0 / static_cast<double>(i + 1);
        zipf[i] = acc;
    }
    static const std::vector<std::string> kStops = {"the", "of", "and", "to", "in", "a", "is",
                                                    "that", "for", "it", "with", "as", "was", "on"};
    const auto filler = [&]() -> std::string {
        if (rng.uniform() < p.stopword_rate) {
            return kStops[rng.below(kStops.size())];
        }
        const double u = rng.uniform() * acc;
        auto it = std::lower_bound(zipf.begin(), zipf.end(), u);
        return background[std::min<std::size_t>(static_cast<std::size_t>(it - zipf.begin()),
                                                 background.size() - 1)];
    };

    SyntheticData out;
    std::vector<std::vector<std::string>> topic_terms(p.queries);
    std::vector<std::vector<std::string>> synonyms(p.queries);
    for (std::size_t q = 0; q < p.queries; ++q) {
        std::string text;
        for (std::size_t t = 0; t < p.terms_per_query; ++t) {
            topic_terms[q].push_back(fresh_word(4));
            synonyms[q].push_back(fresh_word(4));
            text += (t ? " " : "") + topic_terms[q].back();
        }
        out.topics.emplace_back("Q" + std::to_string(q + 1), text);
    }

    std::size_t next_doc = 0;
    const auto doc_id = [&]() {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "D%04zu", ++next_doc);
        return std::string(buf);
    };

    // Scatter `count` topic-term occurrences over token slots [lo, hi).
    const auto placements = [&](std::size_t lo, std::size_t hi, std::size_t count) {
        std::set<std::size_t> slots;
        while (slots.size() < std::min(count, hi - lo)) {
            slots.insert(lo + rng.below(hi - lo));
        }
        return slots;
    };

    std::vector<SyntheticDoc> docs;
    for (std::size_t q = 0; q < p.queries; ++q) {
        const auto& qid = out.topics[q].first;
        const auto& terms = topic_terms[q];
        for (std::size_t r = 0; r < p.relevant_per_query; ++r) {
            const std::size_t windows = 3 + rng.below(3);
            const std::size_t len = windows * p.window;
            const std::size_t hot = rng.below(windows);
            const std::size_t lo = hot * p.window;
            const auto slots = placements(lo, lo + p.window, 4 + rng.below(4));
            std::vector<std::string> words;
            detail::TextBuilder tb;
            std::size_t k = 0;
            for (std::size_t i = 0; i < len; ++i) {
                std::string w;
                if (slots.count(i) > 0) {
                    const std::size_t t = k++ % terms.size();
                    w = rng.below(5) == 0 ? synonyms[q][t] : terms[t];
                } else {
                    w = filler();
                }
                words.push_back(w);
                tb.word(w, rng);
            }
            const auto id = doc_id();
            out.spans.push_back({qid, id, tb.start_of(lo), tb.end_of(lo + p.window - 1, words)});
            out.qrels.emplace_back(qid, id, 1);
            out.entities.emplace_back(id + "#" + std::to_string(hot), "E" + qid, 0.9);
            docs.push_back({id, tb.text()});
        }
        for (std::size_t r = 0; r < p.distractors_per_query; ++r) {
            const std::size_t windows = 3 + rng.below(3);
            const std::size_t len = windows * p.window;
            // Thin spread over the whole document.
            const auto slots = placements(0, len, 4 + rng.below(5));
            std::vector<std::string> words;
            detail::TextBuilder tb;
            std::size_t k = rng.below(terms.size());
            for (std::size_t i = 0; i < len; ++i) {
                std::string w = filler();
                if (slots.count(i) > 0) {
                    const std::size_t t = k++ % terms.size();
                    w = rng.below(5) == 0 ? synonyms[q][t] : terms[t];
                }
                words.push_back(w);
                tb.word(w, rng);
            }
            const auto id = doc_id();
            out.qrels.emplace_back(qid, id, 0);
            docs.push_back({id, tb.text()});
        }
    }
    while (docs.size() < p.documents) {
        const std::size_t len = p.window + rng.below(3 * p.window);
        const std::size_t stray = rng.below(3) == 0 ? rng.below(len) : len;
        const auto& stray_terms = topic_terms[rng.below(p.queries)];
        detail::TextBuilder tb;
        for (std::size_t i = 0; i < len; ++i) {
            tb.word(i == stray ? stray_terms[rng.below(stray_terms.size())] : filler(), rng);
        }
        docs.push_back({doc_id(), tb.text()});
    }
    // Interleave so that file order carries no signal.
    rng.shuffle(docs);
    out.docs = std::move(docs);

    // Embeddings: topic terms and their synonyms share a query direction.
    const auto vec_line = [&](const std::string& word, const std::vector<double>& base, double noise) {
        std::string line = word;
        for (double b : base) {
            line += ' ' + format_double(std::round((b + noise * (rng.uniform() - 0.5)) * 1e4) / 1e4);
        }
        return line;
    };
    const auto random_base = [&]() {
        std::vector<double> v(p.embedding_dim);
        for (auto& x : v) {
            x = rng.uniform() - 0.5;
        }
        return v;
    };
    for (std::size_t q = 0; q < p.queries; ++q) {
        const auto base = random_base();
        for (std::size_t t = 0; t < topic_terms[q].size(); ++t) {
            out.embedding_lines.push_back(vec_line(topic_terms[q][t], base, 0.2));
            out.embedding_lines.push_back(vec_line(synonyms[q][t], base, 0.2));
            out.synonym_lines.push_back(topic_terms[q][t] + ": " + synonyms[q][t]);
        }
        out.entities.emplace_back(out.topics[q].first, "E" + out.topics[q].first, 1.0);
    }
    for (std::size_t i = 0; i < 200 && i < background.size(); ++i) {
        out.embedding_lines.push_back(vec_line(background[i], random_base(), 0.0));
    }
    return out;
}

/// Writes corpus.jsonl, topics.tsv, qrels.txt, passage_qrels.tsv,
/// embeddings.txt, synonyms.txt and entities.tsv under `dir`.
inline void write_synthetic(const SyntheticData& data, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    const auto open = [&](const char* name) {
        std::ofstream f(dir / name, std::ios::binary);
        if (!f) {
            throw RuntimeError("cannot write " + (dir / name).string());
        }
        return f;
    };
    {
        auto f = open("corpus.jsonl");
        for (const auto& d : data.docs) {
            nlohmann::ordered_json rec;
            rec["id"] = d.id;
            rec["text"] = d.text;
            f << rec.dump() << '\n';
        }
    }
    {
        auto f = open("topics.tsv");
        for (const auto& [id, text] : data.topics) {
            f << id << '\t' << text << '\n';
        }
    }
    {
        auto f = open("qrels.txt");
        for (const auto& [q, d, g] : data.qrels) {
            f << q << " 0 " << d << ' ' << g << '\n';
        }
    }
    {
        auto f = open("passage_qrels.tsv");
        for (const auto& s : data.spans) {
            f << s.query_id << '\t' << s.doc_id << '\t' << s.start << '\t' << s.end << '\n';
        }
    }
    {
        auto f = open("embeddings.txt");
        for (const auto& l : data.embedding_lines) {
            f << l << '\n';
        }
    }
    {
        auto f = open("synonyms.txt");
        for (const auto& l : data.synonym_lines) {
            f << l << '\n';
        }
    }
    {
        auto f = open("entities.tsv");
        for (const auto& [item, ent, conf] : data.entities) {
            f << item << '\t' << ent << '\t' << format_double(conf) << '\n';
        }
    }
}

}  // namespace psgrank
