#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "psgrank/common.hpp"
#include "psgrank/corpus.hpp"

namespace psgrank {

struct LmParams {
    double mu = 1000.0;
};

struct SdmWeights {
    double unigram = 0.85;
    double ordered = 0.1;
    double unordered = 0.05;
};

/// Width of the unordered-window (#uw) operator used for SDM biterms.
inline constexpr std::size_t kUnorderedWindow = 8;

struct Posting {
    std::uint32_t doc = 0;
    std::vector<std::uint32_t> positions;
};

/// Positional inverted index over a corpus store. Immutable after build apart
/// from the internally synchronized pair-statistics cache.
class PositionalIndex {
  public:
    static constexpr int kFormatVersion = 1;

    explicit PositionalIndex(std::shared_ptr<const CorpusStore> store) : store_(std::move(store)) {
        if (!store_ || store_->size() == 0) {
            throw ValidationError("cannot index an empty corpus");
        }
        const auto& docs = store_->documents();
        doc_lengths_.reserve(docs.size());
        for (std::uint32_t d = 0; d < docs.size(); ++d) {
            const auto& tokens = docs[d].tokens;
            doc_lengths_.push_back(tokens.size());
            collection_length_ += tokens.size();
            for (std::uint32_t p = 0; p < tokens.size(); ++p) {
                auto& list = postings_[tokens[p].stem];
                if (list.empty() || list.back().doc != d) {
                    list.push_back(Posting{d, {}});
                }
                list.back().positions.push_back(p);
                ++term_counts_[tokens[p].stem];
            }
        }
    }

    [[nodiscard]] const CorpusStore& store() const { return *store_; }
    [[nodiscard]] std::shared_ptr<const CorpusStore> store_ptr() const { return store_; }
    [[nodiscard]] std::size_t num_docs() const { return doc_lengths_.size(); }
    [[nodiscard]] std::size_t collection_length() const { return collection_length_; }
    [[nodiscard]] std::size_t doc_length(std::size_t d) const { return doc_lengths_.at(d); }
    [[nodiscard]] std::size_t vocabulary_size() const { return postings_.size(); }

    [[nodiscard]] std::span<const Posting> postings(const std::string& stem) const {
        auto it = postings_.find(stem);
        if (it == postings_.end()) {
            return {};
        }
        return it->second;
    }

    [[nodiscard]] std::size_t term_count(const std::string& stem) const {
        auto it = term_counts_.find(stem);
        return it == term_counts_.end() ? 0 : it->second;
    }

    [[nodiscard]] std::size_t doc_frequency(const std::string& stem) const {
        return postings(stem).size();
    }

    /// Collection MLE p_C(w).
    [[nodiscard]] double collection_prob(const std::string& stem) const {
        if (collection_length_ == 0) {
            return 0.0;
        }
        return static_cast<double>(term_count(stem)) / static_cast<double>(collection_length_);
    }

    /// Collection-wide count of exact adjacencies "a b".
    [[nodiscard]] std::size_t ordered_pair_count(const std::string& a, const std::string& b) const {
        return pair_count(a, b, true);
    }

    /// Collection-wide count of (a, b) co-occurrences within the unordered window.
    [[nodiscard]] std::size_t unordered_pair_count(const std::string& a, const std::string& b) const {
        return pair_count(a, b, false);
    }

    /// Sorted stems, for deterministic iteration.
    [[nodiscard]] std::vector<std::string> sorted_vocabulary() const {
        std::vector<std::string> v;
        v.reserve(postings_.size());
        for (const auto& [stem, _] : postings_) {
            v.push_back(stem);
        }
        std::sort(v.begin(), v.end());
        return v;
    }

  private:
    std::size_t pair_count(const std::string& a, const std::string& b, bool ordered) const {
        const std::string key = std::string(ordered ? "o\x1f" : "u\x1f") + a + "\x1f" + b;
        {
            std::lock_guard<std::mutex> lock(pair_mutex_);
            auto it = pair_cache_.find(key);
            if (it != pair_cache_.end()) {
                return it->second;
            }
        }
        auto pa = postings(a);
        auto pb = postings(b);
        std::size_t total = 0;
        std::size_t i = 0;
        std::size_t j = 0;
        while (i < pa.size() && j < pb.size()) {
            if (pa[i].doc < pb[j].doc) {
                ++i;
            } else if (pb[j].doc < pa[i].doc) {
                ++j;
            } else {
                total += ordered ? count_ordered(pa[i].positions, pb[j].positions)
                                 : count_unordered(pa[i].positions, pb[j].positions, a == b);
                ++i;
                ++j;
            }
        }
        std::lock_guard<std::mutex> lock(pair_mutex_);
        pair_cache_.emplace(key, total);
        return total;
    }

  public:
    /// Occurrences of b immediately after a. Inputs are ascending positions.
    static std::size_t count_ordered(std::span<const std::uint32_t> pa,
                                     std::span<const std::uint32_t> pb) {
        std::size_t n = 0;
        std::size_t j = 0;
        for (auto p : pa) {
            while (j < pb.size() && pb[j] < p + 1) {
                ++j;
            }
            if (j < pb.size() && pb[j] == p + 1) {
                ++n;
            }
        }
        return n;
    }

    /// Position pairs (i in pa, j in pb, i != j) with |i - j| < window. When
    /// both lists are the same term each unordered pair is counted once.
    static std::size_t count_unordered(std::span<const std::uint32_t> pa,
                                       std::span<const std::uint32_t> pb, bool same_term,
                                       std::size_t window = kUnorderedWindow) {
        std::size_t n = 0;
        if (same_term) {
            for (std::size_t i = 0; i < pa.size(); ++i) {
                for (std::size_t k = i + 1; k < pa.size() && pa[k] - pa[i] < window; ++k) {
                    ++n;
                }
            }
            return n;
        }
        std::size_t lo = 0;
        for (auto p : pa) {
            while (lo < pb.size() && pb[lo] + window <= p) {
                ++lo;
            }
            for (std::size_t k = lo; k < pb.size() && pb[k] < p + window; ++k) {
                if (pb[k] != p) {
                    ++n;
                }
            }
        }
        return n;
    }

  private:
    std::shared_ptr<const CorpusStore> store_;
    std::unordered_map<std::string, std::vector<Posting>> postings_;
    std::unordered_map<std::string, std::size_t> term_counts_;
    std::vector<std::size_t> doc_lengths_;
    std::size_t collection_length_ = 0;
    mutable std::mutex pair_mutex_;
    mutable std::unordered_map<std::string, std::size_t> pair_cache_;
};

inline std::shared_ptr<const PositionalIndex> build_index(std::shared_ptr<const CorpusStore> store) {
    return std::make_shared<const PositionalIndex>(std::move(store));
}

/// Writes index.txt: a header naming the corpus checksum, then one line per
/// stem in lexicographic order: "stem cf df doc:p,p,... doc:p,...".
inline void write_index(const PositionalIndex& index, std::ostream& out) {
    out << "psgrank-index " << PositionalIndex::kFormatVersion << '\n';
    out << "corpus_checksum " << index.store().checksum() << '\n';
    out << "documents " << index.num_docs() << '\n';
    out << "collection_length " << index.collection_length() << '\n';
    out << "doc_lengths";
    for (std::size_t d = 0; d < index.num_docs(); ++d) {
        out << ' ' << index.doc_length(d);
    }
    out << '\n';
    for (const auto& stem : index.sorted_vocabulary()) {
        auto list = index.postings(stem);
        out << stem << ' ' << index.term_count(stem) << ' ' << list.size();
        for (const auto& p : list) {
            out << ' ' << p.doc << ':';
            for (std::size_t i = 0; i < p.positions.size(); ++i) {
                out << (i ? "," : "") << p.positions[i];
            }
        }
        out << '\n';
    }
}

inline void save_index(const PositionalIndex& index, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::ofstream out(dir / "index.txt", std::ios::binary);
    write_index(index, out);
    if (!out) {
        throw RuntimeError("failed writing " + (dir / "index.txt").string());
    }
}

/// Loads an index file set and verifies it against `store`. The postings are
/// rebuilt from the store and compared with the file, so a stale or foreign
/// index is always rejected.
inline std::shared_ptr<const PositionalIndex> load_index(const std::filesystem::path& dir,
                                                         std::shared_ptr<const CorpusStore> store) {
    std::ifstream in(dir / "index.txt", std::ios::binary);
    if (!in) {
        throw ValidationError("missing index.txt in " + dir.string());
    }
    std::string magic;
    int version = 0;
    in >> magic >> version;
    if (magic != "psgrank-index" || version != PositionalIndex::kFormatVersion) {
        throw ValidationError("unsupported index format in " + dir.string());
    }
    std::string key;
    std::string checksum;
    in >> key >> checksum;
    if (key != "corpus_checksum" || checksum != store->checksum()) {
        throw ValidationError("index manifest mismatch: index was built for corpus " + checksum +
                              ", store is " + store->checksum());
    }
    auto index = build_index(std::move(store));
    std::ostringstream rebuilt;
    write_index(*index, rebuilt);
    in.seekg(0);
    std::ostringstream stored;
    stored << in.rdbuf();
    if (stored.str() != rebuilt.str()) {
        throw ValidationError("index contents do not match the corpus in " + dir.string());
    }
    return index;
}

/// Unigram MLE of a text restricted to in-collection terms, ready for
/// cross-entropy scoring against many candidate texts.
struct QueryModel {
    std::vector<std::string> terms;   // distinct, sorted
    std::vector<double> weights;      // theta_x^MLE(w)
    std::vector<double> collection;   // p_C(w)

    [[nodiscard]] bool empty() const { return terms.empty(); }
};

/// Terms absent from the collection are dropped (they can never match and
/// would make the cross entropy undefined).
inline QueryModel make_query_model(std::span<const std::string> stems, const PositionalIndex& index) {
    std::map<std::string, double> counts;
    double total = 0.0;
    for (const auto& s : stems) {
        if (index.term_count(s) == 0) {
            continue;
        }
        counts[s] += 1.0;
        total += 1.0;
    }
    QueryModel m;
    for (const auto& [term, c] : counts) {
        m.terms.push_back(term);
        m.weights.push_back(c / total);
        m.collection.push_back(index.collection_prob(term));
    }
    return m;
}

inline QueryModel make_query_model(const Query& q, const PositionalIndex& index) {
    auto stems = q.stems();
    return make_query_model(std::span<const std::string>(stems), index);
}

/// exp(-CE(theta_x^MLE || theta_y^Dir)) where `counts[i]` is the (possibly
/// fractional) count of model.terms[i] in y and `y_length` is |y|.
inline double lm_similarity(const QueryModel& model, std::span<const double> counts, double y_length,
                            const LmParams& params) {
    if (model.empty()) {
        return 0.0;
    }
    const double denom = y_length + params.mu;
    if (!(denom > 0.0)) {
        return 0.0;
    }
    double log_sim = 0.0;
    for (std::size_t i = 0; i < model.terms.size(); ++i) {
        const double p = (counts[i] + params.mu * model.collection[i]) / denom;
        if (!(p > 0.0)) {
            return 0.0;
        }
        log_sim += model.weights[i] * std::log(p);
    }
    return std::exp(log_sim);
}

/// Counts of the model's terms in a token range.
inline std::vector<double> term_counts(const QueryModel& model, std::span<const Token> tokens) {
    std::vector<double> counts(model.terms.size(), 0.0);
    for (const auto& t : tokens) {
        auto it = std::lower_bound(model.terms.begin(), model.terms.end(), t.stem);
        if (it != model.terms.end() && *it == t.stem) {
            counts[static_cast<std::size_t>(it - model.terms.begin())] += 1.0;
        }
    }
    return counts;
}

/// Similarity of text x (given as stems) to a token span y.
inline double lm_similarity(std::span<const std::string> x, std::span<const Token> y,
                            const PositionalIndex& index, const LmParams& params) {
    auto model = make_query_model(x, index);
    auto counts = term_counts(model, y);
    return lm_similarity(model, counts, static_cast<double>(y.size()), params);
}

/// Query-likelihood retrieval: documents containing at least one query term,
/// scored by lm_similarity(q, d), top k.
inline RankedList retrieve_lm(const QueryModel& model, const std::string& query_id,
                              const PositionalIndex& index, const LmParams& params, std::size_t k) {
    if (k == 0) {
        throw ValidationError("retrieve_lm: k must be >= 1");
    }
    std::map<std::uint32_t, std::vector<double>> candidates;
    for (std::size_t t = 0; t < model.terms.size(); ++t) {
        for (const auto& p : index.postings(model.terms[t])) {
            auto& counts = candidates[p.doc];
            if (counts.empty()) {
                counts.assign(model.terms.size(), 0.0);
            }
            counts[t] = static_cast<double>(p.positions.size());
        }
    }
    std::vector<RankedEntry> entries;
    entries.reserve(candidates.size());
    const auto& docs = index.store().documents();
    for (const auto& [doc, counts] : candidates) {
        entries.push_back(RankedEntry{
            docs[doc].doc_id,
            lm_similarity(model, counts, static_cast<double>(index.doc_length(doc)), params)});
    }
    return make_ranked(query_id, std::move(entries), k);
}

inline RankedList retrieve_lm(const Query& query, const PositionalIndex& index,
                              const LmParams& params, std::size_t k) {
    return retrieve_lm(make_query_model(query, index), query.query_id, index, params, k);
}

struct SdmComponents {
    double unigram = 0.0;
    double ordered = 0.0;
    double unordered = 0.0;

    [[nodiscard]] double combine(const SdmWeights& w) const {
        return w.unigram * unigram + w.ordered * ordered + w.unordered * unordered;
    }
};

/// Positions of each of `stems` in a token span.
inline std::vector<std::vector<std::uint32_t>> positions_of(std::span<const std::string> stems,
                                                            std::span<const Token> tokens) {
    std::vector<std::vector<std::uint32_t>> out(stems.size());
    for (std::uint32_t p = 0; p < tokens.size(); ++p) {
        for (std::size_t s = 0; s < stems.size(); ++s) {
            if (tokens[p].stem == stems[s]) {
                out[s].push_back(p);
            }
        }
    }
    return out;
}

/// Unigram, ordered-bigram (#1) and unordered-window (#uw8) log-likelihood
/// sums of the query in `doc`, each Dirichlet-smoothed against the matching
/// collection statistic. Log terms are floored at kLogFloor.
inline SdmComponents sdm_components(const Query& query, const Document& doc,
                                    const PositionalIndex& index, const LmParams& params) {
    SdmComponents out;
    const auto stems = query.stems();
    const double len = static_cast<double>(doc.length());
    const double denom = len + params.mu;
    const double coll_len = static_cast<double>(index.collection_length());
    const auto positions = positions_of(stems, doc.tokens);
    const auto smoothed = [&](double count, double coll_count) {
        if (!(denom > 0.0)) {
            return kLogFloor;
        }
        return floored_log((count + params.mu * coll_count / coll_len) / denom);
    };
    for (std::size_t i = 0; i < stems.size(); ++i) {
        const double cf = static_cast<double>(index.term_count(stems[i]));
        if (cf == 0.0) {
            continue;
        }
        out.unigram += smoothed(static_cast<double>(positions[i].size()), cf);
    }
    for (std::size_t i = 0; i + 1 < stems.size(); ++i) {
        const auto& a = stems[i];
        const auto& b = stems[i + 1];
        const double o = static_cast<double>(
            PositionalIndex::count_ordered(positions[i], positions[i + 1]));
        const double u = static_cast<double>(
            PositionalIndex::count_unordered(positions[i], positions[i + 1], a == b));
        out.ordered += smoothed(o, static_cast<double>(index.ordered_pair_count(a, b)));
        out.unordered += smoothed(u, static_cast<double>(index.unordered_pair_count(a, b)));
    }
    return out;
}

}  // namespace psgrank
