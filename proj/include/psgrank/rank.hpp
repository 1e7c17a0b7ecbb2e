#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "psgrank/common.hpp"
#include "psgrank/features.hpp"
#include "psgrank/index.hpp"
#include "psgrank/passage.hpp"

namespace psgrank {

struct FusionParams {
    double alpha = 0.5;
    double nu = 60.0;
};

inline double rr_from_rank(std::size_t rank, double nu) {
    return 1.0 / (nu + static_cast<double>(rank));
}

/// 1/(nu + rank) with rank starting at 1.
inline double rr_score(std::string_view item, const RankedList& list, double nu) {
    for (std::size_t i = 0; i < list.size(); ++i) {
        if (list.entries[i].id == item) {
            return rr_from_rank(i + 1, nu);
        }
    }
    throw ValidationError("item '" + std::string(item) + "' is not in the ranked list");
}

namespace detail {

inline void check_fusion(const FusionParams& p) {
    if (!(p.alpha >= 0.0 && p.alpha <= 1.0)) {
        throw ValidationError("fusion alpha must be in [0,1]");
    }
    if (!(p.nu >= 0.0)) {
        throw ValidationError("fusion nu must be >= 0");
    }
}

}  // namespace detail

/// alpha * rr(d, docs) + (1 - alpha) * max over d's passages of rr(g, passages).
/// A document without a ranked passage gets 0 for the passage term.
inline RankedList rerank_rrf(const RankedList& docs, const RankedList& passages, const FusionParams& p) {
    detail::check_fusion(p);
    std::unordered_map<std::string, double> best;
    for (std::size_t i = 0; i < passages.size(); ++i) {
        // Entries are in rank order, so the first passage seen is the best.
        best.try_emplace(doc_of_passage(passages.entries[i].id), rr_from_rank(i + 1, p.nu));
    }
    std::vector<RankedEntry> out;
    out.reserve(docs.size());
    for (std::size_t i = 0; i < docs.size(); ++i) {
        const auto& id = docs.entries[i].id;
        auto it = best.find(id);
        const double psg = it == best.end() ? 0.0 : it->second;
        out.push_back({id, p.alpha * rr_from_rank(i + 1, p.nu) + (1.0 - p.alpha) * psg});
    }
    return make_ranked(docs.query_id, std::move(out));
}

/// alpha * rr(d, docs) + (1 - alpha) * rr(d, other); documents missing from
/// `other` get 0 for its term.
inline RankedList fuse_rr(const RankedList& docs, const RankedList& other, const FusionParams& p) {
    detail::check_fusion(p);
    const auto ranks = other.rank_map();
    std::vector<RankedEntry> out;
    out.reserve(docs.size());
    for (std::size_t i = 0; i < docs.size(); ++i) {
        const auto& id = docs.entries[i].id;
        auto it = ranks.find(id);
        const double rr = it == ranks.end() ? 0.0 : rr_from_rank(it->second, p.nu);
        out.push_back({id, p.alpha * rr_from_rank(i + 1, p.nu) + (1.0 - p.alpha) * rr});
    }
    return make_ranked(docs.query_id, std::move(out));
}

// ---------------------------------------------------------------------------
// Passage bookkeeping for one query

/// Contiguous range of a document's passages inside a QueryFeatureSet.
struct PassageRange {
    std::size_t begin = 0;
    std::size_t end = 0;

    [[nodiscard]] std::size_t size() const { return end - begin; }
};

inline std::vector<PassageRange> passage_ranges(const QueryFeatureSet& set) {
    std::vector<PassageRange> out(set.doc_ids.size());
    for (std::size_t i = 0; i < set.passage_doc.size(); ++i) {
        auto& r = out[set.passage_doc[i]];
        if (r.size() == 0) {
            r.begin = i;
        }
        r.end = i + 1;
    }
    return out;
}

// ---------------------------------------------------------------------------
// SMPD

namespace feature_names {
inline const std::vector<std::string> kSmpd = {"RRMax", "RRMin", "RRAvg", "RRStd",
                                               "Top50", "Top100", "NumPsg"};
}

inline SchemaPtr smpd_schema() {
    static const SchemaPtr schema = std::make_shared<const FeatureSchema>("SMPD7", feature_names::kSmpd);
    return schema;
}

/// Rank statistics of a document's passages. Passages outside the list
/// contribute rr = 0; top50/top100 are fractions of all the document's passages.
inline std::vector<double> smpd_features(std::span<const std::string> doc_passage_ids,
                                         const std::unordered_map<std::string, std::size_t>& passage_ranks,
                                         double nu) {
    std::vector<double> rr;
    std::size_t top50 = 0;
    std::size_t top100 = 0;
    for (const auto& id : doc_passage_ids) {
        auto it = passage_ranks.find(id);
        if (it == passage_ranks.end()) {
            rr.push_back(0.0);
            continue;
        }
        rr.push_back(rr_from_rank(it->second, nu));
        top50 += it->second <= 50 ? 1 : 0;
        top100 += it->second <= 100 ? 1 : 0;
    }
    if (rr.empty()) {
        return std::vector<double>(7, 0.0);
    }
    const double n = static_cast<double>(rr.size());
    return {*std::max_element(rr.begin(), rr.end()),
            *std::min_element(rr.begin(), rr.end()),
            mean_of(rr),
            stddev_of(rr),
            static_cast<double>(top50) / n,
            static_cast<double>(top100) / n,
            n};
}

/// DOC6 ⊕ SMPD7 for every document of `docs` (raw, unnormalized).
inline std::vector<FeatureVector> build_smpd_vectors(const QueryFeatureSet& docs,
                                                     const RankedList& passages, double nu) {
    static const ConcatPlan plan(doc_schema(), smpd_schema(), {}, "", "", "SMPD");
    const auto ranks = passages.rank_map();
    const auto ranges = passage_ranges(docs);
    std::vector<FeatureVector> out;
    out.reserve(docs.doc_ids.size());
    for (std::size_t d = 0; d < docs.doc_ids.size(); ++d) {
        std::span<const std::string> ids(docs.passage_ids.data() + ranges[d].begin, ranges[d].size());
        FeatureVector stats{smpd_schema(), smpd_features(ids, ranks, nu), docs.query_id, docs.doc_ids[d]};
        out.push_back(plan.apply(docs.doc_vectors[d], stats));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Passage selection

enum class PassageChoice { best, second, third, lowest };

inline std::string to_string(PassageChoice c) {
    switch (c) {
        case PassageChoice::best:
            return "best";
        case PassageChoice::second:
            return "second";
        case PassageChoice::third:
            return "third";
        case PassageChoice::lowest:
            return "lowest";
    }
    return "best";
}

/// Order of a document's passages: ranked passages by rank, then unranked
/// ones by descending raw similarity (ties by id). Returns local indices.
inline std::vector<std::size_t> passage_order(std::span<const std::string> doc_passage_ids,
                                              const std::unordered_map<std::string, std::size_t>& passage_ranks,
                                              std::span<const double> fallback_sims) {
    std::vector<std::size_t> idx(doc_passage_ids.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        idx[i] = i;
    }
    const auto rank_of = [&](std::size_t i) {
        auto it = passage_ranks.find(doc_passage_ids[i]);
        return it == passage_ranks.end() ? std::numeric_limits<std::size_t>::max() : it->second;
    };
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        const auto ra = rank_of(a);
        const auto rb = rank_of(b);
        if (ra != rb) {
            return ra < rb;
        }
        const double sa = fallback_sims.empty() ? 0.0 : fallback_sims[a];
        const double sb = fallback_sims.empty() ? 0.0 : fallback_sims[b];
        if (sa != sb) {
            return sa > sb;
        }
        return doc_passage_ids[a] < doc_passage_ids[b];
    });
    return idx;
}

/// Local index of the requested passage; falls back to the lowest-ranked
/// passage when the document has too few.
inline std::size_t select_passage(std::span<const std::string> doc_passage_ids,
                                  const std::unordered_map<std::string, std::size_t>& passage_ranks,
                                  PassageChoice which, std::span<const double> fallback_sims = {}) {
    if (doc_passage_ids.empty()) {
        throw ValidationError("select_passage: document has no passages");
    }
    const auto order = passage_order(doc_passage_ids, passage_ranks, fallback_sims);
    std::size_t pos = 0;
    switch (which) {
        case PassageChoice::best:
            pos = 0;
            break;
        case PassageChoice::second:
            pos = 1;
            break;
        case PassageChoice::third:
            pos = 2;
            break;
        case PassageChoice::lowest:
            pos = order.size() - 1;
            break;
    }
    return order[std::min(pos, order.size() - 1)];
}

// ---------------------------------------------------------------------------
// JPDs / JPD-2 / JPDm / FPD vector builders

struct JpdsSpec {
    PassageChoice which = PassageChoice::best;
    bool two_passages = false;
    bool include_query_length = false;
};

inline std::set<std::string> jpds_exclusions(bool include_query_length) {
    std::set<std::string> ex = {"DocQuerySim"};
    if (!include_query_length) {
        ex.insert("QueryLength");
    }
    return ex;
}

inline const std::set<std::string>& second_passage_exclusions() {
    static const std::set<std::string> ex = {"DocQuerySim", "MaxPDSim", "AvgPDSim", "StdPDSim",
                                             "QueryLength"};
    return ex;
}

/// Builds document vectors from DOC6 and the features of selected passages.
class JpdsBuilder {
  public:
    explicit JpdsBuilder(const JpdsSpec& spec)
        : spec_(spec),
          first_(doc_schema(), passage_schema(), jpds_exclusions(spec.include_query_length), "d:", "p:",
                 spec.include_query_length ? "JPDs+QL" : "JPDs"),
          second_(first_.schema(), passage_schema(), second_passage_exclusions(), "", "p2:",
                  spec.include_query_length ? "JPD2+QL" : "JPD2") {}

    [[nodiscard]] const SchemaPtr& schema() const {
        return spec_.two_passages ? second_.schema() : first_.schema();
    }

    /// `docs` supplies DOC6, `psgs` the PSG20 vectors (same documents and
    /// passage layout, possibly extracted with a different smoothing).
    [[nodiscard]] std::vector<FeatureVector> build(const QueryFeatureSet& docs, const QueryFeatureSet& psgs,
                                                   const RankedList& passage_list) const {
        check_aligned(docs, psgs);
        const auto ranks = passage_list.rank_map();
        const auto ranges = passage_ranges(psgs);
        std::vector<FeatureVector> out;
        out.reserve(docs.doc_ids.size());
        for (std::size_t d = 0; d < docs.doc_ids.size(); ++d) {
            const auto r = ranges[d];
            std::span<const std::string> ids(psgs.passage_ids.data() + r.begin, r.size());
            std::span<const double> sims(psgs.passage_sims.data() + r.begin, r.size());
            const PassageChoice first_choice = spec_.two_passages ? PassageChoice::best : spec_.which;
            const auto g1 = r.begin + select_passage(ids, ranks, first_choice, sims);
            auto v = first_.apply(docs.doc_vectors[d], psgs.passage_vectors[g1]);
            if (spec_.two_passages) {
                const auto g2 = r.begin + select_passage(ids, ranks, PassageChoice::second, sims);
                v = second_.apply(v, psgs.passage_vectors[g2]);
            }
            out.push_back(std::move(v));
        }
        return out;
    }

    static void check_aligned(const QueryFeatureSet& a, const QueryFeatureSet& b) {
        if (a.doc_ids != b.doc_ids || a.passage_ids != b.passage_ids) {
            throw ValidationError("document and passage feature sets cover different items");
        }
    }

  private:
    JpdsSpec spec_;
    ConcatPlan first_;
    ConcatPlan second_;
};

enum class Aggregate { avg, max, min };

inline std::string to_string(Aggregate a) {
    return a == Aggregate::avg ? "avg" : a == Aggregate::max ? "max" : "min";
}

inline std::set<std::string> jpdm_exclusions(Aggregate agg, bool include_query_length) {
    std::set<std::string> ex;
    if (agg != Aggregate::min) {
        ex.insert("PsgQuerySim");
    }
    if (!include_query_length) {
        ex.insert("QueryLength");
    }
    return ex;
}

/// DOC6 ⊕ per-feature aggregate over all of a document's passages.
class JpdmBuilder {
  public:
    JpdmBuilder(Aggregate agg, bool include_query_length)
        : agg_(agg),
          plan_(doc_schema(), passage_schema(), jpdm_exclusions(agg, include_query_length), "d:",
                "p" + to_string(agg) + ":", "JPDm-" + to_string(agg) + (include_query_length ? "+QL" : "")) {}

    [[nodiscard]] const SchemaPtr& schema() const { return plan_.schema(); }

    [[nodiscard]] std::vector<FeatureVector> build(const QueryFeatureSet& docs, const QueryFeatureSet& psgs) const {
        JpdsBuilder::check_aligned(docs, psgs);
        const auto ranges = passage_ranges(psgs);
        std::vector<FeatureVector> out;
        out.reserve(docs.doc_ids.size());
        for (std::size_t d = 0; d < docs.doc_ids.size(); ++d) {
            out.push_back(plan_.apply(docs.doc_vectors[d], aggregate(psgs, ranges[d])));
        }
        return out;
    }

    [[nodiscard]] FeatureVector aggregate(const QueryFeatureSet& psgs, PassageRange r) const {
        FeatureVector agg;
        agg.schema = passage_schema();
        agg.query_id = psgs.query_id;
        const std::size_t dim = passage_schema()->size();
        agg.values.assign(dim, 0.0);
        if (r.size() == 0) {
            return agg;
        }
        for (std::size_t f = 0; f < dim; ++f) {
            double acc = psgs.passage_vectors[r.begin].values[f];
            for (std::size_t i = r.begin + 1; i < r.end; ++i) {
                const double x = psgs.passage_vectors[i].values[f];
                switch (agg_) {
                    case Aggregate::avg:
                        acc += x;
                        break;
                    case Aggregate::max:
                        acc = std::max(acc, x);
                        break;
                    case Aggregate::min:
                        acc = std::min(acc, x);
                        break;
                }
            }
            agg.values[f] = agg_ == Aggregate::avg ? acc / static_cast<double>(r.size()) : acc;
        }
        return agg;
    }

  private:
    Aggregate agg_;
    ConcatPlan plan_;
};

/// Features of each document's best passage, item id = document id.
class FpdBuilder {
  public:
    explicit FpdBuilder(bool include_query_length)
        : plan_(passage_schema(),
                include_query_length ? std::set<std::string>{} : std::set<std::string>{"QueryLength"},
                include_query_length ? "FPD+QL" : "FPD") {}

    [[nodiscard]] const SchemaPtr& schema() const { return plan_.schema(); }

    [[nodiscard]] std::vector<FeatureVector> build(const QueryFeatureSet& psgs,
                                                   const RankedList& passage_list) const {
        const auto ranks = passage_list.rank_map();
        const auto ranges = passage_ranges(psgs);
        std::vector<FeatureVector> out;
        for (std::size_t d = 0; d < psgs.doc_ids.size(); ++d) {
            const auto r = ranges[d];
            std::span<const std::string> ids(psgs.passage_ids.data() + r.begin, r.size());
            std::span<const double> sims(psgs.passage_sims.data() + r.begin, r.size());
            const auto g = r.begin + select_passage(ids, ranks, PassageChoice::best, sims);
            auto v = plan_.apply(psgs.passage_vectors[g]);
            v.item_id = psgs.doc_ids[d];
            out.push_back(std::move(v));
        }
        return out;
    }

  private:
    class Plan {
      public:
        Plan(const SchemaPtr& from, const std::set<std::string>& excluded, std::string name)
            : projection_(from, excluded) {
            schema_ = std::make_shared<const FeatureSchema>(std::move(name), projection_.schema()->features());
        }
        [[nodiscard]] const SchemaPtr& schema() const { return schema_; }
        [[nodiscard]] FeatureVector apply(const FeatureVector& v) const {
            auto out = projection_.apply(v);
            out.schema = schema_;
            return out;
        }

      private:
        ProjectionPlan projection_;
        SchemaPtr schema_;
    };
    Plan plan_;
};

/// Fuses the document list with the ranking induced by a best-passage model.
inline RankedList rerank_fpd(const RankedList& docs, const RankedList& fpd_ranking, const FusionParams& p) {
    return fuse_rr(docs, fpd_ranking, p);
}

// ---------------------------------------------------------------------------
// Unsupervised passage and document rankers

namespace detail {

inline double sum_of(std::span<const double> xs) {
    double s = 0.0;
    for (double x : xs) {
        s += x;
    }
    return s;
}

inline double normalized(double x, double total) { return total > 0.0 ? x / total : 0.0; }

}  // namespace detail

/// (1 - lambda) * sim(q,g)/Σ_Spsg + lambda * sim(q,d_g)/Σ_Sdoc over all
/// passages of the set; top k kept (0 = all).
inline RankedList rank_qsf(const QueryFeatureSet& set, double lambda, std::size_t k = 0) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) {
        throw ValidationError("QSF lambda must be in [0,1]");
    }
    const double psg_total = detail::sum_of(set.passage_sims);
    const double doc_total = detail::sum_of(set.doc_sims);
    std::vector<RankedEntry> entries;
    entries.reserve(set.passage_ids.size());
    for (std::size_t i = 0; i < set.passage_ids.size(); ++i) {
        const double s = (1.0 - lambda) * detail::normalized(set.passage_sims[i], psg_total) +
                         lambda * detail::normalized(set.doc_sims[set.passage_doc[i]], doc_total);
        entries.push_back({set.passage_ids[i], s});
    }
    return make_ranked(set.query_id, std::move(entries), k);
}

struct PositionalMatch {
    std::size_t position = 0;
    double similarity = 0.0;
};

/// Best position of a passage under Gaussian-kernel positional language
/// models: pseudo-counts c'(w,i) = Σ_j c(w,j) exp(-(i-j)^2 / (2 sigma^2)),
/// pseudo-length Z_i = Σ_j exp(-(i-j)^2 / (2 sigma^2)), each Dirichlet
/// smoothed and scored with lm_similarity. An empty passage scores as a
/// whole (0 tokens).
inline PositionalMatch plm_best_position(const QueryModel& model, std::span<const Token> tokens, double sigma,
                                         const LmParams& params) {
    if (!(sigma > 0.0)) {
        throw ValidationError("PLM sigma must be positive");
    }
    const std::size_t n = tokens.size();
    if (n == 0) {
        std::vector<double> zero(model.terms.size(), 0.0);
        return {0, lm_similarity(model, zero, 0.0, params)};
    }
    std::vector<double> kernel(n);
    for (std::size_t d = 0; d < n; ++d) {
        const double x = static_cast<double>(d);
        kernel[d] = std::exp(-(x * x) / (2.0 * sigma * sigma));
    }
    std::vector<double> prefix(n + 1, 0.0);
    for (std::size_t d = 0; d < n; ++d) {
        prefix[d + 1] = prefix[d] + kernel[d];
    }
    std::vector<std::vector<std::size_t>> occ(model.terms.size());
    for (std::size_t j = 0; j < n; ++j) {
        auto it = std::lower_bound(model.terms.begin(), model.terms.end(), tokens[j].stem);
        if (it != model.terms.end() && *it == tokens[j].stem) {
            occ[static_cast<std::size_t>(it - model.terms.begin())].push_back(j);
        }
    }
    PositionalMatch best{0, -1.0};
    std::vector<double> counts(model.terms.size());
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t t = 0; t < occ.size(); ++t) {
            double c = 0.0;
            for (auto j : occ[t]) {
                c += kernel[i > j ? i - j : j - i];
            }
            counts[t] = c;
        }
        const double z = prefix[i + 1] + prefix[n - i] - kernel[0];
        const double s = lm_similarity(model, counts, z, params);
        if (s > best.similarity) {
            best = {i, s};
        }
    }
    return best;
}

struct PlmParams {
    double sigma = 50.0;
    double lambda = 0.4;
    double beta = 0.4;
};

/// Positional similarity of every passage in the set (index-aligned).
inline std::vector<double> plm_similarities(const Query& query, const QueryFeatureSet& set,
                                            const PassageCatalog& catalog, const PositionalIndex& index,
                                            double sigma, const LmParams& params) {
    const auto model = make_query_model(query, index);
    const auto& store = index.store();
    std::vector<double> out;
    out.reserve(set.passage_ids.size());
    for (const auto& pid : set.passage_ids) {
        const Passage* p = catalog.find(pid);
        if (p == nullptr) {
            throw ValidationError("unknown passage " + pid);
        }
        const Document& doc = store.at(store.index_of(p->doc_id));
        out.push_back(plm_best_position(model, p->tokens(doc), sigma, params).similarity);
    }
    return out;
}

/// lambda * norm sim(q, i_max(g)) + beta * norm sim(q,g) + (1-lambda-beta) * norm sim(q,d_g).
inline RankedList rank_plm(const QueryFeatureSet& set, std::span<const double> positional_sims,
                           const PlmParams& p, std::size_t k = 0) {
    if (p.lambda < 0.0 || p.beta < 0.0 || p.lambda + p.beta > 1.0 + 1e-12) {
        throw ValidationError("PLM requires lambda, beta >= 0 and lambda + beta <= 1");
    }
    if (positional_sims.size() != set.passage_ids.size()) {
        throw ValidationError("PLM: positional similarities do not match the passage set");
    }
    const double pos_total = detail::sum_of(positional_sims);
    const double psg_total = detail::sum_of(set.passage_sims);
    const double doc_total = detail::sum_of(set.doc_sims);
    const double rest = std::max(0.0, 1.0 - p.lambda - p.beta);
    std::vector<RankedEntry> entries;
    entries.reserve(set.passage_ids.size());
    for (std::size_t i = 0; i < set.passage_ids.size(); ++i) {
        const double s = p.lambda * detail::normalized(positional_sims[i], pos_total) +
                         p.beta * detail::normalized(set.passage_sims[i], psg_total) +
                         rest * detail::normalized(set.doc_sims[set.passage_doc[i]], doc_total);
        entries.push_back({set.passage_ids[i], s});
    }
    return make_ranked(set.query_id, std::move(entries), k);
}

/// lambda(d) * sim(q,d) + (1 - lambda(d)) * max_g sim(q,g), with
/// lambda(d) = lambda_max * (1 - minmax(ln(1 + |d|))) over the set.
inline RankedList rank_docpsg(const QueryFeatureSet& set, std::span<const std::size_t> doc_lengths,
                              double lambda_max) {
    if (!(lambda_max >= 0.0 && lambda_max <= 1.0)) {
        throw ValidationError("DocPsg lambda must be in [0,1]");
    }
    if (doc_lengths.size() != set.doc_ids.size()) {
        throw ValidationError("DocPsg: document lengths do not match the document set");
    }
    std::vector<double> loglen;
    for (auto len : doc_lengths) {
        loglen.push_back(std::log1p(static_cast<double>(len)));
    }
    double lo = 0.0;
    double hi = 0.0;
    if (!loglen.empty()) {
        lo = *std::min_element(loglen.begin(), loglen.end());
        hi = *std::max_element(loglen.begin(), loglen.end());
    }
    std::vector<double> best(set.doc_ids.size(), 0.0);
    for (std::size_t i = 0; i < set.passage_ids.size(); ++i) {
        auto& b = best[set.passage_doc[i]];
        b = std::max(b, set.passage_sims[i]);
    }
    std::vector<RankedEntry> entries;
    for (std::size_t d = 0; d < set.doc_ids.size(); ++d) {
        const double norm = hi > lo ? (loglen[d] - lo) / (hi - lo) : 0.0;
        const double lambda = lambda_max * (1.0 - norm);
        entries.push_back({set.doc_ids[d], lambda * set.doc_sims[d] + (1.0 - lambda) * best[d]});
    }
    return make_ranked(set.query_id, std::move(entries));
}

/// Σ w_k f_k over SDM components of each document of the set.
inline RankedList rank_sdm(const QueryFeatureSet& set, const SdmWeights& w) {
    std::vector<RankedEntry> entries;
    for (std::size_t d = 0; d < set.doc_ids.size(); ++d) {
        const auto& v = set.doc_vectors[d].values;
        entries.push_back({set.doc_ids[d], w.unigram * v[0] + w.ordered * v[1] + w.unordered * v[2]});
    }
    return make_ranked(set.query_id, std::move(entries));
}

}  // namespace psgrank
