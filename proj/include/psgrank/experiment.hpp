#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "psgrank/common.hpp"
#include "psgrank/config.hpp"
#include "psgrank/corpus.hpp"
#include "psgrank/eval.hpp"
#include "psgrank/features.hpp"
#include "psgrank/index.hpp"
#include "psgrank/ltr.hpp"
#include "psgrank/passage.hpp"
#include "psgrank/rank.hpp"

namespace psgrank {

/// Judgment-independent data of one query, shared by all folds.
struct QueryData {
    Query query;
    RankedList initial;
    std::vector<std::size_t> doc_lengths;
    /// Raw and per-query min-max normalized features, keyed by mu.
    std::map<double, QueryFeatureSet> raw;
    std::map<double, QueryFeatureSet> normalized;
    std::unordered_map<std::string, std::size_t> passage_pos;
    /// Positional similarities keyed by sigma.
    std::map<double, std::vector<double>> plm;
};

struct FoldResult {
    std::string test_query;
    std::map<std::string, RankedList> runs;
    /// Serialized models trained in this fold, keyed by role.
    std::map<std::string, std::string> models;
    std::map<std::string, Json> params;
};

/// Everything an experiment writes, as in-memory file contents.
struct ExperimentOutput {
    Json report;
    std::map<std::string, std::string> files;  // relative path → contents
};

namespace detail {

/// Matches `name` against a schema: exact, or the part after a "prefix:".
inline std::set<std::string> matching_features(const FeatureSchema& schema, const std::string& name) {
    std::set<std::string> out;
    for (const auto& f : schema.features()) {
        auto colon = f.find(':');
        if (f == name || (colon != std::string::npos && f.substr(colon + 1) == name)) {
            out.insert(f);
        }
    }
    return out;
}

inline std::vector<std::vector<double>> sdm_triples(const std::vector<double>& grid) {
    std::vector<std::vector<double>> out;
    for (double a : grid) {
        for (double b : grid) {
            const double c = 1.0 - a - b;
            for (double g : grid) {
                if (std::fabs(g - c) < 1e-9) {
                    out.push_back({a, b, g});
                    break;
                }
            }
        }
    }
    return out;
}

inline Json round_trip(double v) { return Json(v); }

}  // namespace detail

class Experiment {
  public:
    explicit Experiment(ExperimentConfig cfg) : cfg_(std::move(cfg)) {
        cfg_.validate();
        auto stemmer = make_stemmer(cfg_.stemmer);
        auto stop = cfg_.stopwords.empty() ? default_stopwords() : load_stopwords(cfg_.resolve(cfg_.stopwords));
        analyzer_ = std::make_shared<const Analyzer>(stemmer, std::move(stop));
        auto ingest = ingest_corpus(cfg_.resolve(cfg_.corpus), parse_corpus_format(cfg_.corpus_format), analyzer_);
        warnings_ = ingest.warnings;
        store_ = std::make_shared<const CorpusStore>(std::move(ingest.store));
        index_ = build_index(store_);
        catalog_ = std::make_shared<const PassageCatalog>(store_, cfg_.segmentation);
        load_resources();
        judgments_ = load_judgments(cfg_.resolve(cfg_.doc_qrels), cfg_.resolve(cfg_.passage_qrels));
        validate_spans(judgments_, *store_);
        derive_doc_relevance();
        auto topics = load_topics(cfg_.resolve(cfg_.topics), *analyzer_);
        for (auto& q : topics) {
            if (judgments_.relevant_docs(q.query_id) > 0) {
                queries_.push_back(std::move(q));
            }
        }
        std::sort(queries_.begin(), queries_.end(),
                  [](const Query& a, const Query& b) { return a.query_id < b.query_id; });
        if (queries_.empty()) {
            throw ValidationError("no topic has a relevant document in the judgments");
        }
        if (queries_.size() < 2) {
            throw ValidationError("leave-one-out cross validation needs at least 2 judged queries (found 1)");
        }
        check_exclusions();
        precompute();
    }

    [[nodiscard]] const ExperimentConfig& config() const { return cfg_; }
    [[nodiscard]] const JudgmentSet& judgments() const { return judgments_; }
    [[nodiscard]] const CorpusStore& store() const { return *store_; }
    [[nodiscard]] const PassageCatalog& catalog() const { return *catalog_; }

    [[nodiscard]] std::vector<std::string> query_ids() const {
        std::vector<std::string> out;
        for (const auto& q : data_) {
            out.push_back(q.query.query_id);
        }
        return out;
    }

    /// Trains and tunes on every query except `test` (using only the
    /// judgments of those queries) and ranks `test` with every method.
    [[nodiscard]] FoldResult run_fold(const std::string& test, const JudgmentSet& all_judgments) const {
        Fold f(*this, test, all_judgments.without(test));
        return f.run();
    }

    [[nodiscard]] ExperimentOutput run() const {
        const auto ids = query_ids();
        std::vector<FoldResult> folds(ids.size());
        parallel_for(ids.size(), cfg_.workers, [&](std::size_t i) { folds[i] = run_fold(ids[i], judgments_); });
        return assemble(folds);
    }

  private:
    // -----------------------------------------------------------------------
    // Setup

    void load_resources() {
        if (!cfg_.embeddings.empty()) {
            load_embeddings(resources_, cfg_.resolve(cfg_.embeddings), *analyzer_);
        }
        if (!cfg_.synonyms.empty()) {
            load_synonyms(resources_, cfg_.resolve(cfg_.synonyms), *analyzer_);
        }
        if (!cfg_.entities.empty()) {
            load_entities(resources_, cfg_.resolve(cfg_.entities));
        }
        if (cfg_.esa) {
            resources_.esa = std::make_shared<const EsaSpace>(index_);
        }
    }

    /// Documents with relevant character spans but no document grade count
    /// as relevant (grade 1).
    void derive_doc_relevance() {
        for (const auto& qid : judgments_.query_ids()) {
            for (const auto& [doc, spans] : judgments_.relevant_spans(qid, catalog_.get())) {
                if (!spans.empty() && judgments_.doc_grades(qid).count(doc) == 0) {
                    judgments_.add_doc_grade(qid, doc, 1);
                }
            }
        }
    }

    [[nodiscard]] SchemaPtr method_schema(const std::string& m) const {
        const bool ql = cfg_.include_query_length;
        if (m == "init-LTR") {
            return doc_schema();
        }
        if (m == "PsgLTR") {
            return passage_schema();
        }
        if (m == "SMPD") {
            return ConcatPlan(doc_schema(), smpd_schema(), {}, "", "", "SMPD").schema();
        }
        if (m == "FPD") {
            return FpdBuilder(ql).schema();
        }
        if (m.rfind("JPDm-", 0) == 0) {
            return JpdmBuilder(aggregate_of(m), ql).schema();
        }
        if (m.rfind("JPD", 0) == 0) {
            return JpdsBuilder(jpds_spec(m)).schema();
        }
        return nullptr;
    }

    [[nodiscard]] static Aggregate aggregate_of(const std::string& m) {
        return m == "JPDm-avg" ? Aggregate::avg : m == "JPDm-max" ? Aggregate::max : Aggregate::min;
    }

    [[nodiscard]] JpdsSpec jpds_spec(const std::string& m) const {
        JpdsSpec s;
        s.include_query_length = cfg_.include_query_length;
        if (m == "JPDs-second") {
            s.which = PassageChoice::second;
        } else if (m == "JPDs-third") {
            s.which = PassageChoice::third;
        } else if (m == "JPDs-lowest") {
            s.which = PassageChoice::lowest;
        } else if (m == "JPD-2") {
            s.two_passages = true;
        }
        return s;
    }

    /// Features removed from `m`'s schema by the ablation setting.
    [[nodiscard]] std::set<std::string> excluded_for(const std::string& m) const {
        std::set<std::string> out;
        auto schema = method_schema(m);
        if (!schema) {
            return out;
        }
        for (const auto& name : cfg_.exclude_features) {
            auto hit = detail::matching_features(*schema, name);
            out.insert(hit.begin(), hit.end());
        }
        return out;
    }

    void check_exclusions() const {
        for (const auto& name : cfg_.exclude_features) {
            bool found = false;
            std::string known;
            for (const auto& m : cfg_.methods) {
                auto schema = method_schema(m);
                if (!schema) {
                    continue;
                }
                found = found || !detail::matching_features(*schema, name).empty();
                known += "\n  " + m + ":";
                for (const auto& f : schema->features()) {
                    known += " " + f;
                }
            }
            if (!found) {
                throw ValidationError("exclude_features: unknown feature '" + name +
                                      "'; learned schemas are:" + known);
            }
        }
    }

    [[nodiscard]] bool needs(const std::function<bool(const std::string&)>& pred) const {
        return std::any_of(cfg_.methods.begin(), cfg_.methods.end(), pred);
    }

    void precompute() {
        const bool need_features = needs([](const std::string& m) { return m != "LM"; });
        const bool need_plm = needs([](const std::string& m) { return m == "PLM"; });
        data_.resize(queries_.size());
        parallel_for(queries_.size(), cfg_.workers, [&](std::size_t i) {
            auto& d = data_[i];
            d.query = queries_[i];
            d.initial = retrieve_lm(d.query, *index_, LmParams{cfg_.grids.mu_init}, cfg_.doc_cutoff);
            for (const auto& e : d.initial.entries) {
                d.doc_lengths.push_back(store_->at(store_->index_of(e.id)).length());
            }
            if (!need_features) {
                return;
            }
            const auto ids = d.initial.ids();
            std::set<double> mus(cfg_.grids.mu.begin(), cfg_.grids.mu.end());
            for (double mu : mus) {
                auto set = extract_features(d.query, ids, *catalog_, *index_, resources_, LmParams{mu});
                auto norm = set;
                minmax_normalize(norm.doc_vectors);
                minmax_normalize(norm.passage_vectors);
                d.raw.emplace(mu, std::move(set));
                d.normalized.emplace(mu, std::move(norm));
            }
            const auto& any = d.raw.begin()->second;
            for (std::size_t p = 0; p < any.passage_ids.size(); ++p) {
                d.passage_pos.emplace(any.passage_ids[p], p);
            }
            if (need_plm) {
                for (double sigma : std::set<double>(cfg_.grids.plm_sigma.begin(), cfg_.grids.plm_sigma.end())) {
                    d.plm.emplace(sigma, plm_similarities(d.query, any, *catalog_, *index_, sigma,
                                                          LmParams{cfg_.grids.mu_init}));
                }
            }
        });
        for (std::size_t i = 0; i < data_.size(); ++i) {
            by_id_.emplace(data_[i].query.query_id, i);
        }
    }

    [[nodiscard]] const QueryData& data(const std::string& qid) const { return data_[by_id_.at(qid)]; }

    // -----------------------------------------------------------------------
    // One cross-validation fold

    class Fold {
      public:
        Fold(const Experiment& e, std::string test, JudgmentSet judgments)
            : e_(e), cfg_(e.cfg_), test_(std::move(test)), judg_(std::move(judgments)) {
            for (const auto& q : e_.data_) {
                if (q.query.query_id != test_) {
                    train_.push_back(q.query.query_id);
                }
            }
            const bool learned = e_.needs([&](const std::string& m) {
                return is_learned_method(m) || uses_doc_ranker(m) ||
                       (uses_passage_ranking(m) && cfg_.passage_ranker == "ltr");
            });
            if (train_.empty() || (learned && train_.size() < 2)) {
                throw ValidationError("fold " + test_ + ": too few training queries (" +
                                      std::to_string(train_.size()) + ")");
            }
            auto shuffled = train_;
            Rng rng(cfg_.seed ^ fnv1a64(test_));
            rng.shuffle(shuffled);
            const auto n = static_cast<double>(shuffled.size());
            std::size_t nval = static_cast<std::size_t>(std::llround(cfg_.validation_fraction * n));
            nval = std::clamp<std::size_t>(nval, 1, shuffled.size() - 1);
            val_.assign(shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(nval));
            train80_.assign(shuffled.begin() + static_cast<std::ptrdiff_t>(nval), shuffled.end());
            std::sort(val_.begin(), val_.end());
            std::sort(train80_.begin(), train80_.end());
            result_.test_query = test_;
            result_.params["_fold"] = {{"train", train80_}, {"validation", val_}};
        }

        FoldResult run() {
            for (const auto& m : cfg_.methods) {
                run_method(m);
            }
            return std::move(result_);
        }

      private:
        // ---- helpers ------------------------------------------------------

        [[nodiscard]] std::optional<double> ap(const std::string& qid, const RankedList& list) const {
            return average_precision(list, judg_.doc_grades(qid), cfg_.doc_cutoff);
        }

        [[nodiscard]] std::optional<double> maip(const std::string& qid, const RankedList& list) const {
            auto ip = interpolated_precision(list, judg_.relevant_spans(qid, e_.catalog_.get()), *e_.catalog_,
                                             cfg_.passage_cutoff);
            if (!ip) {
                return std::nullopt;
            }
            return ip->maip;
        }

        /// Mean of `metric` over queries where it is defined (0 if none).
        template <typename ListFn, typename MetricFn>
        [[nodiscard]] double mean_over(const std::vector<std::string>& qids, ListFn&& list_of, MetricFn&& metric) const {
            double sum = 0.0;
            std::size_t n = 0;
            for (const auto& q : qids) {
                if (auto v = metric(q, list_of(q))) {
                    sum += *v;
                    ++n;
                }
            }
            return n == 0 ? 0.0 : sum / static_cast<double>(n);
        }

        [[nodiscard]] double mean_map(const std::vector<std::string>& qids,
                                      const std::function<RankedList(const std::string&)>& list_of) const {
            return mean_over(qids, list_of, [&](const std::string& q, const RankedList& l) { return ap(q, l); });
        }

        [[nodiscard]] double mean_maip(const std::vector<std::string>& qids,
                                       const std::function<RankedList(const std::string&)>& list_of) const {
            return mean_over(qids, list_of, [&](const std::string& q, const RankedList& l) { return maip(q, l); });
        }

        [[nodiscard]] std::vector<int> doc_grades(const std::string& qid, const std::vector<FeatureVector>& vs) const {
            std::vector<int> g;
            g.reserve(vs.size());
            for (const auto& v : vs) {
                g.push_back(judg_.doc_grade(qid, v.item_id));
            }
            return g;
        }

        [[nodiscard]] std::vector<int> passage_grades(const std::string& qid,
                                                      const std::vector<FeatureVector>& vs) const {
            std::vector<int> g;
            g.reserve(vs.size());
            for (const auto& v : vs) {
                g.push_back(judg_.passage_grade(qid, *e_.catalog_->find(v.item_id)));
            }
            return g;
        }

        [[nodiscard]] std::vector<double> c_grid() const {
            if (cfg_.trainer == "coordinate_ascent") {
                return {0.0};
            }
            return cfg_.grids.svm_c;
        }

        [[nodiscard]] LinearModel train(const TrainingSet& ts, double c, const std::string& role) const {
            const std::uint64_t seed = cfg_.seed ^ fnv1a64(role);
            if (cfg_.trainer == "coordinate_ascent") {
                CoordinateAscentOptions o;
                o.restarts = cfg_.training.restarts;
                o.max_passes = cfg_.training.max_passes;
                o.seed = seed;
                return train_coordinate_ascent(ts, o);
            }
            PairwiseOptions o;
            o.c = c;
            o.epochs = cfg_.training.epochs;
            o.max_pairs = cfg_.training.max_pairs;
            o.seed = seed;
            return train_pairwise(ts, o);
        }

        using VectorFn = std::function<std::vector<FeatureVector>(const std::string&)>;
        using GradeFn = std::function<std::vector<int>(const std::string&, const std::vector<FeatureVector>&)>;

        struct Variant {
            Json params;
            VectorFn vectors;
        };

        struct Choice {
            std::size_t variant = 0;
            double c = 0.0;
            LinearModel model;
            double score = -1.0;
        };

        /// Wraps a vector source so that ablated features are dropped.
        [[nodiscard]] VectorFn with_exclusions(const std::string& method, VectorFn fn) const {
            auto ex = e_.excluded_for(method);
            if (ex.empty()) {
                return fn;
            }
            return [fn = std::move(fn), ex = std::move(ex), plan = std::shared_ptr<ProjectionPlan>()](
                       const std::string& q) mutable {
                auto vs = fn(q);
                if (vs.empty()) {
                    return vs;
                }
                if (!plan) {
                    plan = std::make_shared<ProjectionPlan>(vs.front().schema, ex);
                }
                for (auto& v : vs) {
                    v = plan->apply(v);
                }
                return vs;
            };
        }

        /// Trains every (variant, C) on the 80% split and keeps the best by
        /// the validation objective (first best wins).
        [[nodiscard]] Choice choose(const std::vector<Variant>& variants, const GradeFn& grades,
                                    const std::string& role,
                                    const std::function<double(const std::vector<std::string>&,
                                                               const std::function<RankedList(const std::string&)>&)>&
                                        objective) const {
            Choice best;
            bool have = false;
            for (std::size_t v = 0; v < variants.size(); ++v) {
                std::map<std::string, std::vector<FeatureVector>> cache;
                const auto vecs = [&](const std::string& q) -> const std::vector<FeatureVector>& {
                    auto it = cache.find(q);
                    if (it == cache.end()) {
                        it = cache.emplace(q, variants[v].vectors(q)).first;
                    }
                    return it->second;
                };
                TrainingSet ts;
                for (const auto& q : train80_) {
                    const auto& vs = vecs(q);
                    if (vs.empty()) {
                        continue;
                    }
                    ts.schema = vs.front().schema;
                    ts.groups.push_back({q, vs, grades(q, vs)});
                }
                if (!ts.schema) {
                    throw ValidationError("fold " + test_ + ": no training vectors for " + role);
                }
                for (double c : c_grid()) {
                    auto model = train(ts, c, role);
                    const double s = objective(val_, [&](const std::string& q) { return score(model, vecs(q), q); });
                    if (!have || s > best.score) {
                        best = Choice{v, c, std::move(model), s};
                        have = true;
                    }
                }
            }
            return best;
        }

        void record_model(const std::string& role, const LinearModel& m) { result_.models[role] = m.serialize(); }

        [[nodiscard]] static Json c_param(const Choice& ch, const std::string& trainer) {
            return trainer == "coordinate_ascent" ? Json(nullptr) : Json(ch.c);
        }

        // ---- passage stage -----------------------------------------------

        void ensure_qsf() {
            if (qsf_ready_) {
                return;
            }
            qsf_ready_ = true;
            double best = -1.0;
            for (double mu : cfg_.grids.mu) {
                for (double lambda : cfg_.grids.qsf_lambda) {
                    const double s = mean_maip(train_, [&](const std::string& q) {
                        return rank_qsf(e_.data(q).raw.at(mu), lambda, cfg_.passage_cutoff);
                    });
                    if (s > best) {
                        best = s;
                        qsf_mu_ = mu;
                        qsf_lambda_ = lambda;
                    }
                }
            }
            result_.params["QSF"] = {{"mu", qsf_mu_}, {"lambda", qsf_lambda_}, {"train_maip", best}};
        }

        [[nodiscard]] RankedList qsf_run(const std::string& q) const {
            return rank_qsf(e_.data(q).raw.at(qsf_mu_), qsf_lambda_, cfg_.passage_cutoff);
        }

        /// Normalized PSG20 vectors of the QSF top passages of q.
        [[nodiscard]] std::vector<FeatureVector> qsf_pool_vectors(const std::string& q, double mu) const {
            const auto& d = e_.data(q);
            const auto& set = d.normalized.at(mu);
            std::vector<FeatureVector> out;
            for (const auto& entry : qsf_run(q).entries) {
                out.push_back(set.passage_vectors[d.passage_pos.at(entry.id)]);
            }
            return out;
        }

        void ensure_passage_ranker() {
            if (ranker_ready_) {
                return;
            }
            ranker_ready_ = true;
            ensure_qsf();
            if (cfg_.passage_ranker == "qsf") {
                psg_mu_ = qsf_mu_;
                return;
            }
            std::vector<Variant> variants;
            for (double mu : cfg_.grids.mu) {
                VectorFn fn = [this, mu](const std::string& q) { return qsf_pool_vectors(q, mu); };
                variants.push_back({Json{{"mu", mu}}, fn});
            }
            const GradeFn grades = [this](const std::string& q, const std::vector<FeatureVector>& vs) {
                return passage_grades(q, vs);
            };
            auto choice = choose(variants, grades, "passage-ranker",
                                 [this](const auto& qs, const auto& fn) { return mean_maip(qs, fn); });
            psg_mu_ = variants[choice.variant].params["mu"].get<double>();
            psg_model_ = std::move(choice.model);
            record_model("passage-ranker", *psg_model_);
            result_.params["passage-ranker"] = {{"mu", psg_mu_},
                                                {"C", c_param(choice, cfg_.trainer)},
                                                {"validation_maip", choice.score}};
        }

        /// G(C_LTR): the passage ranking consumed by document re-rankers.
        [[nodiscard]] const RankedList& passage_ranking(const std::string& q) {
            auto it = g_cache_.find(q);
            if (it != g_cache_.end()) {
                return it->second;
            }
            RankedList list = psg_model_ ? score(*psg_model_, qsf_pool_vectors(q, psg_mu_), q) : qsf_run(q);
            list.query_id = q;
            return g_cache_.emplace(q, std::move(list)).first->second;
        }

        // ---- document stage ----------------------------------------------

        void ensure_doc_ranker() {
            if (doc_ready_) {
                return;
            }
            doc_ready_ = true;
            std::vector<Variant> variants;
            for (double mu : cfg_.grids.mu) {
                VectorFn fn = [this, mu](const std::string& q) { return e_.data(q).normalized.at(mu).doc_vectors; };
                variants.push_back({Json{{"mu", mu}}, with_exclusions(
                                                            is_listed("init-LTR") ? "init-LTR" : "", fn)});
            }
            const GradeFn grades = [this](const std::string& q, const std::vector<FeatureVector>& vs) {
                return doc_grades(q, vs);
            };
            auto choice = choose(variants, grades, "init-LTR",
                                 [this](const auto& qs, const auto& fn) { return mean_map(qs, fn); });
            doc_mu_ = variants[choice.variant].params["mu"].get<double>();
            doc_vectors_ = variants[choice.variant].vectors;
            doc_model_ = std::move(choice.model);
            record_model("init-LTR", *doc_model_);
            result_.params["init-LTR"] = {
                {"mu", doc_mu_}, {"C", c_param(choice, cfg_.trainer)}, {"validation_map", choice.score}};
        }

        [[nodiscard]] const RankedList& c_ltr(const std::string& q) {
            auto it = cltr_cache_.find(q);
            if (it != cltr_cache_.end()) {
                return it->second;
            }
            RankedList list = score(*doc_model_, doc_vectors_(q), q);
            list.query_id = q;
            return cltr_cache_.emplace(q, std::move(list)).first->second;
        }

        [[nodiscard]] bool is_listed(const std::string& m) const {
            return std::find(cfg_.methods.begin(), cfg_.methods.end(), m) != cfg_.methods.end();
        }

        /// Normalized composite vectors from a raw builder.
        template <typename Build>
        [[nodiscard]] VectorFn composite(const std::string& method, Build build) {
            VectorFn fn = [build = std::move(build)](const std::string& q) {
                auto vs = build(q);
                minmax_normalize(vs);
                return vs;
            };
            return with_exclusions(method, std::move(fn));
        }

        void learned_doc_method(const std::string& m, std::vector<Variant> variants) {
            const GradeFn grades = [this](const std::string& q, const std::vector<FeatureVector>& vs) {
                return doc_grades(q, vs);
            };
            auto choice = choose(variants, grades, m, [this](const auto& qs, const auto& fn) { return mean_map(qs, fn); });
            auto params = variants[choice.variant].params;
            params["C"] = c_param(choice, cfg_.trainer);
            params["validation_map"] = choice.score;
            result_.params[m] = params;
            result_.runs[m] = score(choice.model, variants[choice.variant].vectors(test_), test_);
            record_model(m, choice.model);
        }

        void run_method(const std::string& m) {
            const auto& test_data = e_.data(test_);
            if (m == "LM") {
                result_.runs[m] = test_data.initial;
                result_.params[m] = {{"mu", cfg_.grids.mu_init}};
                return;
            }
            if (m == "SDM") {
                run_sdm();
                return;
            }
            if (m == "DocPsg") {
                run_docpsg();
                return;
            }
            if (m == "QSF") {
                ensure_qsf();
                result_.runs[m] = qsf_run(test_);
                return;
            }
            if (m == "PLM") {
                run_plm();
                return;
            }
            if (m == "PsgLTR") {
                run_psgltr();
                return;
            }
            ensure_doc_ranker();
            if (m == "init-LTR") {
                result_.runs[m] = c_ltr(test_);
                return;
            }
            ensure_passage_ranker();
            if (m == "RRF") {
                run_rrf();
            } else if (m == "SMPD") {
                std::vector<Variant> variants;
                for (double nu : cfg_.grids.nu) {
                    variants.push_back({Json{{"nu", nu}}, composite(m, [this, nu](const std::string& q) {
                                            return build_smpd_vectors(e_.data(q).raw.at(doc_mu_),
                                                                      passage_ranking(q), nu);
                                        })});
                }
                learned_doc_method(m, std::move(variants));
            } else if (m.rfind("JPDm-", 0) == 0) {
                auto builder = std::make_shared<JpdmBuilder>(aggregate_of(m), cfg_.include_query_length);
                std::vector<Variant> variants;
                variants.push_back({Json::object(), composite(m, [this, builder](const std::string& q) {
                                        const auto& d = e_.data(q);
                                        return builder->build(d.raw.at(doc_mu_), d.raw.at(psg_mu_));
                                    })});
                learned_doc_method(m, std::move(variants));
            } else if (m.rfind("JPD", 0) == 0) {
                auto builder = std::make_shared<JpdsBuilder>(e_.jpds_spec(m));
                std::vector<Variant> variants;
                variants.push_back({Json::object(), composite(m, [this, builder](const std::string& q) {
                                        const auto& d = e_.data(q);
                                        return builder->build(d.raw.at(doc_mu_), d.raw.at(psg_mu_),
                                                              passage_ranking(q));
                                    })});
                learned_doc_method(m, std::move(variants));
            } else if (m == "FPD") {
                run_fpd();
            }
        }

        static Aggregate aggregate_of(const std::string& m) { return Experiment::aggregate_of(m); }

        void run_sdm() {
            const auto triples = detail::sdm_triples(cfg_.grids.sdm_weight);
            if (triples.empty()) {
                throw ValidationError("grids.sdm_weight: no weight triple sums to 1");
            }
            double best = -1.0;
            double best_mu = 0.0;
            SdmWeights best_w;
            for (double mu : cfg_.grids.mu) {
                for (const auto& t : triples) {
                    const SdmWeights w{t[0], t[1], t[2]};
                    const double s =
                        mean_map(train_, [&](const std::string& q) { return rank_sdm(e_.data(q).raw.at(mu), w); });
                    if (s > best) {
                        best = s;
                        best_mu = mu;
                        best_w = w;
                    }
                }
            }
            result_.params["SDM"] = {{"mu", best_mu},
                                     {"weights", {best_w.unigram, best_w.ordered, best_w.unordered}},
                                     {"train_map", best}};
            result_.runs["SDM"] = rank_sdm(e_.data(test_).raw.at(best_mu), best_w);
        }

        void run_docpsg() {
            double best = -1.0;
            double best_mu = 0.0;
            double best_l = 0.0;
            for (double mu : cfg_.grids.mu) {
                for (double l : cfg_.grids.docpsg_lambda) {
                    const double s = mean_map(train_, [&](const std::string& q) {
                        const auto& d = e_.data(q);
                        return rank_docpsg(d.raw.at(mu), d.doc_lengths, l);
                    });
                    if (s > best) {
                        best = s;
                        best_mu = mu;
                        best_l = l;
                    }
                }
            }
            result_.params["DocPsg"] = {{"mu", best_mu}, {"lambda_max", best_l}, {"train_map", best}};
            const auto& d = e_.data(test_);
            result_.runs["DocPsg"] = rank_docpsg(d.raw.at(best_mu), d.doc_lengths, best_l);
        }

        void run_plm() {
            double best = -1.0;
            PlmParams best_p;
            for (double sigma : cfg_.grids.plm_sigma) {
                for (double l : cfg_.grids.plm_lambda) {
                    for (double b : cfg_.grids.plm_beta) {
                        if (l + b > 1.0 + 1e-9) {
                            continue;
                        }
                        const PlmParams p{sigma, l, std::min(b, 1.0 - l)};
                        const double s = mean_maip(train_, [&](const std::string& q) {
                            const auto& d = e_.data(q);
                            return rank_plm(d.raw.begin()->second, d.plm.at(sigma), p, cfg_.passage_cutoff);
                        });
                        if (s > best) {
                            best = s;
                            best_p = p;
                        }
                    }
                }
            }
            result_.params["PLM"] = {{"sigma", best_p.sigma},
                                     {"lambda", best_p.lambda},
                                     {"beta", best_p.beta},
                                     {"mu", cfg_.grids.mu_init},
                                     {"train_maip", best}};
            const auto& d = e_.data(test_);
            result_.runs["PLM"] = rank_plm(d.raw.begin()->second, d.plm.at(best_p.sigma), best_p, cfg_.passage_cutoff);
        }

        void run_psgltr() {
            ensure_qsf();
            std::vector<Variant> variants;
            for (double mu : cfg_.grids.mu) {
                VectorFn fn = [this, mu](const std::string& q) { return qsf_pool_vectors(q, mu); };
                variants.push_back({Json{{"mu", mu}}, with_exclusions("PsgLTR", fn)});
            }
            const GradeFn grades = [this](const std::string& q, const std::vector<FeatureVector>& vs) {
                return passage_grades(q, vs);
            };
            auto choice =
                choose(variants, grades, "PsgLTR", [this](const auto& qs, const auto& fn) { return mean_maip(qs, fn); });
            auto params = variants[choice.variant].params;
            params["C"] = c_param(choice, cfg_.trainer);
            params["validation_maip"] = choice.score;
            result_.params["PsgLTR"] = params;
            result_.runs["PsgLTR"] = score(choice.model, variants[choice.variant].vectors(test_), test_);
            record_model("PsgLTR", choice.model);
        }

        void run_rrf() {
            double best = -1.0;
            FusionParams best_p;
            for (double a : cfg_.grids.alpha) {
                for (double nu : cfg_.grids.nu) {
                    const FusionParams p{a, nu};
                    const double s = mean_map(train_, [&](const std::string& q) {
                        return rerank_rrf(c_ltr(q), passage_ranking(q), p);
                    });
                    if (s > best) {
                        best = s;
                        best_p = p;
                    }
                }
            }
            result_.params["RRF"] = {{"alpha", best_p.alpha}, {"nu", best_p.nu}, {"train_map", best}};
            result_.runs["RRF"] = rerank_rrf(c_ltr(test_), passage_ranking(test_), best_p);
        }

        void run_fpd() {
            auto builder = std::make_shared<FpdBuilder>(cfg_.include_query_length);
            VectorFn vectors = composite("FPD", [this, builder](const std::string& q) {
                return builder->build(e_.data(q).raw.at(psg_mu_), passage_ranking(q));
            });
            std::map<std::string, std::vector<FeatureVector>> cache;
            const auto vecs = [&](const std::string& q) -> const std::vector<FeatureVector>& {
                auto it = cache.find(q);
                if (it == cache.end()) {
                    it = cache.emplace(q, vectors(q)).first;
                }
                return it->second;
            };
            TrainingSet ts;
            for (const auto& q : train80_) {
                const auto& vs = vecs(q);
                if (vs.empty()) {
                    continue;
                }
                ts.schema = vs.front().schema;
                ts.groups.push_back({q, vs, doc_grades(q, vs)});
            }
            if (!ts.schema) {
                throw ValidationError("fold " + test_ + ": no training vectors for FPD");
            }
            double best = -1.0;
            std::optional<LinearModel> best_model;
            FusionParams best_p;
            double best_c = 0.0;
            for (double c : c_grid()) {
                auto model = train(ts, c, "FPD");
                std::map<std::string, RankedList> ranked;
                for (const auto& q : val_) {
                    ranked.emplace(q, score(model, vecs(q), q));
                }
                for (double a : cfg_.grids.alpha) {
                    for (double nu : cfg_.grids.nu) {
                        const FusionParams p{a, nu};
                        const double s = mean_map(val_, [&](const std::string& q) {
                            return rerank_fpd(c_ltr(q), ranked.at(q), p);
                        });
                        if (s > best) {
                            best = s;
                            best_model = model;
                            best_p = p;
                            best_c = c;
                        }
                    }
                }
            }
            result_.params["FPD"] = {{"C", cfg_.trainer == "coordinate_ascent" ? Json(nullptr) : Json(best_c)},
                                     {"alpha", best_p.alpha},
                                     {"nu", best_p.nu},
                                     {"validation_map", best}};
            record_model("FPD", *best_model);
            result_.runs["FPD"] = rerank_fpd(c_ltr(test_), score(*best_model, vecs(test_), test_), best_p);
        }

        const Experiment& e_;
        const ExperimentConfig& cfg_;
        std::string test_;
        JudgmentSet judg_;
        std::vector<std::string> train_;
        std::vector<std::string> train80_;
        std::vector<std::string> val_;
        FoldResult result_;

        bool qsf_ready_ = false;
        double qsf_mu_ = 0.0;
        double qsf_lambda_ = 0.0;
        bool ranker_ready_ = false;
        double psg_mu_ = 0.0;
        std::optional<LinearModel> psg_model_;
        std::map<std::string, RankedList> g_cache_;
        bool doc_ready_ = false;
        double doc_mu_ = 0.0;
        VectorFn doc_vectors_;
        std::optional<LinearModel> doc_model_;
        std::map<std::string, RankedList> cltr_cache_;
    };

    // -----------------------------------------------------------------------
    // Report

    [[nodiscard]] ExperimentOutput assemble(const std::vector<FoldResult>& folds) const {
        ExperimentOutput out;
        Json report;
        report["format_version"] = 1;
        report["queries"] = query_ids();

        std::map<std::string, std::map<std::string, double>> primary;  // method → qid → value
        std::ostringstream per_query;
        per_query << "method\tquery\tmetric\tvalue\n";
        Json methods = Json::object();
        for (const auto& m : cfg_.methods) {
            const bool doc_level = is_document_method(m);
            Json mj;
            mj["level"] = doc_level ? "document" : "passage";
            Json pq = Json::object();
            std::map<std::string, std::vector<double>> columns;
            std::ostringstream run;
            for (const auto& f : folds) {
                const auto& qid = f.test_query;
                const auto& list = f.runs.at(m);
                write_trec_run(run, list, m);
                Json qm = Json::object();
                if (doc_level) {
                    const auto& grades = judgments_.doc_grades(qid);
                    if (auto ap = average_precision(list, grades, cfg_.doc_cutoff)) {
                        qm["map"] = *ap;
                        qm["p10"] = precision_at(list, grades, 10);
                        qm["ndcg10"] = ndcg_at(list, grades, 10);
                    }
                } else {
                    auto ip = interpolated_precision(list, judgments_.relevant_spans(qid, catalog_.get()), *catalog_,
                                                     cfg_.passage_cutoff);
                    if (ip) {
                        qm["maip"] = ip->maip;
                        qm["ip0.01"] = ip->at(0.01);
                        qm["ip0.1"] = ip->at(0.1);
                    }
                }
                for (const auto& [k, v] : qm.items()) {
                    columns[k].push_back(v.get<double>());
                    per_query << m << '\t' << qid << '\t' << k << '\t' << format_double(v.get<double>()) << '\n';
                }
                if (!qm.empty()) {
                    primary[m][qid] = qm[doc_level ? "map" : "maip"].get<double>();
                }
                pq[qid] = qm;
            }
            Json means = Json::object();
            for (const auto& [k, vs] : columns) {
                means[k] = mean_of(vs);
            }
            mj["mean"] = means;
            mj["evaluated_queries"] = primary[m].size();
            mj["per_query"] = pq;
            Json params = Json::object();
            for (const auto& f : folds) {
                auto it = f.params.find(m);
                if (it != f.params.end()) {
                    params[f.test_query] = it->second;
                }
            }
            mj["tuned"] = params;
            methods[m] = mj;
            out.files["runs/" + m + ".run"] = run.str();
        }
        report["methods"] = methods;
        report["significance"] = significance(primary);

        Json shared = Json::object();
        for (const auto& f : folds) {
            Json fj = Json::object();
            for (const auto& key : {"_fold", "QSF", "passage-ranker", "init-LTR"}) {
                auto it = f.params.find(key);
                if (it != f.params.end()) {
                    fj[key] = it->second;
                }
            }
            shared[f.test_query] = fj;
            for (const auto& [role, bytes] : f.models) {
                out.files["models/" + f.test_query + "/" + role + ".model"] = bytes;
            }
        }
        report["folds"] = shared;
        report["manifest"] = manifest();
        out.files["per_query.tsv"] = per_query.str();
        out.files["config.json"] = cfg_.to_json().dump(2) + "\n";
        out.files["report.json"] = report.dump(2) + "\n";
        out.report = std::move(report);
        return out;
    }

    [[nodiscard]] Json significance(const std::map<std::string, std::map<std::string, double>>& primary) const {
        Json out = Json::array();
        const auto compare = [&](const std::string& baseline, bool doc_level) {
            if (primary.count(baseline) == 0) {
                return;
            }
            std::vector<std::string> others;
            for (const auto& m : cfg_.methods) {
                if (m != baseline && is_document_method(m) == doc_level && primary.count(m) > 0) {
                    others.push_back(m);
                }
            }
            const std::size_t corrections = cfg_.corrections > 0 ? cfg_.corrections : std::max<std::size_t>(1, others.size());
            for (const auto& m : others) {
                std::vector<double> a;
                std::vector<double> b;
                for (const auto& [qid, v] : primary.at(m)) {
                    auto it = primary.at(baseline).find(qid);
                    if (it != primary.at(baseline).end()) {
                        a.push_back(v);
                        b.push_back(it->second);
                    }
                }
                Json row;
                row["method"] = m;
                row["baseline"] = baseline;
                row["metric"] = doc_level ? "map" : "maip";
                row["corrections"] = corrections;
                row["n"] = a.size();
                try {
                    auto t = paired_ttest(a, b, cfg_.significance_alpha, corrections);
                    row["t"] = t.t;
                    row["p"] = t.p;
                    row["significant"] = t.significant;
                } catch (const ValidationError& e) {
                    row["t"] = nullptr;
                    row["p"] = nullptr;
                    row["significant"] = false;
                    row["note"] = e.what();
                }
                out.push_back(row);
            }
        };
        compare(cfg_.significance_baseline, true);
        compare(cfg_.passage_baseline, false);
        return out;
    }

    [[nodiscard]] Json manifest() const {
        Json m;
        m["corpus"] = store_->manifest();
        m["index"] = {{"format_version", PositionalIndex::kFormatVersion},
                      {"vocabulary", index_->vocabulary_size()},
                      {"collection_length", index_->collection_length()}};
        m["segmentation"] = cfg_.segmentation.describe();
        m["passages"] = catalog_->total_passages();
        m["seed"] = cfg_.seed;
        m["trainer"] = cfg_.trainer;
        m["passage_ranker"] = cfg_.passage_ranker;
        m["grids"] = cfg_.to_json()["grids"];
        m["training"] = cfg_.to_json()["training"];
        Json res;
        res["esa"] = resources_.esa ? resources_.esa->identity() : "none";
        res["embeddings"] = cfg_.embeddings.empty() ? "none" : cfg_.embeddings;
        res["synonyms"] = cfg_.synonyms.empty() ? "none" : cfg_.synonyms;
        res["entities"] = cfg_.entities.empty() ? "none" : cfg_.entities;
        res["degradations"] = resources_.degradations();
        m["resources"] = res;
        m["ingest_warnings"] = warnings_;
        m["docpsg_lambda_rule"] = "lambda_max * (1 - minmax(ln(1 + |d|)))";
        m["exclude_features"] = cfg_.exclude_features;
        return m;
    }

    ExperimentConfig cfg_;
    std::shared_ptr<const Analyzer> analyzer_;
    std::shared_ptr<const CorpusStore> store_;
    std::shared_ptr<const PositionalIndex> index_;
    std::shared_ptr<const PassageCatalog> catalog_;
    SemanticResources resources_;
    JudgmentSet judgments_;
    std::vector<std::string> warnings_;
    std::vector<Query> queries_;
    std::vector<QueryData> data_;
    std::unordered_map<std::string, std::size_t> by_id_;
};

/// Writes every output file under `dir`.
inline void write_output(const ExperimentOutput& out, const std::filesystem::path& dir) {
    for (const auto& [rel, contents] : out.files) {
        const auto path = dir / rel;
        std::filesystem::create_directories(path.parent_path());
        std::ofstream f(path, std::ios::binary);
        f << contents;
        if (!f) {
            throw RuntimeError("failed writing " + path.string());
        }
    }
}

inline ExperimentOutput run_experiment(const ExperimentConfig& cfg) { return Experiment(cfg).run(); }

/// Per-query primary metric (MAP or MAiP) of `method` in a report.
inline std::map<std::string, double> primary_metric(const Json& report, const std::string& method) {
    std::map<std::string, double> out;
    const auto& mj = report.at("methods").at(method);
    const std::string key = mj.at("level") == "document" ? "map" : "maip";
    for (const auto& [qid, qm] : mj.at("per_query").items()) {
        if (qm.contains(key)) {
            out[qid] = qm[key].get<double>();
        }
    }
    return out;
}

/// Retrains every configured method once per feature group with that group
/// excluded and compares against the unablated run.
inline Json run_ablation(const ExperimentConfig& base, const std::vector<std::vector<std::string>>& groups) {
    if (groups.empty()) {
        throw ValidationError("ablation needs at least one feature to exclude");
    }
    const bool learned = std::any_of(base.methods.begin(), base.methods.end(),
                                     [](const std::string& m) { return is_learned_method(m); });
    if (!learned) {
        throw ValidationError("ablation needs at least one learned method in 'methods'");
    }
    const auto reference = run_experiment(base).report;
    Json out;
    out["methods"] = base.methods;
    out["excluded_in_base"] = base.exclude_features;
    Json rows = Json::array();
    for (const auto& group : groups) {
        auto cfg = base;
        cfg.exclude_features.insert(cfg.exclude_features.end(), group.begin(), group.end());
        const auto ablated = run_experiment(cfg).report;
        for (const auto& m : base.methods) {
            if (!is_learned_method(m)) {
                continue;
            }
            const auto before = primary_metric(reference, m);
            const auto after = primary_metric(ablated, m);
            std::vector<double> a;
            std::vector<double> b;
            for (const auto& [qid, v] : after) {
                if (auto it = before.find(qid); it != before.end()) {
                    a.push_back(v);
                    b.push_back(it->second);
                }
            }
            Json row;
            row["excluded"] = group;
            row["method"] = m;
            row["metric"] = is_document_method(m) ? "map" : "maip";
            row["base"] = mean_of(b);
            row["ablated"] = mean_of(a);
            row["delta"] = mean_of(a) - mean_of(b);
            try {
                const auto t = paired_ttest(a, b, base.significance_alpha,
                                            base.corrections > 0 ? base.corrections : groups.size());
                row["t"] = t.t;
                row["p"] = t.p;
                row["significant"] = t.significant;
            } catch (const ValidationError& e) {
                row["t"] = nullptr;
                row["p"] = nullptr;
                row["significant"] = false;
                row["note"] = e.what();
            }
            rows.push_back(row);
        }
    }
    out["rows"] = rows;
    return out;
}

}  // namespace psgrank
