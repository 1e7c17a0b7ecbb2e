// Acceptance harness: prints one PASS/FAIL line per criterion.

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "psgrank/experiment.hpp"

using namespace psgrank;
using psgrank::testing::close;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) {
    return std::chrono::duration<double>(Clock::now() - t).count();
}

/// Collects failure messages of one criterion.
struct Report {
    std::vector<std::string> failures;
    std::string note;

    void expect(bool ok, const std::string& what) {
        if (!ok && failures.size() < 5) {
            failures.push_back(what);
        }
    }
};

std::vector<std::string> all_doc_ids(const CorpusStore& store) {
    std::vector<std::string> ids;
    for (const auto& d : store.documents()) {
        ids.push_back(d.doc_id);
    }
    return ids;
}

RankedList shuffled(const std::vector<std::string>& items, std::size_t keep, Rng& rng) {
    auto ids = items;
    rng.shuffle(ids);
    ids.resize(std::min(keep, ids.size()));
    std::vector<RankedEntry> entries;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        entries.push_back({ids[i], static_cast<double>(ids.size() - i)});
    }
    return make_ranked("q", entries);
}

const psgrank::testing::Fixture& fixture() {
    static const auto f = psgrank::testing::make_fixture(40, 12, true);
    return f;
}

// ---------------------------------------------------------------------------

void formula_oracles(Report& r) {
    const auto start = Clock::now();
    const auto& f = fixture();
    const auto c = oracle::collection_of(*f.store);
    const auto ids = all_doc_ids(*f.store);
    for (const auto& q : f.queries) {
        for (const auto& d : f.store->documents()) {
            const auto ds = oracle::stems_of(d.tokens);
            r.expect(close(lm_similarity(q.stems(), d.tokens, *f.index, LmParams{1000.0}), oracle::lm_sim(q.stems(), ds, c, 1000.0)),
                     "lm_similarity " + d.doc_id);
            const auto got = sdm_components(q, d, *f.index, LmParams{1000.0});
            const auto want = oracle::sdm(q.stems(), ds, c, 1000.0);
            r.expect(close(got.unigram, want.t) && close(got.ordered, want.o) && close(got.unordered, want.u),
                     "sdm_components " + d.doc_id);
            const auto dv = doc_features(q, d, *f.index, LmParams{700.0});
            const auto dw = oracle::doc_features(q, d, c, f.analyzer->stopwords(), 700.0);
            for (std::size_t i = 0; i < dw.size(); ++i) {
                r.expect(close(dv.values[i], dw[i]), "doc feature " + doc_schema()->features()[i]);
            }
        }
        const auto set = extract_features(q, ids, *f.catalog, *f.index, f.resources, LmParams{800.0});
        const auto rows = oracle::passage_features(q, ids, *f.store, c, f.window, f.resources, 800.0);
        r.expect(rows.size() == set.passage_ids.size(), "passage count");
        std::map<std::string, double> qsf_want;
        for (std::size_t p = 0; p < rows.size() && p < set.passage_ids.size(); ++p) {
            for (std::size_t i = 0; i < 20; ++i) {
                r.expect(close(set.passage_vectors[p].values[i], rows[p].values[i]),
                         "passage feature " + passage_schema()->features()[i] + " " + rows[p].passage_id);
            }
            qsf_want[rows[p].passage_id] = 0.7 * rows[p].values[0] + 0.3 * rows[p].values[1];
        }
        for (const auto& e : rank_qsf(set, 0.3).entries) {
            r.expect(close(e.score, qsf_want.at(e.id)), "qsf " + e.id);
        }

        Rng rng(std::hash<std::string>{}(q.query_id));
        const auto docs = shuffled(set.doc_ids, set.doc_ids.size(), rng);
        const auto psgs = shuffled(set.passage_ids, set.passage_ids.size() / 2, rng);
        for (double nu : {0.0, 60.0}) {
            for (const auto& id : docs.ids()) {
                r.expect(close(rr_score(id, docs, nu), oracle::rr(docs.ids(), id, nu)), "rr_score");
            }
            for (double alpha : {0.0, 0.4, 0.9}) {
                for (const auto& e : rerank_rrf(docs, psgs, FusionParams{alpha, nu}).entries) {
                    r.expect(close(e.score, oracle::rrf_score(docs.ids(), psgs.ids(), e.id, alpha, nu)), "rrf " + e.id);
                }
            }
        }
        const auto ranges = passage_ranges(set);
        const auto smpd = build_smpd_vectors(set, psgs, 60.0);
        for (std::size_t d = 0; d < set.doc_ids.size(); ++d) {
            std::vector<std::string> own(set.passage_ids.begin() + static_cast<long>(ranges[d].begin),
                                         set.passage_ids.begin() + static_cast<long>(ranges[d].end));
            const auto want = oracle::smpd(own, psgs.ids(), 60.0);
            for (std::size_t i = 0; i < 7; ++i) {
                r.expect(close(smpd[d].values[6 + i], want[i]), "smpd " + set.doc_ids[d]);
            }
        }
        const auto model = make_query_model(q, *f.index);
        for (std::size_t d = 0; d < f.store->size(); d += 4) {
            const auto& doc = f.store->at(d);
            for (const auto& p : f.catalog->of_doc(d)) {
                const auto g = oracle::stems_of(doc.tokens, p.token_start, p.token_end);
                for (double sigma : {2.0, 25.0}) {
                    r.expect(close(plm_best_position(model, p.tokens(doc), sigma, LmParams{500.0}).similarity,
                                   oracle::plm_sim(q.stems(), g, c, sigma, 500.0)),
                             "plm " + p.passage_id);
                }
            }
        }
    }
    const double took = seconds_since(start);
    r.expect(took < 10.0, "took " + std::to_string(took) + " s");
    r.note = std::to_string(f.store->size()) + " docs, " + format_double(std::round(took * 100) / 100) + " s";
}

void grade_buckets(Report& r) {
    const std::vector<std::pair<double, int>> cases = {{0.05, 0}, {0.10, 1}, {0.25, 2}, {0.30, 2},
                                                       {0.50, 3}, {0.75, 4}, {0.99, 4}};
    for (const auto& [x, g] : cases) {
        r.expect(bucket_grade(x) == g, "bucket " + format_double(x));
    }
}

void jpds_schema(Report& r) {
    JpdsSpec spec;
    const auto plain = JpdsBuilder(spec).schema()->size();
    spec.include_query_length = true;
    const auto with_ql = JpdsBuilder(spec).schema()->size();
    r.expect(plain == 24, "JPDs schema has " + std::to_string(plain));
    r.expect(with_ql == 25, "JPDs+QL schema has " + std::to_string(with_ql));
}

void metric_oracles(Report& r) {
    Rng rng(17);
    for (int trial = 0; trial < 2000; ++trial) {
        std::vector<std::string> pool;
        for (int i = 0; i < 14; ++i) {
            pool.push_back("d" + std::to_string(i));
        }
        rng.shuffle(pool);
        std::map<std::string, int> grades;
        const std::size_t judged = 1 + rng.below(7);
        for (std::size_t i = 0; i < judged; ++i) {
            grades[pool[i]] = static_cast<int>(rng.below(4));
        }
        rng.shuffle(pool);
        pool.resize(rng.below(11));
        std::vector<RankedEntry> entries;
        for (std::size_t i = 0; i < pool.size(); ++i) {
            entries.push_back({pool[i], static_cast<double>(pool.size() - i)});
        }
        const auto run = make_ranked("q", entries);
        if (const auto ap = average_precision(run, grades)) {
            r.expect(*ap == oracle::average_precision(pool, grades) && *ap >= 0.0 && *ap <= 1.0, "map");
        }
        const double p10 = precision_at(run, grades, 10);
        const double n10 = ndcg_at(run, grades, 10);
        r.expect(p10 == oracle::precision_at(pool, grades, 10), "p@10");
        r.expect(n10 == oracle::ndcg_at(pool, grades, 10) && n10 >= 0.0 && n10 <= 1.0, "ndcg@10");
    }

    const auto& f = fixture();
    std::vector<std::string> passages;
    for (std::size_t d = 0; d < f.store->size(); ++d) {
        for (const auto& p : f.catalog->of_doc(d)) {
            passages.push_back(p.passage_id);
        }
    }
    for (int trial = 0; trial < 1000; ++trial) {
        JudgmentSet::DocSpans spans;
        std::map<std::string, std::vector<std::pair<std::size_t, std::size_t>>> oracle_spans;
        const std::size_t nspans = 1 + rng.below(4);
        for (std::size_t s = 0; s < nspans; ++s) {
            const auto& doc = f.store->at(rng.below(6));
            const std::size_t len = doc.raw_text.size();
            const std::size_t a = rng.below(len);
            const std::size_t b = a + 1 + rng.below(std::min<std::size_t>(len - a, 200));
            spans[doc.doc_id].push_back({a, b});
            oracle_spans[doc.doc_id].push_back({a, b});
        }
        std::vector<RankedEntry> entries;
        std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>> oracle_run;
        const std::size_t len = rng.below(11);
        for (std::size_t i = 0; i < len; ++i) {
            const Passage* p = f.catalog->find(passages[rng.below(std::min<std::size_t>(passages.size(), 40))]);
            entries.push_back({p->passage_id, static_cast<double>(len - i)});
            oracle_run.push_back({p->doc_id, {p->chars.start, p->chars.end}});
        }
        const auto got = interpolated_precision(RankedList{"q", entries}, spans, *f.catalog);
        if (!got) {
            r.expect(false, "iP undefined with relevant spans");
            continue;
        }
        const auto want = oracle::interpolated_precision(oracle_run, oracle_spans);
        for (std::size_t i = 0; i < kRecallPoints; ++i) {
            r.expect(got->curve[i] == want.curve[i], "iP point " + std::to_string(i));
            r.expect(got->curve[i] >= 0.0 && got->curve[i] <= 1.0, "iP range");
            r.expect(i == 0 || got->curve[i] <= got->curve[i - 1], "iP increases");
        }
        r.expect(close(got->maip, want.maip, 1e-12) && got->maip >= 0.0 && got->maip <= 1.0, "MAiP");
    }
}

SchemaPtr schema_of(std::size_t dim) {
    std::vector<std::string> names;
    for (std::size_t i = 0; i < dim; ++i) {
        names.push_back("f" + std::to_string(i));
    }
    return std::make_shared<const FeatureSchema>("T" + std::to_string(dim), names);
}

TrainingSet separable(std::uint64_t seed, std::size_t groups, std::size_t per_group, std::size_t dim) {
    Rng rng(seed);
    std::vector<double> hidden(dim);
    for (auto& h : hidden) {
        h = rng.uniform() * 2.0 - 1.0;
    }
    TrainingSet ts{schema_of(dim), {}};
    for (std::size_t q = 0; q < groups; ++q) {
        QueryGroup g;
        g.query_id = "q" + std::to_string(q);
        while (g.vectors.size() < per_group) {
            FeatureVector v{ts.schema, std::vector<double>(dim), g.query_id, "i" + std::to_string(g.vectors.size())};
            double s = 0.0;
            for (std::size_t k = 0; k < dim; ++k) {
                v.values[k] = rng.uniform();
                s += hidden[k] * v.values[k];
            }
            const double frac = s * 3.0 - std::floor(s * 3.0);
            if (frac < 0.15 || frac > 0.85) {
                continue;
            }
            g.grades.push_back(static_cast<int>(std::floor(s * 3.0)) + 3);
            g.vectors.push_back(std::move(v));
        }
        ts.groups.push_back(std::move(g));
    }
    return ts;
}

void trainer_properties(Report& r) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const auto ts = separable(seed, 6, 20, 5);
        PairwiseTrace trace;
        static_cast<void>(train_pairwise(ts, PairwiseOptions{1.0, 200, seed, 1'000'000}, &trace));
        r.expect(!trace.best_errors.empty() && trace.best_errors.back() == 0, "pairwise errors remain");
        r.expect(trace.epoch_errors.size() <= 200, "more than 200 epochs");

        CoordinateAscentTrace ca;
        static_cast<void>(train_coordinate_ascent(separable(seed + 10, 8, 15, 6), CoordinateAscentOptions{3, 25, seed, 10, {}}, &ca));
        for (const auto& steps : ca.accepted) {
            for (std::size_t i = 1; i < steps.size(); ++i) {
                r.expect(steps[i] > steps[i - 1], "coordinate ascent step decreased NDCG@10");
            }
        }
        const auto a = train_pairwise(ts, PairwiseOptions{0.1, 50, seed, 1'000'000}).serialize();
        const auto b = train_pairwise(ts, PairwiseOptions{0.1, 50, seed, 1'000'000}).serialize();
        const auto c = train_coordinate_ascent(ts, CoordinateAscentOptions{2, 10, seed, 10, {}}).serialize();
        const auto d = train_coordinate_ascent(ts, CoordinateAscentOptions{2, 10, seed, 10, {}}).serialize();
        r.expect(a == b && c == d, "retraining with one seed changed bytes");
    }
    Rng rng(4);
    const auto schema = schema_of(3);
    TrainingSet ts{schema, {}};
    for (int q = 0; q < 5; ++q) {
        QueryGroup g;
        g.query_id = "q" + std::to_string(q);
        for (int i = 0; i < 20; ++i) {
            const int grade = static_cast<int>(rng.below(5));
            g.vectors.push_back({schema, {rng.uniform(), static_cast<double>(grade), rng.uniform() * 4.0}, g.query_id,
                                 "i" + std::to_string(i)});
            g.grades.push_back(grade);
        }
        ts.groups.push_back(std::move(g));
    }
    CoordinateAscentTrace trace;
    static_cast<void>(train_coordinate_ascent(ts, CoordinateAscentOptions{}, &trace));
    double best = 0.0;
    for (double o : trace.restart_objective) {
        best = std::max(best, o);
    }
    r.expect(best == 1.0, "grade feature reached NDCG@10 " + format_double(best));
}

// ---------------------------------------------------------------------------

struct FullRun {
    std::map<std::string, std::string> files;
    Json report;
    double seconds = 0.0;
};

ExperimentConfig full_config(const std::filesystem::path& dir) {
    Json j = {{"corpus", "corpus.jsonl"},
              {"topics", "topics.tsv"},
              {"doc_qrels", "qrels.txt"},
              {"passage_qrels", "passage_qrels.tsv"},
              {"resources",
               {{"embeddings", "embeddings.txt"}, {"synonyms", "synonyms.txt"}, {"entities", "entities.tsv"}, {"esa", true}}},
              {"segmentation", {{"mode", "window"}, {"window_len", 300}}},
              {"methods", {"LM", "RRF", "JPDs", "JPDs-lowest"}},
              {"seed", 7}};
    return config_from_json(j, dir);
}

FullRun full_run(const std::filesystem::path& dir) {
    const auto start = Clock::now();
    auto out = run_experiment(full_config(dir));
    return {std::move(out.files), std::move(out.report), seconds_since(start)};
}

const std::filesystem::path& full_dir() {
    static const auto dir = [] {
        auto d = std::filesystem::temp_directory_path() / "psgrank_acceptance";
        std::filesystem::remove_all(d);
        SyntheticParams p;  // 500 documents, 30 queries, 300-token windows
        write_synthetic(generate_synthetic(p), d);
        return d;
    }();
    return dir;
}

const FullRun& first_run() {
    static const FullRun run = full_run(full_dir());
    return run;
}

double mean_map(const Json& report, const std::string& m) {
    return report.at("methods").at(m).at("mean").at("map").get<double>();
}

void synthetic_effectiveness(Report& r) {
    const SyntheticParams p;
    r.expect(p.documents == 500 && p.queries == 30 && p.window == 300, "synthetic defaults changed");
    const auto& run = first_run();
    const double lm = mean_map(run.report, "LM");
    const double rrf = mean_map(run.report, "RRF");
    const double jpds = mean_map(run.report, "JPDs");
    const double lowest = mean_map(run.report, "JPDs-lowest");
    r.expect(rrf >= lm + 0.05, "RRF MAP not above LM + 0.05");
    r.expect(jpds >= lm + 0.05, "JPDs MAP not above LM + 0.05");
    r.expect(lowest <= jpds, "JPDs-lowest above JPDs");
    r.expect(run.seconds < 300.0, "took " + std::to_string(run.seconds) + " s");
    const auto fmt = [](double x) { return format_double(std::round(x * 1000) / 1000); };
    r.note = "MAP LM " + fmt(lm) + ", RRF " + fmt(rrf) + ", JPDs " + fmt(jpds) + ", JPDs-lowest " + fmt(lowest) +
             ", " + fmt(run.seconds) + " s";
}

void degenerate_identities(Report& r) {
    const auto& f = fixture();
    const auto ids = all_doc_ids(*f.store);
    const auto set = extract_features(f.queries[0], ids, *f.catalog, *f.index, f.resources, LmParams{1000.0});
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        const auto docs = shuffled(set.doc_ids, set.doc_ids.size(), rng);
        const auto psgs = shuffled(set.passage_ids, rng.below(set.passage_ids.size() + 1), rng);
        const auto other = shuffled(set.doc_ids, set.doc_ids.size(), rng);
        for (double nu : {0.0, 60.0}) {
            r.expect(rerank_rrf(docs, psgs, FusionParams{1.0, nu}).ids() == docs.ids(), "RRF alpha 1");
            r.expect(rerank_fpd(docs, other, FusionParams{1.0, nu}).ids() == docs.ids(), "FPD alpha 1");
        }
    }
    for (const auto& q : f.queries) {
        const auto model = make_query_model(q, *f.index);
        for (std::size_t d = 0; d < f.store->size(); ++d) {
            const auto& doc = f.store->at(d);
            for (const auto& p : f.catalog->of_doc(d)) {
                const double plm = plm_best_position(model, p.tokens(doc), 1e6, LmParams{1000.0}).similarity;
                const double whole = similarity(model, p.tokens(doc), LmParams{1000.0});
                r.expect(close(plm, whole, 1e-6), "PLM sigma 1e6 " + p.passage_id);
            }
        }
    }
}

void held_out_isolation(Report& r) {
    const auto dir = std::filesystem::temp_directory_path() / "psgrank_acceptance_small";
    auto j = psgrank::testing::write_dataset(dir, psgrank::testing::small_synthetic());
    j["methods"] = {"SMPD", "JPDs", "JPD-2", "JPDm-avg", "FPD", "init-LTR", "PsgLTR", "RRF", "QSF", "PLM", "DocPsg"};
    const Experiment e(config_from_json(j, dir));
    std::size_t models = 0;
    for (const auto& test : e.query_ids()) {
        auto poisoned = e.judgments();
        for (const auto& d : e.store().documents()) {
            poisoned.add_doc_grade(test, d.doc_id, 4);
            poisoned.add_span(test, d.doc_id, CharRange{0, 10});
        }
        const auto clean = e.run_fold(test, e.judgments());
        const auto dirty = e.run_fold(test, poisoned);
        r.expect(clean.models == dirty.models, "models changed in fold " + test);
        models += clean.models.size();
    }
    r.expect(models > 0, "no models trained");
    r.note = std::to_string(models) + " fold models compared";
}

void repeatability(Report& r) {
    const auto& a = first_run();
    const auto b = full_run(full_dir());
    r.expect(a.files.size() == b.files.size(), "different file sets");
    std::size_t runs = 0;
    for (const auto& [path, bytes] : a.files) {
        const auto it = b.files.find(path);
        r.expect(it != b.files.end() && it->second == bytes, path + " differs");
        runs += path.rfind("runs/", 0) == 0 ? 1 : 0;
    }
    r.expect(a.files.count("report.json") == 1 && runs > 0, "missing run files or report");
    r.note = std::to_string(a.files.size()) + " files identical";
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<void(Report&)>>> criteria = {
        {"formula oracles match to 1e-9 within 10 s", formula_oracles},
        {"passage grade buckets", grade_buckets},
        {"JPDs schema size 24 (25 with QueryLength)", jpds_schema},
        {"metric oracles, iP monotone, metrics in [0,1]", metric_oracles},
        {"trainer convergence, monotonicity and determinism", trainer_properties},
        {"synthetic corpus: RRF and JPDs beat LM by 0.05 MAP, JPDs-lowest <= JPDs", synthetic_effectiveness},
        {"degenerate parameters reproduce their inputs", degenerate_identities},
        {"held-out judgments never reach fold models", held_out_isolation},
        {"repeated full run is byte-identical", repeatability},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Report r;
        try {
            criteria[i].second(r);
        } catch (const std::exception& e) {
            r.failures.push_back(std::string("exception: ") + e.what());
        }
        const bool ok = r.failures.empty();
        failed += ok ? 0 : 1;
        std::cout << (ok ? "PASS " : "FAIL ") << (i + 1) << ' ' << criteria[i].first;
        if (!r.note.empty()) {
            std::cout << " (" << r.note << ")";
        }
        std::cout << '\n';
        for (const auto& msg : r.failures) {
            std::cout << "    " << msg << '\n';
        }
        std::cout.flush();
    }
    return failed == 0 ? 0 : 1;
}
