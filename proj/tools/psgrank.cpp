#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "psgrank/experiment.hpp"
#include "psgrank/synthetic.hpp"

namespace fs = std::filesystem;
using namespace psgrank;

namespace {

struct Globals {
    std::string workdir = ".";
    std::vector<std::string> overrides;

    [[nodiscard]] fs::path path(const std::string& p) const {
        fs::path x(p);
        return x.is_absolute() ? x : fs::path(workdir) / x;
    }
};

void write_file(const fs::path& path, const std::string& contents) {
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary);
    out << contents;
    if (!out) {
        throw RuntimeError("failed writing " + path.string());
    }
}

std::ifstream open_input(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ValidationError("cannot open " + path.string());
    }
    return in;
}

/// Loads a JSON config, applies --set overrides and resolves paths against
/// the config file's directory.
ExperimentConfig load_config(const Globals& g, const std::string& file) {
    const auto path = g.path(file);
    auto j = read_json_file(path);
    for (const auto& o : g.overrides) {
        apply_override(j, o);
    }
    return config_from_json(j, path.parent_path());
}

std::shared_ptr<const Analyzer> analyzer_of(const ExperimentConfig& cfg) {
    auto stop = cfg.stopwords.empty() ? default_stopwords() : load_stopwords(cfg.resolve(cfg.stopwords));
    return std::make_shared<const Analyzer>(make_stemmer(cfg.stemmer), std::move(stop));
}

std::shared_ptr<const CorpusStore> store_of(const ExperimentConfig& cfg,
                                            const std::shared_ptr<const Analyzer>& analyzer) {
    auto ingest = ingest_corpus(cfg.resolve(cfg.corpus), parse_corpus_format(cfg.corpus_format), analyzer);
    for (const auto& w : ingest.warnings) {
        std::cerr << "warning: " << w << '\n';
    }
    return std::make_shared<const CorpusStore>(std::move(ingest.store));
}

fs::path output_dir(const Globals& g, const ExperimentConfig& cfg, const std::string& out) {
    return g.path(out.empty() ? cfg.output : out);
}

// ---------------------------------------------------------------------------

int cmd_index(const Globals& g, const std::string& corpus, const std::string& format, const std::string& out) {
    auto analyzer = std::make_shared<const Analyzer>();
    auto ingest = ingest_corpus(g.path(corpus), parse_corpus_format(format), analyzer);
    for (const auto& w : ingest.warnings) {
        std::cerr << "warning: " << w << '\n';
    }
    auto store = std::make_shared<const CorpusStore>(std::move(ingest.store));
    auto index = build_index(store);
    const auto dir = g.path(out);
    save_store(*store, dir);
    save_index(*index, dir);
    std::cout << "documents " << store->size() << "\nterms " << index->vocabulary_size() << "\ntokens "
              << index->collection_length() << "\nmanifest " << (dir / "manifest.json").string() << '\n';
    return 0;
}

int cmd_segment(const Globals& g, const std::string& config, const std::string& out) {
    const auto cfg = load_config(g, config);
    auto store = store_of(cfg, analyzer_of(cfg));
    PassageCatalog catalog(store, cfg.segmentation);
    std::ostringstream tsv;
    catalog.write_tsv(tsv);
    write_file(g.path(out), tsv.str());
    std::cout << "passages " << catalog.total_passages() << '\n';
    return 0;
}

int cmd_features(const Globals& g, const std::string& config, const std::string& out, double mu) {
    const auto cfg = load_config(g, config);
    auto analyzer = analyzer_of(cfg);
    auto store = store_of(cfg, analyzer);
    auto index = build_index(store);
    auto catalog = std::make_shared<const PassageCatalog>(store, cfg.segmentation);
    SemanticResources res;
    if (!cfg.embeddings.empty()) {
        load_embeddings(res, cfg.resolve(cfg.embeddings), *analyzer);
    }
    if (!cfg.synonyms.empty()) {
        load_synonyms(res, cfg.resolve(cfg.synonyms), *analyzer);
    }
    if (!cfg.entities.empty()) {
        load_entities(res, cfg.resolve(cfg.entities));
    }
    if (cfg.esa) {
        res.esa = std::make_shared<const EsaSpace>(index);
    }
    JudgmentSet judg;
    if (!cfg.doc_qrels.empty() || !cfg.passage_qrels.empty()) {
        judg = load_judgments(cfg.resolve(cfg.doc_qrels), cfg.resolve(cfg.passage_qrels));
    }
    if (mu <= 0.0) {
        mu = cfg.grids.mu_init;
    }
    std::ostringstream docs;
    std::ostringstream psgs;
    for (const auto& q : load_topics(cfg.resolve(cfg.topics), *analyzer)) {
        const auto initial = retrieve_lm(q, *index, LmParams{cfg.grids.mu_init}, cfg.doc_cutoff);
        auto set = extract_features(q, initial.ids(), *catalog, *index, res, LmParams{mu});
        minmax_normalize(set.doc_vectors);
        minmax_normalize(set.passage_vectors);
        std::vector<int> dg;
        for (const auto& v : set.doc_vectors) {
            dg.push_back(judg.doc_grade(q.query_id, v.item_id));
        }
        std::vector<int> pg;
        for (const auto& v : set.passage_vectors) {
            pg.push_back(judg.passage_grade(q.query_id, *catalog->find(v.item_id)));
        }
        std::ostringstream d1;
        write_svmlight(d1, set.doc_vectors, dg);
        std::ostringstream p1;
        write_svmlight(p1, set.passage_vectors, pg);
        // Keep a single schema header per file.
        const auto strip = [&](const std::string& s, std::ostringstream& dst) {
            if (dst.tellp() > 0 && s.rfind("# schema ", 0) == 0) {
                dst << s.substr(s.find('\n') + 1);
            } else {
                dst << s;
            }
        };
        strip(d1.str(), docs);
        strip(p1.str(), psgs);
    }
    const auto dir = g.path(out);
    write_file(dir / "doc.svm", docs.str());
    write_file(dir / "passage.svm", psgs.str());
    std::cout << "wrote " << (dir / "doc.svm").string() << " and " << (dir / "passage.svm").string() << '\n';
    return 0;
}

int cmd_train(const Globals& g, const std::string& data, const std::string& trainer, double c,
              std::size_t epochs, std::uint64_t seed, const std::string& out) {
    auto in = open_input(g.path(data));
    const auto svm = read_svmlight(in);
    TrainingSet ts;
    ts.schema = svm.schema;
    std::map<std::string, std::size_t> group_of;
    for (std::size_t i = 0; i < svm.vectors.size(); ++i) {
        const auto& qid = svm.vectors[i].query_id;
        auto [it, fresh] = group_of.emplace(qid, ts.groups.size());
        if (fresh) {
            ts.groups.push_back({qid, {}, {}});
        }
        ts.groups[it->second].vectors.push_back(svm.vectors[i]);
        ts.groups[it->second].grades.push_back(svm.grades[i]);
    }
    LinearModel model;
    if (parse_trainer(trainer) == Trainer::coordinate_ascent) {
        CoordinateAscentOptions o;
        o.seed = seed;
        model = train_coordinate_ascent(ts, o);
    } else {
        PairwiseOptions o;
        o.c = c;
        o.epochs = epochs;
        o.seed = seed;
        model = train_pairwise(ts, o);
    }
    write_file(g.path(out), model.serialize());
    std::cout << "model " << g.path(out).string() << '\n';
    return 0;
}

int cmd_run(const Globals& g, const std::string& config, const std::string& out) {
    const auto cfg = load_config(g, config);
    const auto result = run_experiment(cfg);
    const auto dir = output_dir(g, cfg, out);
    write_output(result, dir);
    for (const auto& [m, mj] : result.report["methods"].items()) {
        std::cout << m;
        for (const auto& [k, v] : mj["mean"].items()) {
            std::cout << ' ' << k << '=' << format_double(v.get<double>());
        }
        std::cout << '\n';
    }
    std::cout << "report " << (dir / "report.json").string() << '\n';
    return 0;
}

int cmd_eval(const Globals& g, const std::string& run_file, const std::string& qrels, const std::string& config,
             const std::string& level, bool json) {
    auto in = open_input(g.path(run_file));
    const auto runs = read_trec_run(in);
    Json out;
    Json per = Json::object();
    std::map<std::string, std::vector<double>> cols;
    if (level == "document") {
        JudgmentSet judg;
        if (!qrels.empty()) {
            judg = load_judgments(g.path(qrels), {});
        } else if (!config.empty()) {
            const auto cfg = load_config(g, config);
            judg = load_judgments(cfg.resolve(cfg.doc_qrels), {});
        } else {
            throw ValidationError("eval needs --qrels or --config");
        }
        for (const auto& qid : judg.query_ids()) {
            const auto& grades = judg.doc_grades(qid);
            RankedList empty;
            empty.query_id = qid;
            const auto it = runs.find(qid);
            const RankedList& list = it == runs.end() ? empty : it->second;
            const auto ap = average_precision(list, grades, 1000);
            if (!ap) {
                continue;
            }
            Json qm = {{"map", *ap}, {"p10", precision_at(list, grades, 10)}, {"ndcg10", ndcg_at(list, grades, 10)}};
            for (const auto& [k, v] : qm.items()) {
                cols[k].push_back(v.get<double>());
            }
            per[qid] = qm;
        }
    } else if (level == "passage") {
        if (config.empty()) {
            throw ValidationError("passage-level eval needs --config (corpus and segmentation)");
        }
        const auto cfg = load_config(g, config);
        auto store = store_of(cfg, analyzer_of(cfg));
        PassageCatalog catalog(store, cfg.segmentation);
        auto judg = load_judgments({}, cfg.resolve(cfg.passage_qrels));
        for (const auto& qid : judg.query_ids()) {
            RankedList empty;
            empty.query_id = qid;
            const auto it = runs.find(qid);
            const RankedList& list = it == runs.end() ? empty : it->second;
            auto ip = interpolated_precision(list, judg.relevant_spans(qid, &catalog), catalog, cfg.passage_cutoff);
            if (!ip) {
                continue;
            }
            Json qm = {{"maip", ip->maip}, {"ip0.01", ip->at(0.01)}, {"ip0.1", ip->at(0.1)}};
            for (const auto& [k, v] : qm.items()) {
                cols[k].push_back(v.get<double>());
            }
            per[qid] = qm;
        }
    } else {
        throw ValidationError("--level must be document or passage");
    }
    Json mean = Json::object();
    for (const auto& [k, v] : cols) {
        mean[k] = mean_of(v);
    }
    out["per_query"] = per;
    out["mean"] = mean;
    if (json) {
        std::cout << out.dump(2) << '\n';
        return 0;
    }
    for (const auto& [qid, qm] : per.items()) {
        for (const auto& [k, v] : qm.items()) {
            std::cout << k << '\t' << qid << '\t' << format_double(v.get<double>()) << '\n';
        }
    }
    for (const auto& [k, v] : mean.items()) {
        std::cout << k << "\tall\t" << format_double(v.get<double>()) << '\n';
    }
    return 0;
}

int cmd_ablate(const Globals& g, const std::string& config, const std::vector<std::string>& features,
               const std::string& out) {
    const auto cfg = load_config(g, config);
    std::vector<std::vector<std::string>> groups;
    for (const auto& f : features) {
        groups.push_back(split_char(f, ','));
    }
    const auto report = run_ablation(cfg, groups);
    const auto dir = output_dir(g, cfg, out);
    write_file(dir / "ablation.json", report.dump(2) + "\n");
    write_file(dir / "config.json", cfg.to_json().dump(2) + "\n");
    for (const auto& row : report["rows"]) {
        std::cout << row["method"].get<std::string>() << " -";
        for (const auto& f : row["excluded"]) {
            std::cout << ' ' << f.get<std::string>();
        }
        std::cout << " delta=" << format_double(row["delta"].get<double>()) << '\n';
    }
    return 0;
}

/// Reads "query value" lines.
std::map<std::string, double> read_per_query(const fs::path& path) {
    auto in = open_input(path);
    std::map<std::string, double> out;
    std::string line;
    while (std::getline(in, line)) {
        const auto parts = split_ws(line);
        if (parts.empty() || parts[0][0] == '#') {
            continue;
        }
        if (parts.size() != 2) {
            throw ValidationError(path.string() + ": expected 'query value' lines");
        }
        out[parts[0]] = parse_double(parts[1], path.string());
    }
    return out;
}

int cmd_ttest(const Globals& g, const std::string& a_file, const std::string& b_file, double alpha,
              std::size_t corrections) {
    const auto a = read_per_query(g.path(a_file));
    const auto b = read_per_query(g.path(b_file));
    std::vector<double> xs;
    std::vector<double> ys;
    for (const auto& [q, v] : a) {
        if (auto it = b.find(q); it != b.end()) {
            xs.push_back(v);
            ys.push_back(it->second);
        }
    }
    const auto r = paired_ttest(xs, ys, alpha, corrections);
    Json j = {{"n", xs.size()}, {"t", r.t}, {"p", r.p}, {"df", r.df}, {"significant", r.significant}};
    std::cout << j.dump(2) << '\n';
    return 0;
}

int cmd_synth(const Globals& g, const std::string& out, std::uint64_t seed) {
    SyntheticParams p;
    p.seed = seed;
    const auto dir = g.path(out);
    write_synthetic(generate_synthetic(p), dir);
    Json cfg = {{"corpus", "corpus.jsonl"},
                {"topics", "topics.tsv"},
                {"doc_qrels", "qrels.txt"},
                {"passage_qrels", "passage_qrels.tsv"},
                {"resources", {{"embeddings", "embeddings.txt"}, {"synonyms", "synonyms.txt"}, {"entities", "entities.tsv"}}},
                {"methods", {"LM", "RRF", "JPDs", "JPDs-lowest", "QSF", "PsgLTR"}},
                {"seed", seed},
                {"output", "run"}};
    write_file(dir / "config.json", cfg.dump(2) + "\n");
    std::cout << "synthetic data in " << dir.string() << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Passage-based document and passage retrieval experiments"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--workdir", g.workdir, "Base directory for relative paths")->capture_default_str();
    app.add_option("--set", g.overrides, "Override a scalar config field, e.g. --set grids.mu_init=1500");

    std::string corpus;
    std::string format = "jsonl";
    std::string out;
    std::string config;
    auto* index = app.add_subcommand("index", "Ingest a corpus and build the positional index");
    index->add_option("--corpus", corpus, "Corpus file")->required();
    index->add_option("--format", format, "jsonl or trecweb")->capture_default_str();
    index->add_option("--out", out, "Output directory")->required();

    auto* segment = app.add_subcommand("segment", "Write the passage table of a configured corpus");
    segment->add_option("--config", config, "Experiment config (JSON)")->required();
    segment->add_option("--out", out, "Output TSV")->required();

    double mu = 0.0;
    auto* features = app.add_subcommand("features", "Write normalized doc and passage features as SVMlight");
    features->add_option("--config", config, "Experiment config (JSON)")->required();
    features->add_option("--out", out, "Output directory")->required();
    features->add_option("--mu", mu, "Dirichlet mu for feature extraction (default: mu_init)");

    std::string data;
    std::string trainer = "pairwise_hinge";
    double c = 0.01;
    std::size_t epochs = 30;
    std::uint64_t seed = 1;
    auto* train = app.add_subcommand("train", "Train a linear ranker on an SVMlight file");
    train->add_option("--data", data, "SVMlight training file")->required();
    train->add_option("--trainer", trainer, "pairwise_hinge or coordinate_ascent")->capture_default_str();
    train->add_option("--c", c, "Regularization constant")->capture_default_str();
    train->add_option("--epochs", epochs, "Pairwise epochs")->capture_default_str();
    train->add_option("--seed", seed, "Random seed")->capture_default_str();
    train->add_option("--out", out, "Model file")->required();

    auto* run = app.add_subcommand("run", "Run a leave-one-out experiment");
    run->add_option("--config", config, "Experiment config (JSON)")->required();
    run->add_option("--out", out, "Run directory (default: config 'output')");

    std::string run_file;
    std::string qrels;
    std::string level = "document";
    bool json = false;
    auto* eval = app.add_subcommand("eval", "Evaluate a TREC run file");
    eval->add_option("--run", run_file, "TREC run file")->required();
    eval->add_option("--qrels", qrels, "Document qrels (document level)");
    eval->add_option("--config", config, "Experiment config (passage level, or qrels source)");
    eval->add_option("--level", level, "document or passage")->capture_default_str();
    eval->add_flag("--json", json, "Machine-readable output");

    std::vector<std::string> excluded;
    auto* ablate = app.add_subcommand("ablate", "Retrain with features excluded and compare");
    ablate->add_option("--config", config, "Experiment config (JSON)")->required();
    ablate->add_option("--feature", excluded, "Feature or comma-separated group; repeatable")->required();
    ablate->add_option("--out", out, "Output directory (default: config 'output')");

    std::string a_file;
    std::string b_file;
    double alpha = 0.05;
    std::size_t corrections = 1;
    auto* ttest = app.add_subcommand("ttest", "Paired two-tailed t-test over per-query values");
    ttest->add_option("a", a_file, "File of 'query value' lines")->required();
    ttest->add_option("b", b_file, "File of 'query value' lines")->required();
    ttest->add_option("--alpha", alpha, "Significance level")->capture_default_str();
    ttest->add_option("--corrections", corrections, "Bonferroni comparisons")->capture_default_str();

    std::uint64_t synth_seed = 7;
    auto* synth = app.add_subcommand("synth", "Generate the synthetic passage-retrieval corpus");
    synth->add_option("--out", out, "Output directory")->required();
    synth->add_option("--seed", synth_seed, "Generator seed")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }
    try {
        if (*index) {
            return cmd_index(g, corpus, format, out);
        }
        if (*segment) {
            return cmd_segment(g, config, out);
        }
        if (*features) {
            return cmd_features(g, config, out, mu);
        }
        if (*train) {
            return cmd_train(g, data, trainer, c, epochs, seed, out);
        }
        if (*run) {
            return cmd_run(g, config, out);
        }
        if (*eval) {
            return cmd_eval(g, run_file, qrels, config, level, json);
        }
        if (*ablate) {
            return cmd_ablate(g, config, excluded, out);
        }
        if (*ttest) {
            return cmd_ttest(g, a_file, b_file, alpha, corrections);
        }
        if (*synth) {
            return cmd_synth(g, out, synth_seed);
        }
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "runtime error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
