#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "fixtures.hpp"
#include "psgrank/config.hpp"
#include "psgrank/eval.hpp"

using namespace psgrank;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    int code = -1;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream s;
    s << f.rdbuf();
    return s.str();
}

const fs::path& work() {
    static const auto dir = [] {
        auto d = fs::temp_directory_path() / "psgrank_cli";
        auto cfg = psgrank::testing::write_dataset(d / "data", psgrank::testing::small_synthetic());
        std::ofstream(d / "data" / "config.json") << cfg.dump(2);
        return d;
    }();
    return dir;
}

/// Runs the CLI with `args` inside the shared work directory.
Outcome cli(const std::string& args) {
    const auto out = work() / "stdout.txt";
    const auto err = work() / "stderr.txt";
    const std::string cmd = std::string(PSGRANK_CLI) + " --workdir " + work().string() + " " + args + " >" +
                            out.string() + " 2>" + err.string();
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
}

void write_config(const std::string& name, const Json& j) { std::ofstream(work() / "data" / name) << j.dump(2); }

Json base_config() {
    static_cast<void>(work());
    return psgrank::testing::dataset_config(psgrank::testing::small_synthetic());
}

}  // namespace

TEST(Cli, HelpAndUsageErrors) {
    EXPECT_EQ(cli("--help").code, 0);
    EXPECT_EQ(cli("index").code, 1);  // missing required options
    EXPECT_EQ(cli("no-such-command").code, 1);
}

TEST(Cli, IndexWritesAManifest) {
    const auto r = cli("index --corpus data/corpus.jsonl --out idx");
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("documents 90"), std::string::npos) << r.out;
    EXPECT_TRUE(fs::exists(work() / "idx" / "manifest.json"));
}

TEST(Cli, ValidationAndRuntimeErrorsHaveDistinctCodes) {
    const auto missing = cli("index --corpus data/nope.jsonl --out idx2");
    EXPECT_EQ(missing.code, 1);
    EXPECT_NE(missing.err.find("error"), std::string::npos);
    // The output path runs through a regular file, which fails at write time.
    std::ofstream(work() / "blocker") << "x";
    const auto blocked = cli("index --corpus data/corpus.jsonl --out blocker/idx");
    EXPECT_EQ(blocked.code, 2) << blocked.err;
}

TEST(Cli, SegmentAndFeatures) {
    const auto seg = cli("segment --config data/config.json --out passages.tsv");
    ASSERT_EQ(seg.code, 0) << seg.err;
    EXPECT_FALSE(slurp(work() / "passages.tsv").empty());
    const auto feat = cli("features --config data/config.json --out feats");
    ASSERT_EQ(feat.code, 0) << feat.err;
    EXPECT_EQ(slurp(work() / "feats" / "doc.svm").rfind("# schema", 0), 0u);
    EXPECT_FALSE(slurp(work() / "feats" / "passage.svm").empty());
}

TEST(Cli, TrainIsDeterministicPerSeed) {
    ASSERT_EQ(cli("features --config data/config.json --out feats").code, 0);
    ASSERT_EQ(cli("train --data feats/doc.svm --seed 4 --out m1.model").code, 0);
    ASSERT_EQ(cli("train --data feats/doc.svm --seed 4 --out m2.model").code, 0);
    EXPECT_EQ(slurp(work() / "m1.model"), slurp(work() / "m2.model"));
    EXPECT_FALSE(slurp(work() / "m1.model").empty());
    EXPECT_EQ(cli("train --data feats/doc.svm --trainer nope --out m3.model").code, 1);
}

TEST(Cli, RunWritesTheResolvedConfig) {
    const auto r = cli("--set seed=9 --set grids.mu_init=1500 run --config data/config.json --out runs/a");
    ASSERT_EQ(r.code, 0) << r.err;
    const auto resolved = Json::parse(slurp(work() / "runs" / "a" / "config.json"));
    EXPECT_EQ(resolved.at("seed").get<int>(), 9);
    EXPECT_EQ(resolved.at("grids").at("mu_init").get<double>(), 1500.0);
    EXPECT_TRUE(fs::exists(work() / "runs" / "a" / "report.json"));
    EXPECT_TRUE(fs::exists(work() / "runs" / "a" / "runs" / "JPDs.run"));
}

TEST(Cli, OverridesAreScalarOnly) {
    const auto r = cli("--set methods=LM run --config data/config.json --out runs/b");
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("methods"), std::string::npos) << r.err;
    EXPECT_EQ(cli("--set no_such_field=1 run --config data/config.json --out runs/b").code, 1);
}

TEST(Cli, UnknownMethodNamesTheAllowedValues) {
    auto j = base_config();
    j["methods"] = {"LM", "Magic"};
    write_config("bad_method.json", j);
    const auto r = cli("run --config data/bad_method.json --out runs/c");
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("Magic"), std::string::npos) << r.err;
    for (const auto& m : {"LM", "RRF", "JPDs-lowest", "FPD", "QSF", "PLM", "PsgLTR"}) {
        EXPECT_NE(r.err.find(m), std::string::npos) << m;
    }
}

TEST(Cli, SingleQueryDatasetIsAConfigError) {
    std::ofstream(work() / "data" / "one_qrels.txt") << "Q1 0 D0001 1\n";
    std::ofstream(work() / "data" / "no_spans.tsv") << "";
    auto j = base_config();
    j["doc_qrels"] = "one_qrels.txt";
    j["passage_qrels"] = "no_spans.tsv";
    j["methods"] = {"LM", "RRF"};
    write_config("single.json", j);
    const auto r = cli("run --config data/single.json --out runs/d");
    EXPECT_EQ(r.code, 1) << r.err;
    EXPECT_NE(r.err.find("at least 2"), std::string::npos) << r.err;
}

TEST(Cli, EvalPerfectAndEmptyRuns) {
    const auto judg = load_judgments(work() / "data" / "qrels.txt", {});
    std::ofstream perfect(work() / "perfect.run");
    for (const auto& q : judg.query_ids()) {
        int rank = 0;
        for (const auto& [doc, g] : judg.doc_grades(q)) {
            if (g > 0) {
                ++rank;
                perfect << q << " Q0 " << doc << ' ' << rank << ' ' << (100 - rank) << " ideal\n";
            }
        }
    }
    perfect.close();
    std::ofstream(work() / "empty.run") << "";

    const auto good = cli("eval --run perfect.run --qrels data/qrels.txt --json");
    ASSERT_EQ(good.code, 0) << good.err;
    const auto gj = Json::parse(good.out);
    EXPECT_EQ(gj.at("mean").at("map").get<double>(), 1.0);
    EXPECT_EQ(gj.at("mean").at("ndcg10").get<double>(), 1.0);

    const auto none = cli("eval --run empty.run --qrels data/qrels.txt --json");
    ASSERT_EQ(none.code, 0) << none.err;
    const auto nj = Json::parse(none.out);
    for (const auto& key : {"map", "p10", "ndcg10"}) {
        EXPECT_EQ(nj.at("mean").at(key).get<double>(), 0.0) << key;
    }
    const auto text = cli("eval --run perfect.run --qrels data/qrels.txt");
    EXPECT_NE(text.out.find("map\tall\t1"), std::string::npos) << text.out;
    EXPECT_EQ(cli("eval --run perfect.run").code, 1);
    EXPECT_EQ(cli("eval --run missing.run --qrels data/qrels.txt").code, 1);
}

TEST(Cli, EvalPassageLevel) {
    auto j = base_config();
    j["methods"] = {"QSF"};
    write_config("qsf.json", j);
    ASSERT_EQ(cli("run --config data/qsf.json --out runs/f").code, 0);
    const auto r = cli("eval --run runs/f/runs/QSF.run --config data/qsf.json --level passage --json");
    ASSERT_EQ(r.code, 0) << r.err;
    const auto report = Json::parse(slurp(work() / "runs" / "f" / "report.json"));
    EXPECT_NEAR(Json::parse(r.out).at("mean").at("maip").get<double>(),
                report.at("methods").at("QSF").at("mean").at("maip").get<double>(), 1e-12);
}

TEST(Cli, AblateReportsUnknownFeaturesWithTheSchema) {
    const auto bad = cli("ablate --config data/config.json --feature Bogus --out abl");
    EXPECT_EQ(bad.code, 1);
    EXPECT_NE(bad.err.find("Bogus"), std::string::npos);
    EXPECT_NE(bad.err.find("d:SDM-T"), std::string::npos) << bad.err;
    EXPECT_NE(bad.err.find("p:Entity"), std::string::npos) << bad.err;
}

TEST(Cli, AblateConstantFeatureHasZeroDelta) {
    const auto r = cli("--set include_query_length=true ablate --config data/config.json --feature QueryLength "
                       "--out abl");
    ASSERT_EQ(r.code, 0) << r.err;
    const auto report = Json::parse(slurp(work() / "abl" / "ablation.json"));
    ASSERT_FALSE(report.at("rows").empty());
    for (const auto& row : report.at("rows")) {
        EXPECT_EQ(row.at("delta").get<double>(), 0.0) << row.dump();
    }
}

TEST(Cli, PairedTTest) {
    std::ofstream(work() / "a.txt") << "q1 0.5\nq2 0.6\nq3 0.9\nq4 0.4\n";
    std::ofstream(work() / "b.txt") << "q1 0.4\nq2 0.5\nq3 0.6\nq4 0.35\nq9 1\n";
    const auto r = cli("ttest a.txt b.txt --corrections 2");
    ASSERT_EQ(r.code, 0) << r.err;
    const auto j = Json::parse(r.out);
    EXPECT_EQ(j.at("n").get<int>(), 4);
    EXPECT_GT(j.at("t").get<double>(), 0.0);
    EXPECT_GT(j.at("p").get<double>(), 0.0);
    EXPECT_LT(j.at("p").get<double>(), 1.0);

    const auto same = cli("ttest a.txt a.txt");
    ASSERT_EQ(same.code, 0) << same.err;
    EXPECT_EQ(Json::parse(same.out).at("p").get<double>(), 1.0);
    EXPECT_EQ(cli("ttest a.txt b.txt --corrections 0").code, 1);
}

TEST(Cli, SynthWritesARunnableConfig) {
    const auto r = cli("synth --out synth --seed 3");
    ASSERT_EQ(r.code, 0) << r.err;
    const auto cfg = Json::parse(slurp(work() / "synth" / "config.json"));
    EXPECT_EQ(cfg.at("seed").get<int>(), 3);
    EXPECT_TRUE(fs::exists(work() / "synth" / "corpus.jsonl"));
}
