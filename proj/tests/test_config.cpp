#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "psgrank/config.hpp"

using namespace psgrank;

namespace {

const std::filesystem::path& data_dir() {
    static const auto dir = [] {
        auto d = std::filesystem::temp_directory_path() / "psgrank_config_data";
        psgrank::testing::write_dataset(d, psgrank::testing::small_synthetic());
        return d;
    }();
    return dir;
}

Json base_config() {
    static_cast<void>(data_dir());
    return psgrank::testing::dataset_config(psgrank::testing::small_synthetic());
}

std::string error_of(const Json& j) {
    try {
        static_cast<void>(config_from_json(j, data_dir()));
    } catch (const ValidationError& e) {
        return e.what();
    }
    return {};
}

}  // namespace

TEST(Config, ValidConfigLoadsAndResolvesPaths) {
    const auto c = config_from_json(base_config(), data_dir());
    EXPECT_EQ(c.resolve(c.corpus), data_dir() / "corpus.jsonl");
    EXPECT_EQ(c.resolve("/abs/x"), std::filesystem::path("/abs/x"));
    EXPECT_EQ(c.methods, (std::vector<std::string>{"LM", "RRF", "JPDs"}));
    EXPECT_EQ(c.grids.alpha.size(), 3u);
    EXPECT_EQ(c.training.epochs, 10u);
}

TEST(Config, ToJsonRoundTrips) {
    const auto c = config_from_json(base_config(), data_dir());
    const auto again = config_from_json(c.to_json(), data_dir());
    EXPECT_EQ(again.to_json().dump(), c.to_json().dump());
}

TEST(Config, UnknownMethodNamesTheAllowedValues) {
    auto j = base_config();
    j["methods"] = {"LM", "BM25"};
    const auto msg = error_of(j);
    EXPECT_NE(msg.find("unknown method 'BM25'"), std::string::npos) << msg;
    for (const auto& m : document_methods()) {
        EXPECT_NE(msg.find(m), std::string::npos) << m;
    }
    for (const auto& m : passage_methods()) {
        EXPECT_NE(msg.find(m), std::string::npos) << m;
    }
}

TEST(Config, ReportsEveryProblemTogether) {
    auto j = base_config();
    j["corpus"] = "missing.jsonl";
    j["trainer"] = "svm";
    j["bogus"] = 1;
    j["grids"]["alpha"] = {1.5};
    j["validation_fraction"] = 1.0;
    const auto msg = error_of(j);
    EXPECT_NE(msg.find("5 problems"), std::string::npos) << msg;
    EXPECT_NE(msg.find("file not found"), std::string::npos);
    EXPECT_NE(msg.find("bogus: unknown key"), std::string::npos);
    EXPECT_NE(msg.find("grids.alpha"), std::string::npos);
}

TEST(Config, TypeErrorsAreReported) {
    auto j = base_config();
    j["seed"] = "abc";
    EXPECT_NE(error_of(j).find("seed: wrong type"), std::string::npos);
}

TEST(Config, PassageMethodsNeedPassageJudgments) {
    auto j = base_config();
    j.erase("passage_qrels");
    j["methods"] = {"LM", "QSF"};
    EXPECT_NE(error_of(j).find("passage_qrels"), std::string::npos);
    j["methods"] = {"LM", "SDM"};
    EXPECT_EQ(error_of(j), "");
}

TEST(Config, ExclusionsNeedALearnedMethod) {
    auto j = base_config();
    j["methods"] = {"LM"};
    j["exclude_features"] = {"ESA"};
    EXPECT_NE(error_of(j).find("exclude_features"), std::string::npos);
}

TEST(Override, ScalarFieldsOnly) {
    Json j = base_config();
    apply_override(j, "grids.mu_init=1500");
    apply_override(j, "trainer=coordinate_ascent");
    apply_override(j, "resources.esa=true");
    EXPECT_EQ(j["grids"]["mu_init"], 1500);
    EXPECT_EQ(j["trainer"], "coordinate_ascent");
    EXPECT_EQ(j["resources"]["esa"], true);
    EXPECT_THROW(apply_override(j, "methods=LM"), ValidationError);
    EXPECT_THROW(apply_override(j, "grids.mu=[1,2]"), ValidationError);
    EXPECT_THROW(apply_override(j, "noequals"), ValidationError);
    EXPECT_THROW(apply_override(j, "seed.x=1"), ValidationError);
    const auto c = config_from_json(j, data_dir());
    EXPECT_EQ(c.grids.mu_init, 1500.0);
}

TEST(Config, MalformedFilesAreValidationErrors) {
    const auto path = data_dir() / "bad.json";
    std::ofstream(path) << "{ not json";
    EXPECT_THROW(read_json_file(path), ValidationError);
    EXPECT_THROW(read_json_file(data_dir() / "nope.json"), ValidationError);
    EXPECT_THROW(config_from_json(Json::array(), data_dir()), ValidationError);
}
