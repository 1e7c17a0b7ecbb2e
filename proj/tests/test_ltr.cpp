#include <gtest/gtest.h>

#include <sstream>

#include "psgrank/ltr.hpp"

using namespace psgrank;

namespace {

SchemaPtr schema_of(std::size_t dim) {
    std::vector<std::string> names;
    for (std::size_t i = 0; i < dim; ++i) {
        names.push_back("f" + std::to_string(i));
    }
    return std::make_shared<const FeatureSchema>("T" + std::to_string(dim), names);
}

/// Groups whose grades are a margin-separated function of a hidden linear score.
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
            for (std::size_t f = 0; f < dim; ++f) {
                v.values[f] = rng.uniform();
                s += hidden[f] * v.values[f];
            }
            const double scaled = s * 3.0;
            const double frac = scaled - std::floor(scaled);
            if (frac < 0.15 || frac > 0.85) {
                continue;
            }
            g.grades.push_back(static_cast<int>(std::floor(scaled)) + 3);
            g.vectors.push_back(std::move(v));
        }
        ts.groups.push_back(std::move(g));
    }
    return ts;
}

std::size_t pair_errors(const LinearModel& m, const TrainingSet& ts) {
    std::size_t errors = 0;
    for (const auto& g : ts.groups) {
        for (std::size_t i = 0; i < g.vectors.size(); ++i) {
            for (std::size_t j = 0; j < g.vectors.size(); ++j) {
                if (g.grades[i] > g.grades[j] && m.score(g.vectors[i]) <= m.score(g.vectors[j])) {
                    ++errors;
                }
            }
        }
    }
    return errors;
}

}  // namespace

TEST(BucketGrade, ThresholdsAtBoundaries) {
    const std::vector<std::pair<double, int>> cases = {{0.0, 0},  {0.05, 0}, {0.0999, 0}, {0.10, 1}, {0.2499, 1},
                                                       {0.25, 2}, {0.30, 2}, {0.50, 3},   {0.75, 4}, {0.99, 4},
                                                       {1.0, 4}};
    for (const auto& [x, g] : cases) {
        EXPECT_EQ(bucket_grade(x), g) << x;
    }
    EXPECT_THROW(bucket_grade(-0.1), ValidationError);
    EXPECT_THROW(bucket_grade(1.5), ValidationError);
}

TEST(PairwiseTrainer, SeparableDataReachesZeroErrors) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const auto ts = separable(seed, 6, 20, 5);
        for (double c : {0.1, 1.0}) {
            PairwiseTrace trace;
            const auto model = train_pairwise(ts, PairwiseOptions{c, 200, seed, 1'000'000}, &trace);
            EXPECT_EQ(trace.best_errors.back(), 0u) << "seed " << seed << " C " << c;
            EXPECT_LE(trace.epoch_errors.size(), 200u);
            EXPECT_EQ(pair_errors(model, ts), 0u);
            for (std::size_t e = 1; e < trace.best_errors.size(); ++e) {
                EXPECT_LE(trace.best_errors[e], trace.best_errors[e - 1]);
            }
        }
    }
}

TEST(PairwiseTrainer, OneDimensionalSeparableCase) {
    const auto schema = schema_of(1);
    TrainingSet ts{schema, {}};
    QueryGroup g{"q", {}, {}};
    for (int i = 0; i < 6; ++i) {
        g.vectors.push_back({schema, {i % 2 == 0 ? 1.0 : 0.0}, "q", "i" + std::to_string(i)});
        g.grades.push_back(i % 2 == 0 ? 1 : 0);
    }
    ts.groups.push_back(g);
    const auto m = train_pairwise(ts, PairwiseOptions{});
    EXPECT_GT(m.weights[0], 0.0);
    EXPECT_EQ(pair_errors(m, ts), 0u);
}

TEST(PairwiseTrainer, InformativeFeatureDominatesNoise) {
    Rng rng(12);
    const auto schema = schema_of(2);
    TrainingSet ts{schema, {}};
    for (int q = 0; q < 4; ++q) {
        QueryGroup g{"q" + std::to_string(q), {}, {}};
        for (int i = 0; i < 20; ++i) {
            const int grade = static_cast<int>(rng.below(3));
            g.vectors.push_back({schema, {grade + 0.8 * rng.uniform(), rng.uniform() * 2.0}, g.query_id, "i" + std::to_string(i)});
            g.grades.push_back(grade);
        }
        ts.groups.push_back(std::move(g));
    }
    // Exhaustive search over unit directions for the fewest pair errors.
    std::size_t best_errors = SIZE_MAX;
    double best_angle = 0.0;
    for (int k = 0; k < 3600; ++k) {
        const double a = 2.0 * M_PI * k / 3600.0;
        LinearModel probe{schema, {std::cos(a), std::sin(a)}, Trainer::pairwise_hinge, {}, 0};
        const auto e = pair_errors(probe, ts);
        if (e < best_errors) {
            best_errors = e;
            best_angle = a;
        }
    }
    EXPECT_GT(std::fabs(std::cos(best_angle)), std::fabs(std::sin(best_angle)));
    const auto m = train_pairwise(ts, PairwiseOptions{0.1, 200, 1, 1'000'000});
    EXPECT_GT(std::fabs(m.weights[0]), std::fabs(m.weights[1]));
    EXPECT_GT(m.weights[0], 0.0);
    EXPECT_EQ(pair_errors(m, ts), best_errors);
}

TEST(PairwiseTrainer, RejectsDataWithoutSignal) {
    auto ts = separable(1, 2, 5, 3);
    for (auto& g : ts.groups) {
        std::fill(g.grades.begin(), g.grades.end(), 1);
    }
    EXPECT_THROW(train_pairwise(ts, PairwiseOptions{}), ValidationError);
    EXPECT_THROW(train_coordinate_ascent(ts, CoordinateAscentOptions{}), ValidationError);
    auto bad = separable(1, 1, 4, 3);
    bad.groups[0].grades.pop_back();
    EXPECT_THROW(train_pairwise(bad, PairwiseOptions{}), ValidationError);
}

TEST(CoordinateAscent, AcceptedStepsAreMonotone) {
    for (std::uint64_t seed = 1; seed <= 4; ++seed) {
        const auto ts = separable(seed + 10, 8, 15, 6);
        CoordinateAscentTrace trace;
        const auto model = train_coordinate_ascent(ts, CoordinateAscentOptions{3, 25, seed, 10, {}}, &trace);
        ASSERT_EQ(trace.accepted.size(), 3u);
        for (const auto& steps : trace.accepted) {
            for (std::size_t i = 1; i < steps.size(); ++i) {
                EXPECT_GT(steps[i], steps[i - 1]);
            }
        }
        EXPECT_EQ(model.weights.size(), 6u);
    }
}

TEST(CoordinateAscent, GradeFeatureGivesPerfectNdcg) {
    Rng rng(4);
    const auto schema = schema_of(4);
    TrainingSet ts{schema, {}};
    for (int q = 0; q < 6; ++q) {
        QueryGroup g;
        g.query_id = "q" + std::to_string(q);
        for (int i = 0; i < 25; ++i) {
            const int grade = static_cast<int>(rng.below(5));
            FeatureVector v{schema, {rng.uniform(), static_cast<double>(grade), rng.uniform() * 5.0, rng.uniform()},
                            g.query_id, "i" + std::to_string(i)};
            g.grades.push_back(grade);
            g.vectors.push_back(std::move(v));
        }
        ts.groups.push_back(std::move(g));
    }
    CoordinateAscentTrace trace;
    const auto model = train_coordinate_ascent(ts, CoordinateAscentOptions{}, &trace);
    double best = 0.0;
    for (double o : trace.restart_objective) {
        best = std::max(best, o);
    }
    EXPECT_DOUBLE_EQ(best, 1.0);
    for (const auto& g : ts.groups) {
        std::unordered_map<std::string, int> grades;
        for (std::size_t i = 0; i < g.vectors.size(); ++i) {
            grades[g.vectors[i].item_id] = g.grades[i];
        }
        EXPECT_DOUBLE_EQ(ndcg_at_k(score(model, g.vectors), grades, 10), 1.0);
    }
}

TEST(CoordinateAscent, ZeroBudgetKeepsInitialWeights) {
    const auto ts = separable(5, 3, 10, 3);
    const std::vector<double> init = {0.2, -0.5, 0.9};
    const auto m = train_coordinate_ascent(ts, CoordinateAscentOptions{1, 0, 1, 10, init});
    EXPECT_EQ(m.weights, init);
}

TEST(Trainers, IdenticalSeedsGiveIdenticalBytes) {
    const auto ts = separable(3, 5, 12, 4);
    for (std::uint64_t seed : {1u, 99u}) {
        const auto a = train_pairwise(ts, PairwiseOptions{0.1, 50, seed, 1'000'000}).serialize();
        const auto b = train_pairwise(ts, PairwiseOptions{0.1, 50, seed, 1'000'000}).serialize();
        EXPECT_EQ(a, b);
        const auto c = train_coordinate_ascent(ts, CoordinateAscentOptions{3, 10, seed, 10, {}}).serialize();
        const auto d = train_coordinate_ascent(ts, CoordinateAscentOptions{3, 10, seed, 10, {}}).serialize();
        EXPECT_EQ(c, d);
    }
    const auto sub_a = train_pairwise(ts, PairwiseOptions{0.1, 20, 5, 30}).serialize();
    const auto sub_b = train_pairwise(ts, PairwiseOptions{0.1, 20, 5, 30}).serialize();
    EXPECT_EQ(sub_a, sub_b);
}

TEST(LinearModel, SerializeParseRoundTrip) {
    const auto ts = separable(2, 3, 10, 3);
    const auto m = train_pairwise(ts, PairwiseOptions{});
    std::istringstream in(m.serialize());
    const auto back = LinearModel::parse(in);
    EXPECT_EQ(back.weights, m.weights);
    EXPECT_EQ(*back.schema, *m.schema);
    EXPECT_EQ(back.serialize(), m.serialize());
    std::istringstream truncated("psgrank-model 1\nschema T\nfeatures 2\nf0 1\n");
    EXPECT_THROW(LinearModel::parse(truncated), ValidationError);
    FeatureVector other{schema_of(5), std::vector<double>(5, 0.0), "q", "x"};
    EXPECT_THROW(static_cast<void>(m.score(other)), ValidationError);
}

TEST(LinearModel, ScoreRanksWithIdTieBreak) {
    const auto schema = schema_of(1);
    LinearModel m{schema, {1.0}, Trainer::pairwise_hinge, {}, 0};
    std::vector<FeatureVector> vs = {{schema, {1.0}, "q", "b"}, {schema, {2.0}, "q", "c"}, {schema, {1.0}, "q", "a"}};
    EXPECT_EQ(score(m, vs).ids(), (std::vector<std::string>{"c", "a", "b"}));
    EXPECT_THROW(parse_trainer("svm"), ValidationError);
}
