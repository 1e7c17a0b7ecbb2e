#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "psgrank/common.hpp"
#include "psgrank/features.hpp"

namespace psgrank {

/// Five-level grade from the fraction of relevant characters in a passage.
inline int bucket_grade(double rfrac) {
    if (!(rfrac >= 0.0 && rfrac <= 1.0)) {
        throw ValidationError("relevant-character fraction out of [0,1]: " + format_double(rfrac));
    }
    if (rfrac < 0.10) {
        return 0;
    }
    if (rfrac < 0.25) {
        return 1;
    }
    if (rfrac < 0.50) {
        return 2;
    }
    if (rfrac < 0.75) {
        return 3;
    }
    return 4;
}

/// Graded feature vectors of one query.
struct QueryGroup {
    std::string query_id;
    std::vector<FeatureVector> vectors;
    std::vector<int> grades;
};

struct TrainingSet {
    SchemaPtr schema;
    std::vector<QueryGroup> groups;
};

enum class Trainer { pairwise_hinge, coordinate_ascent };

inline std::string to_string(Trainer t) {
    return t == Trainer::pairwise_hinge ? "pairwise_hinge" : "coordinate_ascent";
}

inline Trainer parse_trainer(std::string_view s) {
    if (s == "pairwise_hinge") {
        return Trainer::pairwise_hinge;
    }
    if (s == "coordinate_ascent") {
        return Trainer::coordinate_ascent;
    }
    throw ValidationError("unknown trainer '" + std::string(s) +
                          "' (expected pairwise_hinge or coordinate_ascent)");
}

struct LinearModel {
    static constexpr int kFormatVersion = 1;

    SchemaPtr schema;
    std::vector<double> weights;
    Trainer trainer = Trainer::pairwise_hinge;
    std::map<std::string, std::string> hyperparams;
    std::uint64_t seed = 0;

    [[nodiscard]] double score(const FeatureVector& v) const {
        if (v.schema.get() != schema.get() && !(*v.schema == *schema)) {
            throw ValidationError("model schema " + schema->name() + " does not match vector schema " +
                                  v.schema->name());
        }
        double s = 0.0;
        for (std::size_t i = 0; i < weights.size(); ++i) {
            s += weights[i] * v.values[i];
        }
        return s;
    }

    [[nodiscard]] std::string serialize() const {
        std::ostringstream out;
        out << "psgrank-model " << kFormatVersion << '\n';
        out << "schema " << schema->name() << '\n';
        out << "trainer " << to_string(trainer) << '\n';
        out << "seed " << seed << '\n';
        for (const auto& [k, v] : hyperparams) {
            out << "hyper " << k << ' ' << v << '\n';
        }
        out << "features " << weights.size() << '\n';
        for (std::size_t i = 0; i < weights.size(); ++i) {
            out << schema->features()[i] << ' ' << format_double(weights[i]) << '\n';
        }
        return out.str();
    }

    static LinearModel parse(std::istream& in) {
        LinearModel m;
        std::string line;
        std::string schema_name;
        std::vector<std::string> names;
        std::size_t expected = 0;
        bool in_features = false;
        bool header = false;
        while (std::getline(in, line)) {
            auto parts = split_ws(line);
            if (parts.empty()) {
                continue;
            }
            if (in_features) {
                if (parts.size() != 2) {
                    throw ValidationError("malformed model weight line: " + line);
                }
                names.push_back(parts[0]);
                m.weights.push_back(parse_double(parts[1], "weight"));
                continue;
            }
            if (parts[0] == "psgrank-model") {
                if (parts.size() != 2 || parse_int(parts[1], "model version") != kFormatVersion) {
                    throw ValidationError("unsupported model format version");
                }
                header = true;
            } else if (parts[0] == "schema" && parts.size() == 2) {
                schema_name = parts[1];
            } else if (parts[0] == "trainer" && parts.size() == 2) {
                m.trainer = parse_trainer(parts[1]);
            } else if (parts[0] == "seed" && parts.size() == 2) {
                m.seed = static_cast<std::uint64_t>(parse_int(parts[1], "seed"));
            } else if (parts[0] == "hyper" && parts.size() == 3) {
                m.hyperparams[parts[1]] = parts[2];
            } else if (parts[0] == "features" && parts.size() == 2) {
                expected = static_cast<std::size_t>(parse_int(parts[1], "feature count"));
                in_features = true;
            } else {
                throw ValidationError("malformed model line: " + line);
            }
        }
        if (!header || !in_features || names.size() != expected) {
            throw ValidationError("truncated or malformed model file");
        }
        m.schema = std::make_shared<const FeatureSchema>(schema_name, std::move(names));
        return m;
    }
};

/// Ranks one query's vectors by w·x with the global tie-break rule.
inline RankedList score(const LinearModel& model, std::span<const FeatureVector> vectors,
                        const std::string& query_id = {}) {
    std::vector<RankedEntry> entries;
    entries.reserve(vectors.size());
    for (const auto& v : vectors) {
        entries.push_back(RankedEntry{v.item_id, model.score(v)});
    }
    return make_ranked(query_id.empty() && !vectors.empty() ? vectors.front().query_id : query_id,
                       std::move(entries));
}

/// Gain 2^g - 1, discount 1/log2(rank + 1), normalized by the ideal DCG over
/// all graded items. 0 when nothing is relevant.
inline double ndcg_at_k(const RankedList& list, const std::unordered_map<std::string, int>& grades,
                        std::size_t k) {
    if (k == 0) {
        throw ValidationError("ndcg_at_k: k must be >= 1");
    }
    std::vector<int> ideal;
    for (const auto& [_, g] : grades) {
        if (g > 0) {
            ideal.push_back(g);
        }
    }
    if (ideal.empty()) {
        return 0.0;
    }
    std::sort(ideal.rbegin(), ideal.rend());
    double idcg = 0.0;
    for (std::size_t r = 0; r < ideal.size() && r < k; ++r) {
        idcg += (std::pow(2.0, ideal[r]) - 1.0) / std::log2(static_cast<double>(r) + 2.0);
    }
    double dcg = 0.0;
    for (std::size_t r = 0; r < list.size() && r < k; ++r) {
        auto it = grades.find(list.entries[r].id);
        const int g = it == grades.end() ? 0 : it->second;
        if (g > 0) {
            dcg += (std::pow(2.0, g) - 1.0) / std::log2(static_cast<double>(r) + 2.0);
        }
    }
    return dcg / idcg;
}

namespace detail {

inline void check_training_set(const TrainingSet& data) {
    if (!data.schema) {
        throw ValidationError("training set has no schema");
    }
    for (const auto& g : data.groups) {
        if (g.vectors.size() != g.grades.size()) {
            throw ValidationError("query " + g.query_id + ": vectors and grades differ in length");
        }
        for (const auto& v : g.vectors) {
            if (v.values.size() != data.schema->size()) {
                throw ValidationError("query " + g.query_id + ": vector length does not match schema");
            }
        }
    }
}

struct Pair {
    std::uint32_t group;
    std::uint32_t better;
    std::uint32_t worse;
};

inline double dot_diff(const std::vector<double>& w, const FeatureVector& a, const FeatureVector& b) {
    double s = 0.0;
    for (std::size_t f = 0; f < w.size(); ++f) {
        s += w[f] * (a.values[f] - b.values[f]);
    }
    return s;
}

}  // namespace detail

struct PairwiseOptions {
    double c = 0.01;
    std::size_t epochs = 100;
    std::uint64_t seed = 1;
    std::size_t max_pairs = 1'000'000;
};

struct PairwiseTrace {
    /// Pairwise errors of the model after each epoch.
    std::vector<std::size_t> epoch_errors;
    /// Errors of the best model so far after each epoch (non-increasing).
    std::vector<std::size_t> best_errors;
    std::size_t pairs = 0;
};

/// Linear pairwise hinge-loss ranker:
///   min (1/2)||w||^2 + C * sum_{(i,j): grade_i > grade_j} max(0, 1 - w.(x_i - x_j))
/// solved by seeded stochastic subgradient descent (Pegasos schedule with the
/// equivalent lambda = 1/(C * #pairs)). Returns the epoch whose weights make
/// the fewest training pair errors; stops early at zero errors.
inline LinearModel train_pairwise(const TrainingSet& data, const PairwiseOptions& opt,
                                  PairwiseTrace* trace = nullptr) {
    detail::check_training_set(data);
    if (!(opt.c > 0.0)) {
        throw ValidationError("pairwise trainer: C must be positive");
    }
    Rng rng(opt.seed);
    std::vector<detail::Pair> pairs;
    std::size_t seen = 0;
    for (std::uint32_t q = 0; q < data.groups.size(); ++q) {
        const auto& g = data.groups[q];
        for (std::uint32_t i = 0; i < g.grades.size(); ++i) {
            for (std::uint32_t j = 0; j < g.grades.size(); ++j) {
                if (g.grades[i] <= g.grades[j]) {
                    continue;
                }
                ++seen;
                if (pairs.size() < opt.max_pairs) {
                    pairs.push_back({q, i, j});
                } else {
                    auto r = rng.below(seen);
                    if (r < opt.max_pairs) {
                        pairs[r] = {q, i, j};
                    }
                }
            }
        }
    }
    if (pairs.empty()) {
        throw ValidationError("no training signal: no query has two distinct grades");
    }
    const std::size_t dim = data.schema->size();
    const double m = static_cast<double>(pairs.size());
    const double lambda = 1.0 / (opt.c * m);
    const double radius = 1.0 / std::sqrt(lambda);

    const auto vec = [&](const detail::Pair& p, bool better) -> const FeatureVector& {
        return data.groups[p.group].vectors[better ? p.better : p.worse];
    };
    const auto count_errors = [&](const std::vector<double>& w) {
        std::size_t errors = 0;
        for (const auto& p : pairs) {
            if (detail::dot_diff(w, vec(p, true), vec(p, false)) <= 0.0) {
                ++errors;
            }
        }
        return errors;
    };

    std::vector<double> w(dim, 0.0);
    std::vector<double> best = w;
    std::size_t best_errors = pairs.size() + 1;
    std::vector<std::size_t> order(pairs.size());
    std::iota(order.begin(), order.end(), 0);
    std::uint64_t t = 0;
    if (trace != nullptr) {
        *trace = PairwiseTrace{};
        trace->pairs = pairs.size();
    }
    for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
        rng.shuffle(order);
        for (auto idx : order) {
            ++t;
            const auto& p = pairs[idx];
            const auto& a = vec(p, true);
            const auto& b = vec(p, false);
            const double eta = 1.0 / (lambda * static_cast<double>(t));
            const double margin = detail::dot_diff(w, a, b);
            const double shrink = 1.0 - eta * lambda;
            for (std::size_t f = 0; f < dim; ++f) {
                w[f] *= shrink;
            }
            if (margin < 1.0) {
                for (std::size_t f = 0; f < dim; ++f) {
                    w[f] += eta * (a.values[f] - b.values[f]);
                }
            }
            double norm = 0.0;
            for (double x : w) {
                norm += x * x;
            }
            norm = std::sqrt(norm);
            if (norm > radius) {
                for (auto& x : w) {
                    x *= radius / norm;
                }
            }
        }
        const auto errors = count_errors(w);
        if (errors < best_errors) {
            best_errors = errors;
            best = w;
        }
        if (trace != nullptr) {
            trace->epoch_errors.push_back(errors);
            trace->best_errors.push_back(best_errors);
        }
        if (best_errors == 0) {
            break;
        }
    }
    LinearModel model;
    model.schema = data.schema;
    model.weights = std::move(best);
    model.trainer = Trainer::pairwise_hinge;
    model.seed = opt.seed;
    model.hyperparams = {{"C", format_double(opt.c)},
                         {"epochs", std::to_string(opt.epochs)},
                         {"max_pairs", std::to_string(opt.max_pairs)}};
    return model;
}

struct CoordinateAscentOptions {
    std::size_t restarts = 3;
    /// Full cycles over the coordinates per restart.
    std::size_t max_passes = 25;
    std::uint64_t seed = 1;
    std::size_t k = 10;
    /// Starting point of the first restart; uniform 1/d when empty.
    std::vector<double> initial_weights;
};

struct CoordinateAscentTrace {
    /// Objective after each accepted step, per restart.
    std::vector<std::vector<double>> accepted;
    std::vector<double> restart_objective;
};

namespace detail {

/// Mean NDCG@k over groups with at least one relevant item, maintained
/// incrementally as single coordinates change.
class NdcgObjective {
  public:
    NdcgObjective(const TrainingSet& data, std::size_t k) : data_(data), k_(k) {
        for (std::size_t q = 0; q < data.groups.size(); ++q) {
            const auto& g = data.groups[q];
            std::vector<int> grades(g.grades);
            std::sort(grades.rbegin(), grades.rend());
            double idcg = 0.0;
            for (std::size_t r = 0; r < grades.size() && r < k; ++r) {
                idcg += gain(grades[r]) / std::log2(static_cast<double>(r) + 2.0);
            }
            if (idcg <= 0.0) {
                continue;
            }
            Group grp;
            grp.source = q;
            grp.idcg = idcg;
            grp.order.resize(g.vectors.size());
            std::iota(grp.order.begin(), grp.order.end(), 0);
            // Tie-break by ascending item id, as in RankedList.
            std::sort(grp.order.begin(), grp.order.end(), [&](std::size_t a, std::size_t b) {
                return g.vectors[a].item_id < g.vectors[b].item_id;
            });
            grp.tie_rank.resize(g.vectors.size());
            for (std::size_t r = 0; r < grp.order.size(); ++r) {
                grp.tie_rank[grp.order[r]] = r;
            }
            groups_.push_back(std::move(grp));
        }
    }

    [[nodiscard]] bool empty() const { return groups_.empty(); }

    void set_weights(const std::vector<double>& w) {
        for (auto& grp : groups_) {
            const auto& g = data_.groups[grp.source];
            grp.scores.assign(g.vectors.size(), 0.0);
            for (std::size_t i = 0; i < g.vectors.size(); ++i) {
                double s = 0.0;
                for (std::size_t f = 0; f < w.size(); ++f) {
                    s += w[f] * g.vectors[i].values[f];
                }
                grp.scores[i] = s;
            }
        }
    }

    /// Objective if coordinate f moved by delta (scores are not modified).
    [[nodiscard]] double evaluate_shift(std::size_t f, double delta) {
        double total = 0.0;
        for (auto& grp : groups_) {
            const auto& g = data_.groups[grp.source];
            grp.scratch.resize(grp.scores.size());
            for (std::size_t i = 0; i < grp.scores.size(); ++i) {
                grp.scratch[i] = grp.scores[i] + delta * g.vectors[i].values[f];
            }
            total += ndcg(grp, grp.scratch);
        }
        return total / static_cast<double>(groups_.size());
    }

    void apply_shift(std::size_t f, double delta) {
        for (auto& grp : groups_) {
            const auto& g = data_.groups[grp.source];
            for (std::size_t i = 0; i < grp.scores.size(); ++i) {
                grp.scores[i] += delta * g.vectors[i].values[f];
            }
        }
    }

    [[nodiscard]] double current() {
        double total = 0.0;
        for (auto& grp : groups_) {
            total += ndcg(grp, grp.scores);
        }
        return total / static_cast<double>(groups_.size());
    }

  private:
    struct Group {
        std::size_t source = 0;
        double idcg = 0.0;
        std::vector<std::size_t> order;
        std::vector<std::size_t> tie_rank;
        std::vector<double> scores;
        std::vector<double> scratch;
        std::vector<std::size_t> top;
    };

    static double gain(int g) { return g > 0 ? std::pow(2.0, g) - 1.0 : 0.0; }

    double ndcg(Group& grp, const std::vector<double>& scores) {
        const auto& g = data_.groups[grp.source];
        const std::size_t n = scores.size();
        const std::size_t k = std::min(k_, n);
        grp.top.resize(n);
        std::iota(grp.top.begin(), grp.top.end(), 0);
        const auto before = [&](std::size_t a, std::size_t b) {
            if (scores[a] != scores[b]) {
                return scores[a] > scores[b];
            }
            return grp.tie_rank[a] < grp.tie_rank[b];
        };
        std::partial_sort(grp.top.begin(), grp.top.begin() + static_cast<std::ptrdiff_t>(k),
                          grp.top.end(), before);
        double dcg = 0.0;
        for (std::size_t r = 0; r < k; ++r) {
            dcg += gain(g.grades[grp.top[r]]) / std::log2(static_cast<double>(r) + 2.0);
        }
        return dcg / grp.idcg;
    }

    const TrainingSet& data_;
    std::size_t k_;
    std::vector<Group> groups_;
};

inline const std::vector<double>& coordinate_steps() {
    static const std::vector<double> steps = {0.001, -0.001, 0.003, -0.003, 0.01, -0.01,
                                              0.03,  -0.03,  0.1,   -0.1,   0.3,  -0.3,
                                              1.0,   -1.0,   3.0,   -3.0,   10.0, -10.0};
    return steps;
}

}  // namespace detail

/// Listwise coordinate ascent on mean NDCG@k. Each pass visits every
/// coordinate and tries a fixed grid of additive steps, keeping the best one
/// only if it strictly improves the objective. Restart 0 starts from uniform
/// (or caller-provided) weights, later restarts from seeded random weights;
/// the best restart wins.
inline LinearModel train_coordinate_ascent(const TrainingSet& data, const CoordinateAscentOptions& opt,
                                           CoordinateAscentTrace* trace = nullptr) {
    detail::check_training_set(data);
    bool signal = false;
    for (const auto& g : data.groups) {
        for (std::size_t i = 0; i < g.grades.size() && !signal; ++i) {
            signal = g.grades[i] != g.grades.front();
        }
    }
    if (!signal) {
        throw ValidationError("no training signal: no query has two distinct grades");
    }
    const std::size_t dim = data.schema->size();
    if (!opt.initial_weights.empty() && opt.initial_weights.size() != dim) {
        throw ValidationError("coordinate ascent: initial weights do not match schema");
    }
    detail::NdcgObjective objective(data, opt.k);
    Rng rng(opt.seed);
    std::vector<double> best_w;
    double best_obj = -1.0;
    if (trace != nullptr) {
        *trace = CoordinateAscentTrace{};
    }
    const std::size_t restarts = std::max<std::size_t>(1, opt.restarts);
    for (std::size_t r = 0; r < restarts; ++r) {
        std::vector<double> w(dim, 1.0 / static_cast<double>(dim));
        if (r == 0 && !opt.initial_weights.empty()) {
            w = opt.initial_weights;
        } else if (r > 0) {
            double total = 0.0;
            for (auto& x : w) {
                x = rng.uniform();
                total += x;
            }
            for (auto& x : w) {
                x = total > 0.0 ? x / total : 1.0 / static_cast<double>(dim);
            }
        }
        objective.set_weights(w);
        double obj = objective.current();
        std::vector<double> accepted;
        for (std::size_t pass = 0; pass < opt.max_passes; ++pass) {
            bool improved = false;
            for (std::size_t f = 0; f < dim; ++f) {
                double step_best = obj;
                double step = 0.0;
                for (double delta : detail::coordinate_steps()) {
                    const double cand = objective.evaluate_shift(f, delta);
                    if (cand > step_best + 1e-12) {
                        step_best = cand;
                        step = delta;
                    }
                }
                if (step != 0.0) {
                    w[f] += step;
                    objective.apply_shift(f, step);
                    obj = step_best;
                    accepted.push_back(obj);
                    improved = true;
                }
            }
            if (!improved || obj >= 1.0) {
                break;
            }
        }
        if (trace != nullptr) {
            trace->accepted.push_back(accepted);
            trace->restart_objective.push_back(obj);
        }
        if (obj > best_obj) {
            best_obj = obj;
            best_w = w;
        }
    }
    LinearModel model;
    model.schema = data.schema;
    model.weights = std::move(best_w);
    model.trainer = Trainer::coordinate_ascent;
    model.seed = opt.seed;
    model.hyperparams = {{"restarts", std::to_string(restarts)},
                         {"max_passes", std::to_string(opt.max_passes)},
                         {"k", std::to_string(opt.k)}};
    return model;
}

}  // namespace psgrank
