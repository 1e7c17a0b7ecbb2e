#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "psgrank/common.hpp"
#include "psgrank/corpus.hpp"
#include "psgrank/index.hpp"
#include "psgrank/passage.hpp"

namespace psgrank {

/// Named, ordered feature list. Immutable; shared between vectors.
class FeatureSchema {
  public:
    FeatureSchema(std::string name, std::vector<std::string> features)
        : name_(std::move(name)), features_(std::move(features)) {
        for (std::size_t i = 0; i < features_.size(); ++i) {
            if (!positions_.emplace(features_[i], i).second) {
                throw ValidationError("duplicate feature name '" + features_[i] + "' in schema " + name_);
            }
        }
    }

    [[nodiscard]] const std::string& name() const { return name_; }
    [[nodiscard]] const std::vector<std::string>& features() const { return features_; }
    [[nodiscard]] std::size_t size() const { return features_.size(); }

    [[nodiscard]] bool contains(const std::string& feature) const { return positions_.count(feature) > 0; }

    [[nodiscard]] std::size_t index_of(const std::string& feature) const {
        auto it = positions_.find(feature);
        if (it == positions_.end()) {
            std::string known;
            for (const auto& f : features_) {
                known += (known.empty() ? "" : ", ") + f;
            }
            throw ValidationError("unknown feature '" + feature + "' in schema " + name_ +
                                  " (features: " + known + ")");
        }
        return it->second;
    }

    /// Stable identity for model files.
    [[nodiscard]] std::string fingerprint() const {
        std::string s = name_;
        for (const auto& f : features_) {
            s += '\x1f';
            s += f;
        }
        return hex64(fnv1a64(s));
    }

    friend bool operator==(const FeatureSchema& a, const FeatureSchema& b) {
        return a.name_ == b.name_ && a.features_ == b.features_;
    }

  private:
    std::string name_;
    std::vector<std::string> features_;
    std::unordered_map<std::string, std::size_t> positions_;
};

using SchemaPtr = std::shared_ptr<const FeatureSchema>;

struct FeatureVector {
    SchemaPtr schema;
    std::vector<double> values;
    std::string query_id;
    std::string item_id;

    [[nodiscard]] double operator[](const std::string& feature) const {
        return values.at(schema->index_of(feature));
    }
};

namespace feature_names {
inline const std::vector<std::string> kDoc = {"SDM-T", "SDM-O", "SDM-U", "SW1", "SW2", "Ent"};
inline const std::vector<std::string> kPassage = {
    "PsgQuerySim", "DocQuerySim",     "MaxPDSim",   "AvgPDSim",    "StdPDSim",
    "LengthRatio", "QuerySimPre",     "QuerySimFollow", "Ent",     "SW1",
    "SW2",         "QueryLength",     "ExactMatch", "TermOverlap", "SynonymsOverlap",
    "PsgLength",   "PsgLocation",     "ESA",        "W2V",         "Entity"};
}  // namespace feature_names

inline SchemaPtr doc_schema() {
    static const SchemaPtr schema = std::make_shared<const FeatureSchema>("DOC6", feature_names::kDoc);
    return schema;
}

inline SchemaPtr passage_schema() {
    static const SchemaPtr schema =
        std::make_shared<const FeatureSchema>("PSG20", feature_names::kPassage);
    return schema;
}

/// Precomputed concatenation a ⊕ (b minus exclusions). Names from `a` are
/// prefixed with `prefix_a`, names from `b` with `prefix_b`.
class ConcatPlan {
  public:
    ConcatPlan(const SchemaPtr& a, const SchemaPtr& b, const std::set<std::string>& b_exclusions,
               const std::string& prefix_a, const std::string& prefix_b,
               std::string name = {}) {
        for (const auto& e : b_exclusions) {
            if (!b->contains(e)) {
                throw ValidationError("cannot exclude unknown feature '" + e + "' from schema " +
                                      b->name());
            }
        }
        std::vector<std::string> names;
        for (const auto& f : a->features()) {
            names.push_back(prefix_a + f);
        }
        for (std::size_t i = 0; i < b->size(); ++i) {
            if (b_exclusions.count(b->features()[i]) == 0) {
                kept_.push_back(i);
                names.push_back(prefix_b + b->features()[i]);
            }
        }
        if (name.empty()) {
            name = a->name() + "+" + b->name();
            if (!b_exclusions.empty()) {
                name += "-";
                for (const auto& e : b_exclusions) {
                    name += e + ",";
                }
                name.pop_back();
            }
        }
        a_ = a;
        b_ = b;
        schema_ = std::make_shared<const FeatureSchema>(std::move(name), std::move(names));
    }

    [[nodiscard]] const SchemaPtr& schema() const { return schema_; }

    [[nodiscard]] FeatureVector apply(const FeatureVector& a, const FeatureVector& b) const {
        if (a.schema.get() != a_.get() && !(*a.schema == *a_)) {
            throw ValidationError("concat: left vector schema mismatch");
        }
        if (b.schema.get() != b_.get() && !(*b.schema == *b_)) {
            throw ValidationError("concat: right vector schema mismatch");
        }
        FeatureVector out;
        out.schema = schema_;
        out.query_id = a.query_id;
        out.item_id = a.item_id;
        out.values = a.values;
        for (auto i : kept_) {
            out.values.push_back(b.values[i]);
        }
        return out;
    }

  private:
    SchemaPtr a_;
    SchemaPtr b_;
    SchemaPtr schema_;
    std::vector<std::size_t> kept_;
};

inline FeatureVector concat(const FeatureVector& a, const FeatureVector& b,
                            const std::set<std::string>& b_exclusions,
                            const std::string& prefix_a = "", const std::string& prefix_b = "") {
    return ConcatPlan(a.schema, b.schema, b_exclusions, prefix_a, prefix_b).apply(a, b);
}

/// Projects vectors onto a schema without `excluded` features.
class ProjectionPlan {
  public:
    ProjectionPlan(const SchemaPtr& from, const std::set<std::string>& excluded) : from_(from) {
        std::vector<std::string> names;
        for (const auto& e : excluded) {
            static_cast<void>(from->index_of(e));  // throws on unknown names
        }
        for (std::size_t i = 0; i < from->size(); ++i) {
            if (excluded.count(from->features()[i]) == 0) {
                kept_.push_back(i);
                names.push_back(from->features()[i]);
            }
        }
        std::string name = from->name();
        if (!excluded.empty()) {
            name += "\\{";
            for (const auto& e : excluded) {
                name += e + ",";
            }
            name.back() = '}';
        }
        schema_ = std::make_shared<const FeatureSchema>(std::move(name), std::move(names));
    }

    [[nodiscard]] const SchemaPtr& schema() const { return schema_; }

    [[nodiscard]] FeatureVector apply(const FeatureVector& v) const {
        FeatureVector out;
        out.schema = schema_;
        out.query_id = v.query_id;
        out.item_id = v.item_id;
        out.values.reserve(kept_.size());
        for (auto i : kept_) {
            out.values.push_back(v.values.at(i));
        }
        return out;
    }

  private:
    SchemaPtr from_;
    SchemaPtr schema_;
    std::vector<std::size_t> kept_;
};

/// Per-feature min-max normalization over one query's vectors, in place.
/// Constant features map to 0.
inline void minmax_normalize(std::span<FeatureVector> vectors) {
    if (vectors.empty()) {
        return;
    }
    const std::size_t dim = vectors.front().values.size();
    for (std::size_t f = 0; f < dim; ++f) {
        double lo = vectors.front().values[f];
        double hi = lo;
        for (const auto& v : vectors) {
            lo = std::min(lo, v.values[f]);
            hi = std::max(hi, v.values[f]);
        }
        const double range = hi - lo;
        for (auto& v : vectors) {
            v.values[f] = range > 0.0 ? (v.values[f] - lo) / range : 0.0;
        }
    }
}

// ---------------------------------------------------------------------------
// Query-independent priors

struct TextPriors {
    double entropy = 0.0;
    double sw1 = 0.0;
    double sw2 = 0.0;
};

/// Ent over the stem distribution, SW1 = stopword token fraction,
/// SW2 = fraction of the stopword list present.
inline TextPriors text_priors(std::span<const Token> tokens, const StopwordList& stopwords) {
    TextPriors out;
    if (tokens.empty()) {
        return out;
    }
    std::unordered_map<std::string, double> counts;
    std::unordered_set<std::string> present;
    std::size_t stop_tokens = 0;
    for (const auto& t : tokens) {
        counts[t.stem] += 1.0;
        if (t.is_stopword) {
            ++stop_tokens;
            std::string lower = t.surface;
            for (auto& c : lower) {
                c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
            }
            present.insert(std::move(lower));
        }
    }
    const double n = static_cast<double>(tokens.size());
    // Sum in sorted order so the value does not depend on hash iteration order.
    std::vector<double> ps;
    ps.reserve(counts.size());
    for (const auto& [_, c] : counts) {
        ps.push_back(c / n);
    }
    std::sort(ps.begin(), ps.end());
    for (double p : ps) {
        out.entropy -= p * std::log(p);
    }
    out.sw1 = static_cast<double>(stop_tokens) / n;
    out.sw2 = static_cast<double>(present.size()) / static_cast<double>(stopwords.size());
    return out;
}

/// DOC6: SDM triple followed by SW1, SW2 and Ent of the document.
inline FeatureVector doc_features(const Query& query, const Document& doc, const PositionalIndex& index,
                                  const LmParams& params) {
    const auto sdm = sdm_components(query, doc, index, params);
    const auto priors = text_priors(doc.tokens, index.store().analyzer().stopwords());
    FeatureVector v;
    v.schema = doc_schema();
    v.query_id = query.query_id;
    v.item_id = doc.doc_id;
    v.values = {sdm.unigram, sdm.ordered, sdm.unordered, priors.sw1, priors.sw2, priors.entropy};
    return v;
}

// ---------------------------------------------------------------------------
// Semantic resources

/// Explicit-semantic-analysis style similarity: texts are represented by
/// their min-max normalized top-k query-likelihood score lists over a
/// concept index, aligned by document id.
class EsaSpace {
  public:
    using ConceptVector = std::vector<std::pair<std::uint32_t, double>>;  // sorted by doc

    explicit EsaSpace(std::shared_ptr<const PositionalIndex> index, std::size_t top_k = 100,
                      std::size_t keywords = 20, LmParams params = {1000.0})
        : index_(std::move(index)), top_k_(top_k), keywords_(keywords), params_(params) {}

    [[nodiscard]] const PositionalIndex& index() const { return *index_; }
    [[nodiscard]] std::string identity() const {
        return "esa:" + index_->store().checksum() + ":top" + std::to_string(top_k_) + ":kw" +
               std::to_string(keywords_);
    }

    /// Up to `keywords` distinct non-stopword stems with the highest
    /// tf(w,g)·ln(N/df(w)); ties broken lexicographically.
    [[nodiscard]] std::vector<std::string> keywords(std::span<const Token> tokens) const {
        std::map<std::string, double> tf;
        for (const auto& t : tokens) {
            if (!t.is_stopword) {
                tf[t.stem] += 1.0;
            }
        }
        std::vector<std::pair<double, std::string>> scored;
        const double n = static_cast<double>(index_->num_docs());
        for (const auto& [stem, f] : tf) {
            const auto df = index_->doc_frequency(stem);
            if (df == 0) {
                continue;
            }
            const double s = f * std::log(n / static_cast<double>(df));
            if (s > 0.0) {
                scored.emplace_back(s, stem);
            }
        }
        std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
            return a.first != b.first ? a.first > b.first : a.second < b.second;
        });
        std::vector<std::string> out;
        for (std::size_t i = 0; i < scored.size() && i < keywords_; ++i) {
            out.push_back(scored[i].second);
        }
        return out;
    }

    [[nodiscard]] ConceptVector concept_vector(std::span<const std::string> stems) const {
        auto model = make_query_model(stems, *index_);
        ConceptVector out;
        if (model.empty()) {
            return out;
        }
        auto list = retrieve_lm(model, "", *index_, params_, top_k_);
        if (list.empty()) {
            return out;
        }
        double lo = list.entries.front().score;
        double hi = lo;
        for (const auto& e : list.entries) {
            lo = std::min(lo, e.score);
            hi = std::max(hi, e.score);
        }
        for (const auto& e : list.entries) {
            const double v = hi > lo ? (e.score - lo) / (hi - lo) : 0.0;
            if (v > 0.0) {
                out.emplace_back(static_cast<std::uint32_t>(index_->store().index_of(e.id)), v);
            }
        }
        std::sort(out.begin(), out.end());
        return out;
    }

    /// Concept vector of a passage's keyword pseudo-query, memoized by id.
    [[nodiscard]] ConceptVector passage_vector(const std::string& passage_id,
                                               std::span<const Token> tokens) const {
        {
            std::lock_guard<std::mutex> lock(mutex_);
            auto it = cache_.find(passage_id);
            if (it != cache_.end()) {
                return it->second;
            }
        }
        auto kw = keywords(tokens);
        auto vec = concept_vector(kw);
        std::lock_guard<std::mutex> lock(mutex_);
        cache_.emplace(passage_id, vec);
        return vec;
    }

    static double cosine(const ConceptVector& a, const ConceptVector& b) {
        double dot = 0.0;
        double na = 0.0;
        double nb = 0.0;
        for (const auto& [_, v] : a) {
            na += v * v;
        }
        for (const auto& [_, v] : b) {
            nb += v * v;
        }
        std::size_t i = 0;
        std::size_t j = 0;
        while (i < a.size() && j < b.size()) {
            if (a[i].first < b[j].first) {
                ++i;
            } else if (b[j].first < a[i].first) {
                ++j;
            } else {
                dot += a[i].second * b[j].second;
                ++i;
                ++j;
            }
        }
        if (na == 0.0 || nb == 0.0) {
            return 0.0;
        }
        return dot / (std::sqrt(na) * std::sqrt(nb));
    }

  private:
    std::shared_ptr<const PositionalIndex> index_;
    std::size_t top_k_;
    std::size_t keywords_;
    LmParams params_;
    mutable std::mutex mutex_;
    mutable std::unordered_map<std::string, ConceptVector> cache_;
};

/// Lookup tables behind the semantic passage features. Any table may be
/// absent; the dependent feature then evaluates to 0 and the absence is
/// listed by degradations().
struct SemanticResources {
    std::unordered_map<std::string, std::vector<double>> embeddings;
    std::size_t embedding_dim = 0;
    std::unordered_map<std::string, std::set<std::string>> synonyms;
    std::unordered_map<std::string, std::set<std::string>> entities;
    std::shared_ptr<const EsaSpace> esa;
    bool has_embeddings = false;
    bool has_synonyms = false;
    bool has_entities = false;

    [[nodiscard]] std::vector<std::string> degradations() const {
        std::vector<std::string> out;
        if (!esa) {
            out.emplace_back("ESA: no concept index; feature set to 0");
        }
        if (!has_embeddings) {
            out.emplace_back("W2V: no embedding table; feature set to 0");
        }
        if (!has_synonyms) {
            out.emplace_back("SynonymsOverlap: no synonym table; equals TermOverlap");
        }
        if (!has_entities) {
            out.emplace_back("Entity: no entity annotations; feature set to 0");
        }
        return out;
    }
};

inline std::string analyze_term(const Analyzer& analyzer, std::string_view term) {
    std::string lower(trim(term));
    for (auto& c : lower) {
        c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
    return analyzer.stemmer().stem(lower);
}

/// "term v1 v2 ... vd" per line; an optional word2vec "count dim" header is
/// skipped. Terms are stemmed; the first vector seen for a stem is kept.
inline void load_embeddings(SemanticResources& res, const std::filesystem::path& path,
                            const Analyzer& analyzer) {
    std::ifstream in(path);
    if (!in) {
        throw ValidationError("cannot open embedding file: " + path.string());
    }
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        auto parts = split_ws(line);
        if (parts.empty()) {
            continue;
        }
        if (line_no == 1 && parts.size() == 2) {
            continue;
        }
        if (parts.size() < 2) {
            throw ValidationError("embedding line " + std::to_string(line_no) + " has no vector");
        }
        std::vector<double> vec;
        for (std::size_t i = 1; i < parts.size(); ++i) {
            vec.push_back(parse_double(parts[i], "embedding value"));
        }
        if (res.embedding_dim == 0) {
            res.embedding_dim = vec.size();
        } else if (vec.size() != res.embedding_dim) {
            throw ValidationError("embedding line " + std::to_string(line_no) + " has dimension " +
                                  std::to_string(vec.size()) + ", expected " +
                                  std::to_string(res.embedding_dim));
        }
        res.embeddings.emplace(analyze_term(analyzer, parts[0]), std::move(vec));
    }
    res.has_embeddings = true;
}

/// "term: syn1, syn2, ..." per line.
inline void load_synonyms(SemanticResources& res, const std::filesystem::path& path,
                          const Analyzer& analyzer) {
    std::ifstream in(path);
    if (!in) {
        throw ValidationError("cannot open synonym file: " + path.string());
    }
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) {
            continue;
        }
        auto colon = line.find(':');
        if (colon == std::string::npos) {
            throw ValidationError("synonym line " + std::to_string(line_no) + " lacks ':'");
        }
        auto term = analyze_term(analyzer, std::string_view(line).substr(0, colon));
        auto& set = res.synonyms[term];
        for (const auto& syn : split_char(std::string_view(line).substr(colon + 1), ',')) {
            if (!trim(syn).empty()) {
                set.insert(analyze_term(analyzer, syn));
            }
        }
    }
    res.has_synonyms = true;
}

inline constexpr double kEntityConfidenceThreshold = 0.1;

/// item_id<TAB>entity_id<TAB>confidence; annotations below the threshold are dropped.
inline void load_entities(SemanticResources& res, const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ValidationError("cannot open entity annotation file: " + path.string());
    }
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) {
            continue;
        }
        auto parts = split_char(line, '\t');
        if (parts.size() != 3) {
            throw ValidationError("entity line " + std::to_string(line_no) +
                                  " must be item_id<TAB>entity_id<TAB>confidence");
        }
        const double conf = parse_double(parts[2], "entity confidence");
        if (conf < 0.0 || conf > 1.0) {
            throw ValidationError("entity confidence out of [0,1] at line " + std::to_string(line_no));
        }
        if (conf >= kEntityConfidenceThreshold) {
            res.entities[std::string(trim(parts[0]))].insert(std::string(trim(parts[1])));
        } else {
            res.entities.try_emplace(std::string(trim(parts[0])));
        }
    }
    res.has_entities = true;
}

// ---------------------------------------------------------------------------
// Passage features

inline double jaccard(const std::set<std::string>& a, const std::set<std::string>& b) {
    if (a.empty() && b.empty()) {
        return 0.0;
    }
    std::size_t inter = 0;
    for (const auto& x : a) {
        inter += b.count(x);
    }
    return static_cast<double>(inter) / static_cast<double>(a.size() + b.size() - inter);
}

/// Mean embedding of the stems that have one; empty if none do.
inline std::vector<double> centroid(std::span<const std::string> stems, const SemanticResources& res) {
    std::vector<double> c;
    std::size_t n = 0;
    for (const auto& s : stems) {
        auto it = res.embeddings.find(s);
        if (it == res.embeddings.end()) {
            continue;
        }
        if (c.empty()) {
            c.assign(it->second.size(), 0.0);
        }
        for (std::size_t i = 0; i < c.size(); ++i) {
            c[i] += it->second[i];
        }
        ++n;
    }
    for (auto& x : c) {
        x /= static_cast<double>(n);
    }
    return c;
}

inline double cosine(std::span<const double> a, std::span<const double> b) {
    if (a.empty() || b.empty() || a.size() != b.size()) {
        return 0.0;
    }
    double dot = 0.0;
    double na = 0.0;
    double nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) {
        return 0.0;
    }
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

/// Whether `needle` occurs as a contiguous run inside `hay`.
inline bool contains_run(std::span<const std::string> hay, std::span<const std::string> needle) {
    if (needle.empty() || needle.size() > hay.size()) {
        return false;
    }
    return std::search(hay.begin(), hay.end(), needle.begin(), needle.end()) != hay.end();
}

/// Query-side state shared by all passages of one query.
struct QueryFeatureContext {
    const Query* query = nullptr;
    QueryModel model;
    std::vector<std::string> unique_stems;
    std::vector<double> query_centroid;
    EsaSpace::ConceptVector query_concepts;
    const std::set<std::string>* query_entities = nullptr;
    /// Normalizers: sums of sim(q, ·) over S_psg and S_doc.
    double psg_sim_sum = 0.0;
    double doc_sim_sum = 0.0;
};

inline QueryFeatureContext make_feature_context(const Query& query, const PositionalIndex& index,
                                                const SemanticResources& res) {
    QueryFeatureContext ctx;
    ctx.query = &query;
    ctx.model = make_query_model(query, index);
    const auto stems = query.stems();
    std::set<std::string> uniq(stems.begin(), stems.end());
    ctx.unique_stems.assign(uniq.begin(), uniq.end());
    ctx.query_centroid = centroid(stems, res);
    if (res.esa) {
        ctx.query_concepts = res.esa->concept_vector(stems);
    }
    static const std::set<std::string> kNone;
    auto it = res.entities.find(query.query_id);
    ctx.query_entities = it == res.entities.end() ? &kNone : &it->second;
    return ctx;
}

inline double similarity(const QueryModel& model, std::span<const Token> tokens, const LmParams& params) {
    auto counts = term_counts(model, tokens);
    return lm_similarity(model, counts, static_cast<double>(tokens.size()), params);
}

/// PSG20 for one passage. `doc_passage_sims[i]` is sim(q, ·) for the i-th
/// passage of the ambient document and `doc_sim` is sim(q, d).
inline FeatureVector passage_features(const QueryFeatureContext& ctx, const Passage& passage,
                                      const Document& doc, std::span<const Passage> doc_passages,
                                      std::span<const double> doc_passage_sims, double doc_sim,
                                      const SemanticResources& res, const StopwordList& stopwords) {
    const auto tokens = passage.tokens(doc);
    const double own_sim = doc_passage_sims[passage.ordinal];
    const auto [pre, follow] = neighbors(doc_passages, passage.ordinal);
    const auto priors = text_priors(tokens, stopwords);

    std::vector<std::string> content;
    std::set<std::string> present;
    for (const auto& t : tokens) {
        if (!t.is_stopword) {
            content.push_back(t.stem);
        }
        present.insert(t.stem);
    }
    const auto query_stems = ctx.query->stems();

    std::size_t term_hits = 0;
    std::size_t syn_hits = 0;
    for (const auto& q : ctx.unique_stems) {
        const bool hit = present.count(q) > 0;
        term_hits += hit ? 1 : 0;
        bool syn = hit;
        if (!syn) {
            auto it = res.synonyms.find(q);
            if (it != res.synonyms.end()) {
                for (const auto& s : it->second) {
                    if (present.count(s) > 0) {
                        syn = true;
                        break;
                    }
                }
            }
        }
        syn_hits += syn ? 1 : 0;
    }
    const double nq = static_cast<double>(ctx.unique_stems.size());

    double esa = 0.0;
    if (res.esa) {
        esa = EsaSpace::cosine(ctx.query_concepts, res.esa->passage_vector(passage.passage_id, tokens));
    }
    double w2v = 0.0;
    if (res.has_embeddings) {
        w2v = cosine(ctx.query_centroid, centroid(content, res));
    }
    double entity = 0.0;
    if (res.has_entities) {
        static const std::set<std::string> kNone;
        auto it = res.entities.find(passage.passage_id);
        entity = jaccard(*ctx.query_entities, it == res.entities.end() ? kNone : it->second);
    }

    double max_sim = 0.0;
    for (double s : doc_passage_sims) {
        max_sim = std::max(max_sim, s);
    }

    FeatureVector v;
    v.schema = passage_schema();
    v.query_id = ctx.query->query_id;
    v.item_id = passage.passage_id;
    v.values = {
        ctx.psg_sim_sum > 0.0 ? own_sim / ctx.psg_sim_sum : 0.0,
        ctx.doc_sim_sum > 0.0 ? doc_sim / ctx.doc_sim_sum : 0.0,
        max_sim,
        mean_of(doc_passage_sims),
        stddev_of(doc_passage_sims),
        doc.length() == 0 ? 1.0
                          : static_cast<double>(passage.length()) / static_cast<double>(doc.length()),
        doc_passage_sims[pre.ordinal],
        doc_passage_sims[follow.ordinal],
        priors.entropy,
        priors.sw1,
        priors.sw2,
        static_cast<double>(ctx.query->unique_term_count),
        contains_run(content, query_stems) ? 1.0 : 0.0,
        nq > 0 ? static_cast<double>(term_hits) / nq : 0.0,
        nq > 0 ? static_cast<double>(syn_hits) / nq : 0.0,
        static_cast<double>(content.size()),
        static_cast<double>(passage.ordinal + 1) / static_cast<double>(doc_passages.size()),
        esa,
        w2v,
        entity,
    };
    return v;
}

/// Raw (unnormalized) features of one query's document set S_doc and its
/// passage set S_psg.
struct QueryFeatureSet {
    std::string query_id;
    std::vector<std::string> doc_ids;
    std::vector<double> doc_sims;
    std::vector<FeatureVector> doc_vectors;
    std::vector<std::string> passage_ids;
    /// Index into doc_ids for each passage.
    std::vector<std::size_t> passage_doc;
    std::vector<double> passage_sims;
    std::vector<FeatureVector> passage_vectors;
};

/// Extracts DOC6 for every document in `doc_ids` and PSG20 for every passage
/// of those documents. Passages are listed in document order, then ordinal.
inline QueryFeatureSet extract_features(const Query& query, std::span<const std::string> doc_ids,
                                        const PassageCatalog& catalog, const PositionalIndex& index,
                                        const SemanticResources& res, const LmParams& params) {
    QueryFeatureSet out;
    out.query_id = query.query_id;
    const auto& store = index.store();
    auto ctx = make_feature_context(query, index, res);

    std::vector<std::vector<double>> per_doc_psg_sims;
    for (const auto& id : doc_ids) {
        const Document& doc = store.at(store.index_of(id));
        out.doc_ids.push_back(id);
        out.doc_sims.push_back(similarity(ctx.model, doc.tokens, params));
        out.doc_vectors.push_back(doc_features(query, doc, index, params));
        std::vector<double> sims;
        for (const auto& p : catalog.of_doc(id)) {
            sims.push_back(similarity(ctx.model, p.tokens(doc), params));
        }
        per_doc_psg_sims.push_back(std::move(sims));
    }
    for (double s : out.doc_sims) {
        ctx.doc_sim_sum += s;
    }
    for (const auto& sims : per_doc_psg_sims) {
        for (double s : sims) {
            ctx.psg_sim_sum += s;
        }
    }
    const auto& stopwords = store.analyzer().stopwords();
    for (std::size_t d = 0; d < out.doc_ids.size(); ++d) {
        const Document& doc = store.at(store.index_of(out.doc_ids[d]));
        const auto passages = catalog.of_doc(out.doc_ids[d]);
        for (const auto& p : passages) {
            out.passage_ids.push_back(p.passage_id);
            out.passage_doc.push_back(d);
            out.passage_sims.push_back(per_doc_psg_sims[d][p.ordinal]);
            out.passage_vectors.push_back(passage_features(ctx, p, doc, passages, per_doc_psg_sims[d],
                                                           out.doc_sims[d], res, stopwords));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// SVMlight interchange

/// Writes "# schema NAME f1 f2 ..." then "grade qid:Q 1:v1 ... # item_id".
inline void write_svmlight(std::ostream& out, std::span<const FeatureVector> vectors,
                           std::span<const int> grades) {
    if (vectors.empty()) {
        return;
    }
    out << "# schema " << vectors.front().schema->name();
    for (const auto& f : vectors.front().schema->features()) {
        out << ' ' << f;
    }
    out << '\n';
    for (std::size_t i = 0; i < vectors.size(); ++i) {
        out << (i < grades.size() ? grades[i] : 0) << " qid:" << vectors[i].query_id;
        for (std::size_t f = 0; f < vectors[i].values.size(); ++f) {
            out << ' ' << (f + 1) << ':' << format_double(vectors[i].values[f]);
        }
        out << " # " << vectors[i].item_id << '\n';
    }
}

struct SvmlightData {
    SchemaPtr schema;
    std::vector<FeatureVector> vectors;
    std::vector<int> grades;
};

inline SvmlightData read_svmlight(std::istream& in) {
    SvmlightData data;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) {
            continue;
        }
        if (line.rfind("# schema ", 0) == 0) {
            auto parts = split_ws(std::string_view(line).substr(9));
            if (parts.empty()) {
                throw ValidationError("empty schema header");
            }
            std::string name = parts.front();
            parts.erase(parts.begin());
            data.schema = std::make_shared<const FeatureSchema>(std::move(name), std::move(parts));
            continue;
        }
        if (line[0] == '#') {
            continue;
        }
        if (!data.schema) {
            throw ValidationError("feature file lacks a '# schema' header before line " +
                                  std::to_string(line_no));
        }
        std::string item;
        auto hash = line.find('#');
        if (hash != std::string::npos) {
            item = std::string(trim(std::string_view(line).substr(hash + 1)));
            line.resize(hash);
        }
        auto parts = split_ws(line);
        if (parts.size() < 2 || parts[1].rfind("qid:", 0) != 0) {
            throw ValidationError("malformed feature line " + std::to_string(line_no));
        }
        FeatureVector v;
        v.schema = data.schema;
        v.query_id = parts[1].substr(4);
        v.item_id = item;
        v.values.assign(data.schema->size(), 0.0);
        for (std::size_t i = 2; i < parts.size(); ++i) {
            auto colon = parts[i].find(':');
            if (colon == std::string::npos) {
                throw ValidationError("malformed feature pair at line " + std::to_string(line_no));
            }
            auto idx = parse_int(std::string_view(parts[i]).substr(0, colon), "feature index");
            if (idx < 1 || static_cast<std::size_t>(idx) > data.schema->size()) {
                throw ValidationError("feature index out of range at line " + std::to_string(line_no));
            }
            v.values[static_cast<std::size_t>(idx - 1)] =
                parse_double(std::string_view(parts[i]).substr(colon + 1), "feature value");
        }
        data.grades.push_back(static_cast<int>(parse_int(parts[0], "grade")));
        data.vectors.push_back(std::move(v));
    }
    return data;
}

}  // namespace psgrank
