#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <unordered_map>
#include <vector>

#include "psgrank/common.hpp"
#include "psgrank/ltr.hpp"
#include "psgrank/passage.hpp"

namespace psgrank {

// ---------------------------------------------------------------------------
// Judgments

enum class JudgmentMode { doc_graded, char_focused, sentence_binary };

class JudgmentSet {
  public:
    using DocGrades = std::map<std::string, int>;
    using DocSpans = std::map<std::string, std::vector<CharRange>>;

    [[nodiscard]] std::optional<JudgmentMode> passage_mode() const { return passage_mode_; }

    void add_doc_grade(const std::string& qid, const std::string& doc, int grade) {
        if (grade < 0) {
            throw ValidationError("negative grade for " + qid + "/" + doc);
        }
        doc_grades_[qid][doc] = grade;
    }

    void add_span(const std::string& qid, const std::string& doc, CharRange span) {
        set_mode(JudgmentMode::char_focused);
        if (span.end <= span.start) {
            throw ValidationError("empty or inverted character span for " + qid + "/" + doc);
        }
        spans_[qid][doc].push_back(span);
    }

    void add_sentence_grade(const std::string& qid, const std::string& passage_id, int grade) {
        set_mode(JudgmentMode::sentence_binary);
        if (grade < 0) {
            throw ValidationError("negative grade for " + qid + "/" + passage_id);
        }
        sentence_grades_[qid][passage_id] = grade;
    }

    /// Grades of every judged document of a query (empty map if none).
    [[nodiscard]] const DocGrades& doc_grades(const std::string& qid) const {
        static const DocGrades kEmpty;
        auto it = doc_grades_.find(qid);
        return it == doc_grades_.end() ? kEmpty : it->second;
    }

    [[nodiscard]] int doc_grade(const std::string& qid, const std::string& doc) const {
        const auto& g = doc_grades(qid);
        auto it = g.find(doc);
        return it == g.end() ? 0 : it->second;
    }

    [[nodiscard]] std::size_t relevant_docs(const std::string& qid) const {
        std::size_t n = 0;
        for (const auto& [_, g] : doc_grades(qid)) {
            n += g > 0 ? 1 : 0;
        }
        return n;
    }

    [[nodiscard]] const DocSpans& spans(const std::string& qid) const {
        static const DocSpans kEmpty;
        auto it = spans_.find(qid);
        return it == spans_.end() ? kEmpty : it->second;
    }

    [[nodiscard]] const std::map<std::string, int>& sentence_grades(const std::string& qid) const {
        static const std::map<std::string, int> kEmpty;
        auto it = sentence_grades_.find(qid);
        return it == sentence_grades_.end() ? kEmpty : it->second;
    }

    /// Relevant character spans of a query per document. Sentence judgments
    /// are expanded to the character ranges of the relevant sentences.
    [[nodiscard]] DocSpans relevant_spans(const std::string& qid, const PassageCatalog* catalog) const {
        if (passage_mode_ == JudgmentMode::sentence_binary) {
            if (catalog == nullptr) {
                throw ValidationError("sentence judgments need a passage catalog");
            }
            DocSpans out;
            for (const auto& [pid, g] : sentence_grades(qid)) {
                if (g <= 0) {
                    continue;
                }
                const Passage* p = catalog->find(pid);
                if (p == nullptr) {
                    throw ValidationError("judged sentence " + pid + " is not in the corpus");
                }
                out[p->doc_id].push_back(p->chars);
            }
            return out;
        }
        return spans(qid);
    }

    /// Passage grade: RFrac bucket for character judgments, the judged grade
    /// for sentence judgments, 0 otherwise.
    [[nodiscard]] int passage_grade(const std::string& qid, const Passage& p) const {
        if (passage_mode_ == JudgmentMode::sentence_binary) {
            const auto& g = sentence_grades(qid);
            auto it = g.find(p.passage_id);
            return it == g.end() ? 0 : std::min(1, it->second);
        }
        const auto& s = spans(qid);
        auto it = s.find(p.doc_id);
        if (it == s.end()) {
            return 0;
        }
        return bucket_grade(char_overlap(p, it->second).fraction());
    }

    [[nodiscard]] std::vector<std::string> query_ids() const {
        std::set<std::string> ids;
        for (const auto& [q, _] : doc_grades_) {
            ids.insert(q);
        }
        for (const auto& [q, _] : spans_) {
            ids.insert(q);
        }
        for (const auto& [q, _] : sentence_grades_) {
            ids.insert(q);
        }
        return {ids.begin(), ids.end()};
    }

    /// Copy without any judgment of `qid`.
    [[nodiscard]] JudgmentSet without(const std::string& qid) const {
        JudgmentSet out = *this;
        out.doc_grades_.erase(qid);
        out.spans_.erase(qid);
        out.sentence_grades_.erase(qid);
        return out;
    }

    /// Copy restricted to `qids`.
    [[nodiscard]] JudgmentSet only(const std::set<std::string>& qids) const {
        JudgmentSet out;
        out.passage_mode_ = passage_mode_;
        for (const auto& q : qids) {
            if (auto it = doc_grades_.find(q); it != doc_grades_.end()) {
                out.doc_grades_.insert(*it);
            }
            if (auto it = spans_.find(q); it != spans_.end()) {
                out.spans_.insert(*it);
            }
            if (auto it = sentence_grades_.find(q); it != sentence_grades_.end()) {
                out.sentence_grades_.insert(*it);
            }
        }
        return out;
    }

    /// Stable digest of the judgments of one query.
    [[nodiscard]] std::string digest(const std::string& qid) const {
        std::string s;
        for (const auto& [d, g] : doc_grades(qid)) {
            s += d + ":" + std::to_string(g) + ";";
        }
        for (const auto& [d, spans] : this->spans(qid)) {
            for (const auto& r : spans) {
                s += d + "@" + std::to_string(r.start) + "-" + std::to_string(r.end) + ";";
            }
        }
        for (const auto& [p, g] : sentence_grades(qid)) {
            s += p + "=" + std::to_string(g) + ";";
        }
        return hex64(fnv1a64(s));
    }

  private:
    void set_mode(JudgmentMode m) {
        if (passage_mode_ && *passage_mode_ != m) {
            throw ValidationError("passage judgments mix character spans and sentence grades");
        }
        passage_mode_ = m;
    }

    std::map<std::string, DocGrades> doc_grades_;
    std::map<std::string, DocSpans> spans_;
    std::map<std::string, std::map<std::string, int>> sentence_grades_;
    std::optional<JudgmentMode> passage_mode_;
};

/// "query_id 0 doc_id grade" lines.
inline void read_doc_qrels(std::istream& in, JudgmentSet& out) {
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        auto parts = split_ws(line);
        if (parts.empty() || parts[0][0] == '#') {
            continue;
        }
        if (parts.size() != 4) {
            throw ValidationError("malformed qrels line " + std::to_string(line_no) + ": " + line);
        }
        out.add_doc_grade(parts[0], parts[2], static_cast<int>(parse_int(parts[3], "grade")));
    }
}

/// "qid<TAB>doc<TAB>start<TAB>end" (character spans) or
/// "qid<TAB>passage_id<TAB>grade" (sentence judgments).
inline void read_passage_qrels(std::istream& in, JudgmentSet& out) {
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty() || trim(line)[0] == '#') {
            continue;
        }
        auto parts = split_char(std::string(trim(line)), '\t');
        if (parts.size() == 4) {
            const auto start = parse_int(parts[2], "span start");
            const auto end = parse_int(parts[3], "span end");
            if (start < 0 || end < 0) {
                throw ValidationError("negative span at passage qrels line " + std::to_string(line_no));
            }
            out.add_span(parts[0], parts[1],
                         CharRange{static_cast<std::size_t>(start), static_cast<std::size_t>(end)});
        } else if (parts.size() == 3) {
            out.add_sentence_grade(parts[0], parts[1], static_cast<int>(parse_int(parts[2], "grade")));
        } else {
            throw ValidationError("malformed passage qrels line " + std::to_string(line_no) + ": " + line);
        }
    }
}

inline JudgmentSet load_judgments(const std::filesystem::path& doc_qrels,
                                  const std::filesystem::path& passage_qrels) {
    JudgmentSet out;
    if (!doc_qrels.empty()) {
        std::ifstream in(doc_qrels);
        if (!in) {
            throw ValidationError("cannot open document qrels " + doc_qrels.string());
        }
        read_doc_qrels(in, out);
    }
    if (!passage_qrels.empty()) {
        std::ifstream in(passage_qrels);
        if (!in) {
            throw ValidationError("cannot open passage qrels " + passage_qrels.string());
        }
        read_passage_qrels(in, out);
    }
    return out;
}

/// Checks that every judged span lies inside its document.
inline void validate_spans(const JudgmentSet& j, const CorpusStore& store) {
    for (const auto& qid : j.query_ids()) {
        for (const auto& [doc, spans] : j.spans(qid)) {
            const Document* d = store.find(doc);
            if (d == nullptr) {
                throw ValidationError("passage qrels reference unknown document " + doc);
            }
            for (const auto& s : spans) {
                if (s.end > d->raw_text.size()) {
                    throw ValidationError("span " + std::to_string(s.start) + "-" + std::to_string(s.end) +
                                          " lies outside document " + doc);
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Document measures

/// Average precision over the top `cutoff` items; relevance = grade >= 1.
/// Returns nullopt when the query has no relevant documents.
inline std::optional<double> average_precision(const RankedList& list, const JudgmentSet::DocGrades& grades,
                                               std::size_t cutoff = 1000) {
    if (cutoff == 0) {
        throw ValidationError("average_precision: cutoff must be >= 1");
    }
    std::size_t total = 0;
    for (const auto& [_, g] : grades) {
        total += g > 0 ? 1 : 0;
    }
    if (total == 0) {
        return std::nullopt;
    }
    double sum = 0.0;
    std::size_t hits = 0;
    for (std::size_t r = 0; r < list.size() && r < cutoff; ++r) {
        auto it = grades.find(list.entries[r].id);
        if (it != grades.end() && it->second > 0) {
            ++hits;
            sum += static_cast<double>(hits) / static_cast<double>(r + 1);
        }
    }
    return sum / static_cast<double>(total);
}

inline double precision_at(const RankedList& list, const JudgmentSet::DocGrades& grades, std::size_t k) {
    if (k == 0) {
        throw ValidationError("precision_at: k must be >= 1");
    }
    std::size_t hits = 0;
    for (std::size_t r = 0; r < list.size() && r < k; ++r) {
        auto it = grades.find(list.entries[r].id);
        hits += it != grades.end() && it->second > 0 ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(k);
}

inline double ndcg_at(const RankedList& list, const JudgmentSet::DocGrades& grades, std::size_t k) {
    std::unordered_map<std::string, int> g(grades.begin(), grades.end());
    return ndcg_at_k(list, g, k);
}

// ---------------------------------------------------------------------------
// Focused (character-level) measures

inline constexpr std::size_t kRecallPoints = 101;

struct InterpolatedPrecision {
    /// iP at recall 0.00, 0.01, ..., 1.00.
    std::array<double, kRecallPoints> curve{};
    double maip = 0.0;

    /// iP at the recall point nearest to x.
    [[nodiscard]] double at(double x) const {
        const auto i = static_cast<std::size_t>(std::lround(std::clamp(x, 0.0, 1.0) * 100.0));
        return curve[i];
    }
};

namespace detail {

/// Parts of `r` not covered by the disjoint ascending `covered`.
inline std::vector<CharRange> subtract(const CharRange& r, const std::vector<CharRange>& covered) {
    std::vector<CharRange> out;
    std::size_t cur = r.start;
    for (const auto& c : covered) {
        if (c.end <= cur) {
            continue;
        }
        if (c.start >= r.end) {
            break;
        }
        if (c.start > cur) {
            out.push_back({cur, c.start});
        }
        cur = std::max(cur, c.end);
        if (cur >= r.end) {
            break;
        }
    }
    if (cur < r.end) {
        out.push_back({cur, r.end});
    }
    return out;
}

}  // namespace detail

/// Character precision/recall walk over a passage run. Characters already
/// retrieved for the same document count once; ranks that add no new
/// characters produce no point. Returns nullopt when nothing is relevant.
inline std::optional<InterpolatedPrecision> interpolated_precision(const RankedList& run,
                                                                   const JudgmentSet::DocSpans& relevant,
                                                                   const PassageCatalog& catalog,
                                                                   std::size_t cutoff = 1500) {
    std::map<std::string, std::vector<CharRange>> rel;
    std::size_t total_rel = 0;
    for (const auto& [doc, spans] : relevant) {
        auto merged = merge_ranges(spans);
        for (const auto& s : merged) {
            total_rel += s.width();
        }
        if (!merged.empty()) {
            rel.emplace(doc, std::move(merged));
        }
    }
    if (total_rel == 0) {
        return std::nullopt;
    }
    std::map<std::string, std::vector<CharRange>> seen;
    std::vector<std::pair<double, double>> points;  // (recall, precision)
    std::size_t retrieved = 0;
    std::size_t hit = 0;
    for (std::size_t r = 0; r < run.size() && r < cutoff; ++r) {
        const Passage* p = catalog.find(run.entries[r].id);
        if (p == nullptr) {
            throw ValidationError("run references unknown passage " + run.entries[r].id);
        }
        auto& doc_seen = seen[p->doc_id];
        const auto fresh = detail::subtract(p->chars, doc_seen);
        std::size_t added = 0;
        std::size_t added_rel = 0;
        auto rit = rel.find(p->doc_id);
        for (const auto& piece : fresh) {
            added += piece.width();
            if (rit != rel.end()) {
                added_rel += covered_chars(piece, rit->second);
            }
        }
        if (added == 0) {
            continue;
        }
        doc_seen.push_back(p->chars);
        doc_seen = merge_ranges(std::move(doc_seen));
        retrieved += added;
        hit += added_rel;
        points.emplace_back(static_cast<double>(hit) / static_cast<double>(total_rel),
                            static_cast<double>(hit) / static_cast<double>(retrieved));
    }
    InterpolatedPrecision out;
    // Suffix maximum of precision over points with recall >= x.
    for (std::size_t i = 0; i < kRecallPoints; ++i) {
        const double x = static_cast<double>(i) / 100.0;
        double best = 0.0;
        for (const auto& [rec, prec] : points) {
            if (rec + 1e-12 >= x) {
                best = std::max(best, prec);
            }
        }
        out.curve[i] = best;
    }
    double sum = 0.0;
    for (double v : out.curve) {
        sum += v;
    }
    out.maip = sum / static_cast<double>(kRecallPoints);
    return out;
}

// ---------------------------------------------------------------------------
// Paired t-test

namespace detail {

/// Continued fraction for the regularized incomplete beta (modified Lentz).
inline double beta_cf(double a, double b, double x) {
    constexpr double kTiny = 1e-300;
    constexpr double kEps = 1e-10;
    constexpr int kMaxIter = 10000;
    const double qab = a + b;
    const double qap = a + 1.0;
    const double qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::fabs(d) < kTiny) {
        d = kTiny;
    }
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        const double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        d = std::fabs(d) < kTiny ? kTiny : d;
        c = 1.0 + aa / c;
        c = std::fabs(c) < kTiny ? kTiny : c;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        d = std::fabs(d) < kTiny ? kTiny : d;
        c = 1.0 + aa / c;
        c = std::fabs(c) < kTiny ? kTiny : c;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < kEps) {
            return h;
        }
    }
    throw RuntimeError("incomplete beta did not converge");
}

}  // namespace detail

/// Regularized incomplete beta I_x(a, b).
inline double incomplete_beta(double a, double b, double x) {
    if (x <= 0.0) {
        return 0.0;
    }
    if (x >= 1.0) {
        return 1.0;
    }
    const double front =
        std::exp(std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x));
    if (x < (a + 1.0) / (a + b + 2.0)) {
        return front * detail::beta_cf(a, b, x) / a;
    }
    return 1.0 - front * detail::beta_cf(b, a, 1.0 - x) / b;
}

/// Two-tailed p-value of Student's t with `df` degrees of freedom.
inline double t_two_tailed_p(double t, double df) {
    return incomplete_beta(df / 2.0, 0.5, df / (df + t * t));
}

struct TTestResult {
    double t = 0.0;
    double p = 1.0;
    std::size_t df = 0;
    bool significant = false;
};

/// Paired two-tailed t-test at alpha / corrections (Bonferroni).
inline TTestResult paired_ttest(std::span<const double> a, std::span<const double> b, double alpha = 0.05,
                                std::size_t corrections = 1) {
    if (a.size() != b.size()) {
        throw ValidationError("paired t-test needs equal-length samples");
    }
    if (a.size() < 2) {
        throw ValidationError("paired t-test needs at least 2 pairs");
    }
    if (corrections == 0 || !(alpha > 0.0 && alpha < 1.0)) {
        throw ValidationError("paired t-test: alpha must be in (0,1) and corrections >= 1");
    }
    std::vector<double> d(a.size());
    bool all_zero = true;
    for (std::size_t i = 0; i < a.size(); ++i) {
        d[i] = a[i] - b[i];
        all_zero = all_zero && d[i] == 0.0;
    }
    TTestResult r;
    r.df = a.size() - 1;
    if (all_zero) {
        return r;
    }
    const double n = static_cast<double>(d.size());
    const double mean = mean_of(d);
    double ss = 0.0;
    for (double x : d) {
        ss += (x - mean) * (x - mean);
    }
    const double sd = std::sqrt(ss / (n - 1.0));
    if (!(sd > 1e-300) || sd <= 1e-12 * std::fabs(mean)) {
        throw ValidationError("paired t-test is degenerate: differences have zero variance");
    }
    r.t = mean / (sd / std::sqrt(n));
    r.p = t_two_tailed_p(r.t, static_cast<double>(r.df));
    r.significant = r.p < alpha / static_cast<double>(corrections);
    return r;
}

// ---------------------------------------------------------------------------
// TREC run files

/// "query_id Q0 item_id rank score tag"
inline void write_trec_run(std::ostream& out, const RankedList& list, const std::string& tag) {
    for (std::size_t i = 0; i < list.size(); ++i) {
        out << list.query_id << " Q0 " << list.entries[i].id << ' ' << (i + 1) << ' '
            << format_double(list.entries[i].score) << ' ' << tag << '\n';
    }
}

/// Lists per query ordered by the rank column.
inline std::map<std::string, RankedList> read_trec_run(std::istream& in) {
    std::map<std::string, std::vector<std::pair<long long, RankedEntry>>> rows;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        auto parts = split_ws(line);
        if (parts.empty()) {
            continue;
        }
        if (parts.size() != 6) {
            throw ValidationError("malformed run line " + std::to_string(line_no) + ": " + line);
        }
        rows[parts[0]].push_back({parse_int(parts[3], "rank"),
                                  RankedEntry{parts[2], parse_double(parts[4], "score")}});
    }
    std::map<std::string, RankedList> out;
    for (auto& [qid, r] : rows) {
        std::stable_sort(r.begin(), r.end(), [](const auto& x, const auto& y) { return x.first < y.first; });
        RankedList list;
        list.query_id = qid;
        for (auto& [_, e] : r) {
            list.entries.push_back(std::move(e));
        }
        out.emplace(qid, std::move(list));
    }
    return out;
}

}  // namespace psgrank
