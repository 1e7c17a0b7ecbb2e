#pragma once

#include <algorithm>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "psgrank/common.hpp"
#include "psgrank/corpus.hpp"

namespace psgrank {

struct CharRange {
    std::size_t start = 0;
    std::size_t end = 0;

    [[nodiscard]] std::size_t width() const { return end > start ? end - start : 0; }
    friend bool operator==(const CharRange&, const CharRange&) = default;
};

struct Passage {
    std::string passage_id;
    std::string doc_id;
    std::size_t ordinal = 0;
    std::size_t token_start = 0;
    std::size_t token_end = 0;
    CharRange chars;

    [[nodiscard]] std::size_t length() const { return token_end - token_start; }

    [[nodiscard]] std::span<const Token> tokens(const Document& doc) const {
        return std::span<const Token>(doc.tokens).subspan(token_start, length());
    }
};

inline std::string make_passage_id(std::string_view doc_id, std::size_t ordinal) {
    return std::string(doc_id) + "#" + std::to_string(ordinal);
}

/// Inverse of make_passage_id.
inline std::pair<std::string, std::size_t> parse_passage_id(std::string_view passage_id) {
    auto pos = passage_id.rfind('#');
    if (pos == std::string_view::npos || pos + 1 >= passage_id.size()) {
        throw ValidationError("malformed passage id: " + std::string(passage_id));
    }
    auto ordinal = parse_int(passage_id.substr(pos + 1), "passage ordinal");
    if (ordinal < 0) {
        throw ValidationError("malformed passage id: " + std::string(passage_id));
    }
    return {std::string(passage_id.substr(0, pos)), static_cast<std::size_t>(ordinal)};
}

inline std::string doc_of_passage(std::string_view passage_id) {
    return parse_passage_id(passage_id).first;
}

struct SegmentationParams {
    enum class Mode { window, sentence };
    Mode mode = Mode::window;
    std::size_t window_len = 300;

    [[nodiscard]] std::string describe() const {
        return mode == Mode::window ? "window-" + std::to_string(window_len) : "sentence";
    }
};

namespace detail {

inline Passage make_passage(const Document& doc, std::size_t ordinal, std::size_t start,
                            std::size_t end) {
    Passage p;
    p.passage_id = make_passage_id(doc.doc_id, ordinal);
    p.doc_id = doc.doc_id;
    p.ordinal = ordinal;
    p.token_start = start;
    p.token_end = end;
    if (end > start) {
        p.chars = CharRange{doc.tokens[start].char_start, doc.tokens[end - 1].char_end};
    }
    return p;
}

/// Sentence boundaries: '.', '!' or '?' followed by whitespace or end of text.
inline std::vector<std::size_t> sentence_ends(std::string_view text) {
    std::vector<std::size_t> ends;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (c == '.' || c == '!' || c == '?') {
            const bool at_end = i + 1 == text.size();
            const bool ws = !at_end && (text[i + 1] == ' ' || text[i + 1] == '\n' ||
                                        text[i + 1] == '\t' || text[i + 1] == '\r');
            if (at_end || ws) {
                ends.push_back(i + 1);
            }
        }
    }
    return ends;
}

}  // namespace detail

/// Splits a document into passages. Window mode produces contiguous,
/// non-overlapping windows of `window_len` tokens with a shorter tail; an
/// empty document yields a single empty passage.
inline std::vector<Passage> segment(const Document& doc, const SegmentationParams& params) {
    std::vector<Passage> out;
    const std::size_t n = doc.length();
    if (n == 0) {
        out.push_back(detail::make_passage(doc, 0, 0, 0));
        return out;
    }
    if (params.mode == SegmentationParams::Mode::window) {
        if (params.window_len == 0) {
            throw ValidationError("passage window length must be >= 1");
        }
        for (std::size_t start = 0, ord = 0; start < n; start += params.window_len, ++ord) {
            out.push_back(detail::make_passage(doc, ord, start, std::min(n, start + params.window_len)));
        }
        return out;
    }
    const auto ends = detail::sentence_ends(doc.raw_text);
    std::size_t token = 0;
    std::size_t ord = 0;
    for (std::size_t boundary : ends) {
        std::size_t start = token;
        while (token < n && doc.tokens[token].char_start < boundary) {
            ++token;
        }
        if (token > start) {
            out.push_back(detail::make_passage(doc, ord++, start, token));
        }
    }
    if (token < n) {
        out.push_back(detail::make_passage(doc, ord, token, n));
    }
    return out;
}

/// Preceding and following passage; a missing neighbour is the passage itself.
inline std::pair<const Passage&, const Passage&> neighbors(std::span<const Passage> doc_passages,
                                                           std::size_t ordinal) {
    const Passage& self = doc_passages[ordinal];
    const Passage& pre = ordinal > 0 ? doc_passages[ordinal - 1] : self;
    const Passage& follow = ordinal + 1 < doc_passages.size() ? doc_passages[ordinal + 1] : self;
    return {pre, follow};
}

struct CharOverlap {
    std::size_t overlap_chars = 0;
    std::size_t passage_chars = 0;

    [[nodiscard]] double fraction() const {
        return passage_chars == 0 ? 0.0
                                  : static_cast<double>(overlap_chars) / static_cast<double>(passage_chars);
    }
};

/// Sorts and merges ranges into a disjoint ascending union.
inline std::vector<CharRange> merge_ranges(std::vector<CharRange> spans) {
    std::sort(spans.begin(), spans.end(),
              [](const CharRange& a, const CharRange& b) { return a.start < b.start; });
    std::vector<CharRange> merged;
    for (const auto& s : spans) {
        if (s.width() == 0) {
            continue;
        }
        if (!merged.empty() && s.start <= merged.back().end) {
            merged.back().end = std::max(merged.back().end, s.end);
        } else {
            merged.push_back(s);
        }
    }
    return merged;
}

/// Characters of `range` covered by the union of `spans`.
inline std::size_t covered_chars(const CharRange& range, std::span<const CharRange> merged_spans) {
    std::size_t n = 0;
    for (const auto& s : merged_spans) {
        const auto lo = std::max(range.start, s.start);
        const auto hi = std::min(range.end, s.end);
        if (hi > lo) {
            n += hi - lo;
        }
    }
    return n;
}

inline CharOverlap char_overlap(const Passage& p, std::vector<CharRange> spans) {
    const auto merged = merge_ranges(std::move(spans));
    return CharOverlap{covered_chars(p.chars, merged), p.chars.width()};
}

/// Passages of every document in a store, addressable by id.
class PassageCatalog {
  public:
    PassageCatalog(std::shared_ptr<const CorpusStore> store, SegmentationParams params)
        : store_(std::move(store)), params_(params) {
        by_doc_.reserve(store_->size());
        for (std::size_t d = 0; d < store_->size(); ++d) {
            by_doc_.push_back(segment(store_->at(d), params_));
        }
    }

    [[nodiscard]] const SegmentationParams& params() const { return params_; }
    [[nodiscard]] const CorpusStore& store() const { return *store_; }

    [[nodiscard]] std::span<const Passage> of_doc(std::size_t doc_index) const {
        return by_doc_.at(doc_index);
    }

    [[nodiscard]] std::span<const Passage> of_doc(std::string_view doc_id) const {
        return of_doc(store_->index_of(doc_id));
    }

    [[nodiscard]] const Passage* find(std::string_view passage_id) const {
        std::pair<std::string, std::size_t> parsed;
        try {
            parsed = parse_passage_id(passage_id);
        } catch (const ValidationError&) {
            return nullptr;
        }
        const Document* doc = store_->find(parsed.first);
        if (doc == nullptr) {
            return nullptr;
        }
        const auto& list = by_doc_[store_->index_of(parsed.first)];
        return parsed.second < list.size() ? &list[parsed.second] : nullptr;
    }

    [[nodiscard]] std::size_t total_passages() const {
        std::size_t n = 0;
        for (const auto& l : by_doc_) {
            n += l.size();
        }
        return n;
    }

    /// passage_id doc_id ordinal token_start token_end char_start char_end
    void write_tsv(std::ostream& out) const {
        for (const auto& list : by_doc_) {
            for (const auto& p : list) {
                out << p.passage_id << '\t' << p.doc_id << '\t' << p.ordinal << '\t'
                    << p.token_start << '\t' << p.token_end << '\t' << p.chars.start << '\t'
                    << p.chars.end << '\n';
            }
        }
    }

  private:
    std::shared_ptr<const CorpusStore> store_;
    SegmentationParams params_;
    std::vector<std::vector<Passage>> by_doc_;
};

}  // namespace psgrank
