#pragma once

#include <cctype>
#include <filesystem>
#include <fstream>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "psgrank/common.hpp"
#include "psgrank/inquery_stopwords.hpp"
#include "psgrank/stemmer.hpp"

namespace psgrank {

struct Token {
    std::string surface;
    std::string stem;
    std::size_t char_start = 0;
    std::size_t char_end = 0;
    bool is_stopword = false;
};

/// Case-insensitive set of stopwords with an identity for manifests.
class StopwordList {
  public:
    StopwordList(std::string name, std::unordered_set<std::string> terms)
        : name_(std::move(name)), terms_(std::move(terms)) {
        if (terms_.empty()) {
            throw ValidationError("stopword list '" + name_ + "' is empty");
        }
    }

    [[nodiscard]] const std::string& name() const { return name_; }
    [[nodiscard]] std::size_t size() const { return terms_.size(); }
    [[nodiscard]] const std::unordered_set<std::string>& terms() const { return terms_; }

    [[nodiscard]] bool contains(std::string_view term) const {
        std::string lower(term);
        for (auto& c : lower) {
            c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        }
        return terms_.count(lower) > 0;
    }

    /// Sorted terms joined by newlines; the identity hash is taken over this.
    [[nodiscard]] std::string canonical() const {
        std::set<std::string> sorted(terms_.begin(), terms_.end());
        std::string out;
        for (const auto& t : sorted) {
            out += t;
            out += '\n';
        }
        return out;
    }

    [[nodiscard]] std::string identity() const { return name_ + ":" + hex64(fnv1a64(canonical())); }

  private:
    std::string name_;
    std::unordered_set<std::string> terms_;
};

inline StopwordList default_stopwords() {
    std::unordered_set<std::string> terms;
    for (auto t : kInqueryStopwords) {
        terms.emplace(t);
    }
    return StopwordList("inquery-418", std::move(terms));
}

/// One lowercase term per line; '#' starts a comment.
inline StopwordList load_stopwords(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ValidationError("cannot open stopword file: " + path.string());
    }
    std::unordered_set<std::string> terms;
    std::string line;
    while (std::getline(in, line)) {
        auto hash = line.find('#');
        if (hash != std::string::npos) {
            line.resize(hash);
        }
        auto t = trim(line);
        if (t.empty()) {
            continue;
        }
        std::string term(t);
        for (auto& c : term) {
            c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        }
        terms.insert(std::move(term));
    }
    return StopwordList(path.stem().string(), std::move(terms));
}

/// Tokenizer + stemmer + stopword list. Immutable and shareable.
class Analyzer {
  public:
    Analyzer() : Analyzer(std::make_shared<LightStemmer>(), default_stopwords()) {}
    Analyzer(std::shared_ptr<const Stemmer> stemmer, StopwordList stopwords)
        : stemmer_(std::move(stemmer)), stopwords_(std::move(stopwords)) {}

    [[nodiscard]] const Stemmer& stemmer() const { return *stemmer_; }
    [[nodiscard]] const StopwordList& stopwords() const { return stopwords_; }

    /// Maximal ASCII alphanumeric runs. Offsets index the original string.
    [[nodiscard]] std::vector<Token> tokenize(std::string_view text) const {
        std::vector<Token> tokens;
        std::size_t i = 0;
        const auto alnum = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; };
        while (i < text.size()) {
            while (i < text.size() && !alnum(text[i])) {
                ++i;
            }
            std::size_t j = i;
            while (j < text.size() && alnum(text[j])) {
                ++j;
            }
            if (j > i) {
                Token tok;
                tok.surface = std::string(text.substr(i, j - i));
                std::string lower = tok.surface;
                for (auto& c : lower) {
                    c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
                }
                tok.stem = stemmer_->stem(lower);
                tok.is_stopword = stopwords_.contains(lower);
                tok.char_start = i;
                tok.char_end = j;
                tokens.push_back(std::move(tok));
            }
            i = j;
        }
        return tokens;
    }

  private:
    std::shared_ptr<const Stemmer> stemmer_;
    StopwordList stopwords_;
};

struct Document {
    std::string doc_id;
    std::string raw_text;
    std::vector<Token> tokens;

    [[nodiscard]] std::size_t length() const { return tokens.size(); }
};

struct Query {
    std::string query_id;
    std::string text;
    /// Stopwords removed.
    std::vector<Token> tokens;
    std::size_t unique_term_count = 0;

    [[nodiscard]] std::vector<std::string> stems() const {
        std::vector<std::string> out;
        out.reserve(tokens.size());
        for (const auto& t : tokens) {
            out.push_back(t.stem);
        }
        return out;
    }
};

inline Query make_query(const Analyzer& analyzer, std::string query_id, std::string text) {
    Query q;
    q.query_id = std::move(query_id);
    for (auto& tok : analyzer.tokenize(text)) {
        if (!tok.is_stopword) {
            q.tokens.push_back(std::move(tok));
        }
    }
    std::set<std::string> distinct;
    for (const auto& t : q.tokens) {
        distinct.insert(t.stem);
    }
    q.unique_term_count = distinct.size();
    q.text = std::move(text);
    return q;
}

/// Builds a query directly from already-stemmed terms (no analysis).
inline Query make_query_from_stems(std::string query_id, const std::vector<std::string>& stems) {
    Query q;
    q.query_id = std::move(query_id);
    std::set<std::string> distinct;
    for (const auto& s : stems) {
        Token t;
        t.surface = s;
        t.stem = s;
        q.tokens.push_back(std::move(t));
        distinct.insert(s);
        if (!q.text.empty()) {
            q.text += ' ';
        }
        q.text += s;
    }
    q.unique_term_count = distinct.size();
    return q;
}

enum class CorpusFormat { jsonl, trecweb };

inline CorpusFormat parse_corpus_format(std::string_view s) {
    if (s == "jsonl") {
        return CorpusFormat::jsonl;
    }
    if (s == "trecweb") {
        return CorpusFormat::trecweb;
    }
    throw ValidationError("unknown corpus format '" + std::string(s) +
                          "' (expected jsonl or trecweb)");
}

inline std::string to_string(CorpusFormat f) {
    return f == CorpusFormat::jsonl ? "jsonl" : "trecweb";
}

inline constexpr int kStoreFormatVersion = 1;

/// Immutable collection of analyzed documents.
class CorpusStore {
  public:
    CorpusStore(std::shared_ptr<const Analyzer> analyzer, std::vector<Document> docs,
                std::string source_format = "jsonl")
        : analyzer_(std::move(analyzer)), docs_(std::move(docs)),
          source_format_(std::move(source_format)) {
        for (std::size_t i = 0; i < docs_.size(); ++i) {
            if (!by_id_.emplace(docs_[i].doc_id, i).second) {
                throw ValidationError("duplicate doc_id: " + docs_[i].doc_id);
            }
        }
    }

    [[nodiscard]] const Analyzer& analyzer() const { return *analyzer_; }
    [[nodiscard]] std::shared_ptr<const Analyzer> analyzer_ptr() const { return analyzer_; }
    [[nodiscard]] const std::vector<Document>& documents() const { return docs_; }
    [[nodiscard]] std::size_t size() const { return docs_.size(); }
    [[nodiscard]] const Document& at(std::size_t i) const { return docs_.at(i); }
    [[nodiscard]] const std::string& source_format() const { return source_format_; }

    [[nodiscard]] const Document* find(std::string_view id) const {
        auto it = by_id_.find(std::string(id));
        return it == by_id_.end() ? nullptr : &docs_[it->second];
    }

    [[nodiscard]] std::size_t index_of(std::string_view id) const {
        auto it = by_id_.find(std::string(id));
        if (it == by_id_.end()) {
            throw ValidationError("unknown doc_id: " + std::string(id));
        }
        return it->second;
    }

    [[nodiscard]] std::size_t total_tokens() const {
        std::size_t n = 0;
        for (const auto& d : docs_) {
            n += d.length();
        }
        return n;
    }

    /// Content checksum over ids and raw texts in store order.
    [[nodiscard]] std::string checksum() const {
        std::uint64_t h = fnv1a64("");
        for (const auto& d : docs_) {
            h = fnv1a64(d.doc_id, h);
            h = fnv1a64(std::string_view("\0", 1), h);
            h = fnv1a64(d.raw_text, h);
            h = fnv1a64(std::string_view("\x1e", 1), h);
        }
        return hex64(h);
    }

    [[nodiscard]] nlohmann::ordered_json manifest() const {
        nlohmann::ordered_json m;
        m["format_version"] = kStoreFormatVersion;
        m["source_format"] = source_format_;
        m["documents"] = docs_.size();
        m["tokens"] = total_tokens();
        m["tokenizer"] = "ascii-alnum-v1";
        m["stemmer"] = analyzer_->stemmer().id();
        m["stopwords"] = analyzer_->stopwords().identity();
        m["checksum"] = checksum();
        return m;
    }

  private:
    std::shared_ptr<const Analyzer> analyzer_;
    std::vector<Document> docs_;
    std::unordered_map<std::string, std::size_t> by_id_;
    std::string source_format_;
};

inline Document analyze_document(const Analyzer& analyzer, std::string id, std::string text) {
    Document d;
    d.doc_id = std::move(id);
    d.raw_text = std::move(text);
    d.tokens = analyzer.tokenize(d.raw_text);
    return d;
}

struct IngestResult {
    CorpusStore store;
    std::vector<std::string> warnings;
};

namespace detail {

inline IngestResult finish_ingest(std::shared_ptr<const Analyzer> analyzer,
                                  std::vector<std::pair<std::string, std::string>> records,
                                  std::string format) {
    std::vector<std::string> warnings;
    std::unordered_set<std::string> seen;
    std::vector<Document> docs;
    docs.reserve(records.size());
    for (auto& [id, text] : records) {
        if (!seen.insert(id).second) {
            throw ValidationError("duplicate doc_id: " + id);
        }
        Document d = analyze_document(*analyzer, std::move(id), std::move(text));
        if (d.tokens.empty()) {
            warnings.push_back("document '" + d.doc_id + "' has no tokens");
        }
        docs.push_back(std::move(d));
    }
    return IngestResult{CorpusStore(std::move(analyzer), std::move(docs), std::move(format)),
                        std::move(warnings)};
}

}  // namespace detail

/// Parses JSONL records with "id" and "text" (and optional "title", which is
/// prepended to the text followed by a blank line).
inline IngestResult ingest_jsonl_stream(std::istream& in, std::shared_ptr<const Analyzer> analyzer) {
    std::vector<std::pair<std::string, std::string>> records;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) {
            continue;
        }
        nlohmann::json rec;
        try {
            rec = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError("malformed JSON record at line " + std::to_string(line_no) +
                                  ": " + e.what());
        }
        if (!rec.is_object() || !rec.contains("id") || !rec["id"].is_string() ||
            !rec.contains("text") || !rec["text"].is_string()) {
            throw ValidationError("record at line " + std::to_string(line_no) +
                                  " must carry string fields \"id\" and \"text\"");
        }
        std::string text = rec["text"].get<std::string>();
        if (rec.contains("title") && rec["title"].is_string()) {
            text = rec["title"].get<std::string>() + "\n\n" + text;
        }
        records.emplace_back(rec["id"].get<std::string>(), std::move(text));
    }
    return detail::finish_ingest(std::move(analyzer), std::move(records), "jsonl");
}

/// Parses <DOC> blocks with <DOCNO>. Body is the <TEXT> element when present,
/// otherwise everything after </DOCNO> (minus an optional <DOCHDR> block).
inline IngestResult ingest_trecweb_stream(std::istream& in,
                                          std::shared_ptr<const Analyzer> analyzer) {
    std::stringstream buf;
    buf << in.rdbuf();
    const std::string data = buf.str();
    std::vector<std::pair<std::string, std::string>> records;
    std::size_t pos = 0;
    const auto between = [&](std::size_t from, std::size_t to, std::string_view open,
                             std::string_view close) -> std::pair<std::size_t, std::size_t> {
        auto a = data.find(open, from);
        if (a == std::string::npos || a >= to) {
            return {std::string::npos, std::string::npos};
        }
        auto b = data.find(close, a + open.size());
        if (b == std::string::npos || b > to) {
            throw ValidationError("unterminated " + std::string(open) + " at byte " +
                                  std::to_string(a));
        }
        return {a + open.size(), b};
    };
    while (true) {
        auto start = data.find("<DOC>", pos);
        if (start == std::string::npos) {
            if (!trim(std::string_view(data).substr(pos)).empty()) {
                throw ValidationError("unexpected content outside <DOC> at byte " +
                                      std::to_string(pos));
            }
            break;
        }
        if (!trim(std::string_view(data).substr(pos, start - pos)).empty()) {
            throw ValidationError("unexpected content outside <DOC> at byte " + std::to_string(pos));
        }
        auto end = data.find("</DOC>", start);
        if (end == std::string::npos) {
            throw ValidationError("unterminated <DOC> at byte " + std::to_string(start));
        }
        auto [no_a, no_b] = between(start, end, "<DOCNO>", "</DOCNO>");
        if (no_a == std::string::npos) {
            throw ValidationError("<DOC> without <DOCNO> at byte " + std::to_string(start));
        }
        std::string id(trim(std::string_view(data).substr(no_a, no_b - no_a)));
        std::string body;
        auto [tx_a, tx_b] = between(start, end, "<TEXT>", "</TEXT>");
        if (tx_a != std::string::npos) {
            body = data.substr(tx_a, tx_b - tx_a);
        } else {
            std::size_t body_start = no_b + std::string_view("</DOCNO>").size();
            auto [hd_a, hd_b] = between(body_start, end, "<DOCHDR>", "</DOCHDR>");
            if (hd_a != std::string::npos) {
                body_start = hd_b + std::string_view("</DOCHDR>").size();
            }
            body = data.substr(body_start, end - body_start);
        }
        records.emplace_back(std::move(id), std::move(body));
        pos = end + std::string_view("</DOC>").size();
    }
    return detail::finish_ingest(std::move(analyzer), std::move(records), "trecweb");
}

inline IngestResult ingest_corpus(const std::filesystem::path& source, CorpusFormat format,
                                  std::shared_ptr<const Analyzer> analyzer) {
    std::ifstream in(source, std::ios::binary);
    if (!in) {
        throw ValidationError("cannot open corpus file: " + source.string());
    }
    return format == CorpusFormat::jsonl ? ingest_jsonl_stream(in, std::move(analyzer))
                                         : ingest_trecweb_stream(in, std::move(analyzer));
}

/// Writes docs.jsonl and manifest.json under `dir`.
inline void save_store(const CorpusStore& store, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    {
        std::ofstream out(dir / "docs.jsonl", std::ios::binary);
        for (const auto& d : store.documents()) {
            nlohmann::ordered_json rec;
            rec["id"] = d.doc_id;
            rec["text"] = d.raw_text;
            out << rec.dump() << '\n';
        }
        if (!out) {
            throw RuntimeError("failed writing " + (dir / "docs.jsonl").string());
        }
    }
    std::ofstream out(dir / "manifest.json", std::ios::binary);
    out << store.manifest().dump(2) << '\n';
    if (!out) {
        throw RuntimeError("failed writing " + (dir / "manifest.json").string());
    }
}

inline nlohmann::json read_manifest(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) {
        throw ValidationError("missing corpus manifest in " + dir.string());
    }
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("malformed corpus manifest: " + std::string(e.what()));
    }
}

/// Reloads a saved store, verifying the analyzer identities and the checksum.
inline CorpusStore load_store(const std::filesystem::path& dir,
                              std::shared_ptr<const Analyzer> analyzer) {
    auto manifest = read_manifest(dir);
    if (manifest.value("format_version", 0) != kStoreFormatVersion) {
        throw ValidationError("unsupported store format version in " + dir.string());
    }
    if (manifest.value("stemmer", "") != analyzer->stemmer().id()) {
        throw ValidationError("store was built with stemmer '" + manifest.value("stemmer", "") +
                              "', analyzer uses '" + analyzer->stemmer().id() + "'");
    }
    if (manifest.value("stopwords", "") != analyzer->stopwords().identity()) {
        throw ValidationError("store was built with stopword list '" +
                              manifest.value("stopwords", "") + "'");
    }
    std::ifstream in(dir / "docs.jsonl", std::ios::binary);
    if (!in) {
        throw ValidationError("missing docs.jsonl in " + dir.string());
    }
    auto result = ingest_jsonl_stream(in, std::move(analyzer));
    CorpusStore store(result.store.analyzer_ptr(),
                      std::vector<Document>(result.store.documents()),
                      manifest.value("source_format", "jsonl"));
    if (store.checksum() != manifest.value("checksum", "")) {
        throw ValidationError("corpus checksum does not match manifest in " + dir.string());
    }
    return store;
}

/// Tab-separated query_id<TAB>title lines.
inline std::vector<Query> load_topics(const std::filesystem::path& path, const Analyzer& analyzer) {
    std::ifstream in(path);
    if (!in) {
        throw ValidationError("cannot open topics file: " + path.string());
    }
    std::vector<Query> out;
    std::unordered_set<std::string> seen;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) {
            continue;
        }
        auto tab = line.find('\t');
        if (tab == std::string::npos) {
            throw ValidationError("topics line " + std::to_string(line_no) +
                                  " must be query_id<TAB>text");
        }
        std::string id(trim(std::string_view(line).substr(0, tab)));
        if (!seen.insert(id).second) {
            throw ValidationError("duplicate query_id in topics: " + id);
        }
        out.push_back(make_query(analyzer, id, std::string(trim(std::string_view(line).substr(tab + 1)))));
    }
    return out;
}

}  // namespace psgrank
