#pragma once

#include <memory>
#include <string>
#include <string_view>

namespace psgrank {

class Stemmer {
  public:
    virtual ~Stemmer() = default;
    /// Identity recorded in manifests so stores built with different
    /// stemmers are never mixed.
    [[nodiscard]] virtual std::string id() const = 0;
    [[nodiscard]] virtual std::string stem(std::string_view lowercase) const = 0;
};

/// Leaves every term as is.
class IdentityStemmer final : public Stemmer {
  public:
    [[nodiscard]] std::string id() const override { return "identity"; }
    [[nodiscard]] std::string stem(std::string_view w) const override { return std::string(w); }
};

/// Light English suffix stripper.
///
/// Rules, applied repeatedly until the word stops changing (which makes the
/// stemmer idempotent):
///   - plurals: "sses" -> "ss", "ies" -> "y" (words longer than 4),
///     "xes"/"ches"/"shes"/"zes" -> drop "es", otherwise a final "s" is
///     dropped unless preceded by "s", "u" or "i";
///   - "ing" and "ed" (but not "eed") are removed when at least three
///     characters containing a vowel remain; a trailing doubled consonant
///     other than l/s/z is then undoubled, and "at"/"bl"/"iz" get an "e".
/// Words of three characters or fewer and words containing digits are left
/// untouched.
class LightStemmer final : public Stemmer {
  public:
    [[nodiscard]] std::string id() const override { return "light-en-v1"; }

    [[nodiscard]] std::string stem(std::string_view input) const override {
        std::string w(input);
        for (char c : w) {
            if (c < 'a' || c > 'z') {
                return w;
            }
        }
        while (true) {
            std::string next = step(w);
            if (next == w) {
                return w;
            }
            w = std::move(next);
        }
    }

  private:
    static bool ends_with(const std::string& w, std::string_view suffix) {
        return w.size() >= suffix.size() &&
               std::string_view(w).substr(w.size() - suffix.size()) == suffix;
    }

    static bool is_vowel(char c) {
        return c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u' || c == 'y';
    }

    static bool has_vowel(std::string_view w) {
        for (char c : w) {
            if (is_vowel(c)) {
                return true;
            }
        }
        return false;
    }

    static std::string tidy(std::string r) {
        const std::size_t n = r.size();
        if (n >= 2 && r[n - 1] == r[n - 2] && !is_vowel(r[n - 1]) && r[n - 1] != 'l' &&
            r[n - 1] != 's' && r[n - 1] != 'z') {
            r.pop_back();
        } else if (ends_with(r, "at") || ends_with(r, "bl") || ends_with(r, "iz")) {
            r.push_back('e');
        }
        return r;
    }

    static std::string step(const std::string& w) {
        if (w.size() <= 3) {
            return w;
        }
        if (ends_with(w, "sses")) {
            return w.substr(0, w.size() - 2);
        }
        if (ends_with(w, "ies")) {
            return w.size() > 4 ? w.substr(0, w.size() - 3) + "y" : w.substr(0, w.size() - 1);
        }
        if (w.size() > 4 && (ends_with(w, "xes") || ends_with(w, "ches") || ends_with(w, "shes") ||
                             ends_with(w, "zes"))) {
            return w.substr(0, w.size() - 2);
        }
        if (ends_with(w, "s") && !ends_with(w, "ss") && !ends_with(w, "us") && !ends_with(w, "is")) {
            return w.substr(0, w.size() - 1);
        }
        if (ends_with(w, "ing")) {
            std::string r = w.substr(0, w.size() - 3);
            if (r.size() >= 3 && has_vowel(r)) {
                return tidy(std::move(r));
            }
            return w;
        }
        if (ends_with(w, "ed") && !ends_with(w, "eed")) {
            std::string r = w.substr(0, w.size() - 2);
            if (r.size() >= 3 && has_vowel(r)) {
                return tidy(std::move(r));
            }
        }
        return w;
    }
};

inline std::shared_ptr<const Stemmer> make_stemmer(std::string_view id) {
    if (id == "light-en-v1" || id == "light") {
        return std::make_shared<LightStemmer>();
    }
    if (id == "identity" || id == "none") {
        return std::make_shared<IdentityStemmer>();
    }
    return nullptr;
}

}  // namespace psgrank
