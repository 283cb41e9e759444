#pragma once

#include <cctype>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace uac::text {

// End (exclusive) of the leading sentence of `s`: one past the first
// '.', '?' or '!' that is followed by whitespace or end-of-text. Falls back
// to s.size() when no such terminator exists. "E.g. x" therefore ends after
// "E.g." - abbreviation mis-splits are accepted.
inline std::size_t first_sentence_end(std::string_view s) {
    for (std::size_t i = 0; i < s.size(); ++i) {
        const char c = s[i];
        if (c != '.' && c != '?' && c != '!') continue;
        if (i + 1 == s.size() ||
            std::isspace(static_cast<unsigned char>(s[i + 1]))) {
            return i + 1;
        }
    }
    return s.size();
}

inline std::string_view first_sentence(std::string_view s) {
    return s.substr(0, first_sentence_end(s));
}

// Collapse runs of whitespace to single spaces and trim the ends.
inline std::string collapse_whitespace(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    bool pending_space = false;
    for (const char c : s) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) out.push_back(' ');
        pending_space = false;
        out.push_back(c);
    }
    return out;
}

// Matching normalization used by the heuristic judge: lowercase, punctuation
// to spaces, article words dropped, whitespace collapsed. Idempotent.
inline std::string normalize_for_match(std::string_view s) {
    std::string lowered;
    lowered.reserve(s.size());
    for (const char c : s) {
        const auto uc = static_cast<unsigned char>(c);
        if (std::isalnum(uc)) {
            lowered.push_back(static_cast<char>(std::tolower(uc)));
        } else {
            lowered.push_back(' ');
        }
    }
    std::string out;
    out.reserve(lowered.size());
    std::size_t i = 0;
    while (i < lowered.size()) {
        while (i < lowered.size() && lowered[i] == ' ') ++i;
        std::size_t j = i;
        while (j < lowered.size() && lowered[j] != ' ') ++j;
        const std::string_view word(lowered.data() + i, j - i);
        if (!word.empty() && word != "a" && word != "an" && word != "the") {
            if (!out.empty()) out.push_back(' ');
            out.append(word);
        }
        i = j;
    }
    return out;
}

inline bool contains_normalized(std::string_view haystack, std::string_view needle) {
    const std::string h = normalize_for_match(haystack);
    const std::string n = normalize_for_match(needle);
    if (n.empty()) return false;
    return h.find(n) != std::string::npos;
}

// Whitespace-normalized prefix match; used for rejection detection.
inline bool starts_with_normalized(std::string_view s, std::string_view prefix) {
    const std::string a = collapse_whitespace(s);
    const std::string b = collapse_whitespace(prefix);
    if (b.empty()) return false;
    return a.size() >= b.size() && a.compare(0, b.size(), b) == 0;
}

// Replace every "{name}" placeholder; unknown placeholders are left alone.
inline std::string render_template(
    std::string_view tmpl,
    const std::vector<std::pair<std::string_view, std::string_view>>& vars) {
    std::string out;
    out.reserve(tmpl.size());
    std::size_t pos = 0;
    while (pos < tmpl.size()) {
        const std::size_t open = tmpl.find('{', pos);
        if (open == std::string_view::npos) {
            out.append(tmpl.substr(pos));
            break;
        }
        const std::size_t close = tmpl.find('}', open);
        if (close == std::string_view::npos) {
            out.append(tmpl.substr(pos));
            break;
        }
        out.append(tmpl.substr(pos, open - pos));
        const std::string_view name = tmpl.substr(open + 1, close - open - 1);
        bool replaced = false;
        for (const auto& [key, value] : vars) {
            if (key == name) {
                out.append(value);
                replaced = true;
                break;
            }
        }
        if (!replaced) out.append(tmpl.substr(open, close - open + 1));
        pos = close + 1;
    }
    return out;
}

} // namespace uac::text
