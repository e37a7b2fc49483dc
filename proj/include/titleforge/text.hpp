#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace titleforge {

inline bool is_space(char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

/// Collapse every run of whitespace (including newlines) to a single space and
/// trim the ends. All other bytes pass through untouched, so inline LaTeX such
/// as `$n$-dimensional` survives. Idempotent.
inline std::string normalize_text(std::string_view raw) {
    std::string out;
    out.reserve(raw.size());
    bool pending_space = false;
    for (char c : raw) {
        if (is_space(c)) {
            if (!out.empty()) pending_space = true;
        } else {
            if (pending_space) out.push_back(' ');
            pending_space = false;
            out.push_back(c);
        }
    }
    return out;
}

/// Split on single spaces; empty segments are dropped.
inline std::vector<std::string> split_words(std::string_view text) {
    std::vector<std::string> words;
    std::size_t start = 0;
    while (start <= text.size()) {
        std::size_t end = text.find(' ', start);
        if (end == std::string_view::npos) end = text.size();
        if (end > start) words.emplace_back(text.substr(start, end - start));
        start = end + 1;
    }
    return words;
}

inline std::string join(const std::vector<std::string>& parts, std::string_view sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i) out += sep;
        out += parts[i];
    }
    return out;
}

/// Byte length of the UTF-8 code point starting at s[pos]. Invalid lead bytes
/// are treated as single-byte units so malformed input cannot loop forever.
inline std::size_t utf8_len(std::string_view s, std::size_t pos) {
    unsigned char b = static_cast<unsigned char>(s[pos]);
    std::size_t n = 1;
    if ((b & 0xE0) == 0xC0) n = 2;
    else if ((b & 0xF0) == 0xE0) n = 3;
    else if ((b & 0xF8) == 0xF0) n = 4;
    if (pos + n > s.size()) n = 1;
    return n;
}

/// Split a word into UTF-8 code point strings.
inline std::vector<std::string> utf8_chars(std::string_view word) {
    std::vector<std::string> chars;
    std::size_t pos = 0;
    while (pos < word.size()) {
        std::size_t n = utf8_len(word, pos);
        chars.emplace_back(word.substr(pos, n));
        pos += n;
    }
    return chars;
}

}  // namespace titleforge
