#pragma once

#include <cctype>
#include <string>
#include <vector>

namespace steerlab {

// Punctuation characters that become standalone tokens.
inline bool is_split_punct(char c) {
    switch (c) {
        case '.': case ',': case '!': case '?':
        case '\'': case '"': case ':': case ';':
            return true;
        default:
            return false;
    }
}

inline bool is_punct_token(const std::string& tok) {
    return tok.size() == 1 && is_split_punct(tok[0]);
}

// Lowercase, split on whitespace, break the listed punctuation characters
// into their own tokens.
inline std::vector<std::string> split_text(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    auto flush = [&] {
        if (!cur.empty()) {
            out.push_back(cur);
            cur.clear();
        }
    };
    for (char raw : text) {
        char c = static_cast<char>(std::tolower(static_cast<unsigned char>(raw)));
        if (std::isspace(static_cast<unsigned char>(c))) {
            flush();
        } else if (is_split_punct(c)) {
            flush();
            out.emplace_back(1, c);
        } else {
            cur.push_back(c);
        }
    }
    flush();
    return out;
}

// Word tokens only (punctuation removed); the denominator for all
// normalized text metrics.
inline std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> out;
    for (auto& tok : split_text(text)) {
        if (!is_punct_token(tok)) out.push_back(std::move(tok));
    }
    return out;
}

}  // namespace steerlab
