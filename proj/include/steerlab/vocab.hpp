#pragma once

#include <algorithm>
#include <fstream>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "steerlab/error.hpp"
#include "steerlab/text.hpp"

namespace steerlab {

inline constexpr const char* kUnkToken = "<unk>";
inline constexpr const char* kBosToken = "<bos>";

class Vocabulary {
public:
    static constexpr int kUnkId = 0;
    static constexpr int kBosId = 1;

    // `words` must not contain the reserved tokens; ids are assigned densely
    // after <unk>, <bos>.
    static Vocabulary from_words(const std::vector<std::string>& words) {
        Vocabulary v;
        v.tokens_ = {kUnkToken, kBosToken};
        for (const auto& w : words) {
            if (w == kUnkToken || w == kBosToken)
                throw Error(Err::InvalidConfig, "reserved token in word list: " + w);
            v.tokens_.push_back(w);
        }
        v.build_index();
        return v;
    }

    // Deterministic vocab from raw texts: sorted unique tokens.
    static Vocabulary from_texts(const std::vector<std::string>& texts) {
        std::set<std::string> uniq;
        for (const auto& t : texts)
            for (auto& tok : split_text(t)) uniq.insert(std::move(tok));
        return from_words({uniq.begin(), uniq.end()});
    }

    // One token per line; first two lines must be <unk>, <bos>.
    static Vocabulary load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw Error(Err::IoFailure, "cannot open vocab file " + path);
        Vocabulary v;
        std::string line;
        while (std::getline(in, line)) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            v.tokens_.push_back(line);
        }
        if (v.tokens_.size() < 2 || v.tokens_[0] != kUnkToken || v.tokens_[1] != kBosToken)
            throw Error(Err::ParseError, "vocab file must start with <unk>, <bos>: " + path);
        v.build_index();
        return v;
    }

    void save(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw Error(Err::IoFailure, "cannot write vocab file " + path);
        for (const auto& t : tokens_) out << t << "\n";
    }

    int size() const { return static_cast<int>(tokens_.size()); }

    int id(const std::string& tok) const {
        auto it = index_.find(tok);
        return it == index_.end() ? kUnkId : it->second;
    }

    bool contains(const std::string& tok) const { return index_.count(tok) > 0; }

    const std::string& token(int id) const { return tokens_.at(id); }
    const std::vector<std::string>& tokens() const { return tokens_; }

private:
    void build_index() {
        index_.clear();
        for (int i = 0; i < static_cast<int>(tokens_.size()); ++i) {
            auto [it, inserted] = index_.emplace(tokens_[i], i);
            if (!inserted) throw Error(Err::InvalidConfig, "duplicate vocab token: " + tokens_[i]);
        }
    }

    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
};

struct TokenSequence {
    std::vector<int> ids;
    std::string source_text;

    int length() const { return static_cast<int>(ids.size()); }
};

// <bos>-prefixed token ids; unknown words map to <unk>.
inline TokenSequence tokenize(const std::string& text, const Vocabulary& vocab,
                              int max_seq_len = 1 << 20) {
    auto toks = split_text(text);
    if (toks.empty()) throw Error(Err::EmptyText, "no tokens in input text");
    TokenSequence seq;
    seq.source_text = text;
    seq.ids.push_back(Vocabulary::kBosId);
    for (const auto& t : toks) seq.ids.push_back(vocab.id(t));
    if (seq.length() > max_seq_len)
        throw Error(Err::TooLong, "tokenized length " + std::to_string(seq.length()) +
                                      " exceeds max_seq_len " + std::to_string(max_seq_len));
    return seq;
}

}  // namespace steerlab
