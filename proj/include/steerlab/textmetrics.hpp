#pragma once

#include <array>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "steerlab/error.hpp"
#include "steerlab/text.hpp"

namespace steerlab {

inline const std::array<std::string, 10>& emolex_categories() {
    static const std::array<std::string, 10> cats = {
        "anger", "anticipation", "disgust", "fear", "joy",
        "sadness", "surprise", "trust", "positive", "negative"};
    return cats;
}

struct Lexicon {
    // single-word entries: lowercase word -> categories
    std::map<std::string, std::set<std::string>> word_cats;
    // multi-word phrases per category, tokenized
    std::map<std::string, std::vector<std::vector<std::string>>> phrases;
    std::set<std::string> categories;

    bool has_category(const std::string& cat) const { return categories.count(cat) > 0; }

    void add_word(const std::string& word, const std::string& cat) {
        word_cats[word].insert(cat);
        categories.insert(cat);
    }

    void add_phrase(const std::vector<std::string>& toks, const std::string& cat) {
        categories.insert(cat);
        if (toks.size() == 1) {
            word_cats[toks[0]].insert(cat);
            return;
        }
        auto& list = phrases[cat];
        for (const auto& existing : list)
            if (existing == toks) return;  // dedup
        list.push_back(toks);
    }

    void merge(const Lexicon& other) {
        for (const auto& [w, cats] : other.word_cats)
            for (const auto& c : cats) add_word(w, c);
        for (const auto& [cat, list] : other.phrases)
            for (const auto& p : list) add_phrase(p, cat);
    }
};

enum class LexiconFormat { NrcTsv, KeywordList };

// NrcTsv: `word<TAB>category<TAB>{0|1}` rows, flag=0 rows dropped.
// KeywordList: one phrase per line, all assigned to `category`.
inline Lexicon load_lexicon(const std::string& path, LexiconFormat format,
                            const std::string& category = "") {
    std::ifstream in(path);
    if (!in) throw Error(Err::IoFailure, "cannot open lexicon " + path);
    Lexicon lex;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (format == LexiconFormat::NrcTsv) {
            size_t t1 = line.find('\t');
            size_t t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
            if (t2 == std::string::npos)
                throw Error(Err::ParseError,
                            path + ":" + std::to_string(lineno) + ": expected word<TAB>category<TAB>flag");
            std::string word = line.substr(0, t1);
            std::string cat = line.substr(t1 + 1, t2 - t1 - 1);
            std::string flag = line.substr(t2 + 1);
            if (flag != "0" && flag != "1")
                throw Error(Err::ParseError,
                            path + ":" + std::to_string(lineno) + ": flag must be 0 or 1");
            if (flag == "1") {
                auto toks = split_words(word);
                if (toks.empty())
                    throw Error(Err::ParseError,
                                path + ":" + std::to_string(lineno) + ": empty word");
                lex.add_phrase(toks, cat);
            }
        } else {
            if (category.empty())
                throw Error(Err::InvalidConfig, "keyword_list format needs a category name");
            auto toks = split_words(line);
            if (toks.empty())
                throw Error(Err::ParseError,
                            path + ":" + std::to_string(lineno) + ": empty phrase");
            lex.add_phrase(toks, category);
        }
    }
    if (lex.word_cats.empty() && lex.phrases.empty())
        throw Error(Err::EmptyLexicon, "no usable entries in " + path);
    return lex;
}

namespace detail {

// matches for one category over word tokens: every single-word hit plus
// leftmost non-overlapping multi-word phrase hits
inline int category_matches(const std::vector<std::string>& words, const Lexicon& lex,
                            const std::string& category) {
    int count = 0;
    for (const auto& w : words) {
        auto it = lex.word_cats.find(w);
        if (it != lex.word_cats.end() && it->second.count(category)) ++count;
    }
    auto pit = lex.phrases.find(category);
    if (pit != lex.phrases.end()) {
        for (const auto& phrase : pit->second) {
            size_t i = 0;
            while (i + phrase.size() <= words.size()) {
                bool hit = true;
                for (size_t j = 0; j < phrase.size(); ++j)
                    if (words[i + j] != phrase[j]) {
                        hit = false;
                        break;
                    }
                if (hit) {
                    ++count;
                    i += phrase.size();
                } else {
                    ++i;
                }
            }
        }
    }
    return count;
}

inline std::vector<std::string> require_words(const std::string& text) {
    auto words = split_words(text);
    if (words.empty()) throw Error(Err::EmptyText, "text has no word tokens");
    return words;
}

}  // namespace detail

struct EmotionProfile {
    std::map<std::string, double> scores;  // category -> matches / word_count
    int word_count = 0;

    double get(const std::string& cat) const {
        auto it = scores.find(cat);
        return it == scores.end() ? 0.0 : it->second;
    }
};

inline EmotionProfile emolex_profile(const std::string& text, const Lexicon& lexicon) {
    auto words = detail::require_words(text);
    EmotionProfile p;
    p.word_count = static_cast<int>(words.size());
    for (const auto& cat : emolex_categories())
        p.scores[cat] =
            detail::category_matches(words, lexicon, cat) / static_cast<double>(p.word_count);
    return p;
}

enum class Sentiment { Positive, Negative };

// Positive iff positive matches strictly exceed negative; ties go Negative.
inline Sentiment sentiment_label(const std::string& text, const Lexicon& lexicon) {
    auto words = detail::require_words(text);
    int pos = detail::category_matches(words, lexicon, "positive");
    int neg = detail::category_matches(words, lexicon, "negative");
    return pos > neg ? Sentiment::Positive : Sentiment::Negative;
}

inline const std::set<std::string>& first_person_pronouns() {
    static const std::set<std::string> p = {"i", "me", "my", "mine", "myself"};
    return p;
}

inline double first_person_ratio(const std::string& text) {
    auto words = detail::require_words(text);
    int count = 0;
    for (const auto& w : words)
        if (first_person_pronouns().count(w)) ++count;
    return count / static_cast<double>(words.size());
}

inline double keyword_score(const std::string& text, const Lexicon& lexicon,
                            const std::string& category) {
    if (!lexicon.has_category(category))
        throw Error(Err::UnknownCategory, "lexicon has no category " + category);
    auto words = detail::require_words(text);
    return detail::category_matches(words, lexicon, category) /
           static_cast<double>(words.size());
}

// keyword_score that tolerates a missing category (used by sweeps where an
// empty category means score 0)
inline double category_score(const std::string& text, const Lexicon& lexicon,
                             const std::string& category) {
    auto words = split_words(text);
    if (words.empty()) return 0.0;
    return detail::category_matches(words, lexicon, category) /
           static_cast<double>(words.size());
}

inline constexpr const char* kDistressKeywordCategory = "distress_kw";

// keyword rate plus the fear, sadness and anger EmoLex rates
inline double distress_score(const std::string& text, const Lexicon& emolex,
                             const Lexicon& distress_keywords) {
    EmotionProfile p = emolex_profile(text, emolex);
    double kw = distress_keywords.has_category(kDistressKeywordCategory)
                    ? keyword_score(text, distress_keywords, kDistressKeywordCategory)
                    : 0.0;
    return kw + p.get("fear") + p.get("sadness") + p.get("anger");
}

struct PolitenessFeatures {
    int apologizing = 0;
    int gratitude = 0;
    int first_person = 0;
    int hedges = 0;
    int has_positive = 0;
    int has_negative = 0;

    bool flag_apologizing() const { return apologizing > 0; }
    bool flag_gratitude() const { return gratitude > 0; }
    bool flag_first_person() const { return first_person > 0; }
    bool flag_hedges() const { return hedges > 0; }
    bool flag_has_positive() const { return has_positive > 0; }
    bool flag_has_negative() const { return has_negative > 0; }
};

inline PolitenessFeatures politeness_features(const std::string& text, const Lexicon& lexicon) {
    auto words = detail::require_words(text);
    PolitenessFeatures f;
    static const std::set<std::string> apology = {"sorry", "regret", "forgive", "oops"};
    static const std::set<std::string> gratitude = {"thank", "thanks", "grateful", "appreciate"};
    static const std::set<std::string> hedge_words = {"maybe", "perhaps", "might", "possibly",
                                                      "somewhat"};
    static const std::vector<std::vector<std::string>> hedge_phrases = {
        {"kind", "of"}, {"sort", "of"}, {"i", "think"}, {"i", "guess"}};

    for (const auto& w : words) {
        if (apology.count(w) || w.rfind("apolog", 0) == 0) ++f.apologizing;
        if (gratitude.count(w)) ++f.gratitude;
        if (first_person_pronouns().count(w)) ++f.first_person;
        if (hedge_words.count(w)) ++f.hedges;
    }
    for (const auto& phrase : hedge_phrases) {
        size_t i = 0;
        while (i + phrase.size() <= words.size()) {
            bool hit = words[i] == phrase[0] && words[i + 1] == phrase[1];
            if (hit) {
                ++f.hedges;
                i += phrase.size();
            } else {
                ++i;
            }
        }
    }
    f.has_positive = detail::category_matches(words, lexicon, "positive");
    f.has_negative = detail::category_matches(words, lexicon, "negative");
    return f;
}

struct UtteranceMetrics {
    EmotionProfile emotion;
    Sentiment sentiment = Sentiment::Negative;
    double first_person = 0.0;
    std::map<std::string, double> keyword_scores;  // category -> normalized score
    double distress = 0.0;
    PolitenessFeatures politeness;
};

inline UtteranceMetrics compute_utterance_metrics(
    const std::string& text, const Lexicon& emolex, const Lexicon& keyword_lexicon,
    const std::vector<std::string>& keyword_categories, const Lexicon& distress_keywords) {
    UtteranceMetrics m;
    m.emotion = emolex_profile(text, emolex);
    m.sentiment = sentiment_label(text, emolex);
    m.first_person = first_person_ratio(text);
    for (const auto& cat : keyword_categories)
        m.keyword_scores[cat] = category_score(text, keyword_lexicon, cat);
    m.distress = distress_score(text, emolex, distress_keywords);
    m.politeness = politeness_features(text, emolex);
    return m;
}

}  // namespace steerlab
