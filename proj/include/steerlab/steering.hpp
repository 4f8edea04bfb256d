#pragma once

#include <algorithm>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "steerlab/error.hpp"
#include "steerlab/model.hpp"
#include "steerlab/textmetrics.hpp"
#include "steerlab/vocab.hpp"

namespace steerlab {

enum class PositionMode { All, FinalToken };

inline const char* position_mode_name(PositionMode m) {
    return m == PositionMode::All ? "all" : "final_token";
}

inline PositionMode position_mode_from_name(const std::string& s) {
    if (s == "all") return PositionMode::All;
    if (s == "final_token") return PositionMode::FinalToken;
    throw Error(Err::ParseError, "unknown position_mode " + s);
}

struct ContrastiveSet {
    std::string name;
    int target_layer = 0;
    std::vector<std::string> positive_texts;
    std::vector<std::string> negative_texts;
};

inline ContrastiveSet contrastive_set_from_json(const nlohmann::json& j) {
    ContrastiveSet s;
    s.name = j.at("name").get<std::string>();
    s.target_layer = j.at("target_layer").get<int>();
    s.positive_texts = j.at("positive").get<std::vector<std::string>>();
    s.negative_texts = j.at("negative").get<std::vector<std::string>>();
    return s;
}

inline std::vector<ContrastiveSet> load_contrastive_sets(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(Err::IoFailure, "cannot open contrastive set file " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw Error(Err::ParseError, std::string("contrastive sets: ") + e.what());
    }
    std::vector<ContrastiveSet> out;
    if (j.is_array())
        for (const auto& item : j) out.push_back(contrastive_set_from_json(item));
    else
        out.push_back(contrastive_set_from_json(j));
    return out;
}

// Tokenized contrastive set with all sequences truncated to one shared length.
struct EqualizedSet {
    std::string name;
    int target_layer = 0;
    std::vector<TokenSequence> positive;
    std::vector<TokenSequence> negative;
    int length = 0;
};

inline EqualizedSet equalize_lengths(const ContrastiveSet& set, const Vocabulary& vocab) {
    if (set.positive_texts.empty() || set.negative_texts.empty())
        throw Error(Err::EmptySet, set.name + ": contrastive set has an empty side");
    EqualizedSet eq;
    eq.name = set.name;
    eq.target_layer = set.target_layer;
    int min_len = std::numeric_limits<int>::max();
    auto ingest = [&](const std::vector<std::string>& texts, std::vector<TokenSequence>& out) {
        for (const auto& t : texts) {
            out.push_back(tokenize(t, vocab));
            min_len = std::min(min_len, out.back().length());
        }
    };
    ingest(set.positive_texts, eq.positive);
    ingest(set.negative_texts, eq.negative);
    for (auto& seq : eq.positive) seq.ids.resize(min_len);
    for (auto& seq : eq.negative) seq.ids.resize(min_len);
    eq.length = min_len;
    return eq;
}

// Eq-style mean over cached layer outputs: mode All averages every position
// of every text, mode FinalToken only the last position of each.
inline Vec mean_activation(const WeightStore& w, const std::vector<TokenSequence>& texts,
                           int layer, PositionMode mode) {
    if (texts.empty()) throw Error(Err::EmptySet, "no texts for mean activation");
    if (layer < 0 || layer >= w.cfg.n_layers)
        throw Error(Err::InvalidConfig, "mean_activation layer out of range");
    const int expected = texts.front().length();
    for (const auto& t : texts)
        if (t.length() != expected)
            throw Error(Err::LengthMismatch, "texts must be length-equalized");

    const int D = w.cfg.d_model;
    Vec mu(D, 0.0);
    long n = 0;
    for (const auto& seq : texts) {
        ActivationCache cache = forward_cached(w, seq);
        if (mode == PositionMode::All) {
            for (int t = 0; t < cache.T; ++t) {
                for (int i = 0; i < D; ++i) mu[i] += cache.layer_out(layer, t, i);
                ++n;
            }
        } else {
            int t = cache.T - 1;
            for (int i = 0; i < D; ++i) mu[i] += cache.layer_out(layer, t, i);
            ++n;
        }
    }
    for (auto& x : mu) x /= static_cast<double>(n);
    return mu;
}

struct SteeringVector {
    Vec values;
    int layer = 0;
    PositionMode position_mode = PositionMode::All;
    std::string source_set;
    uint64_t model_fingerprint = 0;
};

inline SteeringVector derive_vector(const WeightStore& w, const EqualizedSet& set,
                                    PositionMode mode) {
    Vec pos = mean_activation(w, set.positive, set.target_layer, mode);
    Vec neg = mean_activation(w, set.negative, set.target_layer, mode);
    SteeringVector v;
    v.values.resize(pos.size());
    for (size_t i = 0; i < pos.size(); ++i) v.values[i] = pos[i] - neg[i];
    v.layer = set.target_layer;
    v.position_mode = mode;
    v.source_set = set.name;
    v.model_fingerprint = w.fingerprint();
    return v;
}

inline void save_steering_vector(const SteeringVector& v, const std::string& path) {
    nlohmann::json j = {{"layer", v.layer},
                        {"dim", v.values.size()},
                        {"values", v.values},
                        {"position_mode", position_mode_name(v.position_mode)},
                        {"model_fingerprint", v.model_fingerprint},
                        {"source_set", v.source_set}};
    std::ofstream out(path);
    if (!out) throw Error(Err::IoFailure, "cannot write steering vector " + path);
    out << j.dump(2) << "\n";
}

inline SteeringVector load_steering_vector(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(Err::IoFailure, "cannot open steering vector " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw Error(Err::ParseError, std::string("steering vector: ") + e.what());
    }
    SteeringVector v;
    v.layer = j.at("layer").get<int>();
    v.values = j.at("values").get<Vec>();
    if (v.values.size() != j.at("dim").get<size_t>())
        throw Error(Err::ParseError, "steering vector dim does not match values");
    v.position_mode = position_mode_from_name(j.at("position_mode").get<std::string>());
    v.source_set = j.value("source_set", "");
    v.model_fingerprint = j.value("model_fingerprint", uint64_t{0});
    return v;
}

struct SteeringSpan {
    bool all_positions = false;
    int last_k = 15;

    static SteeringSpan all() { return {true, 0}; }
    static SteeringSpan last(int k) {
        if (k < 1) throw Error(Err::InvalidConfig, "last_k span requires k >= 1");
        return {false, k};
    }
};

struct SteeringConfig {
    SteeringVector vector;
    double alpha = 0.0;
    SteeringSpan span;
};

// h'_t = h_t + alpha * V at steered positions; span last_k clips to T.
inline void apply_steering(double* hidden, int T, int d_model, const SteeringConfig& config) {
    if (static_cast<int>(config.vector.values.size()) != d_model)
        throw Error(Err::DimensionMismatch, "steering vector dimension mismatch");
    if (T < 1) throw Error(Err::DimensionMismatch, "empty hidden state");
    int start = config.span.all_positions ? 0 : std::max(0, T - config.span.last_k);
    for (int t = start; t < T; ++t)
        for (int i = 0; i < d_model; ++i)
            hidden[static_cast<size_t>(t) * d_model + i] +=
                config.alpha * config.vector.values[i];
}

inline Vec apply_steering(const Vec& hidden, int T, int d_model, const SteeringConfig& config) {
    Vec out = hidden;
    apply_steering(out.data(), T, d_model, config);
    return out;
}

// Builds the edit hook that installs this steering at its vector's layer.
// The span is evaluated against the current sequence length on every pass,
// so newly generated positions inside the span are steered too.
inline ForwardHooks steering_hooks(const WeightStore& w, const SteeringConfig& config) {
    if (config.vector.model_fingerprint != 0 &&
        config.vector.model_fingerprint != w.fingerprint())
        throw Error(Err::FingerprintMismatch,
                    "steering vector was derived from different model weights");
    if (config.vector.layer < 0 || config.vector.layer >= w.cfg.n_layers)
        throw Error(Err::InvalidConfig, "steering layer out of model range");
    ForwardHooks hooks;
    hooks.layer_edits.emplace_back(config.vector.layer,
                                   [config](double* hidden, int T, int d_model) {
                                       apply_steering(hidden, T, d_model, config);
                                   });
    return hooks;
}

// ---------------------------------------------------------------------------
// alpha grid search

struct AlphaDiagnostics {
    double alpha = 0.0;
    double lexicon_delta = 0.0;     // mean target-lexicon score minus the alpha=0 baseline
    double perplexity_delta = 0.0;  // mean nats/token of steered continuations minus baseline,
                                    // both scored under the unsteered model
};

struct AlphaSweepResult {
    double selected_alpha = 0.0;
    std::vector<AlphaDiagnostics> table;
    bool no_feasible_alpha = false;
};

inline std::vector<double> default_alpha_grid() {
    return {0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0};
}

namespace detail {

// mean nats/token of the continuation ids under the plain (unhooked) model
inline double continuation_nll(const WeightStore& w, const TokenSequence& full, int prompt_len) {
    ActivationCache cache = forward_cached(w, full);
    const int V = w.cfg.vocab_size;
    double nll = 0.0;
    int n = 0;
    for (int t = prompt_len - 1; t + 1 < full.length(); ++t) {
        const double* row = &cache.final_logits[static_cast<size_t>(t) * V];
        double maxv = row[0];
        for (int j = 1; j < V; ++j) maxv = std::max(maxv, row[j]);
        double sum = 0.0;
        for (int j = 0; j < V; ++j) sum += std::exp(row[j] - maxv);
        nll += -(row[full.ids[t + 1]] - maxv - std::log(sum));
        ++n;
    }
    return n > 0 ? nll / n : 0.0;
}

inline std::string detokenize(const TokenSequence& seq, const Vocabulary& vocab, int from) {
    std::string out;
    for (int t = from; t < seq.length(); ++t) {
        if (seq.ids[t] == Vocabulary::kBosId) continue;
        if (!out.empty()) out += " ";
        out += vocab.token(seq.ids[t]);
    }
    return out;
}

}  // namespace detail

// For each alpha: steered greedy continuations of every validation prompt,
// scored by the target lexicon category and by log-perplexity drift under
// the unsteered model. Selection maximizes the lexicon delta subject to the
// perplexity cap; ties go to the smaller alpha.
inline AlphaSweepResult alpha_grid_search(const WeightStore& w, const Vocabulary& vocab,
                                          const SteeringVector& vector,
                                          const std::vector<std::string>& validation_prompts,
                                          const Lexicon& target_lexicon,
                                          const std::string& target_category,
                                          const std::vector<double>& grid = default_alpha_grid(),
                                          const SteeringSpan& span = SteeringSpan::last(15),
                                          int max_new = 16, double perplexity_cap = 0.5) {
    if (grid.empty()) throw Error(Err::EmptyGrid, "alpha grid is empty");
    if (!std::is_sorted(grid.begin(), grid.end()))
        throw Error(Err::InvalidConfig, "alpha grid must be sorted ascending");
    if (validation_prompts.empty()) throw Error(Err::EmptyPrompts, "no validation prompts");

    std::vector<TokenSequence> prompts;
    for (const auto& p : validation_prompts)
        prompts.push_back(tokenize(p, vocab, w.cfg.max_seq_len - max_new));

    auto evaluate_alpha = [&](double alpha, double& lex, double& ppl) {
        double lex_sum = 0.0, ppl_sum = 0.0;
        for (const auto& prompt : prompts) {
            TokenSequence cont;
            if (alpha == 0.0) {
                cont = generate(w, prompt, max_new);
            } else {
                SteeringConfig cfg{vector, alpha, span};
                ForwardHooks hooks = steering_hooks(w, cfg);
                cont = generate(w, prompt, max_new, &hooks);
            }
            std::string text = detail::detokenize(cont, vocab, prompt.length());
            lex_sum += text.empty() ? 0.0
                                    : category_score(text, target_lexicon, target_category);
            ppl_sum += detail::continuation_nll(w, cont, prompt.length());
        }
        lex = lex_sum / static_cast<double>(prompts.size());
        ppl = ppl_sum / static_cast<double>(prompts.size());
    };

    double base_lex = 0.0, base_ppl = 0.0;
    evaluate_alpha(0.0, base_lex, base_ppl);

    AlphaSweepResult res;
    int best = -1;
    for (double alpha : grid) {
        AlphaDiagnostics d;
        d.alpha = alpha;
        double lex = 0.0, ppl = 0.0;
        evaluate_alpha(alpha, lex, ppl);
        d.lexicon_delta = lex - base_lex;
        d.perplexity_delta = ppl - base_ppl;
        res.table.push_back(d);
    }
    for (size_t i = 0; i < res.table.size(); ++i) {
        if (res.table[i].perplexity_delta > perplexity_cap) continue;
        if (best < 0 || res.table[i].lexicon_delta > res.table[best].lexicon_delta) best = static_cast<int>(i);
    }
    if (best < 0) {
        res.no_feasible_alpha = true;
        res.selected_alpha = grid.front();
    } else {
        res.selected_alpha = res.table[best].alpha;
    }
    return res;
}

}  // namespace steerlab
