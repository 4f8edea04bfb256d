#pragma once

#include <algorithm>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "steerlab/error.hpp"
#include "steerlab/model.hpp"
#include "steerlab/vocab.hpp"

namespace steerlab {

struct DiagnosticPair {
    std::string name;
    std::string clean_prompt;
    std::string corrupted_prompt;
    std::string target_token;
    std::string undesired_token;

    void validate(const Vocabulary& vocab) const {
        if (target_token == undesired_token)
            throw Error(Err::InvalidMetric, name + ": target equals undesired token");
        if (!vocab.contains(target_token) || !vocab.contains(undesired_token))
            throw Error(Err::InvalidMetric, name + ": target/undesired token not in vocabulary");
        auto a = tokenize(clean_prompt, vocab);
        auto b = tokenize(corrupted_prompt, vocab);
        if (a.length() != b.length())
            throw Error(Err::LengthMismatch,
                        name + ": clean and corrupted prompts tokenize to different lengths");
    }

    MetricSpec metric(const Vocabulary& vocab) const {
        return MetricSpec{vocab.id(target_token), vocab.id(undesired_token), -1};
    }
};

inline std::vector<DiagnosticPair> load_diagnostic_pairs(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(Err::IoFailure, "cannot open diagnostic pairs file " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw Error(Err::ParseError, std::string("diagnostic pairs: ") + e.what());
    }
    std::vector<DiagnosticPair> out;
    for (const auto& item : j) {
        out.push_back({item.at("name").get<std::string>(),
                       item.at("clean_prompt").get<std::string>(),
                       item.at("corrupted_prompt").get<std::string>(),
                       item.at("target_token").get<std::string>(),
                       item.at("undesired_token").get<std::string>()});
    }
    return out;
}

enum class SiteKind { LayerOutput, HeadOutput };

struct PatchSite {
    SiteKind kind = SiteKind::LayerOutput;
    int layer = 0;
    std::optional<int> head;
    std::set<int> positions;
};

struct AttributionMap {
    SiteKind kind = SiteKind::LayerOutput;
    int rows = 0;  // layers
    int cols = 0;  // positions (layer maps) or heads (head maps)
    std::vector<double> scores;  // [rows x cols]
    std::string pair_name;
    double clean_metric = 0.0;
    double corrupted_metric = 0.0;
    std::vector<std::string> col_labels;

    double at(int r, int c) const { return scores[static_cast<size_t>(r) * cols + c]; }
    double& at(int r, int c) { return scores[static_cast<size_t>(r) * cols + c]; }
};

inline double logit_diff(const double* logits_row, const MetricSpec& metric) {
    return logits_row[metric.target_id] - logits_row[metric.undesired_id];
}

inline double logit_diff(const Vec& logits_row, const MetricSpec& metric) {
    return logit_diff(logits_row.data(), metric);
}

inline double final_metric(const ActivationCache& cache, const MetricSpec& metric) {
    int pos = metric.resolve_position(cache.T);
    return logit_diff(&cache.final_logits[static_cast<size_t>(pos) * cache.cfg.vocab_size],
                      metric);
}

// Overwrites the site's activations in a corrupted-run forward with values
// from the clean run and returns patched_metric - corrupted_metric.
inline double true_patch(const WeightStore& w, const Vocabulary& vocab,
                         const DiagnosticPair& pair, const PatchSite& site) {
    pair.validate(vocab);
    MetricSpec metric = pair.metric(vocab);
    auto clean_tokens = tokenize(pair.clean_prompt, vocab, w.cfg.max_seq_len);
    auto corr_tokens = tokenize(pair.corrupted_prompt, vocab, w.cfg.max_seq_len);

    ActivationCache clean = forward_cached(w, clean_tokens);
    ActivationCache corrupted = forward_cached(w, corr_tokens);
    double corrupted_metric = final_metric(corrupted, metric);

    ForwardHooks hooks;
    const int D = w.cfg.d_model, dh = w.cfg.d_head;
    if (site.kind == SiteKind::LayerOutput) {
        hooks.layer_edits.emplace_back(
            site.layer, [&](double* hidden, int T, int d_model) {
                for (int t : site.positions) {
                    if (t < 0 || t >= T) continue;
                    for (int i = 0; i < d_model; ++i)
                        hidden[static_cast<size_t>(t) * d_model + i] =
                            clean.layer_outputs[site.layer][static_cast<size_t>(t) * d_model + i];
                }
            });
    } else {
        if (!site.head) throw Error(Err::InvalidConfig, "head patch site needs a head index");
        int h = *site.head;
        hooks.head_edits.emplace_back(site.layer, [&, h](double* hc, int T, int, int d_head) {
            for (int t : site.positions) {
                if (t < 0 || t >= T) continue;
                for (int i = 0; i < d_head; ++i)
                    hc[static_cast<size_t>(t) * D + h * dh + i] =
                        clean.head_out(site.layer, h, t, i);
            }
        });
    }

    ActivationCache patched = forward_cached(w, corr_tokens, &hooks);
    return final_metric(patched, metric) - corrupted_metric;
}

struct AtpResult {
    AttributionMap layer_map;
    AttributionMap head_map;
};

// First-order attribution: score(site) = sum over the hidden dimension of
// (clean_act - corrupted_act) * grad of the metric on the corrupted run.
inline AtpResult atp_scores(const WeightStore& w, const Vocabulary& vocab,
                            const DiagnosticPair& pair) {
    pair.validate(vocab);
    MetricSpec metric = pair.metric(vocab);
    auto clean_tokens = tokenize(pair.clean_prompt, vocab, w.cfg.max_seq_len);
    auto corr_tokens = tokenize(pair.corrupted_prompt, vocab, w.cfg.max_seq_len);

    ActivationCache clean = forward_cached(w, clean_tokens);
    ActivationCache corrupted = forward_cached(w, corr_tokens);
    GradientCache grads = grad_activations(w, corr_tokens, metric);

    const int L = w.cfg.n_layers, H = w.cfg.n_heads, D = w.cfg.d_model, dh = w.cfg.d_head;
    const int T = corrupted.T;

    AtpResult res;
    res.layer_map.kind = SiteKind::LayerOutput;
    res.layer_map.rows = L;
    res.layer_map.cols = T;
    res.layer_map.scores.assign(static_cast<size_t>(L) * T, 0.0);
    res.layer_map.pair_name = pair.name;
    res.layer_map.clean_metric = final_metric(clean, metric);
    res.layer_map.corrupted_metric = final_metric(corrupted, metric);
    for (int t = 0; t < T; ++t)
        res.layer_map.col_labels.push_back(vocab.token(clean_tokens.ids[t]));

    res.head_map.kind = SiteKind::HeadOutput;
    res.head_map.rows = L;
    res.head_map.cols = H;
    res.head_map.scores.assign(static_cast<size_t>(L) * H, 0.0);
    res.head_map.pair_name = pair.name;
    res.head_map.clean_metric = res.layer_map.clean_metric;
    res.head_map.corrupted_metric = res.layer_map.corrupted_metric;
    for (int h = 0; h < H; ++h) res.head_map.col_labels.push_back("head_" + std::to_string(h));

    for (int l = 0; l < L; ++l) {
        for (int t = 0; t < T; ++t) {
            double s = 0.0;
            for (int i = 0; i < D; ++i)
                s += (clean.layer_out(l, t, i) - corrupted.layer_out(l, t, i)) *
                     grads.layer_grad(l, t, i);
            res.layer_map.at(l, t) = s;
        }
        for (int h = 0; h < H; ++h) {
            double s = 0.0;
            for (int t = 0; t < T; ++t)
                for (int i = 0; i < dh; ++i)
                    s += (clean.head_out(l, h, t, i) - corrupted.head_out(l, h, t, i)) *
                         grads.head_grad(l, h, t, i);
            res.head_map.at(l, h) = s;
        }
    }
    return res;
}

// Mean absolute score per layer across positions and maps; descending, ties
// toward the lower layer index.
inline std::vector<std::pair<int, double>> rank_layers(const std::vector<AttributionMap>& maps) {
    if (maps.empty()) throw Error(Err::EmptyInput, "no attribution maps to rank");
    const int L = maps.front().rows;
    for (const auto& m : maps) {
        if (m.kind != SiteKind::LayerOutput)
            throw Error(Err::InvalidConfig, "rank_layers requires layer_output maps");
        if (m.rows != L) throw Error(Err::ShapeMismatch, "attribution maps disagree on layers");
    }
    std::vector<double> sum(L, 0.0);
    std::vector<long> count(L, 0);
    for (const auto& m : maps)
        for (int l = 0; l < L; ++l)
            for (int c = 0; c < m.cols; ++c) {
                sum[l] += std::abs(m.at(l, c));
                ++count[l];
            }
    std::vector<std::pair<int, double>> ranked;
    for (int l = 0; l < L; ++l) ranked.emplace_back(l, sum[l] / static_cast<double>(count[l]));
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    return ranked;
}

// CSV heatmap: header row of column labels, one row per component, scores at
// 17 significant digits.
inline void export_heatmap(const AttributionMap& map, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error(Err::IoFailure, "cannot write heatmap " + path);
    out << "component";
    for (const auto& label : map.col_labels) out << "," << label;
    out << "\n";
    char buf[64];
    for (int r = 0; r < map.rows; ++r) {
        out << "layer_" << r;
        for (int c = 0; c < map.cols; ++c) {
            std::snprintf(buf, sizeof(buf), ",%.17g", map.at(r, c));
            out << buf;
        }
        out << "\n";
    }
    if (!out) throw Error(Err::IoFailure, "failed writing heatmap " + path);
}

inline AttributionMap import_heatmap(const std::string& path, SiteKind kind = SiteKind::LayerOutput) {
    std::ifstream in(path);
    if (!in) throw Error(Err::IoFailure, "cannot open heatmap " + path);
    AttributionMap map;
    map.kind = kind;
    std::string line;
    if (!std::getline(in, line)) throw Error(Err::ParseError, "empty heatmap file " + path);
    size_t pos = line.find(',');
    while (pos != std::string::npos) {
        size_t next = line.find(',', pos + 1);
        map.col_labels.push_back(line.substr(pos + 1, next == std::string::npos
                                                           ? std::string::npos
                                                           : next - pos - 1));
        pos = next;
    }
    map.cols = static_cast<int>(map.col_labels.size());
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        size_t p = line.find(',');
        int c = 0;
        while (p != std::string::npos && c < map.cols) {
            map.scores.push_back(std::strtod(line.c_str() + p + 1, nullptr));
            p = line.find(',', p + 1);
            ++c;
        }
        ++map.rows;
    }
    return map;
}

}  // namespace steerlab
