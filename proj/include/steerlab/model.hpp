#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "steerlab/error.hpp"
#include "steerlab/rng.hpp"
#include "steerlab/vocab.hpp"

namespace steerlab {

using Vec = std::vector<double>;

struct ModelConfig {
    int vocab_size = 0;
    int d_model = 0;
    int n_layers = 0;
    int n_heads = 0;
    int d_head = 0;
    int max_seq_len = 0;
    double norm_epsilon = 1e-6;
    bool final_norm_enabled = true;
    uint64_t seed = 0;

    int d_mlp() const { return 4 * d_model; }

    void validate() const {
        if (vocab_size < 1 || d_model < 1 || n_layers < 1 || n_heads < 1 || d_head < 1 ||
            max_seq_len < 1)
            throw Error(Err::InvalidConfig, "all counts must be >= 1");
        if (d_model % n_heads != 0)
            throw Error(Err::InvalidConfig, "d_model must be divisible by n_heads");
        if (d_head * n_heads != d_model)
            throw Error(Err::InvalidConfig, "d_model must equal n_heads * d_head");
        if (!(norm_epsilon > 0.0))
            throw Error(Err::InvalidConfig, "norm_epsilon must be positive");
    }
};

struct LayerWeights {
    Vec wq, wk, wv, wo;       // [d_model x d_model]
    Vec w_up;                 // [d_model x d_mlp]
    Vec w_down;               // [d_mlp x d_model]
    Vec norm_attn, norm_mlp;  // [d_model]
};

struct WeightStore {
    ModelConfig cfg;
    Vec tok_emb;   // [vocab_size x d_model]
    Vec pos_emb;   // [max_seq_len x d_model]
    std::vector<LayerWeights> layers;
    Vec norm_final;  // [d_model]
    Vec unembed;     // [d_model x vocab_size]

    template <typename Fn>
    void for_each_tensor(Fn&& fn) {
        fn("tok_emb", tok_emb);
        fn("pos_emb", pos_emb);
        for (size_t l = 0; l < layers.size(); ++l) {
            auto pfx = "layer" + std::to_string(l) + ".";
            fn(pfx + "wq", layers[l].wq);
            fn(pfx + "wk", layers[l].wk);
            fn(pfx + "wv", layers[l].wv);
            fn(pfx + "wo", layers[l].wo);
            fn(pfx + "w_up", layers[l].w_up);
            fn(pfx + "w_down", layers[l].w_down);
            fn(pfx + "norm_attn", layers[l].norm_attn);
            fn(pfx + "norm_mlp", layers[l].norm_mlp);
        }
        fn("norm_final", norm_final);
        fn("unembed", unembed);
    }

    template <typename Fn>
    void for_each_tensor(Fn&& fn) const {
        const_cast<WeightStore*>(this)->for_each_tensor(
            [&](const std::string& name, Vec& v) { fn(name, static_cast<const Vec&>(v)); });
    }

    // FNV-1a over the raw bytes of every tensor in declaration order.
    uint64_t fingerprint() const {
        uint64_t h = 0xcbf29ce484222325ULL;
        auto feed = [&](const std::string&, const Vec& v) {
            const auto* bytes = reinterpret_cast<const unsigned char*>(v.data());
            for (size_t i = 0; i < v.size() * sizeof(double); ++i) {
                h ^= bytes[i];
                h *= 0x100000001b3ULL;
            }
        };
        for_each_tensor(feed);
        return h;
    }
};

inline WeightStore init_weights(const ModelConfig& cfg) {
    cfg.validate();
    WeightStore w;
    w.cfg = cfg;
    const int D = cfg.d_model, M = cfg.d_mlp();
    w.tok_emb.resize(static_cast<size_t>(cfg.vocab_size) * D);
    w.pos_emb.resize(static_cast<size_t>(cfg.max_seq_len) * D);
    w.layers.resize(cfg.n_layers);
    for (auto& l : w.layers) {
        l.wq.resize(static_cast<size_t>(D) * D);
        l.wk.resize(static_cast<size_t>(D) * D);
        l.wv.resize(static_cast<size_t>(D) * D);
        l.wo.resize(static_cast<size_t>(D) * D);
        l.w_up.resize(static_cast<size_t>(D) * M);
        l.w_down.resize(static_cast<size_t>(M) * D);
        l.norm_attn.assign(D, 1.0);
        l.norm_mlp.assign(D, 1.0);
    }
    w.norm_final.assign(D, 1.0);
    w.unembed.resize(static_cast<size_t>(D) * cfg.vocab_size);

    CounterRng rng(cfg.seed);
    uint64_t counter = 0;
    w.for_each_tensor([&](const std::string& name, Vec& v) {
        if (name.find("norm") != std::string::npos) {
            counter += v.size();  // norm scales stay at 1 but consume counters
            return;
        }
        for (auto& x : v) x = 0.02 * rng.normal(counter++);
    });
    return w;
}

// ---------------------------------------------------------------------------
// dense helpers (row-major)

// C[MxN] += A[MxK] B[KxN]
inline void matmul_acc(const double* a, const double* b, double* c, int M, int K, int N) {
    for (int i = 0; i < M; ++i)
        for (int k = 0; k < K; ++k) {
            double aik = a[i * K + k];
            if (aik == 0.0) continue;
            const double* brow = b + static_cast<size_t>(k) * N;
            double* crow = c + static_cast<size_t>(i) * N;
            for (int j = 0; j < N; ++j) crow[j] += aik * brow[j];
        }
}

// C[MxN] += A[MxK] B^T where B is [NxK]
inline void matmul_bt_acc(const double* a, const double* b, double* c, int M, int K, int N) {
    for (int i = 0; i < M; ++i)
        for (int j = 0; j < N; ++j) {
            double s = 0.0;
            for (int k = 0; k < K; ++k) s += a[i * K + k] * b[j * K + k];
            c[i * N + j] += s;
        }
}

// C[KxN] += A^T B where A is [MxK], B is [MxN]
inline void matmul_at_acc(const double* a, const double* b, double* c, int M, int K, int N) {
    for (int m = 0; m < M; ++m)
        for (int k = 0; k < K; ++k) {
            double amk = a[m * K + k];
            if (amk == 0.0) continue;
            const double* brow = b + static_cast<size_t>(m) * N;
            double* crow = c + static_cast<size_t>(k) * N;
            for (int j = 0; j < N; ++j) crow[j] += amk * brow[j];
        }
}

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

inline double gelu_grad(double x) {
    return 0.5 * (1.0 + std::erf(x * M_SQRT1_2)) +
           x * std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
}

// y = x * inv_rms * g, inv_rms returned for backward
inline double rmsnorm_row(const double* x, const double* g, double* y, int d, double eps) {
    double ss = 0.0;
    for (int i = 0; i < d; ++i) ss += x[i] * x[i];
    double inv = 1.0 / std::sqrt(ss / d + eps);
    for (int i = 0; i < d; ++i) y[i] = x[i] * inv * g[i];
    return inv;
}

inline void rmsnorm_backward_row(const double* x, const double* g, double inv, const double* dy,
                                 double* dx_acc, double* dg_acc, int d) {
    double dot = 0.0;
    for (int i = 0; i < d; ++i) dot += dy[i] * g[i] * x[i];
    double coef = inv * inv * inv * dot / d;
    for (int i = 0; i < d; ++i) {
        dx_acc[i] += dy[i] * g[i] * inv - x[i] * coef;
        if (dg_acc) dg_acc[i] += dy[i] * x[i] * inv;
    }
}

// ---------------------------------------------------------------------------
// forward

// Hooks mutate activations in place during the forward pass.
// Layer edits run on the block's output (the residual stream the next layer
// consumes); head edits run on the concatenated per-head attention outputs
// before the O projection.
struct ForwardHooks {
    std::vector<std::pair<int, std::function<void(double* hidden, int T, int d_model)>>>
        layer_edits;
    std::vector<std::pair<int, std::function<void(double* head_concat, int T, int n_heads,
                                                  int d_head)>>>
        head_edits;
};

struct ActivationCache {
    ModelConfig cfg;
    int T = 0;
    std::vector<Vec> layer_outputs;  // [L][T*d_model], post-block residual stream
    std::vector<Vec> head_outputs;   // [L][H*T*d_head]
    Vec final_logits;                // [T*vocab]

    double layer_out(int l, int t, int i) const {
        return layer_outputs[l][static_cast<size_t>(t) * cfg.d_model + i];
    }
    double head_out(int l, int h, int t, int i) const {
        return head_outputs[l][(static_cast<size_t>(h) * T + t) * cfg.d_head + i];
    }

    // intermediates kept for the backward pass
    struct Internals {
        Vec embeddings;                 // [T*D] residual stream entering layer 0
        std::vector<Vec> ln1, ln2;      // per layer [T*D]
        std::vector<Vec> ln1_inv, ln2_inv;  // per layer [T]
        std::vector<Vec> q, k, v;       // per layer [T*D]
        std::vector<Vec> att;           // per layer [H*T*T] softmax probs
        std::vector<Vec> head_concat;   // per layer [T*D] (post head edits)
        std::vector<Vec> res1;          // per layer [T*D]
        std::vector<Vec> up;            // per layer [T*d_mlp] pre-gelu
        std::vector<Vec> act;           // per layer [T*d_mlp]
        Vec lnf;                        // [T*D]
        Vec lnf_inv;                    // [T]
    } internals;
};

inline ActivationCache forward_cached(const WeightStore& w, const TokenSequence& tokens,
                                      const ForwardHooks* hooks = nullptr) {
    const ModelConfig& cfg = w.cfg;
    const int T = tokens.length();
    if (T < 1) throw Error(Err::EmptyText, "empty token sequence");
    if (T > cfg.max_seq_len) throw Error(Err::ContextOverflow, "sequence exceeds max_seq_len");
    for (int id : tokens.ids)
        if (id < 0 || id >= cfg.vocab_size)
            throw Error(Err::ShapeMismatch, "token id out of range for model vocab");

    const int D = cfg.d_model, H = cfg.n_heads, dh = cfg.d_head, M = cfg.d_mlp(),
              V = cfg.vocab_size;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    ActivationCache c;
    c.cfg = cfg;
    c.T = T;
    c.layer_outputs.assign(cfg.n_layers, Vec(static_cast<size_t>(T) * D));
    c.head_outputs.assign(cfg.n_layers, Vec(static_cast<size_t>(H) * T * dh));
    auto& in = c.internals;
    in.embeddings.resize(static_cast<size_t>(T) * D);
    in.ln1.assign(cfg.n_layers, Vec(static_cast<size_t>(T) * D));
    in.ln2.assign(cfg.n_layers, Vec(static_cast<size_t>(T) * D));
    in.ln1_inv.assign(cfg.n_layers, Vec(T));
    in.ln2_inv.assign(cfg.n_layers, Vec(T));
    in.q.assign(cfg.n_layers, Vec(static_cast<size_t>(T) * D));
    in.k.assign(cfg.n_layers, Vec(static_cast<size_t>(T) * D));
    in.v.assign(cfg.n_layers, Vec(static_cast<size_t>(T) * D));
    in.att.assign(cfg.n_layers, Vec(static_cast<size_t>(H) * T * T, 0.0));
    in.head_concat.assign(cfg.n_layers, Vec(static_cast<size_t>(T) * D, 0.0));
    in.res1.assign(cfg.n_layers, Vec(static_cast<size_t>(T) * D));
    in.up.assign(cfg.n_layers, Vec(static_cast<size_t>(T) * M));
    in.act.assign(cfg.n_layers, Vec(static_cast<size_t>(T) * M));

    Vec x(static_cast<size_t>(T) * D);
    for (int t = 0; t < T; ++t)
        for (int i = 0; i < D; ++i)
            x[t * D + i] = w.tok_emb[static_cast<size_t>(tokens.ids[t]) * D + i] +
                           w.pos_emb[static_cast<size_t>(t) * D + i];
    in.embeddings = x;

    for (int l = 0; l < cfg.n_layers; ++l) {
        const auto& lw = w.layers[l];
        for (int t = 0; t < T; ++t)
            in.ln1_inv[l][t] = rmsnorm_row(&x[t * D], lw.norm_attn.data(), &in.ln1[l][t * D], D,
                                           cfg.norm_epsilon);

        Vec& q = in.q[l];
        Vec& k = in.k[l];
        Vec& v = in.v[l];
        std::fill(q.begin(), q.end(), 0.0);
        std::fill(k.begin(), k.end(), 0.0);
        std::fill(v.begin(), v.end(), 0.0);
        matmul_acc(in.ln1[l].data(), lw.wq.data(), q.data(), T, D, D);
        matmul_acc(in.ln1[l].data(), lw.wk.data(), k.data(), T, D, D);
        matmul_acc(in.ln1[l].data(), lw.wv.data(), v.data(), T, D, D);

        Vec& att = in.att[l];
        Vec& hc = in.head_concat[l];
        std::fill(hc.begin(), hc.end(), 0.0);
        for (int h = 0; h < H; ++h) {
            const int off = h * dh;
            for (int t = 0; t < T; ++t) {
                double* row = &att[(static_cast<size_t>(h) * T + t) * T];
                double maxv = -std::numeric_limits<double>::infinity();
                for (int s = 0; s <= t; ++s) {
                    double dot = 0.0;
                    for (int i = 0; i < dh; ++i) dot += q[t * D + off + i] * k[s * D + off + i];
                    row[s] = dot * scale;
                    maxv = std::max(maxv, row[s]);
                }
                double sum = 0.0;
                for (int s = 0; s <= t; ++s) {
                    row[s] = std::exp(row[s] - maxv);
                    sum += row[s];
                }
                for (int s = 0; s <= t; ++s) row[s] /= sum;
                for (int s = 0; s <= t; ++s)
                    for (int i = 0; i < dh; ++i)
                        hc[t * D + off + i] += row[s] * v[s * D + off + i];
            }
        }

        if (hooks)
            for (const auto& [hl, fn] : hooks->head_edits)
                if (hl == l) fn(hc.data(), T, H, dh);

        // cached head outputs are exactly what the O projection consumed
        for (int h = 0; h < H; ++h)
            for (int t = 0; t < T; ++t)
                for (int i = 0; i < dh; ++i)
                    c.head_outputs[l][(static_cast<size_t>(h) * T + t) * dh + i] =
                        hc[t * D + h * dh + i];

        Vec& res1 = in.res1[l];
        res1 = x;
        matmul_acc(hc.data(), lw.wo.data(), res1.data(), T, D, D);

        for (int t = 0; t < T; ++t)
            in.ln2_inv[l][t] = rmsnorm_row(&res1[t * D], lw.norm_mlp.data(), &in.ln2[l][t * D], D,
                                           cfg.norm_epsilon);

        Vec& up = in.up[l];
        std::fill(up.begin(), up.end(), 0.0);
        matmul_acc(in.ln2[l].data(), lw.w_up.data(), up.data(), T, D, M);
        Vec& act = in.act[l];
        for (size_t i = 0; i < up.size(); ++i) act[i] = gelu(up[i]);

        x = res1;
        matmul_acc(act.data(), lw.w_down.data(), x.data(), T, M, D);

        if (hooks)
            for (const auto& [hl, fn] : hooks->layer_edits)
                if (hl == l) fn(x.data(), T, D);

        c.layer_outputs[l] = x;
    }

    if (cfg.final_norm_enabled) {
        in.lnf.resize(static_cast<size_t>(T) * D);
        in.lnf_inv.resize(T);
        for (int t = 0; t < T; ++t)
            in.lnf_inv[t] =
                rmsnorm_row(&x[t * D], w.norm_final.data(), &in.lnf[t * D], D, cfg.norm_epsilon);
    } else {
        in.lnf = x;
    }

    c.final_logits.assign(static_cast<size_t>(T) * V, 0.0);
    matmul_acc(in.lnf.data(), w.unembed.data(), c.final_logits.data(), T, D, V);
    return c;
}

// ---------------------------------------------------------------------------
// backward

struct GradientCache {
    ModelConfig cfg;
    int T = 0;
    std::vector<Vec> layer_grads;  // [L][T*d_model], d metric / d layer_outputs
    std::vector<Vec> head_grads;   // [L][H*T*d_head]

    double layer_grad(int l, int t, int i) const {
        return layer_grads[l][static_cast<size_t>(t) * cfg.d_model + i];
    }
    double head_grad(int l, int h, int t, int i) const {
        return head_grads[l][(static_cast<size_t>(h) * T + t) * cfg.d_head + i];
    }
};

struct WeightGrads {
    Vec tok_emb, pos_emb;
    std::vector<LayerWeights> layers;
    Vec norm_final, unembed;

    static WeightGrads zeros_like(const WeightStore& w) {
        WeightGrads g;
        g.tok_emb.assign(w.tok_emb.size(), 0.0);
        g.pos_emb.assign(w.pos_emb.size(), 0.0);
        g.layers.resize(w.layers.size());
        for (size_t l = 0; l < w.layers.size(); ++l) {
            g.layers[l].wq.assign(w.layers[l].wq.size(), 0.0);
            g.layers[l].wk.assign(w.layers[l].wk.size(), 0.0);
            g.layers[l].wv.assign(w.layers[l].wv.size(), 0.0);
            g.layers[l].wo.assign(w.layers[l].wo.size(), 0.0);
            g.layers[l].w_up.assign(w.layers[l].w_up.size(), 0.0);
            g.layers[l].w_down.assign(w.layers[l].w_down.size(), 0.0);
            g.layers[l].norm_attn.assign(w.layers[l].norm_attn.size(), 0.0);
            g.layers[l].norm_mlp.assign(w.layers[l].norm_mlp.size(), 0.0);
        }
        g.norm_final.assign(w.norm_final.size(), 0.0);
        g.unembed.assign(w.unembed.size(), 0.0);
        return g;
    }
};

// Reverse pass from d(scalar)/d(logits). Fills activation gradients and, when
// `wgrads` is non-null, accumulates weight gradients into it. Assumes the
// cache came from a hook-free forward.
inline GradientCache backward(const WeightStore& w, const TokenSequence& tokens,
                              const ActivationCache& cache, const Vec& dlogits,
                              WeightGrads* wgrads = nullptr) {
    const ModelConfig& cfg = w.cfg;
    const int T = cache.T, D = cfg.d_model, H = cfg.n_heads, dh = cfg.d_head, M = cfg.d_mlp(),
              V = cfg.vocab_size;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const auto& in = cache.internals;

    GradientCache g;
    g.cfg = cfg;
    g.T = T;
    g.layer_grads.assign(cfg.n_layers, Vec(static_cast<size_t>(T) * D, 0.0));
    g.head_grads.assign(cfg.n_layers, Vec(static_cast<size_t>(H) * T * dh, 0.0));

    Vec d_lnf(static_cast<size_t>(T) * D, 0.0);
    matmul_bt_acc(dlogits.data(), w.unembed.data(), d_lnf.data(), T, V, D);
    if (wgrads) matmul_at_acc(in.lnf.data(), dlogits.data(), wgrads->unembed.data(), T, D, V);

    Vec dx(static_cast<size_t>(T) * D, 0.0);
    if (cfg.final_norm_enabled) {
        const Vec& x_final = cache.layer_outputs[cfg.n_layers - 1];
        for (int t = 0; t < T; ++t)
            rmsnorm_backward_row(&x_final[t * D], w.norm_final.data(), in.lnf_inv[t],
                                 &d_lnf[t * D], &dx[t * D],
                                 wgrads ? wgrads->norm_final.data() : nullptr, D);
    } else {
        dx = d_lnf;
    }

    Vec d_hc(static_cast<size_t>(T) * D), d_res1(static_cast<size_t>(T) * D),
        d_ln(static_cast<size_t>(T) * D), d_q(static_cast<size_t>(T) * D),
        d_k(static_cast<size_t>(T) * D), d_v(static_cast<size_t>(T) * D),
        d_up(static_cast<size_t>(T) * M), d_act(static_cast<size_t>(T) * M);

    for (int l = cfg.n_layers - 1; l >= 0; --l) {
        const auto& lw = w.layers[l];
        auto* lg = wgrads ? &wgrads->layers[l] : nullptr;
        g.layer_grads[l] = dx;

        // MLP branch: x_out = res1 + gelu(ln2 @ w_up) @ w_down
        std::fill(d_act.begin(), d_act.end(), 0.0);
        matmul_bt_acc(dx.data(), lw.w_down.data(), d_act.data(), T, D, M);
        if (lg) matmul_at_acc(in.act[l].data(), dx.data(), lg->w_down.data(), T, M, D);
        for (size_t i = 0; i < d_up.size(); ++i) d_up[i] = d_act[i] * gelu_grad(in.up[l][i]);
        std::fill(d_ln.begin(), d_ln.end(), 0.0);
        matmul_bt_acc(d_up.data(), lw.w_up.data(), d_ln.data(), T, M, D);
        if (lg) matmul_at_acc(in.ln2[l].data(), d_up.data(), lg->w_up.data(), T, D, M);

        d_res1 = dx;
        for (int t = 0; t < T; ++t)
            rmsnorm_backward_row(&in.res1[l][t * D], lw.norm_mlp.data(), in.ln2_inv[l][t],
                                 &d_ln[t * D], &d_res1[t * D],
                                 lg ? lg->norm_mlp.data() : nullptr, D);

        // attention branch: res1 = x_in + head_concat @ wo
        std::fill(d_hc.begin(), d_hc.end(), 0.0);
        matmul_bt_acc(d_res1.data(), lw.wo.data(), d_hc.data(), T, D, D);
        if (lg) matmul_at_acc(in.head_concat[l].data(), d_res1.data(), lg->wo.data(), T, D, D);

        for (int h = 0; h < H; ++h)
            for (int t = 0; t < T; ++t)
                for (int i = 0; i < dh; ++i)
                    g.head_grads[l][(static_cast<size_t>(h) * T + t) * dh + i] =
                        d_hc[t * D + h * dh + i];

        std::fill(d_q.begin(), d_q.end(), 0.0);
        std::fill(d_k.begin(), d_k.end(), 0.0);
        std::fill(d_v.begin(), d_v.end(), 0.0);
        const Vec& att = in.att[l];
        const Vec& q = in.q[l];
        const Vec& k = in.k[l];
        const Vec& v = in.v[l];
        std::vector<double> d_att_row(T);
        for (int h = 0; h < H; ++h) {
            const int off = h * dh;
            for (int t = 0; t < T; ++t) {
                const double* prow = &att[(static_cast<size_t>(h) * T + t) * T];
                // d att[t][s] = d_hc[t,h,:] . v[s,h,:]
                for (int s = 0; s <= t; ++s) {
                    double dd = 0.0;
                    for (int i = 0; i < dh; ++i)
                        dd += d_hc[t * D + off + i] * v[s * D + off + i];
                    d_att_row[s] = dd;
                    for (int i = 0; i < dh; ++i)
                        d_v[s * D + off + i] += prow[s] * d_hc[t * D + off + i];
                }
                double dot = 0.0;
                for (int s = 0; s <= t; ++s) dot += d_att_row[s] * prow[s];
                for (int s = 0; s <= t; ++s) {
                    double d_score = prow[s] * (d_att_row[s] - dot);
                    for (int i = 0; i < dh; ++i) {
                        d_q[t * D + off + i] += d_score * scale * k[s * D + off + i];
                        d_k[s * D + off + i] += d_score * scale * q[t * D + off + i];
                    }
                }
            }
        }

        std::fill(d_ln.begin(), d_ln.end(), 0.0);
        matmul_bt_acc(d_q.data(), lw.wq.data(), d_ln.data(), T, D, D);
        matmul_bt_acc(d_k.data(), lw.wk.data(), d_ln.data(), T, D, D);
        matmul_bt_acc(d_v.data(), lw.wv.data(), d_ln.data(), T, D, D);
        if (lg) {
            matmul_at_acc(in.ln1[l].data(), d_q.data(), lg->wq.data(), T, D, D);
            matmul_at_acc(in.ln1[l].data(), d_k.data(), lg->wk.data(), T, D, D);
            matmul_at_acc(in.ln1[l].data(), d_v.data(), lg->wv.data(), T, D, D);
        }

        const Vec& x_in = (l == 0) ? in.embeddings : cache.layer_outputs[l - 1];
        dx = d_res1;
        for (int t = 0; t < T; ++t)
            rmsnorm_backward_row(&x_in[t * D], lw.norm_attn.data(), in.ln1_inv[l][t],
                                 &d_ln[t * D], &dx[t * D], lg ? lg->norm_attn.data() : nullptr,
                                 D);
    }

    if (wgrads) {
        for (int t = 0; t < T; ++t) {
            for (int i = 0; i < D; ++i) {
                wgrads->tok_emb[static_cast<size_t>(tokens.ids[t]) * D + i] += dx[t * D + i];
                wgrads->pos_emb[static_cast<size_t>(t) * D + i] += dx[t * D + i];
            }
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// metric gradients

struct MetricSpec {
    int target_id = -1;
    int undesired_id = -1;
    int position = -1;  // -1: final position

    void validate(int vocab_size) const {
        if (target_id < 0 || target_id >= vocab_size || undesired_id < 0 ||
            undesired_id >= vocab_size)
            throw Error(Err::InvalidMetric, "metric token ids out of vocab");
    }

    int resolve_position(int T) const { return position < 0 ? T - 1 : position; }
};

// d metric / d every cached activation for metric = logit[target] - logit[undesired]
// at the metric position.
inline GradientCache grad_activations(const WeightStore& w, const TokenSequence& tokens,
                                      const MetricSpec& metric) {
    metric.validate(w.cfg.vocab_size);
    ActivationCache cache = forward_cached(w, tokens);
    const int T = cache.T, V = w.cfg.vocab_size;
    int pos = metric.resolve_position(T);
    if (pos < 0 || pos >= T) throw Error(Err::InvalidMetric, "metric position out of range");
    Vec dlogits(static_cast<size_t>(T) * V, 0.0);
    dlogits[static_cast<size_t>(pos) * V + metric.target_id] += 1.0;
    dlogits[static_cast<size_t>(pos) * V + metric.undesired_id] -= 1.0;
    return backward(w, tokens, cache, dlogits);
}

// ---------------------------------------------------------------------------
// training

struct TrainResult {
    WeightStore weights;
    std::vector<double> loss_trace;  // mean per-token cross-entropy, one entry per step
};

// Full-batch Adam on next-token cross-entropy. Deterministic given the
// weights and corpus order.
inline TrainResult train(const WeightStore& start, const std::vector<TokenSequence>& corpus,
                         int steps, double learning_rate) {
    if (corpus.empty()) throw Error(Err::EmptyCorpus, "training corpus is empty");
    for (const auto& seq : corpus)
        if (seq.length() < 2)
            throw Error(Err::DegenerateSequence, "training sequence shorter than 2 tokens");

    constexpr double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
    TrainResult res;
    res.weights = start;
    WeightStore& w = res.weights;
    const int V = w.cfg.vocab_size;

    WeightGrads m = WeightGrads::zeros_like(w);
    WeightGrads v2 = WeightGrads::zeros_like(w);

    long total_targets = 0;
    for (const auto& seq : corpus) total_targets += seq.length() - 1;

    for (int step = 0; step < steps; ++step) {
        WeightGrads grads = WeightGrads::zeros_like(w);
        double loss = 0.0;
        for (const auto& seq : corpus) {
            ActivationCache cache = forward_cached(w, seq);
            const int T = cache.T;
            Vec dlogits(static_cast<size_t>(T) * V, 0.0);
            for (int t = 0; t + 1 < T; ++t) {
                const double* row = &cache.final_logits[static_cast<size_t>(t) * V];
                double maxv = row[0];
                for (int j = 1; j < V; ++j) maxv = std::max(maxv, row[j]);
                double sum = 0.0;
                for (int j = 0; j < V; ++j) sum += std::exp(row[j] - maxv);
                int target = seq.ids[t + 1];
                loss += -(row[target] - maxv - std::log(sum));
                double inv_n = 1.0 / static_cast<double>(total_targets);
                for (int j = 0; j < V; ++j)
                    dlogits[static_cast<size_t>(t) * V + j] =
                        (std::exp(row[j] - maxv) / sum - (j == target ? 1.0 : 0.0)) * inv_n;
            }
            backward(w, seq, cache, dlogits, &grads);
        }
        res.loss_trace.push_back(loss / static_cast<double>(total_targets));

        double t = step + 1;
        double corr1 = 1.0 - std::pow(beta1, t);
        double corr2 = 1.0 - std::pow(beta2, t);
        auto update = [&](Vec& wv, Vec& mv, Vec& vv, const Vec& gv) {
            for (size_t i = 0; i < wv.size(); ++i) {
                mv[i] = beta1 * mv[i] + (1.0 - beta1) * gv[i];
                vv[i] = beta2 * vv[i] + (1.0 - beta2) * gv[i] * gv[i];
                wv[i] -= learning_rate * (mv[i] / corr1) / (std::sqrt(vv[i] / corr2) + adam_eps);
            }
        };
        update(w.tok_emb, m.tok_emb, v2.tok_emb, grads.tok_emb);
        update(w.pos_emb, m.pos_emb, v2.pos_emb, grads.pos_emb);
        for (size_t l = 0; l < w.layers.size(); ++l) {
            update(w.layers[l].wq, m.layers[l].wq, v2.layers[l].wq, grads.layers[l].wq);
            update(w.layers[l].wk, m.layers[l].wk, v2.layers[l].wk, grads.layers[l].wk);
            update(w.layers[l].wv, m.layers[l].wv, v2.layers[l].wv, grads.layers[l].wv);
            update(w.layers[l].wo, m.layers[l].wo, v2.layers[l].wo, grads.layers[l].wo);
            update(w.layers[l].w_up, m.layers[l].w_up, v2.layers[l].w_up, grads.layers[l].w_up);
            update(w.layers[l].w_down, m.layers[l].w_down, v2.layers[l].w_down,
                   grads.layers[l].w_down);
            update(w.layers[l].norm_attn, m.layers[l].norm_attn, v2.layers[l].norm_attn,
                   grads.layers[l].norm_attn);
            update(w.layers[l].norm_mlp, m.layers[l].norm_mlp, v2.layers[l].norm_mlp,
                   grads.layers[l].norm_mlp);
        }
        update(w.norm_final, m.norm_final, v2.norm_final, grads.norm_final);
        update(w.unembed, m.unembed, v2.unembed, grads.unembed);
    }
    return res;
}

// ---------------------------------------------------------------------------
// generation

// Greedy decoding; ties break toward the lowest token id. Hooks, when
// supplied, run on every forward pass.
inline TokenSequence generate(const WeightStore& w, const TokenSequence& prompt, int max_new,
                              const ForwardHooks* hooks = nullptr) {
    if (prompt.length() + max_new > w.cfg.max_seq_len)
        throw Error(Err::ContextOverflow, "prompt plus max_new exceeds max_seq_len");
    TokenSequence out = prompt;
    const int V = w.cfg.vocab_size;
    for (int n = 0; n < max_new; ++n) {
        ActivationCache cache = forward_cached(w, out, hooks);
        const double* row = &cache.final_logits[static_cast<size_t>(cache.T - 1) * V];
        int best = 0;
        for (int j = 1; j < V; ++j)
            if (row[j] > row[best]) best = j;
        out.ids.push_back(best);
    }
    return out;
}

}  // namespace steerlab
