#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "steerlab/error.hpp"

namespace steerlab {
namespace special {

inline constexpr double kTol = 1e-12;
inline constexpr int kMaxIter = 500;

// Continued fraction for the regularized incomplete beta, modified Lentz.
inline double betacf(double a, double b, double x) {
    const double tiny = 1e-300;
    double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::fabs(d) < tiny) d = tiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < kTol) break;
    }
    return h;
}

// Regularized incomplete beta I_x(a, b).
inline double ibeta(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                      a * std::log(x) + b * std::log1p(-x);
    double front = std::exp(ln_front);
    if (x < (a + 1.0) / (a + b + 2.0))
        return front * betacf(a, b, x) / a;
    return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

// Regularized lower incomplete gamma P(a, x): series for x < a+1, continued
// fraction for the complement otherwise.
inline double igamma_p(double a, double x) {
    if (x <= 0.0) return 0.0;
    double ln_front = a * std::log(x) - x - std::lgamma(a);
    if (x < a + 1.0) {
        double sum = 1.0 / a;
        double term = sum;
        for (int n = 1; n <= kMaxIter; ++n) {
            term *= x / (a + n);
            sum += term;
            if (std::fabs(term) < std::fabs(sum) * kTol) break;
        }
        return sum * std::exp(ln_front);
    }
    // Lentz for Q(a, x)
    const double tiny = 1e-300;
    double b = x + 1.0 - a;
    double c = 1.0 / tiny;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i <= kMaxIter; ++i) {
        double an = -static_cast<double>(i) * (i - a);
        b += 2.0;
        d = an * d + b;
        if (std::fabs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < kTol) break;
    }
    return 1.0 - std::exp(ln_front) * h;
}

inline double igamma_q(double a, double x) { return 1.0 - igamma_p(a, x); }

// Two-sided p for Student's t with df degrees of freedom.
inline double student_t_two_sided_p(double t, double df) {
    double x = df / (df + t * t);
    return ibeta(0.5 * df, 0.5, x);
}

// Upper-tail p for chi-square with k degrees of freedom.
inline double chi2_upper_p(double stat, double k) { return igamma_q(0.5 * k, 0.5 * stat); }

}  // namespace special

struct TTestResult {
    double t_statistic = 0.0;
    double degrees_of_freedom = 0.0;
    double p_value = 1.0;
    double mean_a = 0.0, mean_b = 0.0;
    int n_a = 0, n_b = 0;
};

inline TTestResult welch_t(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() < 2 || b.size() < 2)
        throw Error(Err::TooFewSamples, "welch_t needs at least 2 samples per group");
    auto moments = [](const std::vector<double>& s, double& mean, double& var) {
        mean = std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(s.size());
        double ss = 0.0;
        for (double x : s) ss += (x - mean) * (x - mean);
        var = ss / static_cast<double>(s.size() - 1);
    };
    TTestResult r;
    r.n_a = static_cast<int>(a.size());
    r.n_b = static_cast<int>(b.size());
    double va = 0.0, vb = 0.0;
    moments(a, r.mean_a, va);
    moments(b, r.mean_b, vb);
    if (va == 0.0 && vb == 0.0)
        throw Error(Err::ZeroVarianceBoth, "both samples have zero variance");
    double sa = va / r.n_a, sb = vb / r.n_b;
    double se2 = sa + sb;
    r.t_statistic = (r.mean_a - r.mean_b) / std::sqrt(se2);
    r.degrees_of_freedom = se2 * se2 / (sa * sa / (r.n_a - 1) + sb * sb / (r.n_b - 1));
    r.p_value = special::student_t_two_sided_p(r.t_statistic, r.degrees_of_freedom);
    return r;
}

struct Chi2Result {
    double statistic = 0.0;
    int degrees_of_freedom = 0;
    double p_value = 1.0;
    std::vector<std::vector<double>> observed;
    std::vector<std::vector<double>> expected;
};

// Pearson chi-square test of independence, no continuity correction.
inline Chi2Result chi2_independence(const std::vector<std::vector<double>>& table) {
    if (table.size() < 2 || table.front().size() < 2)
        throw Error(Err::DegenerateTable, "need at least a 2x2 table");
    const size_t R = table.size(), C = table.front().size();
    for (const auto& row : table) {
        if (row.size() != C) throw Error(Err::DegenerateTable, "ragged table");
        for (double x : row)
            if (x < 0.0) throw Error(Err::DegenerateTable, "negative count");
    }
    std::vector<double> row_tot(R, 0.0), col_tot(C, 0.0);
    double total = 0.0;
    for (size_t i = 0; i < R; ++i)
        for (size_t j = 0; j < C; ++j) {
            row_tot[i] += table[i][j];
            col_tot[j] += table[i][j];
            total += table[i][j];
        }
    for (double x : row_tot)
        if (x <= 0.0) throw Error(Err::DegenerateTable, "zero row marginal");
    for (double x : col_tot)
        if (x <= 0.0) throw Error(Err::DegenerateTable, "zero column marginal");

    Chi2Result r;
    r.observed = table;
    r.expected.assign(R, std::vector<double>(C, 0.0));
    for (size_t i = 0; i < R; ++i)
        for (size_t j = 0; j < C; ++j) {
            double e = row_tot[i] * col_tot[j] / total;
            r.expected[i][j] = e;
            double d = table[i][j] - e;
            r.statistic += d * d / e;
        }
    r.degrees_of_freedom = static_cast<int>((R - 1) * (C - 1));
    r.p_value = special::chi2_upper_p(r.statistic, r.degrees_of_freedom);
    return r;
}

struct CorrectedPValues {
    std::vector<double> raw;
    std::vector<double> adjusted;        // same order as raw
    std::vector<bool> significant_at;    // adjusted <= q
    double q = 0.05;
};

// Benjamini-Hochberg step-up: adjusted_(i) = min_{j >= i} p_(j) * m / j,
// capped at 1, mapped back to input order.
inline CorrectedPValues bh_fdr(const std::vector<double>& raw_p, double q = 0.05) {
    for (double p : raw_p)
        if (!(p >= 0.0 && p <= 1.0))
            throw Error(Err::OutOfRangeP, "raw p-value outside [0, 1]");
    CorrectedPValues r;
    r.raw = raw_p;
    r.q = q;
    const size_t m = raw_p.size();
    r.adjusted.resize(m);
    r.significant_at.resize(m);
    if (m == 0) return r;

    std::vector<size_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t i, size_t j) { return raw_p[i] < raw_p[j]; });
    std::vector<double> adj_sorted(m);
    double running = 1.0;
    for (size_t k = m; k-- > 0;) {
        double v = raw_p[order[k]] * (static_cast<double>(m) / static_cast<double>(k + 1));
        running = std::min(running, v);
        // clamp so rounding can never push the adjusted value below the raw one
        adj_sorted[k] = std::max(raw_p[order[k]], std::min(running, 1.0));
    }
    for (size_t k = 0; k < m; ++k) {
        r.adjusted[order[k]] = adj_sorted[k];
        r.significant_at[order[k]] = adj_sorted[k] <= q;
    }
    return r;
}

}  // namespace steerlab
