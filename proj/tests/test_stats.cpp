#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>

#include "steerlab/stats.hpp"

using namespace steerlab;

namespace {

// adaptive Simpson on [lo, hi]; the first few levels always split so an
// accidental agreement on a coarse grid cannot end the recursion early
template <typename F>
double simpson(F f, double lo, double hi, double tol, int depth = 24) {
    auto rule = [&](double a, double b) {
        return (b - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b));
    };
    std::function<double(double, double, double, int)> rec =
        [&](double a, double b, double whole, int d) -> double {
        double m = 0.5 * (a + b);
        double left = rule(a, m), right = rule(m, b);
        bool must_split = d > depth - 8;
        if (d <= 0 || (!must_split && std::fabs(left + right - whole) < 15.0 * tol))
            return left + right + (left + right - whole) / 15.0;
        return rec(a, m, left, d - 1) + rec(m, b, right, d - 1);
    };
    return rec(lo, hi, rule(lo, hi), depth);
}

double t_density(double x, double df) {
    double ln = std::lgamma(0.5 * (df + 1.0)) - std::lgamma(0.5 * df) -
                0.5 * std::log(df * M_PI) - 0.5 * (df + 1.0) * std::log1p(x * x / df);
    return std::exp(ln);
}

// two-sided p via the central mass, no incomplete beta involved
double t_p_quadrature(double t, double df) {
    double central = simpson([&](double x) { return t_density(x, df); }, 0.0, std::fabs(t), 1e-10);
    return 1.0 - 2.0 * central;
}

// textbook step-up definition, written independently of the library
std::vector<double> bh_bruteforce(const std::vector<double>& p) {
    const size_t m = p.size();
    std::vector<size_t> order(m);
    for (size_t i = 0; i < m; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t i, size_t j) { return p[i] < p[j]; });
    std::vector<double> adj(m);
    for (size_t i = 0; i < m; ++i) {
        double best = 1.0;
        for (size_t j = i; j < m; ++j)
            best = std::min(best, p[order[j]] * double(m) / double(j + 1));
        adj[order[i]] = best;
    }
    return adj;
}

}  // namespace

TEST_CASE("incomplete beta matches direct quadrature on a grid") {
    const double ab[] = {1.0, 1.5, 2.5, 4.0, 8.0};
    const double xs[] = {0.1, 0.35, 0.5, 0.8};
    int points = 0;
    for (double a : ab)
        for (double b : ab)
            for (double x : xs) {
                double ln_b = std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
                double quad = simpson(
                                  [&](double t) {
                                      return std::exp((a - 1.0) * std::log(t) +
                                                      (b - 1.0) * std::log1p(-t) - ln_b);
                                  },
                                  1e-14, x, 1e-11);
                CHECK(std::fabs(special::ibeta(a, b, x) - quad) < 1e-8);
                ++points;
            }
    CHECK(points == 100);
    CHECK(special::ibeta(2.0, 3.0, 0.0) == 0.0);
    CHECK(special::ibeta(2.0, 3.0, 1.0) == 1.0);
}

TEST_CASE("incomplete gamma matches direct quadrature on a grid") {
    const double as[] = {1.0, 1.5, 2.0, 3.5, 5.0, 8.0, 12.0, 20.0, 30.0, 50.0};
    const double frac[] = {0.2, 0.5, 0.8, 1.0, 1.3, 1.7, 2.0, 2.5, 3.0, 4.0};
    int points = 0;
    for (double a : as)
        for (double f : frac) {
            double x = a * f;
            double quad = simpson(
                              [&](double t) {
                                  return std::exp((a - 1.0) * std::log(t) - t - std::lgamma(a));
                              },
                              1e-14, x, 1e-11);
            CHECK(std::fabs(special::igamma_p(a, x) - quad) < 1e-8);
            CHECK(std::fabs(special::igamma_p(a, x) + special::igamma_q(a, x) - 1.0) < 1e-12);
            ++points;
        }
    CHECK(points == 100);
}

TEST_CASE("welch on identical samples is exactly null") {
    auto r = welch_t({1, 2, 3}, {1, 2, 3});
    CHECK(r.t_statistic == 0.0);
    CHECK(r.p_value == doctest::Approx(1.0));
}

TEST_CASE("welch hand-computed example") {
    auto r = welch_t({2, 4, 6}, {1, 2, 3});
    CHECK(r.t_statistic == doctest::Approx(2.0 / std::sqrt(5.0 / 3.0)).epsilon(1e-12));
    CHECK(r.t_statistic == doctest::Approx(1.5492).epsilon(1e-4));
    CHECK(r.degrees_of_freedom == doctest::Approx(50.0 / 17.0).epsilon(1e-12));
    CHECK(std::fabs(r.p_value - t_p_quadrature(r.t_statistic, r.degrees_of_freedom)) < 1e-6);
    CHECK(r.mean_a == doctest::Approx(4.0));
    CHECK(r.mean_b == doctest::Approx(2.0));
}

TEST_CASE("welch p-values agree with quadrature over random inputs") {
    std::mt19937 gen(123);
    std::normal_distribution<double> na(0.0, 1.0), nb(0.4, 1.7);
    for (int rep = 0; rep < 25; ++rep) {
        std::vector<double> a(5 + rep % 7), b(4 + rep % 5);
        for (auto& x : a) x = na(gen);
        for (auto& x : b) x = nb(gen);
        auto r = welch_t(a, b);
        CHECK(std::fabs(r.p_value - t_p_quadrature(r.t_statistic, r.degrees_of_freedom)) < 1e-6);
        CHECK(r.p_value >= 0.0);
        CHECK(r.p_value <= 1.0);
        CHECK(r.degrees_of_freedom > 1.0);
    }
}

TEST_CASE("welch antisymmetry and shift/scale invariance") {
    std::vector<double> a = {0.3, 1.1, -0.7, 2.2, 0.9};
    std::vector<double> b = {1.4, -0.2, 0.8, 2.5};
    auto r = welch_t(a, b);
    auto swapped = welch_t(b, a);
    CHECK(swapped.t_statistic == doctest::Approx(-r.t_statistic).epsilon(1e-12));
    CHECK(swapped.degrees_of_freedom == doctest::Approx(r.degrees_of_freedom).epsilon(1e-12));
    CHECK(swapped.p_value == doctest::Approx(r.p_value).epsilon(1e-12));

    auto shifted_a = a, shifted_b = b;
    for (auto& x : shifted_a) x = 3.0 * x + 7.0;
    for (auto& x : shifted_b) x = 3.0 * x + 7.0;
    auto s = welch_t(shifted_a, shifted_b);
    CHECK(s.t_statistic == doctest::Approx(r.t_statistic).epsilon(1e-12));
    CHECK(s.degrees_of_freedom == doctest::Approx(r.degrees_of_freedom).epsilon(1e-12));
    CHECK(s.p_value == doctest::Approx(r.p_value).epsilon(1e-12));
}

TEST_CASE("welch error conditions") {
    CHECK_THROWS_AS(welch_t({1.0}, {1.0, 2.0}), Error);
    try {
        welch_t({2.0, 2.0}, {5.0, 5.0});
        FAIL("expected throw");
    } catch (const Error& e) {
        CHECK(e.kind() == Err::ZeroVarianceBoth);
    }
}

TEST_CASE("chi-square hand-computed examples") {
    auto null = chi2_independence({{10, 10}, {10, 10}});
    CHECK(null.statistic == 0.0);
    CHECK(null.p_value == doctest::Approx(1.0));

    auto r = chi2_independence({{20, 10}, {10, 20}});
    CHECK(r.statistic == doctest::Approx(100.0 / 15.0).epsilon(1e-12));
    CHECK(r.degrees_of_freedom == 1);
    for (const auto& row : r.expected)
        for (double e : row) CHECK(e == doctest::Approx(15.0));
    CHECK(r.p_value == doctest::Approx(0.0098).epsilon(0.02));
    // df=1 identity: p = 2(1 - Phi(sqrt(stat))) = erfc(sqrt(stat/2))
    CHECK(std::fabs(r.p_value - std::erfc(std::sqrt(0.5 * r.statistic))) < 1e-10);
}

TEST_CASE("chi-square is invariant to row and column permutations") {
    std::mt19937 gen(7);
    std::uniform_int_distribution<int> count(1, 40);
    for (int rep = 0; rep < 20; ++rep) {
        std::vector<std::vector<double>> t(2, std::vector<double>(3));
        for (auto& row : t)
            for (auto& x : row) x = count(gen);
        auto base = chi2_independence(t);
        auto rows = chi2_independence({t[1], t[0]});
        CHECK(rows.statistic == doctest::Approx(base.statistic).epsilon(1e-12));
        std::vector<std::vector<double>> cols = {{t[0][2], t[0][0], t[0][1]},
                                                 {t[1][2], t[1][0], t[1][1]}};
        auto swapped = chi2_independence(cols);
        CHECK(swapped.statistic == doctest::Approx(base.statistic).epsilon(1e-12));
    }
}

TEST_CASE("chi-square is zero exactly for proportional rows") {
    auto r = chi2_independence({{2, 4, 6}, {3, 6, 9}});
    CHECK(r.statistic == doctest::Approx(0.0).epsilon(1e-12));
    auto off = chi2_independence({{2, 4, 6}, {3, 6, 10}});
    CHECK(off.statistic > 0.0);
}

TEST_CASE("chi-square degenerate tables are rejected") {
    CHECK_THROWS_AS(chi2_independence({{1, 2}}), Error);
    CHECK_THROWS_AS(chi2_independence({{0, 0}, {1, 2}}), Error);
    CHECK_THROWS_AS(chi2_independence({{1, 0}, {2, 0}}), Error);
    CHECK_THROWS_AS(chi2_independence({{1, -1}, {2, 3}}), Error);
    CHECK_THROWS_AS(chi2_independence({{1, 2}, {3}}), Error);
}

TEST_CASE("bh correction matches the worked examples") {
    auto single = bh_fdr({0.03});
    CHECK(single.adjusted == std::vector<double>{0.03});
    CHECK(single.significant_at[0]);

    auto r = bh_fdr({0.01, 0.04, 0.03, 0.02});
    for (double adj : r.adjusted) CHECK(adj == doctest::Approx(0.04).epsilon(1e-12));

    auto empty = bh_fdr({});
    CHECK(empty.adjusted.empty());
    CHECK(empty.significant_at.empty());

    CHECK_THROWS_AS(bh_fdr({0.5, 1.2}), Error);
    CHECK_THROWS_AS(bh_fdr({-0.1}), Error);
}

TEST_CASE("bh correction agrees with a brute-force oracle on random vectors") {
    std::mt19937 gen(99);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (int rep = 0; rep < 200; ++rep) {
        std::vector<double> p(1 + rep % 12);
        for (auto& x : p) x = unif(gen);
        auto r = bh_fdr(p);
        auto oracle = bh_bruteforce(p);
        REQUIRE(r.adjusted.size() == oracle.size());
        for (size_t i = 0; i < p.size(); ++i) {
            CHECK(r.adjusted[i] == doctest::Approx(oracle[i]).epsilon(1e-12));
            CHECK(r.adjusted[i] >= p[i]);
            CHECK(r.adjusted[i] <= 1.0);
        }
    }
}

TEST_CASE("bh correction is permutation-equivariant") {
    std::vector<double> p = {0.4, 0.01, 0.2, 0.05, 0.8};
    auto base = bh_fdr(p);
    std::vector<double> perm = {0.8, 0.05, 0.01, 0.4, 0.2};
    auto r = bh_fdr(perm);
    CHECK(r.adjusted[2] == doctest::Approx(base.adjusted[1]).epsilon(1e-12));
    CHECK(r.adjusted[0] == doctest::Approx(base.adjusted[4]).epsilon(1e-12));
    CHECK(r.adjusted[3] == doctest::Approx(base.adjusted[0]).epsilon(1e-12));
}
