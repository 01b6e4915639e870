#include "mrsae/common.hpp"
#include "mrsae/rng.hpp"
#include "mrsae/stats.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace mrsae;

namespace {

// Rank of x[i] = (count strictly below) + (count equal + 1) / 2.
std::vector<double> brute_ranks(const std::vector<double>& x) {
    std::vector<double> r(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        double below = 0, equal = 0;
        for (double v : x) {
            below += v < x[i];
            equal += v == x[i];
        }
        r[i] = below + (equal + 1) / 2;
    }
    return r;
}

double loop_pearson(const std::vector<double>& x, const std::vector<double>& y) {
    const double n = static_cast<double>(x.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i] / n;
        my += y[i] / n;
    }
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    return sxy / std::sqrt(sxx * syy);
}

/// Residuals of y after least squares on [1, x].
std::vector<double> residualize(const std::vector<double>& y, const std::vector<double>& x) {
    const double n = static_cast<double>(x.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i] / n;
        my += y[i] / n;
    }
    double sxy = 0, sxx = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
    }
    const double beta = sxy / sxx;
    std::vector<double> r(y.size());
    for (std::size_t i = 0; i < y.size(); ++i)
        r[i] = (y[i] - my) - beta * (x[i] - mx);
    return r;
}

double residualization_oracle(const std::vector<double>& f, const std::vector<double>& v,
                              const std::vector<double>& age) {
    const auto ra = brute_ranks(age);
    return loop_pearson(residualize(brute_ranks(f), ra), residualize(brute_ranks(v), ra));
}

/// Two-sided Student-t tail by Simpson integration of the density over [0, |t|].
double quadrature_t_tail(double t, double df) {
    const double c = std::exp(std::lgamma((df + 1) / 2) - std::lgamma(df / 2)) / std::sqrt(df * M_PI);
    auto f = [&](double x) { return c * std::pow(1 + x * x / df, -(df + 1) / 2); };
    const int n = 20000;
    const double h = std::abs(t) / n;
    double s = f(0) + f(std::abs(t));
    for (int i = 1; i < n; ++i)
        s += (i % 2 ? 4 : 2) * f(i * h);
    return 1.0 - 2.0 * s * h / 3.0;
}

std::vector<bool> threshold_scan(const std::vector<double>& p, double alpha) {
    const std::size_t m = p.size();
    std::vector<double> sorted = p;
    std::sort(sorted.begin(), sorted.end());
    double cutoff = -1.0;
    for (std::size_t i = 1; i <= m; ++i)
        if (sorted[i - 1] <= static_cast<double>(i) / static_cast<double>(m) * alpha)
            cutoff = sorted[i - 1];
    std::vector<bool> out(m);
    for (std::size_t j = 0; j < m; ++j)
        out[j] = p[j] <= cutoff;
    return out;
}

std::vector<double> random_vector(Rng& rng, std::size_t n) {
    std::vector<double> v(n);
    for (auto& x : v)
        x = rng.normal();
    return v;
}

} // namespace

TEST(AverageRanks, TiesShareTheMean) {
    const std::vector<double> x{1, 2, 2, 3};
    EXPECT_EQ(stats::average_ranks(x), (std::vector<double>{1, 2.5, 2.5, 4}));
}

TEST(AverageRanks, MatchesBruteForceWithHeavyTies) {
    Rng rng(1);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> x(1 + rng.below(30));
        for (auto& v : x)
            v = static_cast<double>(rng.below(5));
        EXPECT_EQ(stats::average_ranks(x), brute_ranks(x));
    }
}

TEST(Spearman, PerfectMonotoneIsOne) {
    std::vector<double> x(20), y(20);
    for (int i = 0; i < 20; ++i) {
        x[i] = i;
        y[i] = std::exp(0.3 * i);
    }
    EXPECT_NEAR(*stats::spearman(x, y), 1.0, 1e-15);
}

TEST(Spearman, ReversedIsMinusOne) {
    const std::vector<double> x{1, 2, 3}, y{3, 2, 1};
    EXPECT_NEAR(*stats::spearman(x, y), -1.0, 1e-15);
}

TEST(Spearman, TiedExampleMatchesRankOracle) {
    const std::vector<double> x{1, 2, 2, 3}, y{1, 3, 2, 4};
    EXPECT_NEAR(*stats::spearman(x, y), loop_pearson(brute_ranks(x), brute_ranks(y)), 1e-15);
}

TEST(Spearman, ZeroVarianceIsUndefined) {
    const std::vector<double> x{1, 1, 1, 1}, y{1, 2, 3, 4};
    EXPECT_FALSE(stats::spearman(x, y).has_value());
}

TEST(Spearman, TooFewSamplesRejected) {
    const std::vector<double> x{1, 2};
    EXPECT_THROW(stats::spearman(x, x), ValidationError);
}

TEST(PartialCorrelation, ReducesWhenAgeIsUnrelated) {
    EXPECT_DOUBLE_EQ(*stats::partial_correlation(0.37, 0.0, 0.0), 0.37);
}

TEST(PartialCorrelation, NumeratorVanishes) {
    EXPECT_EQ(*stats::partial_correlation(0.6 * 0.5, 0.6, 0.5), 0.0);
}

TEST(PartialCorrelation, DegenerateDenominatorIsUndefined) {
    EXPECT_FALSE(stats::partial_correlation(0.5, 1.0, 0.2).has_value());
}

TEST(PartialSpearman, SharedAgeDriverIsRemoved) {
    Rng rng(2);
    const std::size_t n = 500;
    std::vector<double> age(n), f(n), v(n);
    for (std::size_t i = 0; i < n; ++i) {
        age[i] = 55 + 35 * rng.uniform();
        f[i] = std::exp(age[i] / 20) + rng.normal() * 3;
        v[i] = std::pow(age[i], 3) / 1e5 + rng.normal() * 1.5;
    }
    const double raw = *stats::spearman(f, v);
    const double partial = *stats::partial_spearman_age(f, v, age);
    EXPECT_GT(std::abs(raw), 0.5);
    EXPECT_LT(std::abs(partial), 0.25 * std::abs(raw));
    EXPECT_NEAR(partial, residualization_oracle(f, v, age), 0.02);
}

TEST(PartialSpearman, EqualsResidualizationOnTieFreeData) {
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 4 + rng.below(200);
        const auto age = random_vector(rng, n);
        auto f = random_vector(rng, n), v = random_vector(rng, n);
        for (std::size_t i = 0; i < n; ++i) {
            f[i] += 0.7 * age[i];
            v[i] -= 0.4 * age[i] - 0.3 * f[i];
        }
        const auto rho = stats::partial_spearman_age(f, v, age);
        ASSERT_TRUE(rho.has_value());
        EXPECT_NEAR(*rho, residualization_oracle(f, v, age), 1e-10);
    }
}

TEST(PartialSpearman, SymmetricInFeatureAndVariable) {
    Rng rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        const auto age = random_vector(rng, 60), f = random_vector(rng, 60), v = random_vector(rng, 60);
        EXPECT_EQ(*stats::partial_spearman_age(f, v, age), *stats::partial_spearman_age(v, f, age));
    }
}

TEST(PartialSpearman, AgeDeterminedFeatureIsUndefined) {
    std::vector<double> age{60, 65, 70, 75, 80, 85}, f(6), v{1, 0, 1, 1, 0, 1};
    for (int i = 0; i < 6; ++i)
        f[i] = std::log(age[i]);
    EXPECT_FALSE(stats::partial_spearman_age(f, v, age).has_value());
}

TEST(PValue, ZeroCorrelationIsOne) {
    EXPECT_NEAR(stats::pvalue_partial(0.0, 50).p, 1.0, 1e-14);
}

TEST(PValue, StrictlyDecreasingInMagnitude) {
    double prev = stats::pvalue_partial(0.0, 80).p;
    for (int i = 1; i < 60; ++i) {
        const double p = stats::pvalue_partial(0.015 * i, 80).p;
        EXPECT_LT(p, prev);
        EXPECT_EQ(p, stats::pvalue_partial(-0.015 * i, 80).p);
        prev = p;
    }
}

TEST(PValue, MatchesQuadratureOracle) {
    const double rho = 0.3, n = 100, df = n - 3;
    const double t = rho * std::sqrt(df / (1 - rho * rho));
    EXPECT_NEAR(stats::pvalue_partial(rho, 100).p, quadrature_t_tail(t, df), 1e-6);
    EXPECT_NEAR(stats::student_t_two_sided(2.0, 7.0), quadrature_t_tail(2.0, 7.0), 1e-9);
}

TEST(PValue, UnitCorrelationSaturates) {
    const auto r = stats::pvalue_partial(1.0, 40);
    EXPECT_TRUE(r.saturated);
    EXPECT_EQ(r.p, 0.0);
}

TEST(BhFdr, AllZerosRejected) {
    const std::vector<double> p(7, 0.0);
    EXPECT_EQ(stats::bh_fdr(p, 0.05).n_rejected, 7u);
}

TEST(BhFdr, SingleTest) {
    const std::vector<double> p{0.04};
    const auto r = stats::bh_fdr(p, 0.05);
    EXPECT_TRUE(r.rejected[0]);
    EXPECT_DOUBLE_EQ(r.adjusted[0], 0.04);
}

TEST(BhFdr, WorkedExample) {
    const std::vector<double> p{0.01, 0.02, 0.04, 0.30};
    const auto r = stats::bh_fdr(p, 0.05);
    EXPECT_EQ(r.rejected, (std::vector<bool>{true, true, false, false}));
    EXPECT_EQ(r.rejected, threshold_scan(p, 0.05));
    EXPECT_NEAR(r.adjusted[0], 0.04, 1e-15);
    EXPECT_NEAR(r.adjusted[1], 0.04, 1e-15);
    EXPECT_NEAR(r.adjusted[2], 0.04 * 4 / 3, 1e-15);
    EXPECT_NEAR(r.adjusted[3], 0.30, 1e-15);
}

TEST(BhFdr, RejectsOutOfRange) {
    const std::vector<double> p{0.2, 1.5};
    EXPECT_THROW(stats::bh_fdr(p, 0.05), ValidationError);
}

TEST(BhFdr, MatchesThresholdScanAndStepUpAdjustment) {
    Rng rng(5);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t m = 1 + rng.below(10);
        std::vector<double> p(m);
        for (auto& x : p)
            x = rng.below(4) == 0 ? std::round(rng.uniform() * 20) / 200 : rng.uniform() * 0.1;
        const double alpha = 0.01 + 0.2 * rng.uniform();
        const auto r = stats::bh_fdr(p, alpha);
        EXPECT_EQ(r.rejected, threshold_scan(p, alpha));

        std::vector<std::size_t> order(m);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return p[a] < p[b]; });
        for (std::size_t i = 0; i < m; ++i) {
            double best = 1.0;
            for (std::size_t j = i; j < m; ++j)
                best = std::min(best, static_cast<double>(m) / static_cast<double>(j + 1) * p[order[j]]);
            EXPECT_NEAR(r.adjusted[order[i]], best, 1e-15);
        }
    }
}

TEST(BhFdr, RejectionsGrowWithAlphaAndAdjustedIsMonotone) {
    Rng rng(6);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> p(25);
        for (auto& x : p)
            x = std::pow(rng.uniform(), 3);
        std::vector<bool> prev(p.size(), false);
        for (double alpha : {0.001, 0.01, 0.05, 0.1, 0.25}) {
            const auto r = stats::bh_fdr(p, alpha);
            for (std::size_t i = 0; i < p.size(); ++i)
                if (prev[i])
                    EXPECT_TRUE(r.rejected[i]);
            prev = r.rejected;
        }
        const auto r = stats::bh_fdr(p, 0.05);
        for (std::size_t i = 0; i < p.size(); ++i)
            for (std::size_t j = 0; j < p.size(); ++j)
                if (p[i] < p[j])
                    EXPECT_LE(r.adjusted[i], r.adjusted[j]);
    }
}

TEST(Moments, MeanAndSampleStddev) {
    const std::vector<double> x{2, 4, 4, 4, 5, 5, 7, 9};
    EXPECT_DOUBLE_EQ(stats::mean(x), 5.0);
    EXPECT_NEAR(stats::stddev(x), std::sqrt(32.0 / 7.0), 1e-15);
}
