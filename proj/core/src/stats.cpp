#include "mrsae/stats.hpp"
#include "mrsae/common.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mrsae::stats {

std::vector<double> average_ranks(std::span<const double> x) {
    const auto n = x.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> ranks(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i + 1;
        while (j < n && x[order[j]] == x[order[i]])
            ++j;
        // positions i..j-1 (0-based) share rank mean((i+1)..j)
        const double r = 0.5 * static_cast<double>(i + 1 + j);
        for (auto p = i; p < j; ++p)
            ranks[order[p]] = r;
        i = j;
    }
    return ranks;
}

std::optional<double> pearson(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size())
        throw ValidationError("pearson: length mismatch");
    const auto n = x.size();
    if (n < 2)
        return std::nullopt;
    const double mx = mean(x), my = mean(y);
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dx = x[i] - mx, dy = y[i] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if (sxx == 0.0 || syy == 0.0)
        return std::nullopt;
    if (sxx == syy && sxy == sxx)
        return 1.0;
    if (sxx == syy && sxy == -sxx)
        return -1.0;
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::optional<double> spearman(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size())
        throw ValidationError("spearman: length mismatch");
    if (x.size() < 3)
        throw ValidationError("spearman needs at least 3 observations");
    const auto rx = average_ranks(x);
    const auto ry = average_ranks(y);
    return pearson(rx, ry);
}

std::optional<double> partial_correlation(double r_jc, double r_ja, double r_ca) {
    const double dj = 1.0 - r_ja * r_ja;
    const double dc = 1.0 - r_ca * r_ca;
    if (dj < 1e-12 || dc < 1e-12)
        return std::nullopt;
    return std::clamp((r_jc - r_ja * r_ca) / (std::sqrt(dj) * std::sqrt(dc)), -1.0, 1.0);
}

std::optional<double> partial_spearman_age(std::span<const double> feature, std::span<const double> variable,
                                           std::span<const double> age) {
    if (feature.size() != variable.size() || feature.size() != age.size())
        throw ValidationError("partial_spearman_age: length mismatch");
    if (feature.size() < 4)
        throw ValidationError("partial Spearman needs at least 4 observations");
    const auto rf = average_ranks(feature);
    const auto rv = average_ranks(variable);
    const auto ra = average_ranks(age);
    const auto r_jc = pearson(rf, rv);
    const auto r_ja = pearson(rf, ra);
    const auto r_ca = pearson(rv, ra);
    if (!r_jc || !r_ja || !r_ca)
        return std::nullopt;
    return partial_correlation(*r_jc, *r_ja, *r_ca);
}

double student_t_two_sided(double t, double df) {
    if (!(df > 0.0))
        throw ValidationError("Student-t needs positive degrees of freedom");
    if (std::isinf(t))
        return 0.0;
    boost::math::students_t dist(df);
    return std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t))));
}

PValue correlation_pvalue(double rho, std::size_t n, std::size_t n_controls) {
    if (n < 3 + n_controls)
        throw ValidationError("too few observations for a correlation test");
    if (!std::isfinite(rho) || std::abs(rho) > 1.0)
        throw ValidationError("correlation outside [-1, 1]");
    if (std::abs(rho) == 1.0)
        return {0.0, true};
    const double df = static_cast<double>(n - 2 - n_controls);
    const double t = rho * std::sqrt(df / (1.0 - rho * rho));
    return {student_t_two_sided(t, df), false};
}

FdrResult bh_fdr(std::span<const double> pvals, double alpha) {
    const auto m = pvals.size();
    FdrResult out;
    out.adjusted.assign(m, 1.0);
    out.rejected.assign(m, false);
    if (m == 0)
        return out;
    for (double p : pvals)
        if (!(p >= 0.0 && p <= 1.0))
            throw ValidationError("p-value outside [0, 1]");
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return pvals[a] < pvals[b]; });

    std::size_t cutoff = 0; // number of rejections
    for (std::size_t i = m; i >= 1; --i)
        if (pvals[order[i - 1]] <= static_cast<double>(i) / static_cast<double>(m) * alpha) {
            cutoff = i;
            break;
        }
    double running = 1.0;
    for (std::size_t i = m; i >= 1; --i) {
        const double scaled = static_cast<double>(m) / static_cast<double>(i) * pvals[order[i - 1]];
        running = std::min(running, scaled);
        out.adjusted[order[i - 1]] = std::min(1.0, running);
    }
    for (std::size_t i = 0; i < cutoff; ++i)
        out.rejected[order[i]] = true;
    out.n_rejected = cutoff;
    return out;
}

double mean(std::span<const double> x) {
    if (x.empty())
        return 0.0;
    double s = 0.0;
    for (double v : x)
        s += v;
    return s / static_cast<double>(x.size());
}

double stddev(std::span<const double> x) {
    if (x.size() < 2)
        return 0.0;
    const double m = mean(x);
    double s = 0.0;
    for (double v : x)
        s += (v - m) * (v - m);
    return std::sqrt(s / static_cast<double>(x.size() - 1));
}

} // namespace mrsae::stats
