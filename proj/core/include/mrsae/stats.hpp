#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace mrsae::stats {

/// 1-based ranks; tied values share the average of their positions.
std::vector<double> average_ranks(std::span<const double> x);

/// Pearson correlation; nullopt when either input has zero variance.
std::optional<double> pearson(std::span<const double> x, std::span<const double> y);

/// Pearson correlation of average ranks. Requires N >= 3; nullopt on zero variance.
std::optional<double> spearman(std::span<const double> x, std::span<const double> y);

/// First-order partial correlation of j and c given a, from the three pairwise
/// correlations. nullopt when 1 - r_ja^2 or 1 - r_ca^2 falls below 1e-12.
std::optional<double> partial_correlation(double r_jc, double r_ja, double r_ca);

/// Spearman correlation of `feature` and `variable` with age partialled out of both.
/// Requires N >= 4; nullopt for zero-variance inputs or a degenerate denominator.
std::optional<double> partial_spearman_age(std::span<const double> feature, std::span<const double> variable,
                                           std::span<const double> age);

struct PValue {
    double p = 1.0;
    /// Set when |rho| == 1 and the statistic is unbounded (p reported as 0).
    bool saturated = false;
};

/// Two-sided p for a correlation with `n_controls` variables partialled out:
/// t = rho * sqrt(df / (1 - rho^2)), df = n - 2 - n_controls, Student-t reference.
PValue correlation_pvalue(double rho, std::size_t n, std::size_t n_controls);

/// Partial correlation with one control (df = n - 3).
inline PValue pvalue_partial(double rho, std::size_t n) { return correlation_pvalue(rho, n, 1); }

/// Two-sided tail probability P(|T| >= |t|) for Student-t with `df` degrees of freedom.
double student_t_two_sided(double t, double df);

struct FdrResult {
    std::vector<double> adjusted;
    std::vector<bool> rejected;
    std::size_t n_rejected = 0;
};

/// Benjamini-Hochberg step-up. Throws ValidationError for p outside [0, 1].
FdrResult bh_fdr(std::span<const double> pvals, double alpha);

double mean(std::span<const double> x);
double stddev(std::span<const double> x); // sample (n - 1) standard deviation

} // namespace mrsae::stats
