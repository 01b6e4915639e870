#pragma once

#include "mrsae/common.hpp"

#include <filesystem>
#include <optional>
#include <span>
#include <string>

namespace mrsae {

struct GeometryReport {
    std::size_t n = 0;
    std::size_t d = 0;
    /// Fraction of strictly negative entries.
    double negative_fraction = 0.0;
    /// Between-class over total variance of row norms; nullopt with fewer than two
    /// classes or constant norms.
    std::optional<double> radial_eta2;
    std::size_t n_classes = 0;
    /// (sum of covariance eigenvalues)^2 / sum of squared eigenvalues.
    double effective_dim = 0.0;
};

double negative_fraction(const Matrix& H);
std::optional<double> radial_eta2(const Matrix& H, std::span<const int> classes);
/// Participation ratio tr(C)^2 / ||C||_F^2 of the sample covariance C.
double effective_dim(const Matrix& H);

GeometryReport geometry_report(const Matrix& H, std::span<const int> classes);

void write_geometry_json(const GeometryReport& report, const std::filesystem::path& path,
                         const std::string& provenance_json = {});

} // namespace mrsae
