#pragma once

#include "mrsae/data.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace mrsae {

/// Directed confound edge between covariate graph nodes.
struct ConfoundEdge {
    std::string source;
    std::string target;
    double strength = 0.0;
};

/// A factor planted into the embeddings. `name` is the graph node whose latent
/// value the factor carries; `loading` is its d-dimensional dictionary direction.
struct PlantedFactor {
    std::string name;
    std::vector<double> loading;
    /// Multiplier on the factor's value; nuisance factors in real embeddings tend to
    /// carry far more variance than clinical ones.
    double scale = 1.0;
};

/// Ground-truth cohort recipe.
///
/// Graph nodes are the fixed covariates (age, sex, apoe4, diagnosis, converter),
/// `cm_<name>` comorbidities, the named secondary columns, and any other name,
/// which is treated as a latent variable (e.g. `disease`, `scanner`). Every node
/// carries a standard-normal latent value
///     L = sum_parents(strength * L_parent) + sqrt(1 - sum strength^2) * noise
/// and observed columns threshold or rescale it.
struct SyntheticSpec {
    std::size_t n_subjects = 700;
    std::size_t min_scans = 1;
    std::size_t max_scans = 5;
    std::size_t d = 64;
    std::vector<PlantedFactor> factors;
    std::vector<ConfoundEdge> confound_graph;
    std::vector<std::string> comorbidities;
    std::vector<std::string> secondary;
    double noise_sigma = 0.01;
    std::uint64_t seed = 0;

    std::size_t n_factors() const { return factors.size(); }
    /// Throws ValidationError (cycles, dependent loadings, bad strengths).
    void validate() const;
};

struct GroundTruth {
    /// N x n_factors; the value each planted factor takes on each scan.
    Matrix factor_values;
    std::vector<std::string> factor_names;
    /// Covariate each factor stands for (e.g. disease -> diagnosis).
    std::vector<std::string> factor_meaning;
    /// d x n_factors, columns are the planted loadings.
    ColMatrix true_dictionary;

    std::size_t factor_index(const std::string& name) const;
};

struct SyntheticCohort {
    EmbeddingMatrix embeddings;
    CovariateTable covariates;
    GroundTruth truth;
};

/// Pure function of `spec` (seed included).
SyntheticCohort generate_synthetic_cohort(const SyntheticSpec& spec);

/// JSON with factor names, meanings and the d x n_factors dictionary, plus a CSV of
/// per-scan factor values (`sample_id,<factor>...`).
void write_ground_truth(const SyntheticCohort& cohort, const std::filesystem::path& json_path,
                        const std::filesystem::path& values_csv_path, const std::string& provenance_json = {});

/// Nonnegative, mostly-near-zero value a factor contributes for latent value `latent`.
double factor_activation(double latent);

/// `count` orthonormal d-vectors drawn from `seed`.
std::vector<std::vector<double>> random_orthonormal_loadings(std::size_t d, std::size_t count, std::uint64_t seed);

/// The default planted cohort: aging (brain age, driven by chronological age at 0.8),
/// disease, sex, APOE4, three comorbidities and a scanner nuisance factor (rank 8), an
/// age->diagnosis confound of strength 0.8, and the converter label driven by the
/// disease factor. Loadings come from `loading_seed`,
/// so two specs differing only in `seed` share one ground truth.
SyntheticSpec reference_synthetic_spec(std::size_t n_subjects = 700, std::size_t d = 64, std::uint64_t seed = 1,
                                       std::uint64_t loading_seed = 7);

/// Parses `a>b:0.8,c>d:0.5`.
std::vector<ConfoundEdge> parse_confound_edges(const std::string& text);
std::string format_confound_edges(const std::vector<ConfoundEdge>& edges);

} // namespace mrsae
