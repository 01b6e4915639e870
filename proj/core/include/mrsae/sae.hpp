#pragma once

#include "mrsae/common.hpp"
#include "mrsae/manifold.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mrsae {

enum class ActivationKind { topk, relu };

struct ActivationSpec {
    ActivationKind kind = ActivationKind::topk;
    /// Number of retained entries for TopK; ignored for ReLU.
    std::size_t k = 16;
};

std::string to_string(ActivationKind kind);
ActivationKind parse_activation(const std::string& name);

/// Encoder/decoder parameters. W_dec columns are kept at unit norm.
struct SaeParams {
    Matrix W_enc;    // d_sae x d
    Vector b_enc;    // d_sae
    ColMatrix W_dec; // d x d_sae
    Vector b_pre;    // d

    std::size_t d() const { return static_cast<std::size_t>(W_dec.rows()); }
    std::size_t d_sae() const { return static_cast<std::size_t>(W_dec.cols()); }

    void validate() const;
    bool operator==(const SaeParams& o) const;
};

struct TrainConfig {
    ActivationSpec activation;
    std::size_t expansion = 2;
    /// Weight of the manifold penalty; 0 is the plain SAE.
    double lambda = 0.1;
    std::size_t k_nn = 15;
    std::size_t epochs = 100;
    double lr = 1e-3;
    std::size_t batch_size = 256;
    std::uint64_t seed = 0;
    /// Fraction of subjects held out for explained variance.
    double holdout_fraction = 0.1;

    void validate(std::size_t d) const;
};

struct LossBreakdown {
    double reconstruction = 0.0;
    /// Mean over the B*k batch edges of w * ||a_i - a_j||^2 (unweighted by lambda).
    double manifold = 0.0;
    double total = 0.0;
};

struct TrainedSae {
    SaeParams params;
    TrainConfig config;
    std::vector<LossBreakdown> loss_history;
    double explained_variance = 0.0;
    std::vector<bool> alive_mask;
    std::size_t train_rows = 0;
    std::size_t holdout_rows = 0;

    std::size_t alive_count() const;
    /// "standard SAE" when lambda == 0, otherwise "manifold-regularized SAE".
    std::string variant_tag() const;
};

// --- Forward pieces -------------------------------------------------------

/// a = W_enc (h - b_pre) + b_enc
Vector encode_pre(const SaeParams& params, const Vector& h);
/// Row-wise encode_pre over a batch.
Matrix encode_pre_batch(const SaeParams& params, const Matrix& H);

/// Keeps ReLU(a_j) for the k largest entries (ties -> smaller index), zero elsewhere.
Vector topk_activate(const Vector& a, std::size_t k);
Vector relu_activate(const Vector& a);
Vector activate(const Vector& a, const ActivationSpec& spec);
Matrix activate_batch(const Matrix& A, const ActivationSpec& spec);

/// Indices chosen by TopK for `a`, in selection order.
std::vector<std::size_t> topk_support(const Vector& a, std::size_t k);

/// h_hat = W_dec z + b_pre
Vector decode(const SaeParams& params, const Vector& z);

/// Post-activation codes for every row.
Matrix encode(const SaeParams& params, const ActivationSpec& spec, const Matrix& H);
Matrix reconstruct(const SaeParams& params, const ActivationSpec& spec, const Matrix& H);

struct PenaltyResult {
    double value = 0.0;
    /// Set when no edges were supplied; value is then 0.
    bool empty = false;
};

/// (1/E) sum_e w_e ||pre_batch[src] - pre_neighbors[nbr]||^2 over E = edges.size().
PenaltyResult manifold_penalty(const Matrix& pre_batch, const Matrix& pre_neighbors, std::span<const BatchEdge> edges);

// --- Gradients -------------------------------------------------------------

struct Gradients {
    Matrix W_enc;
    Vector b_enc;
    ColMatrix W_dec;
    Vector b_pre;

    static Gradients zeros_like(const SaeParams& p);
};

/// Neighbor rows and B*k edges for the manifold term of one batch.
struct ManifoldTerm {
    Matrix neighbors;
    std::vector<BatchEdge> edges;
};

struct LossAndGradients {
    LossBreakdown loss;
    Gradients grads;
};

/// Loss = mean_b ||h_b - h_hat_b||^2 + lambda * manifold_penalty(pre-activations).
/// TopK acts as a fixed mask for differentiation. The manifold term differentiates
/// through both batch and neighbor pre-activations. With lambda == 0 (or no manifold
/// term) the manifold code path is skipped entirely.
LossAndGradients loss_and_gradients(const SaeParams& params, const Matrix& batch, const ManifoldTerm* manifold,
                                    double lambda, const ActivationSpec& activation);

// --- Optimizer -------------------------------------------------------------

struct AdamState {
    Gradients m;
    Gradients v;
    std::uint64_t t = 0;

    static AdamState for_params(const SaeParams& p);
};

struct AdamHyper {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Removes the radial part of each decoder-column gradient, applies a bias-corrected
/// Adam update to every block, then renormalizes decoder columns to unit length.
void adam_step(AdamState& state, SaeParams& params, Gradients grads, double lr, const AdamHyper& hyper = {});

/// Tied initialization: unit-sphere decoder columns, W_enc = W_dec^T, b_enc = 0,
/// b_pre = column mean of `H`.
SaeParams init_params(const Matrix& H, std::size_t d_sae, std::uint64_t seed);

// --- Training ----------------------------------------------------------------

/// Trains on `train` (the graph must index its rows). Explained variance is measured
/// on `holdout` when given and non-empty, otherwise on `train`.
/// Throws NumericalError on a non-finite loss, naming the epoch and batch.
TrainedSae train(const Matrix& train, const ManifoldGraph& graph, const TrainConfig& config,
                 const Matrix* holdout = nullptr);

/// 1 - ||H - H_hat||_F^2 / ||H - mean(H)||_F^2
double explained_variance(const SaeParams& params, const ActivationSpec& spec, const Matrix& H);

// --- Feature statistics --------------------------------------------------------

/// Features with a strictly positive activation on at least one row, ascending.
std::vector<std::size_t> alive_census(const SaeParams& params, const ActivationSpec& spec, const Matrix& H);
std::vector<std::size_t> alive_census(const TrainedSae& model, const Matrix& H);

struct FeatureActivity {
    /// Fraction of rows with z_j > 0.
    double frequency = 0.0;
    /// Mean of z_j over rows where it is positive; 0 for dead features.
    double mean_magnitude = 0.0;
    bool dead = true;
};

std::vector<FeatureActivity> activation_stats(const Matrix& Z);
std::vector<FeatureActivity> activation_stats(const TrainedSae& model, const Matrix& H);

struct RedundancyResult {
    double mean_abs_r = 0.0;
    std::size_t pairs = 0;
    /// Pairs where a feature had zero variance (counted as |r| = 0).
    std::size_t degenerate_pairs = 0;
};

/// Mean |Pearson r| over unordered pairs of alive-feature activation columns.
RedundancyResult redundancy(const Matrix& Z, std::span<const std::size_t> alive);
RedundancyResult redundancy(const TrainedSae& model, const Matrix& H);

} // namespace mrsae
