#include "mrsae/sae.hpp"
#include "mrsae/rng.hpp"
#include "mrsae/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mrsae {

std::string to_string(ActivationKind kind) {
    return kind == ActivationKind::topk ? "topk" : "relu";
}

ActivationKind parse_activation(const std::string& name) {
    if (name == "topk" || name == "TopK")
        return ActivationKind::topk;
    if (name == "relu" || name == "ReLU")
        return ActivationKind::relu;
    throw ValidationError("unknown activation '" + name + "' (expected topk or relu)");
}

void SaeParams::validate() const {
    const auto dd = W_dec.rows(), m = W_dec.cols();
    if (W_enc.rows() != m || W_enc.cols() != dd || b_enc.size() != m || b_pre.size() != dd)
        throw ValidationError("SAE parameter blocks have inconsistent shapes");
    if (!W_enc.allFinite() || !b_enc.allFinite() || !W_dec.allFinite() || !b_pre.allFinite())
        throw NumericalError("SAE parameters contain non-finite values");
    for (Eigen::Index j = 0; j < m; ++j)
        if (std::abs(W_dec.col(j).norm() - 1.0) > 1e-6)
            throw ValidationError("decoder column " + std::to_string(j) + " is not unit norm");
}

bool SaeParams::operator==(const SaeParams& o) const {
    return W_enc.rows() == o.W_enc.rows() && W_enc.cols() == o.W_enc.cols() && W_dec.cols() == o.W_dec.cols() &&
           W_enc == o.W_enc && b_enc == o.b_enc && W_dec == o.W_dec && b_pre == o.b_pre;
}

void TrainConfig::validate(std::size_t d) const {
    const auto d_sae = d * expansion;
    if (expansion < 1)
        throw ValidationError("expansion factor must be >= 1");
    if (activation.kind == ActivationKind::topk && (activation.k < 1 || activation.k > d_sae))
        throw ValidationError("TopK k must satisfy 1 <= k <= d_sae (k=" + std::to_string(activation.k) +
                              ", d_sae=" + std::to_string(d_sae) + ")");
    if (!(lambda >= 0.0) || !std::isfinite(lambda))
        throw ValidationError("lambda must be finite and >= 0");
    if (epochs < 1 || batch_size < 1)
        throw ValidationError("epochs and batch size must be positive");
    if (!(lr > 0.0))
        throw ValidationError("learning rate must be positive");
    if (holdout_fraction < 0.0 || holdout_fraction >= 1.0)
        throw ValidationError("holdout fraction must lie in [0, 1)");
    if (lambda > 0.0 && k_nn < 1)
        throw ValidationError("k_nn must be >= 1 when lambda > 0");
}

std::size_t TrainedSae::alive_count() const {
    return static_cast<std::size_t>(std::count(alive_mask.begin(), alive_mask.end(), true));
}

std::string TrainedSae::variant_tag() const {
    return config.lambda == 0.0 ? "standard SAE" : "manifold-regularized SAE";
}

// ---------------------------------------------------------------------------

Vector encode_pre(const SaeParams& p, const Vector& h) {
    if (static_cast<std::size_t>(h.size()) != p.d())
        throw ValidationError("encode: input has dimension " + std::to_string(h.size()) + ", expected " +
                              std::to_string(p.d()));
    return p.W_enc * (h - p.b_pre) + p.b_enc;
}

Matrix encode_pre_batch(const SaeParams& p, const Matrix& H) {
    if (static_cast<std::size_t>(H.cols()) != p.d())
        throw ValidationError("encode: input has dimension " + std::to_string(H.cols()) + ", expected " +
                              std::to_string(p.d()));
    Matrix A = (H.rowwise() - p.b_pre.transpose()) * p.W_enc.transpose();
    A.rowwise() += p.b_enc.transpose();
    return A;
}

std::vector<std::size_t> topk_support(const Vector& a, std::size_t k) {
    const auto n = static_cast<std::size_t>(a.size());
    k = std::min(k, n);
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                      [&](std::size_t x, std::size_t y) { return a[x] > a[y] || (a[x] == a[y] && x < y); });
    idx.resize(k);
    return idx;
}

Vector topk_activate(const Vector& a, std::size_t k) {
    Vector z = Vector::Zero(a.size());
    for (auto j : topk_support(a, k))
        z[j] = std::max(a[j], 0.0);
    return z;
}

Vector relu_activate(const Vector& a) {
    return a.cwiseMax(0.0);
}

Vector activate(const Vector& a, const ActivationSpec& spec) {
    return spec.kind == ActivationKind::topk ? topk_activate(a, spec.k) : relu_activate(a);
}

Matrix activate_batch(const Matrix& A, const ActivationSpec& spec) {
    if (spec.kind == ActivationKind::relu)
        return A.cwiseMax(0.0);
    Matrix Z = Matrix::Zero(A.rows(), A.cols());
    for (Eigen::Index i = 0; i < A.rows(); ++i)
        Z.row(i) = topk_activate(A.row(i).transpose(), spec.k).transpose();
    return Z;
}

Vector decode(const SaeParams& p, const Vector& z) {
    if (static_cast<std::size_t>(z.size()) != p.d_sae())
        throw ValidationError("decode: code has dimension " + std::to_string(z.size()) + ", expected " +
                              std::to_string(p.d_sae()));
    return p.W_dec * z + p.b_pre;
}

Matrix encode(const SaeParams& p, const ActivationSpec& spec, const Matrix& H) {
    return activate_batch(encode_pre_batch(p, H), spec);
}

Matrix reconstruct(const SaeParams& p, const ActivationSpec& spec, const Matrix& H) {
    Matrix R = encode(p, spec, H) * p.W_dec.transpose();
    R.rowwise() += p.b_pre.transpose();
    return R;
}

PenaltyResult manifold_penalty(const Matrix& pre_batch, const Matrix& pre_neighbors, std::span<const BatchEdge> edges) {
    if (edges.empty())
        return {0.0, true};
    double total = 0.0;
    for (const auto& e : edges) {
        if (e.source >= pre_batch.rows() || e.neighbor >= pre_neighbors.rows())
            throw ValidationError("manifold edge references a missing row");
        total += e.weight * (pre_batch.row(e.source) - pre_neighbors.row(e.neighbor)).squaredNorm();
    }
    return {total / static_cast<double>(edges.size()), false};
}

// ---------------------------------------------------------------------------

Gradients Gradients::zeros_like(const SaeParams& p) {
    return {Matrix::Zero(p.W_enc.rows(), p.W_enc.cols()), Vector::Zero(p.b_enc.size()),
            ColMatrix::Zero(p.W_dec.rows(), p.W_dec.cols()), Vector::Zero(p.b_pre.size())};
}

LossAndGradients loss_and_gradients(const SaeParams& p, const Matrix& batch, const ManifoldTerm* manifold,
                                    double lambda, const ActivationSpec& activation) {
    if (batch.rows() == 0)
        throw ValidationError("loss_and_gradients: empty batch");
    if (static_cast<std::size_t>(batch.cols()) != p.d())
        throw ValidationError("loss_and_gradients: batch dimension mismatch");
    const double B = static_cast<double>(batch.rows());

    const Matrix X = batch.rowwise() - p.b_pre.transpose();
    Matrix A = X * p.W_enc.transpose();
    A.rowwise() += p.b_enc.transpose();

    // Selection mask doubles as the activation derivative.
    Matrix Z = Matrix::Zero(A.rows(), A.cols());
    Matrix mask = Matrix::Zero(A.rows(), A.cols());
    for (Eigen::Index i = 0; i < A.rows(); ++i) {
        if (activation.kind == ActivationKind::topk) {
            for (auto j : topk_support(A.row(i).transpose(), activation.k))
                if (A(i, j) > 0.0) {
                    Z(i, j) = A(i, j);
                    mask(i, j) = 1.0;
                }
        } else {
            for (Eigen::Index j = 0; j < A.cols(); ++j)
                if (A(i, j) > 0.0) {
                    Z(i, j) = A(i, j);
                    mask(i, j) = 1.0;
                }
        }
    }

    Matrix R = Z * p.W_dec.transpose();
    R.rowwise() += p.b_pre.transpose();
    R -= batch;

    LossAndGradients out;
    out.loss.reconstruction = R.squaredNorm() / B;

    const Matrix G = (2.0 / B) * R;
    auto& g = out.grads;
    g.W_dec = G.transpose() * Z;
    g.b_pre = G.colwise().sum().transpose();
    Matrix dA = (G * p.W_dec).cwiseProduct(mask);

    Vector sum_dA;
    if (lambda > 0.0 && manifold != nullptr && !manifold->edges.empty()) {
        const auto& term = *manifold;
        if (term.neighbors.cols() != batch.cols())
            throw ValidationError("loss_and_gradients: neighbor dimension mismatch");
        const Matrix Xn = term.neighbors.rowwise() - p.b_pre.transpose();
        Matrix An = Xn * p.W_enc.transpose();
        An.rowwise() += p.b_enc.transpose();
        Matrix dAn = Matrix::Zero(An.rows(), An.cols());

        const double E = static_cast<double>(term.edges.size());
        const double c = 2.0 * lambda / E;
        double penalty = 0.0;
        Eigen::RowVectorXd diff(A.cols());
        for (const auto& e : term.edges) {
            if (e.source >= A.rows() || e.neighbor >= An.rows())
                throw ValidationError("manifold edge references a missing row");
            diff = A.row(e.source) - An.row(e.neighbor);
            penalty += e.weight * diff.squaredNorm();
            dA.row(e.source) += (c * e.weight) * diff;
            dAn.row(e.neighbor) -= (c * e.weight) * diff;
        }
        out.loss.manifold = penalty / E;
        g.W_enc = dA.transpose() * X + dAn.transpose() * Xn;
        sum_dA = dA.colwise().sum().transpose() + dAn.colwise().sum().transpose();
    } else {
        g.W_enc = dA.transpose() * X;
        sum_dA = dA.colwise().sum().transpose();
    }
    g.b_enc = sum_dA;
    g.b_pre -= p.W_enc.transpose() * sum_dA;
    out.loss.total = out.loss.reconstruction + lambda * out.loss.manifold;
    return out;
}

// ---------------------------------------------------------------------------

AdamState AdamState::for_params(const SaeParams& p) {
    return {Gradients::zeros_like(p), Gradients::zeros_like(p), 0};
}

namespace {

template <typename Block>
void adam_block(Block& param, Block& m, Block& v, const Block& g, double lr, const AdamHyper& h, double bc1, double bc2) {
    m = h.beta1 * m + (1.0 - h.beta1) * g;
    v = h.beta2 * v + (1.0 - h.beta2) * g.cwiseProduct(g);
    param.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + h.eps);
}

} // namespace

void adam_step(AdamState& s, SaeParams& p, Gradients g, double lr, const AdamHyper& h) {
    for (Eigen::Index j = 0; j < p.W_dec.cols(); ++j)
        g.W_dec.col(j) -= p.W_dec.col(j).dot(g.W_dec.col(j)) * p.W_dec.col(j);

    ++s.t;
    const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(s.t));
    const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(s.t));
    adam_block(p.W_enc, s.m.W_enc, s.v.W_enc, g.W_enc, lr, h, bc1, bc2);
    adam_block(p.b_enc, s.m.b_enc, s.v.b_enc, g.b_enc, lr, h, bc1, bc2);
    adam_block(p.W_dec, s.m.W_dec, s.v.W_dec, g.W_dec, lr, h, bc1, bc2);
    adam_block(p.b_pre, s.m.b_pre, s.v.b_pre, g.b_pre, lr, h, bc1, bc2);

    for (Eigen::Index j = 0; j < p.W_dec.cols(); ++j) {
        const double norm = p.W_dec.col(j).norm();
        if (norm > 0.0)
            p.W_dec.col(j) /= norm;
    }
}

SaeParams init_params(const Matrix& H, std::size_t d_sae, std::uint64_t seed) {
    const auto d = H.cols();
    Rng rng(seed);
    SaeParams p;
    p.W_dec.resize(d, static_cast<Eigen::Index>(d_sae));
    for (Eigen::Index j = 0; j < p.W_dec.cols(); ++j) {
        for (Eigen::Index i = 0; i < d; ++i)
            p.W_dec(i, j) = rng.normal();
        p.W_dec.col(j).normalize();
    }
    p.W_enc = p.W_dec.transpose();
    p.b_enc = Vector::Zero(static_cast<Eigen::Index>(d_sae));
    p.b_pre = H.colwise().mean().transpose();
    return p;
}

// ---------------------------------------------------------------------------

namespace {

Matrix gather_rows(const Matrix& H, std::span<const std::size_t> rows) {
    Matrix out(static_cast<Eigen::Index>(rows.size()), H.cols());
    for (std::size_t i = 0; i < rows.size(); ++i)
        out.row(static_cast<Eigen::Index>(i)) = H.row(static_cast<Eigen::Index>(rows[i]));
    return out;
}

Matrix gather_rows(const Matrix& H, std::span<const std::uint32_t> rows) {
    Matrix out(static_cast<Eigen::Index>(rows.size()), H.cols());
    for (std::size_t i = 0; i < rows.size(); ++i)
        out.row(static_cast<Eigen::Index>(i)) = H.row(static_cast<Eigen::Index>(rows[i]));
    return out;
}

} // namespace

double explained_variance(const SaeParams& params, const ActivationSpec& spec, const Matrix& H) {
    const Matrix R = reconstruct(params, spec, H);
    const double err = (H - R).squaredNorm();
    const double total = (H.rowwise() - H.colwise().mean()).squaredNorm();
    if (total == 0.0)
        return err == 0.0 ? 1.0 : 0.0;
    return 1.0 - err / total;
}

TrainedSae train(const Matrix& data, const ManifoldGraph& graph, const TrainConfig& config, const Matrix* holdout) {
    const auto n = static_cast<std::size_t>(data.rows());
    const auto d = static_cast<std::size_t>(data.cols());
    config.validate(d);
    if (n < 2)
        throw ValidationError("training needs at least 2 rows");
    if (config.lambda > 0.0 && graph.n_nodes() != n)
        throw ValidationError("manifold graph has " + std::to_string(graph.n_nodes()) + " nodes but training set has " +
                              std::to_string(n) + " rows");

    TrainedSae model;
    model.config = config;
    model.params = init_params(data, d * config.expansion, derive_seed(config.seed, "sae/init"));
    Rng shuffle_rng(derive_seed(config.seed, "sae/shuffle"));
    AdamState state = AdamState::for_params(model.params);

    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    ManifoldTerm term;

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        shuffle_rng.shuffle(perm);
        LossBreakdown sum;
        std::size_t batch_no = 0;
        for (std::size_t start = 0; start < n; start += config.batch_size, ++batch_no) {
            const auto end = std::min(n, start + config.batch_size);
            const std::span<const std::size_t> idx(perm.data() + start, end - start);
            const Matrix batch = gather_rows(data, idx);

            const ManifoldTerm* term_ptr = nullptr;
            if (config.lambda > 0.0) {
                auto nb = neighbor_batch(graph, idx);
                term.neighbors = gather_rows(data, std::span<const std::uint32_t>(nb.neighbors));
                term.edges = std::move(nb.edges);
                term_ptr = &term;
            }
            auto lg = loss_and_gradients(model.params, batch, term_ptr, config.lambda, config.activation);
            if (!std::isfinite(lg.loss.total))
                throw NumericalError("training diverged: non-finite loss at epoch " + std::to_string(epoch + 1) +
                                     ", batch " + std::to_string(batch_no + 1));
            const double w = static_cast<double>(end - start);
            sum.reconstruction += w * lg.loss.reconstruction;
            sum.manifold += w * lg.loss.manifold;
            sum.total += w * lg.loss.total;
            adam_step(state, model.params, std::move(lg.grads), config.lr);
        }
        const double nn = static_cast<double>(n);
        model.loss_history.push_back({sum.reconstruction / nn, sum.manifold / nn, sum.total / nn});
    }

    model.train_rows = n;
    if (holdout != nullptr && holdout->rows() > 0) {
        model.holdout_rows = static_cast<std::size_t>(holdout->rows());
        model.explained_variance = explained_variance(model.params, config.activation, *holdout);
    } else {
        model.explained_variance = explained_variance(model.params, config.activation, data);
    }
    model.alive_mask.assign(model.params.d_sae(), false);
    for (auto j : alive_census(model.params, config.activation, data))
        model.alive_mask[j] = true;
    return model;
}

// ---------------------------------------------------------------------------

std::vector<std::size_t> alive_census(const SaeParams& params, const ActivationSpec& spec, const Matrix& H) {
    const Matrix Z = encode(params, spec, H);
    std::vector<std::size_t> alive;
    for (Eigen::Index j = 0; j < Z.cols(); ++j)
        if ((Z.col(j).array() > 0.0).any())
            alive.push_back(static_cast<std::size_t>(j));
    return alive;
}

std::vector<std::size_t> alive_census(const TrainedSae& model, const Matrix& H) {
    return alive_census(model.params, model.config.activation, H);
}

std::vector<FeatureActivity> activation_stats(const Matrix& Z) {
    std::vector<FeatureActivity> out(static_cast<std::size_t>(Z.cols()));
    const double n = static_cast<double>(Z.rows());
    for (Eigen::Index j = 0; j < Z.cols(); ++j) {
        std::size_t active = 0;
        double total = 0.0;
        for (Eigen::Index i = 0; i < Z.rows(); ++i)
            if (Z(i, j) > 0.0) {
                ++active;
                total += Z(i, j);
            }
        auto& s = out[static_cast<std::size_t>(j)];
        s.dead = active == 0;
        s.frequency = n > 0 ? static_cast<double>(active) / n : 0.0;
        s.mean_magnitude = active ? total / static_cast<double>(active) : 0.0;
    }
    return out;
}

std::vector<FeatureActivity> activation_stats(const TrainedSae& model, const Matrix& H) {
    return activation_stats(encode(model.params, model.config.activation, H));
}

RedundancyResult redundancy(const Matrix& Z, std::span<const std::size_t> alive) {
    if (alive.size() < 2)
        throw ValidationError("redundancy needs at least 2 alive features, have " + std::to_string(alive.size()));
    std::vector<std::vector<double>> cols;
    cols.reserve(alive.size());
    for (auto j : alive) {
        cols.emplace_back(static_cast<std::size_t>(Z.rows()));
        for (Eigen::Index i = 0; i < Z.rows(); ++i)
            cols.back()[static_cast<std::size_t>(i)] = Z(i, static_cast<Eigen::Index>(j));
    }
    RedundancyResult r;
    double sum = 0.0;
    for (std::size_t a = 0; a < cols.size(); ++a)
        for (std::size_t b = a + 1; b < cols.size(); ++b) {
            ++r.pairs;
            const auto v = stats::pearson(cols[a], cols[b]);
            if (!v)
                ++r.degenerate_pairs;
            else
                sum += std::abs(*v);
        }
    r.mean_abs_r = sum / static_cast<double>(r.pairs);
    return r;
}

RedundancyResult redundancy(const TrainedSae& model, const Matrix& H) {
    const Matrix Z = encode(model.params, model.config.activation, H);
    return redundancy(Z, alive_census(model, H));
}

} // namespace mrsae
