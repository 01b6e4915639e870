#include "mrsae/evaluate.hpp"
#include "mrsae/csv.hpp"
#include "mrsae/rng.hpp"
#include "mrsae/stats.hpp"

#include <json.hpp>

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <unordered_map>

namespace mrsae {

namespace {

using nlohmann::json;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double x) {
    if (x >= 0.0)
        return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

Matrix take_rows(const Matrix& M, std::span<const std::size_t> rows) {
    Matrix out(static_cast<Eigen::Index>(rows.size()), M.cols());
    for (std::size_t i = 0; i < rows.size(); ++i)
        out.row(static_cast<Eigen::Index>(i)) = M.row(static_cast<Eigen::Index>(rows[i]));
    return out;
}

Matrix take(const Matrix& M, std::span<const std::size_t> rows, std::span<const std::size_t> cols) {
    Matrix out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < cols.size(); ++j)
            out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                M(static_cast<Eigen::Index>(rows[i]), static_cast<Eigen::Index>(cols[j]));
    return out;
}

double sd_or_zero(const std::vector<double>& x) { return x.size() < 2 ? 0.0 : stats::stddev(x); }

double penalized_objective(const Vector& beta, const Matrix& X, std::span<const int> y, double ridge) {
    double ll = 0.0;
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        const double eta = beta(0) + X.row(i).dot(beta.tail(X.cols()));
        ll += (y[static_cast<std::size_t>(i)] ? eta : 0.0) - softplus(eta);
    }
    return ll - 0.5 * ridge * beta.tail(X.cols()).squaredNorm();
}

std::vector<int> converter_labels(const CovariateTable& c) {
    if (!c.has_converter())
        throw ValidationError("conversion labels are required (no converter column)");
    std::vector<int> y;
    y.reserve(c.size());
    for (std::size_t i = 0; i < c.size(); ++i) {
        if (!c.converter[i])
            throw ValidationError("row " + c.sample_id[i] + " has no converter label");
        y.push_back(*c.converter[i]);
    }
    return y;
}

json opt_number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

std::string num(double v) { return std::isfinite(v) ? csv::format_double(v) : std::string{}; }

} // namespace

// --- Fold plan ----------------------------------------------------------------------------

std::size_t FoldPlan::fold_of(const std::string& subject) const {
    const auto it = assignments.find(subject);
    if (it == assignments.end())
        throw ValidationError("subject " + subject + " is not in the fold plan");
    return it->second;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> FoldPlan::split(
    const std::vector<std::string>& subject_ids, std::size_t fold) const {
    std::vector<std::size_t> train, test;
    for (std::size_t r = 0; r < subject_ids.size(); ++r)
        (fold_of(subject_ids[r]) == fold ? test : train).push_back(r);
    return {std::move(train), std::move(test)};
}

FoldPlan stratified_subject_kfold(const std::vector<std::string>& subject_ids, const std::vector<int>& labels,
                                  std::size_t n_folds, std::uint64_t seed, const std::string& label) {
    if (subject_ids.size() != labels.size())
        throw ValidationError("fold plan: subject and label lengths differ");
    if (n_folds < 2)
        throw ValidationError("need at least 2 folds");
    std::map<std::string, int> subject_label;
    for (std::size_t r = 0; r < labels.size(); ++r) {
        if (labels[r] != 0 && labels[r] != 1)
            throw ValidationError("fold label must be binary");
        const auto [it, fresh] = subject_label.emplace(subject_ids[r], labels[r]);
        if (!fresh && it->second != labels[r])
            throw ValidationError("subject " + subject_ids[r] + " has inconsistent " + label + " labels");
    }
    std::vector<std::string> pos, neg;
    for (const auto& [s, y] : subject_label)
        (y ? pos : neg).push_back(s);
    if (pos.size() < n_folds)
        throw ValidationError("fewer positive subjects (" + std::to_string(pos.size()) + ") than folds (" +
                              std::to_string(n_folds) + ")");
    if (neg.size() < n_folds)
        throw ValidationError("fewer negative subjects (" + std::to_string(neg.size()) + ") than folds (" +
                              std::to_string(n_folds) + ")");
    Rng rng(seed);
    rng.shuffle(pos);
    rng.shuffle(neg);
    FoldPlan plan;
    plan.n_folds = n_folds;
    plan.seed = seed;
    plan.label = label;
    for (std::size_t i = 0; i < pos.size(); ++i)
        plan.assignments[pos[i]] = i % n_folds;
    for (std::size_t j = 0; j < neg.size(); ++j)
        plan.assignments[neg[j]] = (pos.size() + j) % n_folds;
    return plan;
}

bool folds_are_disjoint(const FoldPlan& plan, const std::vector<std::string>& subject_ids) {
    for (std::size_t f = 0; f < plan.n_folds; ++f) {
        const auto [train, test] = plan.split(subject_ids, f);
        std::set<std::string> train_subjects;
        for (auto r : train)
            train_subjects.insert(subject_ids[r]);
        for (auto r : test)
            if (train_subjects.count(subject_ids[r]))
                return false;
    }
    return true;
}

// --- Logistic regression --------------------------------------------------------------------

double LogisticModel::probability(const Eigen::Ref<const Eigen::RowVectorXd>& x) const {
    return sigmoid(intercept + x.dot(weights.transpose()));
}

std::vector<double> LogisticModel::predict(const Matrix& X) const {
    if (X.cols() != weights.size())
        throw ValidationError("logistic model expects " + std::to_string(weights.size()) + " columns");
    std::vector<double> out(static_cast<std::size_t>(X.rows()));
    for (Eigen::Index i = 0; i < X.rows(); ++i)
        out[static_cast<std::size_t>(i)] = probability(X.row(i));
    return out;
}

LogisticModel logistic_fit(const Matrix& X, std::span<const int> y, double ridge) {
    const auto n = static_cast<std::size_t>(X.rows());
    const auto p = X.cols();
    if (y.size() != n)
        throw ValidationError("logistic_fit: label length mismatch");
    if (n == 0)
        throw ValidationError("logistic_fit: no rows");
    if (!X.allFinite())
        throw NumericalError("logistic_fit: non-finite design matrix");
    std::size_t n_pos = 0;
    for (int v : y) {
        if (v != 0 && v != 1)
            throw ValidationError("logistic_fit: labels must be 0/1");
        n_pos += static_cast<std::size_t>(v);
    }
    LogisticModel model;
    model.weights = Vector::Zero(p);
    if (n_pos == 0 || n_pos == n) {
        const double rate = std::clamp(static_cast<double>(n_pos) / static_cast<double>(n), 1e-6, 1.0 - 1e-6);
        model.intercept = std::log(rate / (1.0 - rate));
        model.converged = true;
        return model;
    }

    Vector beta = Vector::Zero(p + 1);
    const double base = static_cast<double>(n_pos) / static_cast<double>(n);
    beta(0) = std::log(base / (1.0 - base));
    double obj = penalized_objective(beta, X, y, ridge);
    for (std::size_t it = 0; it < 100; ++it) {
        Vector grad = Vector::Zero(p + 1);
        Eigen::MatrixXd hess = Eigen::MatrixXd::Zero(p + 1, p + 1);
        Eigen::VectorXd xa(p + 1);
        for (Eigen::Index i = 0; i < X.rows(); ++i) {
            xa(0) = 1.0;
            xa.tail(p) = X.row(i).transpose();
            const double mu = sigmoid(xa.dot(beta));
            grad += (static_cast<double>(y[static_cast<std::size_t>(i)]) - mu) * xa;
            hess.selfadjointView<Eigen::Lower>().rankUpdate(xa, mu * (1.0 - mu));
        }
        hess = hess.selfadjointView<Eigen::Lower>();
        grad.tail(p) -= ridge * beta.tail(p);
        hess.diagonal().tail(p).array() += ridge;
        hess.diagonal().array() += 1e-12;
        const Vector step = hess.ldlt().solve(grad);
        if (!step.allFinite())
            throw NumericalError("logistic_fit: singular Newton system");
        double t = 1.0;
        Vector next = beta + step;
        double next_obj = penalized_objective(next, X, y, ridge);
        while (next_obj < obj && t > 1e-10) {
            t *= 0.5;
            next = beta + t * step;
            next_obj = penalized_objective(next, X, y, ridge);
        }
        const double change = (t * step).cwiseAbs().maxCoeff();
        beta = next;
        obj = std::max(obj, next_obj);
        model.iterations = it + 1;
        if (change < 1e-8) {
            model.converged = true;
            break;
        }
    }
    model.intercept = beta(0);
    model.weights = beta.tail(p);

    double min_pos = std::numeric_limits<double>::infinity();
    double max_neg = -std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        const double eta = model.intercept + X.row(i).dot(model.weights.transpose());
        if (y[static_cast<std::size_t>(i)])
            min_pos = std::min(min_pos, eta);
        else
            max_neg = std::max(max_neg, eta);
    }
    model.separated = min_pos > max_neg;
    return model;
}

double log_likelihood(const LogisticModel& model, const Matrix& X, std::span<const int> y) {
    double ll = 0.0;
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        const double eta = model.intercept + X.row(i).dot(model.weights.transpose());
        ll += (y[static_cast<std::size_t>(i)] ? eta : 0.0) - softplus(eta);
    }
    return ll;
}

StandardizedPair standardize_fold(const Matrix& train, const Matrix& test) {
    if (train.rows() == 0)
        throw ValidationError("standardize_fold: empty training matrix");
    if (train.cols() != test.cols())
        throw ValidationError("standardize_fold: column mismatch");
    StandardizedPair out{train, test};
    const double n = static_cast<double>(train.rows());
    for (Eigen::Index j = 0; j < train.cols(); ++j) {
        const double mu = train.col(j).sum() / n;
        double ss = 0.0;
        for (Eigen::Index i = 0; i < train.rows(); ++i)
            ss += (train(i, j) - mu) * (train(i, j) - mu);
        const double sd = train.rows() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
        const bool flat = !(sd > 1e-12 * std::max(1.0, std::abs(mu)));
        out.train.col(j).array() -= mu;
        out.test.col(j).array() -= mu;
        if (!flat) {
            out.train.col(j) /= sd;
            out.test.col(j) /= sd;
        }
    }
    return out;
}

double auc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size())
        throw ValidationError("auc: length mismatch");
    std::size_t n_pos = 0;
    for (int v : labels)
        n_pos += v ? 1 : 0;
    const std::size_t n_neg = labels.size() - n_pos;
    if (n_pos == 0 || n_neg == 0)
        throw ValidationError("auc needs both classes");
    const auto ranks = stats::average_ranks(scores);
    double rank_sum = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i])
            rank_sum += ranks[i];
    const double np = static_cast<double>(n_pos);
    return (rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
}

SensSpec sens_spec(std::span<const double> scores, std::span<const int> labels, double threshold) {
    if (scores.size() != labels.size())
        throw ValidationError("sens_spec: length mismatch");
    std::size_t tp = 0, fn = 0, tn = 0, fp = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const bool pred = scores[i] >= threshold;
        if (labels[i])
            (pred ? tp : fn)++;
        else
            (pred ? fp : tn)++;
    }
    SensSpec out;
    out.sensitivity = tp + fn ? 100.0 * static_cast<double>(tp) / static_cast<double>(tp + fn) : kNaN;
    out.specificity = tn + fp ? 100.0 * static_cast<double>(tn) / static_cast<double>(tn + fp) : kNaN;
    return out;
}

std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const int> labels) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    double n_pos = 0.0, n_neg = 0.0;
    for (int v : labels)
        (v ? n_pos : n_neg) += 1.0;
    std::vector<RocPoint> out{{std::numeric_limits<double>::infinity(), 0.0, 0.0}};
    double tp = 0.0, fp = 0.0;
    for (std::size_t i = 0; i < order.size(); ++i) {
        (labels[order[i]] ? tp : fp) += 1.0;
        if (i + 1 == order.size() || scores[order[i + 1]] != scores[order[i]])
            out.push_back({scores[order[i]], n_neg > 0 ? fp / n_neg : 0.0, n_pos > 0 ? tp / n_pos : 0.0});
    }
    return out;
}

// --- Selective prediction -------------------------------------------------------------------

std::string FeatureSelector::describe() const {
    switch (kind) {
    case SelectorKind::top_n_by_frequency: return "top-" + std::to_string(n) + " by frequency";
    case SelectorKind::category: return to_string(category) + " only";
    case SelectorKind::random_alive: return "random-" + std::to_string(n);
    case SelectorKind::all_alive: return "all alive";
    case SelectorKind::raw_embedding: return "raw embedding";
    case SelectorKind::covariates_only: return "covariates only";
    }
    return "unknown";
}

FeatureSelector parse_selector(const std::string& text) {
    const auto colon = text.find(':');
    const auto head = text.substr(0, colon);
    const auto arg = colon == std::string::npos ? std::string{} : text.substr(colon + 1);
    const auto count = [&] {
        if (arg.empty())
            return std::size_t{16};
        try {
            const auto v = std::stoll(arg);
            if (v <= 0)
                throw ValidationError("selector count must be positive");
            return static_cast<std::size_t>(v);
        } catch (const std::logic_error&) {
            throw ValidationError("bad selector count in '" + text + "'");
        }
    };
    if (head == "top")
        return FeatureSelector::top_n(count());
    if (head == "random")
        return FeatureSelector::random(count());
    if (head == "category")
        return FeatureSelector::of_category(parse_category(arg));
    if (head == "all")
        return FeatureSelector::all_alive();
    if (head == "raw")
        return FeatureSelector::raw_embedding();
    if (head == "covariates")
        return FeatureSelector::covariates_only();
    throw ValidationError("unknown feature selector '" + text + "'");
}

std::vector<std::size_t> evaluation_rows(const CovariateTable& covariates, bool latest_scan) {
    if (!covariates.has_converter())
        throw ValidationError("conversion labels are required (no converter column)");
    std::vector<std::size_t> labelled;
    for (std::size_t i = 0; i < covariates.size(); ++i)
        if (covariates.converter[i])
            labelled.push_back(i);
    if (labelled.empty())
        throw ValidationError("no rows carry a converter label");
    if (!latest_scan)
        return labelled;
    const auto sub = covariates.select(labelled);
    std::vector<std::size_t> out;
    for (auto r : latest_scan_rows(sub))
        out.push_back(labelled[r]);
    std::sort(out.begin(), out.end());
    return out;
}

PredictionReport cross_validate(const Matrix& X, const CovariateTable& covariates, const FoldPlan& plan,
                                const std::string& model_name, double threshold) {
    if (static_cast<std::size_t>(X.rows()) != covariates.size())
        throw ValidationError("design matrix and covariates differ in rows");
    if (X.cols() == 0)
        throw ValidationError("design matrix has no columns");
    const auto y = converter_labels(covariates);
    if (!folds_are_disjoint(plan, covariates.subject_id))
        throw Error("cross-validation leakage: a subject appears in train and test of one fold");

    PredictionReport rep;
    rep.model = model_name;
    rep.d = static_cast<std::size_t>(X.cols());
    rep.n_samples = y.size();
    rep.n_positive = static_cast<std::size_t>(std::count(y.begin(), y.end(), 1));

    std::vector<double> oof(y.size(), kNaN);
    std::vector<double> aucs, sens, spec;
    for (std::size_t f = 0; f < plan.n_folds; ++f) {
        const auto [train, test] = plan.split(covariates.subject_id, f);
        const auto sp = standardize_fold(take_rows(X, train), take_rows(X, test));
        std::vector<int> ytr, yte;
        for (auto r : train)
            ytr.push_back(y[r]);
        for (auto r : test)
            yte.push_back(y[r]);
        const auto model = logistic_fit(sp.train, ytr);
        const auto scores = model.predict(sp.test);
        for (std::size_t i = 0; i < test.size(); ++i)
            oof[test[i]] = scores[i];
        FoldResult fr;
        fr.fold = f;
        fr.n_train = train.size();
        fr.n_test = test.size();
        fr.auc = auc(scores, yte);
        const auto ss = sens_spec(scores, yte, threshold);
        fr.sensitivity = ss.sensitivity;
        fr.specificity = ss.specificity;
        fr.separated = model.separated;
        rep.folds.push_back(fr);
        rep.roc.push_back(roc_curve(scores, yte));
        aucs.push_back(fr.auc);
        sens.push_back(fr.sensitivity);
        spec.push_back(fr.specificity);
    }
    rep.pooled_auc = auc(oof, y);
    rep.auc_mean = stats::mean(aucs);
    rep.auc_std = sd_or_zero(aucs);
    rep.sens_mean = stats::mean(sens);
    rep.sens_std = sd_or_zero(sens);
    rep.spec_mean = stats::mean(spec);
    rep.spec_std = sd_or_zero(spec);
    return rep;
}

std::vector<std::size_t> select_features(const FeatureSelector& selector, const Matrix& Z,
                                         std::span<const std::size_t> alive, const AnnotationTable* annotations,
                                         std::uint64_t seed) {
    std::vector<std::size_t> out;
    switch (selector.kind) {
    case SelectorKind::top_n_by_frequency: {
        const auto act = activation_stats(Z);
        std::vector<std::size_t> order(alive.begin(), alive.end());
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return act[a].frequency > act[b].frequency; });
        order.resize(std::min(order.size(), selector.n));
        out = order;
        break;
    }
    case SelectorKind::category:
        if (annotations == nullptr)
            throw ValidationError("category selector needs an annotation table");
        for (auto j : annotations->features_in(selector.category))
            if (std::binary_search(alive.begin(), alive.end(), j))
                out.push_back(j);
        break;
    case SelectorKind::random_alive: {
        std::vector<std::size_t> pool(alive.begin(), alive.end());
        Rng rng(seed);
        rng.shuffle(pool);
        pool.resize(std::min(pool.size(), selector.n));
        out = pool;
        break;
    }
    case SelectorKind::all_alive:
        out.assign(alive.begin(), alive.end());
        break;
    case SelectorKind::raw_embedding:
    case SelectorKind::covariates_only:
        throw ValidationError("selector '" + selector.describe() + "' does not pick features");
    }
    if (out.empty())
        throw ValidationError("selector '" + selector.describe() + "' yields zero features");
    std::sort(out.begin(), out.end());
    return out;
}

PredictionReport selective_prediction(const TrainedSae& model, const Matrix& H, const CovariateTable& covariates,
                                      const FeatureSelector& selector, const EvalOptions& options,
                                      const AnnotationTable* annotations) {
    if (static_cast<std::size_t>(H.rows()) != covariates.size())
        throw ValidationError("covariates have " + std::to_string(covariates.size()) + " rows but embeddings have " +
                              std::to_string(H.rows()));
    if (static_cast<std::size_t>(H.cols()) != model.params.d())
        throw ValidationError("embedding dimension does not match the model");
    const auto rows = evaluation_rows(covariates, options.latest_scan);
    const auto sub = covariates.select(rows);
    const auto y = converter_labels(sub);
    const auto plan =
        stratified_subject_kfold(sub.subject_id, y, options.n_folds, derive_seed(options.seed, "eval/folds"));
    const auto name = selector.describe();

    if (selector.kind == SelectorKind::raw_embedding)
        return cross_validate(take_rows(H, rows), sub, plan, name, options.threshold);
    if (selector.kind == SelectorKind::covariates_only) {
        Matrix X(static_cast<Eigen::Index>(rows.size()), 3);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            X(static_cast<Eigen::Index>(i), 0) = sub.age[i];
            X(static_cast<Eigen::Index>(i), 1) = sub.sex[i];
            X(static_cast<Eigen::Index>(i), 2) = sub.apoe4[i];
        }
        return cross_validate(X, sub, plan, name, options.threshold);
    }

    const Matrix Z = encode(model.params, model.config.activation, H);
    std::vector<std::size_t> alive;
    for (Eigen::Index j = 0; j < Z.cols(); ++j)
        if ((Z.col(j).array() > 0.0).any())
            alive.push_back(static_cast<std::size_t>(j));

    if (selector.kind != SelectorKind::random_alive) {
        const auto feats = select_features(selector, Z, alive, annotations, options.seed);
        auto rep = cross_validate(take(Z, rows, feats), sub, plan, name, options.threshold);
        rep.features = feats;
        return rep;
    }

    PredictionReport out;
    std::vector<double> a, s, p;
    for (std::size_t draw = 0; draw < std::max<std::size_t>(1, selector.draws); ++draw) {
        const auto feats =
            select_features(selector, Z, alive, annotations, derive_seed(options.seed, "eval/random/" + std::to_string(draw)));
        auto rep = cross_validate(take(Z, rows, feats), sub, plan, name, options.threshold);
        rep.features = feats;
        a.push_back(rep.auc_mean);
        s.push_back(rep.sens_mean);
        p.push_back(rep.spec_mean);
        if (draw == 0)
            out = std::move(rep);
    }
    out.draw_auc = a;
    out.auc_mean = stats::mean(a);
    out.auc_std = sd_or_zero(a);
    out.sens_mean = stats::mean(s);
    out.sens_std = sd_or_zero(s);
    out.spec_mean = stats::mean(p);
    out.spec_std = sd_or_zero(p);
    return out;
}

// --- Training helper and ablations ------------------------------------------------------------

TrainingSplit split_training_data(const Matrix& H, const std::vector<std::string>& subject_ids,
                                  double holdout_fraction, std::uint64_t seed) {
    if (static_cast<std::size_t>(H.rows()) != subject_ids.size())
        throw ValidationError("split: subject ids do not match embedding rows");
    TrainingSplit out;
    std::tie(out.train_rows, out.holdout_rows) =
        split_by_subject(subject_ids, holdout_fraction, derive_seed(seed, "split"));
    out.train = take_rows(H, out.train_rows);
    out.holdout = take_rows(H, out.holdout_rows);
    return out;
}

std::vector<AblationRow> ablation_suite(const AblationData& data, const TrainConfig& base, const AblationGrid& grid,
                                        const EvalOptions& options, double alpha) {
    if (!data.split || !data.graph || !data.H || !data.covariates)
        throw ValidationError("ablation suite: incomplete inputs");
    const auto& split = *data.split;
    const Matrix* holdout = split.holdout.rows() > 0 ? &split.holdout : nullptr;
    std::vector<AblationRow> rows;

    const auto fit = [&](const TrainConfig& cfg) { return train(split.train, *data.graph, cfg, holdout); };
    const auto top = FeatureSelector::top_n(grid.top_n);
    const auto run_cell = [&](const std::string& variant, const auto& body) {
        AblationRow row;
        row.variant = variant;
        try {
            body(row);
        } catch (const Error& e) {
            row.error = e.what();
        }
        rows.push_back(std::move(row));
    };

    std::optional<TrainedSae> base_model;
    run_cell("base", [&](AblationRow& row) {
        base_model = fit(base);
        row.alive = base_model->alive_count();
        row.report = selective_prediction(*base_model, *data.H, *data.covariates, top, options);
        row.d = row.report.d;
    });

    const auto cell_for = [&](const std::string& variant, TrainConfig cfg) {
        run_cell(variant, [&](AblationRow& row) {
            const auto m = fit(cfg);
            row.alive = m.alive_count();
            row.report = selective_prediction(m, *data.H, *data.covariates, top, options);
            row.d = row.report.d;
        });
    };
    for (double lambda : grid.lambdas) {
        auto cfg = base;
        cfg.lambda = lambda;
        cell_for("lambda=" + csv::format_double(lambda) + (lambda == 0.0 ? " (standard SAE)" : ""), cfg);
    }
    for (auto e : grid.expansions) {
        auto cfg = base;
        cfg.expansion = e;
        cell_for("E=" + std::to_string(e), cfg);
    }
    for (auto k : grid.topk) {
        auto cfg = base;
        cfg.activation.k = k;
        cell_for("k=" + std::to_string(k), cfg);
    }

    if (base_model) {
        std::optional<AnnotationTable> ann;
        for (auto c : grid.categories) {
            run_cell(to_string(c) + " only", [&](AblationRow& row) {
                if (!ann)
                    ann = grid.annotate_latest_scan ? annotate_latest_scans(*base_model, *data.H, *data.covariates, alpha)
                                                    : annotate_all(*base_model, *data.H, *data.covariates, alpha);
                row.alive = base_model->alive_count();
                row.report = selective_prediction(*base_model, *data.H, *data.covariates,
                                                  FeatureSelector::of_category(c), options, &*ann);
                row.d = row.report.d;
            });
        }
        if (grid.random_control)
            run_cell("random-" + std::to_string(grid.top_n), [&](AblationRow& row) {
                row.alive = base_model->alive_count();
                row.report = selective_prediction(*base_model, *data.H, *data.covariates,
                                                  FeatureSelector::random(grid.top_n), options);
                row.d = row.report.d;
            });
    }
    return rows;
}

// --- Replication -----------------------------------------------------------------------------

ReplicationReport cross_cohort_replicate(const TrainedSae& model, const Matrix& HA, const CovariateTable& covA,
                                         const Matrix& HB, const CovariateTable& covB, double alpha,
                                         std::optional<std::vector<std::size_t>> selected) {
    const auto d = static_cast<Eigen::Index>(model.params.d());
    if (HA.cols() != d || HB.cols() != d)
        throw ValidationError("replication cohorts must have embedding dimension " + std::to_string(d));
    const Matrix ZA = encode(model.params, model.config.activation, HA);
    const Matrix ZB = encode(model.params, model.config.activation, HB);
    const auto aliveA = alive_census(model, HA);
    const auto aliveB = alive_census(model, HB);
    const auto annA = annotate_activations(ZA, aliveA, covA, alpha);
    const auto annB = annotate_activations(ZB, aliveB, covB, alpha);

    ReplicationReport rep;
    std::vector<std::size_t> joint;
    std::set_intersection(aliveA.begin(), aliveA.end(), aliveB.begin(), aliveB.end(), std::back_inserter(joint));
    rep.jointly_alive = joint.size();

    for (const auto& v : annA.variables) {
        if (annB.variable_index(v) != static_cast<std::size_t>(-1))
            rep.shared_variables.push_back(v);
        else
            rep.dropped_variables.push_back(v);
    }
    for (const auto& v : annB.variables)
        if (annA.variable_index(v) == static_cast<std::size_t>(-1))
            rep.dropped_variables.push_back(v);

    std::vector<double> xa, xb;
    for (auto j : joint) {
        const auto* ra = annA.find(j);
        const auto* rb = annB.find(j);
        for (const auto& v : rep.shared_variables) {
            const auto& a = ra->associations[annA.variable_index(v)];
            const auto& b = rb->associations[annB.variable_index(v)];
            if (a.rho && b.rho) {
                xa.push_back(*a.rho);
                xb.push_back(*b.rho);
            }
        }
    }
    rep.agreement_pairs = xa.size();
    rep.annotation_agreement = xa.size() >= 3 ? stats::pearson(xa, xb).value_or(kNaN) : kNaN;

    const auto actA = activation_stats(ZA);
    const auto actB = activation_stats(ZB);
    std::vector<double> ma, mb;
    for (auto j : joint) {
        ma.push_back(actA[j].mean_magnitude);
        mb.push_back(actB[j].mean_magnitude);
    }
    rep.activation_consistency = joint.size() >= 3 ? stats::spearman(ma, mb).value_or(kNaN) : kNaN;

    const char* names[] = {"CN", "MCI", "AD"};
    for (int cls = 0; cls < 3; ++cls) {
        const auto class_means = [&](const Matrix& Z, const CovariateTable& c) {
            std::vector<double> m(joint.size(), 0.0);
            std::size_t count = 0;
            for (std::size_t i = 0; i < c.size(); ++i) {
                if (c.diagnosis[i] != cls)
                    continue;
                ++count;
                for (std::size_t f = 0; f < joint.size(); ++f)
                    m[f] += Z(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(joint[f]));
            }
            for (auto& v : m)
                v = count ? v / static_cast<double>(count) : kNaN;
            return std::make_pair(m, count);
        };
        const auto [pa, na] = class_means(ZA, covA);
        const auto [pb, nb] = class_means(ZB, covB);
        if (na == 0 || nb == 0 || joint.size() < 2)
            continue;
        rep.diagnosis_pattern_r[names[cls]] = stats::pearson(pa, pb).value_or(kNaN);
    }

    if (selected) {
        rep.selected = *selected;
    } else if (!aliveA.empty()) {
        rep.selected = select_features(FeatureSelector::top_n(16), ZA, aliveA, nullptr, 0);
    }
    std::size_t replicated = 0;
    for (auto j : rep.selected) {
        const auto* ra = annA.find(j);
        const auto* rb = annB.find(j);
        if (ra && rb && ra->category == rb->category)
            ++replicated;
    }
    rep.replication_rate =
        rep.selected.empty() ? kNaN : static_cast<double>(replicated) / static_cast<double>(rep.selected.size());
    return rep;
}

// --- Exports -----------------------------------------------------------------------------------

void write_prediction_csv(const std::vector<PredictionReport>& reports, const std::filesystem::path& path,
                          const std::string& provenance_json) {
    auto out = csv::open_output(path);
    csv::write_provenance(out, provenance_json);
    csv::write_row(out, {"model", "d", "n", "n_positive", "auc_mean", "auc_std", "sens_mean", "sens_std", "spec_mean",
                         "spec_std", "pooled_auc"});
    for (const auto& r : reports)
        csv::write_row(out, {r.model, std::to_string(r.d), std::to_string(r.n_samples), std::to_string(r.n_positive),
                             num(r.auc_mean), num(r.auc_std), num(r.sens_mean), num(r.sens_std), num(r.spec_mean),
                             num(r.spec_std), num(r.pooled_auc)});
}

namespace {

json report_json(const PredictionReport& r) {
    json folds = json::array();
    for (const auto& f : r.folds)
        folds.push_back({{"fold", f.fold},
                         {"n_train", f.n_train},
                         {"n_test", f.n_test},
                         {"auc", opt_number(f.auc)},
                         {"sensitivity", opt_number(f.sensitivity)},
                         {"specificity", opt_number(f.specificity)},
                         {"separated", f.separated}});
    json j{{"model", r.model},
           {"d", r.d},
           {"n", r.n_samples},
           {"n_positive", r.n_positive},
           {"features", r.features},
           {"auc", {{"mean", opt_number(r.auc_mean)}, {"std", opt_number(r.auc_std)}, {"pooled", opt_number(r.pooled_auc)}}},
           {"sensitivity", {{"mean", opt_number(r.sens_mean)}, {"std", opt_number(r.sens_std)}}},
           {"specificity", {{"mean", opt_number(r.spec_mean)}, {"std", opt_number(r.spec_std)}}},
           {"folds", folds}};
    if (!r.draw_auc.empty())
        j["draw_auc"] = r.draw_auc;
    return j;
}

void write_json(const json& doc, const std::filesystem::path& path) {
    auto out = csv::open_output(path);
    out << doc.dump(2) << '\n';
}

} // namespace

void write_prediction_json(const std::vector<PredictionReport>& reports, const std::filesystem::path& path,
                           const std::string& provenance_json) {
    json doc{{"reports", json::array()}};
    for (const auto& r : reports)
        doc["reports"].push_back(report_json(r));
    if (!provenance_json.empty())
        doc["provenance"] = json::parse(provenance_json);
    write_json(doc, path);
}

void write_roc_csv(const std::vector<PredictionReport>& reports, const std::filesystem::path& path,
                   const std::string& provenance_json) {
    auto out = csv::open_output(path);
    csv::write_provenance(out, provenance_json);
    csv::write_row(out, {"model", "fold", "threshold", "fpr", "tpr"});
    for (const auto& r : reports)
        for (std::size_t f = 0; f < r.roc.size(); ++f)
            for (const auto& p : r.roc[f])
                csv::write_row(out, {r.model, std::to_string(f), std::isinf(p.threshold) ? "inf" : num(p.threshold),
                                     num(p.fpr), num(p.tpr)});
}

void write_ablation_csv(const std::vector<AblationRow>& rows, const std::filesystem::path& path,
                        const std::string& provenance_json) {
    auto out = csv::open_output(path);
    csv::write_provenance(out, provenance_json);
    csv::write_row(out, {"variant", "alive", "d", "auc", "auc_std", "sens", "spec", "error"});
    for (const auto& r : rows) {
        if (!r.error.empty()) {
            csv::write_row(out, {r.variant, "", "", "", "", "", "", r.error});
            continue;
        }
        csv::write_row(out, {r.variant, std::to_string(r.alive), std::to_string(r.d), num(r.report.auc_mean),
                             num(r.report.auc_std), num(r.report.sens_mean), num(r.report.spec_mean), ""});
    }
}

void write_replication_json(const ReplicationReport& r, const std::filesystem::path& path,
                            const std::string& provenance_json) {
    json patterns = json::object();
    for (const auto& [k, v] : r.diagnosis_pattern_r)
        patterns[k] = opt_number(v);
    json doc{{"jointly_alive", r.jointly_alive},
             {"shared_variables", r.shared_variables},
             {"dropped_variables", r.dropped_variables},
             {"annotation_agreement", opt_number(r.annotation_agreement)},
             {"agreement_pairs", r.agreement_pairs},
             {"activation_consistency", opt_number(r.activation_consistency)},
             {"diagnosis_pattern_r", patterns},
             {"selected", r.selected},
             {"replication_rate", opt_number(r.replication_rate)}};
    if (!provenance_json.empty())
        doc["provenance"] = json::parse(provenance_json);
    write_json(doc, path);
}

} // namespace mrsae
