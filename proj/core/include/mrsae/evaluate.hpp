#pragma once

#include "mrsae/annotate.hpp"
#include "mrsae/data.hpp"
#include "mrsae/manifold.hpp"
#include "mrsae/sae.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mrsae {

// --- Cross-validation plan ----------------------------------------------------------

struct FoldPlan {
    std::size_t n_folds = 0;
    std::map<std::string, std::size_t> assignments;
    std::uint64_t seed = 0;
    std::string label;

    std::size_t fold_of(const std::string& subject) const;
    /// (train rows, test rows) of `fold` for rows keyed by `subject_ids`.
    std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split(const std::vector<std::string>& subject_ids,
                                                                        std::size_t fold) const;
};

/// Subjects are sorted, shuffled within each label stratum, and dealt round-robin;
/// negatives continue dealing where the positives stopped so fold sizes stay balanced.
/// `labels` is per row and must be constant within a subject.
FoldPlan stratified_subject_kfold(const std::vector<std::string>& subject_ids, const std::vector<int>& labels,
                                  std::size_t n_folds, std::uint64_t seed, const std::string& label = "converter");

/// True when no subject has rows on both sides of any fold split.
bool folds_are_disjoint(const FoldPlan& plan, const std::vector<std::string>& subject_ids);

// --- Classifier pieces -----------------------------------------------------------------

struct LogisticModel {
    Vector weights;
    double intercept = 0.0;
    bool converged = false;
    /// Training scores separate the classes perfectly; weights are then ridge-limited.
    bool separated = false;
    std::size_t iterations = 0;

    double probability(const Eigen::Ref<const Eigen::RowVectorXd>& x) const;
    std::vector<double> predict(const Matrix& X) const;
};

/// Ridge-penalized (weights only, not intercept) logistic regression by damped IRLS.
/// Stops when the largest coefficient change is below 1e-8 or after 100 iterations.
LogisticModel logistic_fit(const Matrix& X, std::span<const int> y, double ridge = 1e-6);

/// Unpenalized Bernoulli log-likelihood of `model` on (X, y).
double log_likelihood(const LogisticModel& model, const Matrix& X, std::span<const int> y);

struct StandardizedPair {
    Matrix train;
    Matrix test;
};

/// Z-scores both matrices with the training mean and sample standard deviation.
/// Columns with zero training spread are centered only.
StandardizedPair standardize_fold(const Matrix& train, const Matrix& test);

/// Mann-Whitney AUC with half credit for ties. Throws if a class is absent.
double auc(std::span<const double> scores, std::span<const int> labels);

struct SensSpec {
    double sensitivity = 0.0; // percent
    double specificity = 0.0; // percent
};

/// Predicted positive iff score >= threshold. A missing class yields NaN for its rate.
SensSpec sens_spec(std::span<const double> scores, std::span<const int> labels, double threshold = 0.5);

struct RocPoint {
    double threshold = 0.0;
    double fpr = 0.0;
    double tpr = 0.0;
};

std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const int> labels);

// --- Selective prediction ---------------------------------------------------------------

enum class SelectorKind { top_n_by_frequency, category, random_alive, all_alive, raw_embedding, covariates_only };

struct FeatureSelector {
    SelectorKind kind = SelectorKind::top_n_by_frequency;
    std::size_t n = 16;
    Category category = Category::ad_related;
    /// Number of random subsets drawn for random_alive.
    std::size_t draws = 10;

    static FeatureSelector top_n(std::size_t n) { return {SelectorKind::top_n_by_frequency, n}; }
    static FeatureSelector of_category(Category c) { return {SelectorKind::category, 0, c}; }
    static FeatureSelector random(std::size_t n, std::size_t draws = 10) {
        return {SelectorKind::random_alive, n, Category::ad_related, draws};
    }
    static FeatureSelector all_alive() { return {SelectorKind::all_alive}; }
    static FeatureSelector raw_embedding() { return {SelectorKind::raw_embedding}; }
    static FeatureSelector covariates_only() { return {SelectorKind::covariates_only}; }

    std::string describe() const;
};

/// Parses "top:16", "category:AD-related", "random:16", "all", "raw", "covariates".
FeatureSelector parse_selector(const std::string& text);

struct EvalOptions {
    std::size_t n_folds = 5;
    std::uint64_t seed = 0;
    double threshold = 0.5;
    /// Keep one (latest) scan per subject before cross-validation.
    bool latest_scan = true;
};

struct FoldResult {
    std::size_t fold = 0;
    std::size_t n_train = 0;
    std::size_t n_test = 0;
    double auc = 0.0;
    double sensitivity = 0.0;
    double specificity = 0.0;
    bool separated = false;
};

struct PredictionReport {
    std::string model;
    std::size_t d = 0;
    std::size_t n_samples = 0;
    std::size_t n_positive = 0;
    std::vector<std::size_t> features;
    std::vector<FoldResult> folds;
    double pooled_auc = 0.0;
    double auc_mean = 0.0, auc_std = 0.0;
    double sens_mean = 0.0, sens_std = 0.0;
    double spec_mean = 0.0, spec_std = 0.0;
    /// For random controls: fold-mean AUC of each draw (the mean/std fields summarize these).
    std::vector<double> draw_auc;
    /// Out-of-fold ROC points, one list per fold.
    std::vector<std::vector<RocPoint>> roc;
};

/// The rows cross-validation runs on: converter-labelled rows, reduced to the latest
/// scan per subject when requested. Returned ascending.
std::vector<std::size_t> evaluation_rows(const CovariateTable& covariates, bool latest_scan);

/// Runs the CV loop on a ready design matrix (rows aligned with covariates, all labelled).
PredictionReport cross_validate(const Matrix& X, const CovariateTable& covariates, const FoldPlan& plan,
                                const std::string& model_name, double threshold = 0.5);

/// Feature columns the selector picks. Frequencies come from `Z` (all rows of the cohort).
/// Throws when the selector yields nothing.
std::vector<std::size_t> select_features(const FeatureSelector& selector, const Matrix& Z,
                                         std::span<const std::size_t> alive, const AnnotationTable* annotations,
                                         std::uint64_t seed);

/// Full selective-prediction run. `H` and `covariates` describe the whole cohort;
/// evaluation restricts to converter-labelled rows internally. The category selector
/// needs `annotations`.
PredictionReport selective_prediction(const TrainedSae& model, const Matrix& H, const CovariateTable& covariates,
                                      const FeatureSelector& selector, const EvalOptions& options = {},
                                      const AnnotationTable* annotations = nullptr);

// --- Training helper and ablations -------------------------------------------------------

struct TrainingSplit {
    Matrix train;
    Matrix holdout;
    std::vector<std::size_t> train_rows;
    std::vector<std::size_t> holdout_rows;
};

TrainingSplit split_training_data(const Matrix& H, const std::vector<std::string>& subject_ids,
                                  double holdout_fraction, std::uint64_t seed);

struct AblationGrid {
    std::vector<double> lambdas{0.0, 0.1, 1.0, 10.0};
    std::vector<std::size_t> expansions;
    std::vector<std::size_t> topk;
    std::vector<Category> categories{Category::ad_related, Category::comorbidity};
    bool random_control = true;
    std::size_t top_n = 16;
    /// Annotate category subsets on the latest scan per subject.
    bool annotate_latest_scan = true;
};

struct AblationRow {
    std::string variant;
    std::size_t alive = 0;
    std::size_t d = 0;
    PredictionReport report;
    /// Set when the cell failed; the suite carries on.
    std::string error;
};

struct AblationData {
    const TrainingSplit* split = nullptr;
    const ManifoldGraph* graph = nullptr;
    const Matrix* H = nullptr;
    const CovariateTable* covariates = nullptr;
};

/// One model per changed component (lambda, expansion, TopK k), each evaluated with the
/// top-n selector; category subsets and the random control reuse the base model.
std::vector<AblationRow> ablation_suite(const AblationData& data, const TrainConfig& base, const AblationGrid& grid,
                                        const EvalOptions& options = {}, double alpha = 0.05);

// --- Cross-cohort replication ------------------------------------------------------------

struct ReplicationReport {
    std::size_t jointly_alive = 0;
    std::vector<std::string> shared_variables;
    std::vector<std::string> dropped_variables;
    double annotation_agreement = 0.0;
    std::size_t agreement_pairs = 0;
    double activation_consistency = 0.0;
    /// Pearson r of per-feature mean activation within each diagnosis class.
    std::map<std::string, double> diagnosis_pattern_r;
    std::vector<std::size_t> selected;
    double replication_rate = 0.0;
};

/// Annotates both cohorts with the frozen model and compares them over jointly alive
/// features. `selected` defaults to the top-16 features of A by activation frequency.
ReplicationReport cross_cohort_replicate(const TrainedSae& model, const Matrix& HA, const CovariateTable& covA,
                                         const Matrix& HB, const CovariateTable& covB, double alpha = 0.05,
                                         std::optional<std::vector<std::size_t>> selected = std::nullopt);

// --- Exports ---------------------------------------------------------------------------------

void write_prediction_csv(const std::vector<PredictionReport>& reports, const std::filesystem::path& path,
                          const std::string& provenance_json = {});
void write_prediction_json(const std::vector<PredictionReport>& reports, const std::filesystem::path& path,
                           const std::string& provenance_json = {});
void write_roc_csv(const std::vector<PredictionReport>& reports, const std::filesystem::path& path,
                   const std::string& provenance_json = {});
void write_ablation_csv(const std::vector<AblationRow>& rows, const std::filesystem::path& path,
                        const std::string& provenance_json = {});
void write_replication_json(const ReplicationReport& report, const std::filesystem::path& path,
                            const std::string& provenance_json = {});

} // namespace mrsae
