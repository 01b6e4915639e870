#include "mrsae/evaluate.hpp"
#include "mrsae/rng.hpp"
#include "mrsae/synthetic.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

using namespace mrsae;

namespace {

/// One MCI scan per subject with the given converter labels.
CovariateTable mci_table(const std::vector<int>& labels, std::uint64_t seed) {
    Rng rng(seed);
    CovariateTable c;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        c.sample_id.push_back("s" + std::to_string(1000 + i));
        c.subject_id.push_back("p" + std::to_string(1000 + i));
        c.age.push_back(60 + 25 * rng.uniform());
        c.sex.push_back(static_cast<int>(rng.below(2)));
        c.apoe4.push_back(static_cast<int>(rng.below(3)));
        c.diagnosis.push_back(static_cast<int>(Diagnosis::mci));
        c.converter.emplace_back(labels[i]);
        c.visit.push_back(1);
    }
    c.validate();
    return c;
}

std::vector<int> bernoulli_labels(std::size_t n, double rate, Rng& rng) {
    std::vector<int> y(n);
    for (auto& v : y)
        v = rng.uniform() < rate;
    return y;
}

double pair_count_auc(const std::vector<double>& s, const std::vector<int>& y) {
    double good = 0, pairs = 0;
    for (std::size_t i = 0; i < s.size(); ++i)
        for (std::size_t j = 0; j < s.size(); ++j)
            if (y[i] == 1 && y[j] == 0) {
                pairs += 1;
                good += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
            }
    return good / pairs;
}

Matrix random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng) {
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i)
        m.data()[i] = rng.normal();
    return m;
}

} // namespace

TEST(FoldPlan, TenSubjectsFiveFoldsIsExact) {
    const std::vector<std::string> ids{"a", "b", "c", "d", "e", "f", "g", "h", "i", "j"};
    const std::vector<int> y{1, 0, 1, 0, 1, 0, 1, 0, 1, 0};
    const auto plan = stratified_subject_kfold(ids, y, 5, 3);
    std::vector<int> pos(5, 0), neg(5, 0);
    for (std::size_t i = 0; i < ids.size(); ++i)
        (y[i] ? pos : neg)[plan.fold_of(ids[i])]++;
    for (int f = 0; f < 5; ++f) {
        EXPECT_EQ(pos[f], 1);
        EXPECT_EQ(neg[f], 1);
    }
}

TEST(FoldPlan, ScansOfASubjectShareAFold) {
    std::vector<std::string> ids;
    std::vector<int> y;
    for (int s = 0; s < 30; ++s)
        for (int v = 0; v <= s % 4; ++v) {
            ids.push_back("subj" + std::to_string(s));
            y.push_back(s % 3 == 0);
        }
    const auto plan = stratified_subject_kfold(ids, y, 5, 8);
    EXPECT_TRUE(folds_are_disjoint(plan, ids));
    for (std::size_t f = 0; f < 5; ++f) {
        const auto [train, test] = plan.split(ids, f);
        std::set<std::string> a, b;
        for (auto r : train)
            a.insert(ids[r]);
        for (auto r : test)
            b.insert(ids[r]);
        for (const auto& s : b)
            EXPECT_EQ(a.count(s), 0u);
        EXPECT_EQ(train.size() + test.size(), ids.size());
    }
}

TEST(FoldPlan, StratificationWithinOneSubject) {
    Rng rng(4);
    std::vector<std::string> ids;
    for (int s = 0; s < 137; ++s)
        ids.push_back("x" + std::to_string(s));
    const auto y = bernoulli_labels(ids.size(), 0.3, rng);
    const auto plan = stratified_subject_kfold(ids, y, 5, 9);
    const double total_pos = static_cast<double>(std::count(y.begin(), y.end(), 1));
    for (std::size_t f = 0; f < 5; ++f) {
        double pos = 0;
        for (std::size_t i = 0; i < ids.size(); ++i)
            pos += plan.fold_of(ids[i]) == f && y[i];
        EXPECT_LE(std::abs(pos - total_pos / 5), 1.0);
    }
}

TEST(FoldPlan, DeterministicAndSeedSensitive) {
    Rng rng(5);
    std::vector<std::string> ids;
    for (int s = 0; s < 50; ++s)
        ids.push_back("x" + std::to_string(s));
    const auto y = bernoulli_labels(ids.size(), 0.4, rng);
    EXPECT_EQ(stratified_subject_kfold(ids, y, 5, 1).assignments, stratified_subject_kfold(ids, y, 5, 1).assignments);
    EXPECT_NE(stratified_subject_kfold(ids, y, 5, 1).assignments, stratified_subject_kfold(ids, y, 5, 2).assignments);
}

TEST(FoldPlan, TooFewPositivesRejected) {
    const std::vector<std::string> ids{"a", "b", "c", "d", "e", "f"};
    const std::vector<int> y{1, 1, 0, 0, 0, 0};
    EXPECT_THROW(stratified_subject_kfold(ids, y, 5, 1), ValidationError);
}

TEST(Logistic, ConstantLabelsGiveBaseRateIntercept) {
    Rng rng(6);
    const Matrix X = random_matrix(12, 3, rng);
    const std::vector<int> ones(12, 1);
    const auto m = logistic_fit(X, ones);
    EXPECT_NEAR(m.intercept, std::log((1 - 1e-6) / 1e-6), 1e-9);
    EXPECT_EQ(m.weights.cwiseAbs().sum(), 0.0);
}

TEST(Logistic, SeparableDataRaisesFlag) {
    Matrix X(6, 1);
    X << -3, -2, -1, 1, 2, 3;
    const std::vector<int> y{0, 0, 0, 1, 1, 1};
    EXPECT_TRUE(logistic_fit(X, y).separated);
}

TEST(Logistic, NoGridNeighbourBeatsTheFit) {
    Rng rng(7);
    const Matrix X = random_matrix(20, 2, rng);
    std::vector<int> y(20);
    for (int i = 0; i < 20; ++i)
        y[i] = rng.uniform() < 1 / (1 + std::exp(-(0.3 + 0.8 * X(i, 0) - 0.5 * X(i, 1))));
    const auto m = logistic_fit(X, y);
    ASSERT_FALSE(m.separated);
    const double best = log_likelihood(m, X, y);
    const double step = 0.02;
    for (int a = -10; a <= 10; ++a)
        for (int b = -10; b <= 10; ++b)
            for (int c = -10; c <= 10; ++c) {
                LogisticModel g = m;
                g.intercept += a * step;
                g.weights(0) += b * step;
                g.weights(1) += c * step;
                EXPECT_GE(best, log_likelihood(g, X, y) - 1e-9);
            }
}

TEST(Logistic, ColumnRescaleLeavesProbabilities) {
    Rng rng(8);
    Matrix raw = random_matrix(60, 3, rng);
    std::vector<int> y(60);
    for (int i = 0; i < 60; ++i)
        y[i] = rng.uniform() < 1 / (1 + std::exp(-raw(i, 0)));
    Matrix scaled = raw;
    scaled.col(1) *= 37.5;
    const auto a = standardize_fold(raw, raw), b = standardize_fold(scaled, scaled);
    const auto pa = logistic_fit(a.train, y).predict(a.test), pb = logistic_fit(b.train, y).predict(b.test);
    for (int i = 0; i < 60; ++i)
        EXPECT_NEAR(pa[i], pb[i], 1e-8);
}

TEST(Standardize, TrainMeanMapsToZeroAndConstantColumnIsCentered) {
    Matrix train(4, 2);
    train << 1, 5, 2, 5, 3, 5, 6, 5;
    Matrix test(1, 2);
    test << 3, 7;
    const auto s = standardize_fold(train, test);
    EXPECT_NEAR(s.test(0, 0), 0.0, 1e-15);
    EXPECT_EQ(s.test(0, 1), 2.0);
    EXPECT_EQ(s.train.col(1).cwiseAbs().sum(), 0.0);
}

TEST(Standardize, MatchesTwoPassOracle) {
    Rng rng(9);
    const Matrix train = random_matrix(30, 4, rng) * 3, test = random_matrix(7, 4, rng);
    const auto s = standardize_fold(train, test);
    for (Eigen::Index c = 0; c < 4; ++c) {
        double mean = 0;
        for (Eigen::Index i = 0; i < 30; ++i)
            mean += train(i, c) / 30;
        double ss = 0;
        for (Eigen::Index i = 0; i < 30; ++i)
            ss += (train(i, c) - mean) * (train(i, c) - mean);
        const double sd = std::sqrt(ss / 29);
        for (Eigen::Index i = 0; i < 30; ++i)
            EXPECT_NEAR(s.train(i, c), (train(i, c) - mean) / sd, 1e-12);
        for (Eigen::Index i = 0; i < 7; ++i)
            EXPECT_NEAR(s.test(i, c), (test(i, c) - mean) / sd, 1e-12);
    }
}

TEST(Auc, WorkedExamples) {
    const std::vector<double> s{0.1, 0.4, 0.35, 0.8};
    const std::vector<int> y{0, 0, 1, 1};
    EXPECT_DOUBLE_EQ(auc(s, y), 0.75);
    const std::vector<double> ranked{0.1, 0.2, 0.7, 0.9};
    EXPECT_EQ(auc(ranked, y), 1.0);
    const std::vector<double> flat(4, 0.3);
    EXPECT_EQ(auc(flat, y), 0.5);
}

TEST(Auc, SingleClassRejected) {
    const std::vector<double> s{0.1, 0.2};
    const std::vector<int> y{1, 1};
    EXPECT_THROW(auc(s, y), ValidationError);
}

TEST(Auc, MatchesPairCountAndIgnoresMonotoneTransforms) {
    Rng rng(10);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t n = 2 + rng.below(49);
        std::vector<double> s(n);
        std::vector<int> y(n);
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = static_cast<double>(rng.below(8)) / 8.0;
            y[i] = static_cast<int>(rng.below(2));
        }
        y[0] = 0;
        y[1] = 1;
        EXPECT_NEAR(auc(s, y), pair_count_auc(s, y), 1e-12);
        std::vector<double> t(n);
        for (std::size_t i = 0; i < n; ++i)
            t[i] = std::exp(4 * s[i]) - 10;
        EXPECT_EQ(auc(s, y), auc(t, y));
    }
}

TEST(SensSpec, ThresholdRule) {
    const std::vector<int> y{1, 1, 0, 0};
    const std::vector<double> good{0.9, 0.9, 0.1, 0.1}, flat(4, 0.4);
    EXPECT_EQ(sens_spec(good, y).sensitivity, 100.0);
    EXPECT_EQ(sens_spec(good, y).specificity, 100.0);
    EXPECT_EQ(sens_spec(flat, y).sensitivity, 0.0);
    EXPECT_EQ(sens_spec(flat, y).specificity, 100.0);
}

TEST(SensSpec, MatchesConfusionEnumeration) {
    const std::vector<double> s{0.7, 0.5, 0.2, 0.6, 0.49, 0.1, 0.95};
    const std::vector<int> y{1, 1, 1, 0, 0, 0, 0};
    // TP: 0.7, 0.5; FN: 0.2; FP: 0.6, 0.95; TN: 0.49, 0.1
    const auto r = sens_spec(s, y, 0.5);
    EXPECT_NEAR(r.sensitivity, 200.0 / 3.0, 1e-12);
    EXPECT_NEAR(r.specificity, 50.0, 1e-12);
}

TEST(Roc, MonotoneFromOriginToCorner) {
    Rng rng(11);
    std::vector<double> s(40);
    std::vector<int> y(40);
    for (int i = 0; i < 40; ++i) {
        s[i] = rng.uniform();
        y[i] = i % 3 == 0;
    }
    const auto roc = roc_curve(s, y);
    ASSERT_GE(roc.size(), 2u);
    EXPECT_EQ(roc.front().fpr, 0.0);
    EXPECT_EQ(roc.front().tpr, 0.0);
    EXPECT_EQ(roc.back().fpr, 1.0);
    EXPECT_EQ(roc.back().tpr, 1.0);
    for (std::size_t i = 1; i < roc.size(); ++i) {
        EXPECT_GE(roc[i].fpr, roc[i - 1].fpr);
        EXPECT_GE(roc[i].tpr, roc[i - 1].tpr);
    }
}

TEST(CrossValidate, PermutedLabelsAreAtChance) {
    Rng rng(12);
    const std::size_t n = 900;
    const auto y = bernoulli_labels(n, 0.4, rng);
    const auto cov = mci_table(y, 13);
    const Matrix X = random_matrix(static_cast<Eigen::Index>(n), 8, rng);
    const auto plan = stratified_subject_kfold(cov.subject_id, y, 5, 14);
    const auto rep = cross_validate(X, cov, plan, "raw");
    EXPECT_GE(rep.auc_mean, 0.45);
    EXPECT_LE(rep.auc_mean, 0.55);
    EXPECT_EQ(rep.folds.size(), 5u);
    for (const auto& f : rep.folds) {
        EXPECT_GE(f.auc, 0.0);
        EXPECT_LE(f.auc, 1.0);
        EXPECT_GE(f.sensitivity, 0.0);
        EXPECT_LE(f.specificity, 100.0);
    }
}

TEST(SelectivePrediction, CovariatesOnlyIsADirectFitOnAgeSexApoe) {
    Rng rng(15);
    const std::size_t n = 300;
    const auto y = bernoulli_labels(n, 0.35, rng);
    const auto cov = mci_table(y, 16);
    const Matrix H = random_matrix(static_cast<Eigen::Index>(n), 6, rng);
    TrainedSae model;
    model.params = init_params(H, 12, 1);
    EvalOptions opt;
    opt.seed = 17;
    const auto rep = selective_prediction(model, H, cov, FeatureSelector::covariates_only(), opt);

    Matrix X(static_cast<Eigen::Index>(n), 3);
    for (std::size_t i = 0; i < n; ++i)
        X.row(static_cast<Eigen::Index>(i)) << cov.age[i], cov.sex[i], cov.apoe4[i];
    const auto plan = stratified_subject_kfold(cov.subject_id, y, 5, derive_seed(17, "eval/folds"));
    double total = 0;
    for (std::size_t f = 0; f < 5; ++f) {
        const auto [train, test] = plan.split(cov.subject_id, f);
        Matrix Xtr(static_cast<Eigen::Index>(train.size()), 3), Xte(static_cast<Eigen::Index>(test.size()), 3);
        std::vector<int> ytr, yte;
        for (std::size_t i = 0; i < train.size(); ++i) {
            Xtr.row(static_cast<Eigen::Index>(i)) = X.row(static_cast<Eigen::Index>(train[i]));
            ytr.push_back(y[train[i]]);
        }
        for (std::size_t i = 0; i < test.size(); ++i) {
            Xte.row(static_cast<Eigen::Index>(i)) = X.row(static_cast<Eigen::Index>(test[i]));
            yte.push_back(y[test[i]]);
        }
        const auto s = standardize_fold(Xtr, Xte);
        total += auc(logistic_fit(s.train, ytr).predict(s.test), yte);
    }
    EXPECT_NEAR(rep.auc_mean, total / 5, 1e-12);
    EXPECT_EQ(rep.d, 3u);
}

TEST(SelectivePrediction, MissingConverterColumnRejected) {
    Rng rng(18);
    auto cov = mci_table(std::vector<int>(20, 0), 19);
    cov.converter.clear();
    const Matrix H = random_matrix(20, 4, rng);
    TrainedSae model;
    model.params = init_params(H, 8, 1);
    EXPECT_THROW(selective_prediction(model, H, cov, FeatureSelector::raw_embedding()), ValidationError);
}

TEST(Selector, ParsesEveryForm) {
    EXPECT_EQ(parse_selector("top:16").kind, SelectorKind::top_n_by_frequency);
    EXPECT_EQ(parse_selector("top:16").n, 16u);
    EXPECT_EQ(parse_selector("category:AD-related").category, Category::ad_related);
    EXPECT_EQ(parse_selector("random:4").kind, SelectorKind::random_alive);
    EXPECT_EQ(parse_selector("all").kind, SelectorKind::all_alive);
    EXPECT_EQ(parse_selector("raw").kind, SelectorKind::raw_embedding);
    EXPECT_EQ(parse_selector("covariates").kind, SelectorKind::covariates_only);
    EXPECT_THROW(parse_selector("best:3"), ValidationError);
}

TEST(Selector, TopByFrequencyAndEmptyCategory) {
    Matrix Z = Matrix::Zero(10, 4);
    Z.col(0).head(2).setOnes();
    Z.col(1).head(9).setOnes();
    Z.col(3).head(5).setOnes();
    const std::vector<std::size_t> alive{0, 1, 3};
    EXPECT_EQ(select_features(FeatureSelector::top_n(2), Z, alive, nullptr, 0), (std::vector<std::size_t>{1, 3}));
    AnnotationTable empty;
    EXPECT_THROW(select_features(FeatureSelector::of_category(Category::genetic), Z, alive, &empty, 0),
                 ValidationError);
}

namespace {

struct SmallPipeline {
    SyntheticCohort cohort;
    TrainingSplit split;
    ManifoldGraph graph;
    TrainConfig config;
};

const SmallPipeline& small_pipeline() {
    static const SmallPipeline p = [] {
        SmallPipeline s;
        s.cohort = generate_synthetic_cohort(reference_synthetic_spec(700, 64, 3));
        s.split = split_training_data(s.cohort.embeddings.values, s.cohort.covariates.subject_id, 0.1, 4);
        s.config.activation = {ActivationKind::topk, 8};
        s.config.expansion = 2;
        s.config.lambda = 0.1;
        s.config.epochs = 60;
        s.config.seed = 5;
        s.graph = build_knn_graph(s.split.train, s.config.k_nn);
        return s;
    }();
    return p;
}

} // namespace

TEST(Ablation, ZeroLambdaCellIsTheStandardRun) {
    const auto& p = small_pipeline();
    AblationGrid grid;
    grid.lambdas = {0.0};
    grid.categories.clear();
    grid.random_control = false;
    EvalOptions opt;
    opt.seed = 6;
    AblationData data{&p.split, &p.graph, &p.cohort.embeddings.values, &p.cohort.covariates};
    const auto rows = ablation_suite(data, p.config, grid, opt);
    const auto it = std::find_if(rows.begin(), rows.end(),
                                 [](const AblationRow& r) { return r.variant.rfind("lambda=0", 0) == 0; });
    ASSERT_NE(it, rows.end());
    ASSERT_TRUE(it->error.empty()) << it->error;

    auto cfg = p.config;
    cfg.lambda = 0.0;
    const auto standard = train(p.split.train, ManifoldGraph{}, cfg, &p.split.holdout);
    const auto rep = selective_prediction(standard, p.cohort.embeddings.values, p.cohort.covariates,
                                          FeatureSelector::top_n(16), opt);
    EXPECT_EQ(it->alive, standard.alive_count());
    EXPECT_EQ(it->report.auc_mean, rep.auc_mean);
    EXPECT_EQ(it->report.features, rep.features);
}

TEST(Ablation, RandomControlTrailsTopFeatures) {
    const auto& p = small_pipeline();
    AblationGrid grid;
    grid.lambdas.clear();
    grid.categories.clear();
    EvalOptions opt;
    opt.seed = 7;
    AblationData data{&p.split, &p.graph, &p.cohort.embeddings.values, &p.cohort.covariates};
    const auto rows = ablation_suite(data, p.config, grid, opt);
    const AblationRow *base = nullptr, *random = nullptr;
    for (const auto& r : rows) {
        if (r.variant == "base")
            base = &r;
        if (r.variant.find("random") != std::string::npos)
            random = &r;
    }
    ASSERT_NE(base, nullptr);
    ASSERT_NE(random, nullptr);
    EXPECT_LT(random->report.auc_mean, base->report.auc_mean);
    EXPECT_EQ(random->report.draw_auc.size(), 10u);
}

TEST(Replication, SelfReplicationIsPerfect) {
    const auto& p = small_pipeline();
    const auto model = train(p.split.train, p.graph, p.config, &p.split.holdout);
    const auto& H = p.cohort.embeddings.values;
    const auto rep = cross_cohort_replicate(model, H, p.cohort.covariates, H, p.cohort.covariates);
    EXPECT_GT(rep.jointly_alive, 0u);
    EXPECT_NEAR(rep.annotation_agreement, 1.0, 1e-12);
    EXPECT_NEAR(rep.activation_consistency, 1.0, 1e-12);
    EXPECT_EQ(rep.replication_rate, 1.0);
    for (const auto& [dx, r] : rep.diagnosis_pattern_r)
        EXPECT_NEAR(r, 1.0, 1e-12) << dx;
    EXPECT_TRUE(rep.dropped_variables.empty());
}

TEST(Replication, DroppedCovariateIsReported) {
    const auto& p = small_pipeline();
    const auto model = train(p.split.train, p.graph, p.config, &p.split.holdout);
    const auto& H = p.cohort.embeddings.values;
    auto covB = p.cohort.covariates;
    ASSERT_TRUE(covB.drop_comorbidity("dep"));
    const auto rep = cross_cohort_replicate(model, H, p.cohort.covariates, H, covB);
    EXPECT_EQ(rep.dropped_variables, (std::vector<std::string>{"dep"}));
    EXPECT_EQ(std::count(rep.shared_variables.begin(), rep.shared_variables.end(), "dep"), 0);
    EXPECT_EQ(rep.shared_variables.size(), 5u);
}

TEST(Replication, DimensionMismatchRejected) {
    const auto& p = small_pipeline();
    const auto model = train(p.split.train, p.graph, p.config, &p.split.holdout);
    const auto& H = p.cohort.embeddings.values;
    const Matrix narrow = H.leftCols(10);
    EXPECT_THROW(cross_cohort_replicate(model, H, p.cohort.covariates, narrow, p.cohort.covariates),
                 ValidationError);
}
