#include "mrsae/data.hpp"
#include "mrsae/synthetic.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

using namespace mrsae;
using mrsae::testing::TempDir;
using mrsae::testing::write_text;

namespace {

// Average ranks by brute force: rank = 1 + #smaller + (#equal - 1) / 2.
std::vector<double> brute_ranks(const std::vector<double>& x) {
    std::vector<double> r(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        double less = 0, equal = 0;
        for (double v : x) {
            less += v < x[i];
            equal += v == x[i];
        }
        r[i] = 1.0 + less + (equal - 1.0) / 2.0;
    }
    return r;
}

double brute_pearson(const std::vector<double>& x, const std::vector<double>& y) {
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

CovariateTable small_table(const std::vector<std::string>& subjects, const std::vector<double>& visits) {
    CovariateTable t;
    for (std::size_t i = 0; i < subjects.size(); ++i) {
        t.sample_id.push_back("x" + std::to_string(i));
        t.subject_id.push_back(subjects[i]);
        t.age.push_back(70.0 + static_cast<double>(i));
        t.sex.push_back(0);
        t.apoe4.push_back(0);
        t.diagnosis.push_back(0);
        t.visit.push_back(visits[i]);
    }
    return t;
}

EmbeddingMatrix rows_as_index(std::size_t n) {
    EmbeddingMatrix e;
    e.values.resize(static_cast<Eigen::Index>(n), 1);
    for (std::size_t i = 0; i < n; ++i) {
        e.values(static_cast<Eigen::Index>(i), 0) = static_cast<double>(i);
        e.sample_ids.push_back("x" + std::to_string(i));
    }
    return e;
}

} // namespace

TEST(LoadEmbeddings, CsvKeepsFileOrder) {
    TempDir dir("emb");
    write_text(dir / "e.csv", "sample_id,e0,e1\nb,1,2\na,3,4\nc,5.5,-6\n");
    const auto e = load_embeddings(dir / "e.csv", EmbeddingFormat::csv);
    ASSERT_EQ(e.rows(), 3u);
    ASSERT_EQ(e.dim(), 2u);
    EXPECT_EQ(e.sample_ids, (std::vector<std::string>{"b", "a", "c"}));
    EXPECT_EQ(e.values(2, 0), 5.5);
    EXPECT_EQ(e.values(2, 1), -6.0);
}

TEST(LoadEmbeddings, NanCellIsNamed) {
    TempDir dir("emb");
    write_text(dir / "e.csv", "sample_id,e0,e1\na,1,2\nb,NaN,4\n");
    try {
        load_embeddings(dir / "e.csv", EmbeddingFormat::csv);
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_EQ(e.row(), 3u);
        EXPECT_EQ(e.column(), 2u);
        EXPECT_NE(std::string(e.what()).find("e0"), std::string::npos);
    }
}

TEST(LoadEmbeddings, MissingFileIsMissingArtifact) {
    EXPECT_THROW(load_embeddings("/nonexistent/e.csv", EmbeddingFormat::csv), MissingArtifactError);
}

TEST(LoadEmbeddings, RawPayloadShorterThanHeaderIsRejected) {
    TempDir dir("raw");
    EmbeddingMatrix e;
    e.values = Matrix::Random(100, 64);
    for (int i = 0; i < 100; ++i)
        e.sample_ids.push_back("s" + std::to_string(i));
    write_embeddings(e, dir / "e.f32", EmbeddingFormat::raw_f32);
    std::filesystem::resize_file(dir / "e.f32", 99 * 64 * 4);
    EXPECT_THROW(load_embeddings(dir / "e.f32", EmbeddingFormat::raw_f32), ValidationError);
}

TEST(LoadEmbeddings, RoundTripBothFormats) {
    TempDir dir("rt");
    EmbeddingMatrix e;
    e.values = Matrix::Random(7, 5) * 1e3;
    e.values(0, 0) = 1.0 / 3.0;
    e.values(1, 1) = -2.2250738585072014e-308;
    for (int i = 0; i < 7; ++i)
        e.sample_ids.push_back("s" + std::to_string(i));

    write_embeddings(e, dir / "e.csv", EmbeddingFormat::csv);
    const auto c = load_embeddings(dir / "e.csv", EmbeddingFormat::csv);
    EXPECT_EQ(c.sample_ids, e.sample_ids);
    EXPECT_LE((c.values - e.values).cwiseAbs().maxCoeff(), 1e-9);

    // raw-f32 is bit-exact on values that are representable in single precision.
    EmbeddingMatrix f = e;
    f.values = e.values.cast<float>().cast<double>();
    write_embeddings(f, dir / "e.f32", EmbeddingFormat::raw_f32);
    const auto r = load_embeddings(dir / "e.f32", EmbeddingFormat::raw_f32);
    EXPECT_EQ(r.sample_ids, f.sample_ids);
    EXPECT_TRUE(r.values == f.values);
}

TEST(LoadCovariates, PrefixRuleAndSecondaryColumns) {
    TempDir dir("cov");
    std::string header = "sample_id,subject_id,age,sex,apoe4,diagnosis,cm_htn,cm_dm2";
    std::string row = "a,S1,70.5,1,2,MCI,1,0";
    for (int i = 0; i < 31; ++i) {
        header += ",extra" + std::to_string(i);
        row += "," + std::to_string(i);
    }
    write_text(dir / "c.csv", header + "\n" + row + "\n");
    const auto t = load_covariates(dir / "c.csv");
    EXPECT_EQ(t.comorbidity_names, (std::vector<std::string>{"htn", "dm2"}));
    EXPECT_EQ(t.comorbidities[0][0], 1);
    EXPECT_EQ(t.secondary_names.size(), 31u);
    EXPECT_EQ(t.diagnosis[0], 1);
    EXPECT_FALSE(t.has_converter());
}

TEST(LoadCovariates, ConverterOnCognitivelyNormalRowIsRejected) {
    TempDir dir("cov");
    write_text(dir / "c.csv", "sample_id,subject_id,age,sex,apoe4,diagnosis,converter\na,S1,70,0,0,CN,1\n");
    EXPECT_THROW(load_covariates(dir / "c.csv"), ValidationError);
}

TEST(LoadCovariates, RoundTrip) {
    const auto cohort = generate_synthetic_cohort(reference_synthetic_spec(20, 8, 3));
    TempDir dir("cov");
    write_covariates(cohort.covariates, dir / "c.csv", R"({"x":1})");
    const auto t = load_covariates(dir / "c.csv");
    EXPECT_EQ(t.sample_id, cohort.covariates.sample_id);
    EXPECT_EQ(t.diagnosis, cohort.covariates.diagnosis);
    EXPECT_EQ(t.converter, cohort.covariates.converter);
    EXPECT_EQ(t.comorbidities, cohort.covariates.comorbidities);
    EXPECT_EQ(t.age, cohort.covariates.age);
}

TEST(LatestScan, MaximalVisitIsKept) {
    const auto t = small_table({"S1", "S1", "S1"}, {1, 3, 2});
    const auto r = latest_scan_per_subject(t, rows_as_index(3));
    ASSERT_EQ(r.covariates.size(), 1u);
    EXPECT_EQ(r.covariates.visit[0], 3.0);
    EXPECT_EQ(r.embeddings.values(0, 0), 1.0);
    EXPECT_TRUE(r.warnings.empty());
}

TEST(LatestScan, SingleScanSubjectsAreUnchanged) {
    const auto t = small_table({"S1", "S2", "S3"}, {1, 1, 1});
    const auto e = rows_as_index(3);
    const auto r = latest_scan_per_subject(t, e);
    EXPECT_EQ(r.covariates.sample_id, t.sample_id);
    EXPECT_TRUE(r.embeddings.values == e.values);
}

TEST(LatestScan, TieKeepsLargerSampleIdWithWarning) {
    auto t = small_table({"S1", "S1"}, {2, 2});
    t.sample_id = {"S1_b", "S1_a"};
    auto e = rows_as_index(2);
    e.sample_ids = t.sample_id;
    const auto r = latest_scan_per_subject(t, e);
    ASSERT_EQ(r.covariates.size(), 1u);
    EXPECT_EQ(r.covariates.sample_id[0], "S1_b");
    EXPECT_EQ(r.warnings.size(), 1u);
}

TEST(LatestScan, OneRowPerSubject) {
    const auto cohort = generate_synthetic_cohort(reference_synthetic_spec(60, 8, 5));
    const auto r = latest_scan_per_subject(cohort.covariates, cohort.embeddings);
    const std::set<std::string> subjects(cohort.covariates.subject_id.begin(), cohort.covariates.subject_id.end());
    EXPECT_EQ(r.covariates.size(), subjects.size());
    const std::set<std::string> kept(r.covariates.subject_id.begin(), r.covariates.subject_id.end());
    EXPECT_EQ(kept, subjects);
}

TEST(Synthetic, ZeroNoiseSingleFactorIsRankOne) {
    auto spec = reference_synthetic_spec(40, 16, 2);
    spec.factors.resize(1);
    spec.noise_sigma = 0.0;
    const auto c = generate_synthetic_cohort(spec);
    Eigen::JacobiSVD<Matrix> svd(c.embeddings.values);
    const auto& s = svd.singularValues();
    EXPECT_GT(s(0), 0.0);
    EXPECT_LT(s(1), 1e-10 * s(0));
}

TEST(Synthetic, PureFunctionOfSpec) {
    const auto spec = reference_synthetic_spec(50, 12, 9);
    const auto a = generate_synthetic_cohort(spec);
    const auto b = generate_synthetic_cohort(spec);
    EXPECT_TRUE(a.embeddings.values == b.embeddings.values);
    EXPECT_EQ(a.covariates.age, b.covariates.age);
    EXPECT_EQ(a.covariates.converter, b.covariates.converter);
    EXPECT_TRUE(a.truth.factor_values == b.truth.factor_values);
    auto other = spec;
    other.seed = 10;
    EXPECT_FALSE(generate_synthetic_cohort(other).embeddings.values == a.embeddings.values);
}

TEST(Synthetic, EmbeddingsAreDictionaryTimesFactors) {
    auto spec = reference_synthetic_spec(30, 16, 4);
    spec.noise_sigma = 0.0;
    const auto c = generate_synthetic_cohort(spec);
    const Matrix expected = c.truth.factor_values * c.truth.true_dictionary.transpose();
    EXPECT_LE((c.embeddings.values - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Synthetic, AgeDiagnosisConfoundIsVisible) {
    auto spec = reference_synthetic_spec(2000, 16, 11);
    spec.min_scans = spec.max_scans = 1;
    const auto c = generate_synthetic_cohort(spec);
    ASSERT_EQ(c.covariates.size(), 2000u);
    std::vector<double> diag(c.covariates.diagnosis.begin(), c.covariates.diagnosis.end());
    const double rho = brute_pearson(brute_ranks(c.covariates.age), brute_ranks(diag));
    EXPECT_GT(rho, 0.5);
}

TEST(Synthetic, CyclicConfoundGraphIsRejected) {
    auto spec = reference_synthetic_spec(10, 8, 1);
    spec.confound_graph.push_back({"bmi", "education", 0.3});
    spec.confound_graph.push_back({"education", "bmi", 0.3});
    EXPECT_THROW(generate_synthetic_cohort(spec), ValidationError);
}

TEST(Synthetic, ConverterOnlyOnMciRows) {
    const auto c = generate_synthetic_cohort(reference_synthetic_spec(300, 8, 6));
    for (std::size_t r = 0; r < c.covariates.size(); ++r)
        EXPECT_EQ(c.covariates.converter[r].has_value(), c.covariates.diagnosis[r] == 1);
}

TEST(Synthetic, ConfoundEdgesRoundTripThroughText) {
    const auto spec = reference_synthetic_spec();
    const auto text = format_confound_edges(spec.confound_graph);
    const auto back = parse_confound_edges(text);
    ASSERT_EQ(back.size(), spec.confound_graph.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
        EXPECT_EQ(back[i].source, spec.confound_graph[i].source);
        EXPECT_EQ(back[i].target, spec.confound_graph[i].target);
        EXPECT_EQ(back[i].strength, spec.confound_graph[i].strength);
    }
    EXPECT_THROW(parse_confound_edges("age-diagnosis"), ValidationError);
}

TEST(SplitBySubject, SubjectsNeverStraddle) {
    const auto c = generate_synthetic_cohort(reference_synthetic_spec(80, 8, 2));
    const auto [train, hold] = split_by_subject(c.covariates.subject_id, 0.25, 77);
    std::set<std::string> a, b;
    for (auto r : train)
        a.insert(c.covariates.subject_id[r]);
    for (auto r : hold)
        b.insert(c.covariates.subject_id[r]);
    for (const auto& s : b)
        EXPECT_FALSE(a.count(s));
    EXPECT_EQ(train.size() + hold.size(), c.covariates.size());
}
