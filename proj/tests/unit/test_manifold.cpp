#include "mrsae/manifold.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

using namespace mrsae;

namespace {

double loop_distance(const Matrix& H, Eigen::Index i, Eigen::Index j) {
    double s = 0.0;
    for (Eigen::Index c = 0; c < H.cols(); ++c)
        s += (H(i, c) - H(j, c)) * (H(i, c) - H(j, c));
    return std::sqrt(s);
}

} // namespace

TEST(PairwiseDistances, MetricIdentityAndTriangle) {
    Matrix H(3, 2);
    H << 0, 0, 3, 4, 0, 0;
    const auto D = pairwise_distances(H);
    EXPECT_EQ(D(0, 1), 5.0);
    EXPECT_EQ(D(0, 2), 0.0);
    EXPECT_EQ(D(1, 0), D(0, 1));
    for (int i = 0; i < 3; ++i)
        EXPECT_EQ(D(i, i), 0.0);
}

TEST(PairwiseDistances, MatchesDoubleLoop) {
    std::srand(3);
    const Matrix H = Matrix::Random(5, 3);
    const auto D = pairwise_distances(H);
    for (Eigen::Index i = 0; i < 5; ++i)
        for (Eigen::Index j = 0; j < 5; ++j)
            EXPECT_NEAR(D(i, j), loop_distance(H, i, j), 1e-12);
}

TEST(PairwiseDistances, ThreadCountDoesNotChangeBits) {
    std::srand(8);
    const Matrix H = Matrix::Random(97, 11);
    const auto a = pairwise_distances(H, 1);
    EXPECT_TRUE(a == pairwise_distances(H, 3));
    EXPECT_TRUE(a == pairwise_distances(H, 8));
}

TEST(KernelWeight, ValueAtSigmaAndZero) {
    EXPECT_NEAR(kernel_weight(0.7, 0.7), std::exp(-0.5), 1e-15);
    EXPECT_NEAR(kernel_weight(2.0, 2.0), 0.6065306597126334, 1e-15);
    EXPECT_EQ(kernel_weight(0.0, 1.3), 1.0);
}

TEST(KernelWeight, StrictlyDecreasingInDistance) {
    double prev = kernel_weight(0.0, 0.5);
    for (int i = 1; i <= 40; ++i) {
        const double w = kernel_weight(0.05 * i, 0.5);
        EXPECT_LT(w, prev);
        EXPECT_GT(w, 0.0);
        prev = w;
    }
}

TEST(KnnGraph, DuplicatePointsGetUnitWeight) {
    Matrix H(4, 2);
    H << 0, 0, 0, 0, 5, 5, 9, 1;
    const auto g = build_knn_graph(H, 1);
    EXPECT_EQ(g.neighbors(0)[0].target, 1u);
    EXPECT_EQ(g.neighbors(0)[0].weight, 1.0);
    EXPECT_EQ(g.neighbors(1)[0].target, 0u);
    EXPECT_EQ(g.neighbors(1)[0].weight, 1.0);
}

TEST(KnnGraph, PointsOnALineMatchBruteForce) {
    Matrix H(6, 1);
    for (int i = 0; i < 6; ++i)
        H(i, 0) = i;
    const std::size_t k = 2;
    const auto g = build_knn_graph(H, k);

    // Brute force: sort all other points by (distance, index).
    std::vector<double> retained;
    std::vector<std::vector<std::size_t>> expected(6);
    for (std::size_t i = 0; i < 6; ++i) {
        std::vector<std::size_t> others;
        for (std::size_t j = 0; j < 6; ++j)
            if (j != i)
                others.push_back(j);
        std::stable_sort(others.begin(), others.end(), [&](std::size_t a, std::size_t b) {
            const double da = std::abs(double(a) - double(i)), db = std::abs(double(b) - double(i));
            return da < db || (da == db && a < b);
        });
        expected[i].assign(others.begin(), others.begin() + k);
        for (auto j : expected[i])
            retained.push_back(std::abs(double(j) - double(i)));
    }
    std::sort(retained.begin(), retained.end());
    const double sigma = (retained[retained.size() / 2 - 1] + retained[retained.size() / 2]) / 2.0;
    EXPECT_DOUBLE_EQ(g.sigma(), sigma);
    for (std::size_t i = 0; i < 6; ++i) {
        const auto nb = g.neighbors(i);
        ASSERT_EQ(nb.size(), k);
        for (std::size_t e = 0; e < k; ++e) {
            EXPECT_EQ(nb[e].target, expected[i][e]) << "node " << i;
            const double dist = std::abs(double(expected[i][e]) - double(i));
            EXPECT_DOUBLE_EQ(nb[e].distance, dist);
            EXPECT_NEAR(nb[e].weight, std::exp(-dist * dist / (2 * sigma * sigma)), 1e-15);
        }
    }
    // Interior ties go to the smaller index: node 2 sees 1 before 3.
    EXPECT_EQ(g.neighbors(2)[0].target, 1u);
    EXPECT_EQ(g.neighbors(2)[1].target, 3u);
}

TEST(KnnGraph, DegreeIsExactlyK) {
    std::srand(5);
    const Matrix H = Matrix::Random(50, 4);
    const auto g = build_knn_graph(H, 7);
    EXPECT_EQ(g.edges().size(), 50u * 7u);
    for (std::size_t i = 0; i < 50; ++i) {
        std::set<std::uint32_t> targets;
        for (const auto& e : g.neighbors(i)) {
            EXPECT_NE(e.target, i);
            targets.insert(e.target);
        }
        EXPECT_EQ(targets.size(), 7u);
    }
}

TEST(KnnGraph, DeterministicAndThreadIndependent) {
    std::srand(6);
    Matrix H = Matrix::Random(60, 3);
    H.row(10) = H.row(20); // force ties
    H.row(30) = H.row(20);
    const auto a = build_knn_graph(H, 5, 1);
    EXPECT_TRUE(a == build_knn_graph(H, 5, 1));
    EXPECT_TRUE(a == build_knn_graph(H, 5, 4));
}

TEST(KnnGraph, RejectsTooFewRows) {
    Matrix H = Matrix::Random(3, 2);
    EXPECT_THROW(build_knn_graph(H, 3), ValidationError);
}

TEST(NeighborBatch, SingleNodeHasKEdges) {
    std::srand(1);
    const auto g = build_knn_graph(Matrix::Random(40, 3), 15);
    const std::vector<std::size_t> batch{7};
    const auto nb = neighbor_batch(g, batch);
    EXPECT_EQ(nb.edges.size(), 15u);
    EXPECT_EQ(nb.edges_touched, 15u);
    EXPECT_EQ(nb.neighbors.size(), 15u);
}

TEST(NeighborBatch, WholeDatasetHasNkEdges) {
    std::srand(2);
    const auto g = build_knn_graph(Matrix::Random(30, 3), 4);
    std::vector<std::size_t> all(30);
    std::iota(all.begin(), all.end(), 0);
    const auto nb = neighbor_batch(g, all);
    EXPECT_EQ(nb.edges.size(), 120u);
    EXPECT_EQ(nb.edges_touched, 120u);
}

TEST(NeighborBatch, SharedNeighborIsStoredOnce) {
    // 4 nodes, k=2: nodes 0 and 1 both point at 2.
    std::vector<GraphEdge> edges{{1, 0.9, 0.1}, {2, 0.8, 0.2}, {0, 0.9, 0.1}, {2, 0.7, 0.3},
                                 {3, 0.9, 0.1}, {1, 0.7, 0.3}, {2, 0.9, 0.1}, {0, 0.5, 0.5}};
    const ManifoldGraph g(4, 2, 0.2, edges);
    const std::vector<std::size_t> batch{0, 1};
    const auto nb = neighbor_batch(g, batch);
    EXPECT_EQ(nb.edges.size(), 4u);
    EXPECT_EQ(nb.neighbors, (std::vector<std::uint32_t>{0, 1, 2}));
    EXPECT_LT(nb.neighbors.size(), 4u);
    // Edge endpoints resolve back to the original graph targets.
    for (std::size_t e = 0; e < nb.edges.size(); ++e) {
        const auto& be = nb.edges[e];
        const auto& ge = g.neighbors(batch[be.source])[e % 2];
        EXPECT_EQ(nb.neighbors[be.neighbor], ge.target);
        EXPECT_EQ(be.weight, ge.weight);
    }
}

TEST(NeighborBatch, TouchesExactlyBkEdges) {
    std::srand(4);
    const auto g = build_knn_graph(Matrix::Random(200, 5), 15);
    for (std::size_t b : {1u, 17u, 64u, 200u}) {
        std::vector<std::size_t> batch(b);
        std::iota(batch.begin(), batch.end(), 0);
        EXPECT_EQ(neighbor_batch(g, batch).edges_touched, b * 15);
    }
}

TEST(GraphFile, BinaryRoundTrip) {
    std::srand(9);
    const auto g = build_knn_graph(Matrix::Random(25, 3), 4);
    mrsae::testing::TempDir dir("graph");
    write_graph(g, dir / "g.bin", R"({"tool":"test"})");
    EXPECT_TRUE(read_graph(dir / "g.bin") == g);
    EXPECT_THROW(read_graph(dir / "missing.bin"), MissingArtifactError);
}
