#include "mrsae/manifold.hpp"
#include "mrsae/rng.hpp"
#include "mrsae/sae.hpp"
#include "mrsae/stats.hpp"

#include <benchmark/benchmark.h>

#include <numeric>

using namespace mrsae;

namespace {

Matrix gaussian(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
    Rng rng(seed);
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i)
        m.data()[i] = rng.normal();
    return m;
}

void BM_PairwiseDistances(benchmark::State& state) {
    const Matrix H = gaussian(state.range(0), 64, 1);
    const auto threads = static_cast<std::size_t>(state.range(1));
    for (auto _ : state)
        benchmark::DoNotOptimize(pairwise_distances(H, threads));
    state.SetItemsProcessed(state.iterations() * state.range(0) * state.range(0));
}
BENCHMARK(BM_PairwiseDistances)->Args({500, 1})->Args({2000, 1})->Args({2000, 4})->Unit(benchmark::kMillisecond);

void BM_KnnGraph(benchmark::State& state) {
    const Matrix H = gaussian(state.range(0), 64, 2);
    for (auto _ : state)
        benchmark::DoNotOptimize(build_knn_graph(H, 15));
}
BENCHMARK(BM_KnnGraph)->Arg(500)->Arg(2000)->Unit(benchmark::kMillisecond);

void BM_NeighborBatch(benchmark::State& state) {
    const auto graph = build_knn_graph(gaussian(2000, 64, 3), 15);
    std::vector<std::size_t> batch(static_cast<std::size_t>(state.range(0)));
    std::iota(batch.begin(), batch.end(), 0);
    for (auto _ : state)
        benchmark::DoNotOptimize(neighbor_batch(graph, batch));
}
BENCHMARK(BM_NeighborBatch)->Arg(64)->Arg(256);

void BM_LossAndGradients(benchmark::State& state) {
    const Matrix H = gaussian(2000, 64, 4);
    const auto graph = build_knn_graph(H, 15);
    const auto params = init_params(H, 128, 5);
    std::vector<std::size_t> batch(256);
    std::iota(batch.begin(), batch.end(), 0);
    const auto nb = neighbor_batch(graph, batch);
    Matrix X(256, 64);
    for (std::size_t i = 0; i < batch.size(); ++i)
        X.row(static_cast<Eigen::Index>(i)) = H.row(static_cast<Eigen::Index>(batch[i]));
    ManifoldTerm term;
    term.neighbors.resize(static_cast<Eigen::Index>(nb.neighbors.size()), 64);
    for (std::size_t i = 0; i < nb.neighbors.size(); ++i)
        term.neighbors.row(static_cast<Eigen::Index>(i)) = H.row(nb.neighbors[i]);
    term.edges = nb.edges;
    const double lambda = static_cast<double>(state.range(0)) / 10.0;
    for (auto _ : state)
        benchmark::DoNotOptimize(loss_and_gradients(params, X, &term, lambda, {ActivationKind::topk, 8}));
}
BENCHMARK(BM_LossAndGradients)->Arg(0)->Arg(1)->Unit(benchmark::kMicrosecond);

void BM_TrainingEpoch(benchmark::State& state) {
    const Matrix H = gaussian(2000, 64, 6);
    const auto graph = build_knn_graph(H, 15);
    TrainConfig cfg;
    cfg.activation = {ActivationKind::topk, 8};
    cfg.lambda = static_cast<double>(state.range(0)) / 10.0;
    cfg.epochs = 1;
    for (auto _ : state)
        benchmark::DoNotOptimize(train(H, graph, cfg));
}
BENCHMARK(BM_TrainingEpoch)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_PartialSpearman(benchmark::State& state) {
    Rng rng(7);
    std::vector<double> f(static_cast<std::size_t>(state.range(0))), v(f.size()), a(f.size());
    for (std::size_t i = 0; i < f.size(); ++i) {
        f[i] = rng.normal();
        v[i] = rng.normal();
        a[i] = rng.normal();
    }
    for (auto _ : state)
        benchmark::DoNotOptimize(stats::partial_spearman_age(f, v, a));
}
BENCHMARK(BM_PartialSpearman)->Arg(700)->Arg(5000);

} // namespace

BENCHMARK_MAIN();
