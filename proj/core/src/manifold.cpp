#include "mrsae/manifold.hpp"
#include "mrsae/csv.hpp"
#include "mrsae/parallel.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>

namespace mrsae {

namespace {

static_assert(std::endian::native == std::endian::little, "graph serialization assumes a little-endian host");

constexpr std::size_t kTile = 64;
constexpr char kGraphMagic[4] = {'M', 'R', 'K', 'G'};
constexpr std::uint32_t kGraphVersion = 1;

inline double row_distance(const Matrix& H, Eigen::Index i, Eigen::Index j) {
    const double* a = H.row(i).data();
    const double* b = H.row(j).data();
    double s = 0.0;
    for (Eigen::Index c = 0; c < H.cols(); ++c) {
        const double diff = a[c] - b[c];
        s += diff * diff;
    }
    return std::sqrt(s);
}

template <typename T>
void put(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& in, const std::filesystem::path& path) {
    T v{};
    if (!in.read(reinterpret_cast<char*>(&v), sizeof v))
        throw ValidationError(path.string() + ": truncated graph file");
    return v;
}

} // namespace

ManifoldGraph::ManifoldGraph(std::size_t n_nodes, std::size_t k, double sigma, std::vector<GraphEdge> edges)
    : n_nodes_(n_nodes), k_(k), sigma_(sigma), edges_(std::move(edges)) {
    validate();
}

void ManifoldGraph::validate() const {
    if (!(sigma_ > 0.0) || !std::isfinite(sigma_))
        throw ValidationError("graph bandwidth sigma must be positive");
    if (edges_.size() != n_nodes_ * k_)
        throw ValidationError("graph must hold exactly n*k edges");
    for (std::size_t i = 0; i < n_nodes_; ++i)
        for (const auto& e : neighbors(i)) {
            if (e.target >= n_nodes_)
                throw ValidationError("graph edge target out of range");
            if (e.target == i)
                throw ValidationError("graph has a self-edge at node " + std::to_string(i));
            if (!(e.weight > 0.0 && e.weight <= 1.0))
                throw ValidationError("graph weight outside (0, 1]");
            if ((e.weight == 1.0) != (e.distance == 0.0))
                throw ValidationError("graph weight is 1 exactly when distance is 0");
        }
}

double kernel_weight(double distance, double sigma) noexcept {
    if (distance == 0.0)
        return 1.0;
    double w = std::exp(-(distance * distance) / (2.0 * sigma * sigma));
    if (w >= 1.0)
        w = std::nextafter(1.0, 0.0);
    if (w < std::numeric_limits<double>::min())
        w = std::numeric_limits<double>::min();
    return w;
}

Matrix pairwise_distances(const Matrix& H, std::size_t threads) {
    const auto n = static_cast<std::size_t>(H.rows());
    if (n < 2)
        throw ValidationError("pairwise distances need at least 2 rows");
    Matrix D = Matrix::Zero(H.rows(), H.rows());
    const std::size_t n_tiles = (n + kTile - 1) / kTile;
    // Each task owns whole row tiles of the upper triangle and writes only there;
    // mirroring happens after the join.
    parallel_for_blocks(n_tiles, threads, [&](std::size_t tb, std::size_t te) {
        for (std::size_t ti = tb; ti < te; ++ti) {
            const auto i0 = ti * kTile, i1 = std::min(n, i0 + kTile);
            for (std::size_t tj = ti; tj < n_tiles; ++tj) {
                const auto j0 = tj * kTile, j1 = std::min(n, j0 + kTile);
                for (auto i = i0; i < i1; ++i)
                    for (auto j = std::max(j0, i + 1); j < j1; ++j)
                        D(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                            row_distance(H, static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
            }
        }
    });
    for (Eigen::Index i = 0; i < D.rows(); ++i)
        for (Eigen::Index j = i + 1; j < D.cols(); ++j)
            D(j, i) = D(i, j);
    return D;
}

ManifoldGraph build_knn_graph(const Matrix& H, std::size_t k, std::size_t threads) {
    const auto n = static_cast<std::size_t>(H.rows());
    if (n < 2)
        throw ValidationError("k-NN graph needs at least 2 rows");
    if (k < 1 || k > n - 1)
        throw ValidationError("k must satisfy 1 <= k <= N-1 (k=" + std::to_string(k) + ", N=" + std::to_string(n) + ")");

    std::vector<GraphEdge> edges(n * k);
    const std::size_t n_tiles = (n + kTile - 1) / kTile;
    parallel_for_blocks(n_tiles, threads, [&](std::size_t tb, std::size_t te) {
        std::vector<double> dist(kTile * n);
        std::vector<std::uint32_t> order(n);
        for (std::size_t ti = tb; ti < te; ++ti) {
            const auto i0 = ti * kTile, i1 = std::min(n, i0 + kTile);
            for (std::size_t j0 = 0; j0 < n; j0 += kTile) {
                const auto j1 = std::min(n, j0 + kTile);
                for (auto i = i0; i < i1; ++i)
                    for (auto j = j0; j < j1; ++j)
                        dist[(i - i0) * n + j] =
                            i == j ? 0.0 : row_distance(H, static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
            }
            for (auto i = i0; i < i1; ++i) {
                const double* row = dist.data() + (i - i0) * n;
                order.clear();
                for (std::uint32_t j = 0; j < n; ++j)
                    if (j != i)
                        order.push_back(j);
                std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                                  [row](std::uint32_t a, std::uint32_t b) {
                                      return row[a] < row[b] || (row[a] == row[b] && a < b);
                                  });
                for (std::size_t e = 0; e < k; ++e)
                    edges[i * k + e] = GraphEdge{order[e], 0.0, row[order[e]]};
            }
        }
    });

    std::vector<double> all(edges.size());
    std::transform(edges.begin(), edges.end(), all.begin(), [](const GraphEdge& e) { return e.distance; });
    const auto mid = all.size() / 2;
    std::nth_element(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(mid), all.end());
    double sigma = all[mid];
    if (all.size() % 2 == 0) {
        const double lower = *std::max_element(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(mid));
        sigma = 0.5 * (lower + sigma);
    }
    if (!(sigma > 0.0)) {
        std::string dups;
        std::size_t listed = 0;
        for (std::size_t i = 0; i < n && listed < 5; ++i)
            for (std::size_t e = 0; e < k && listed < 5; ++e)
                if (edges[i * k + e].distance == 0.0 && i < edges[i * k + e].target) {
                    dups += (dups.empty() ? "" : ", ") + std::to_string(i) + "=" +
                            std::to_string(edges[i * k + e].target);
                    ++listed;
                }
        throw ValidationError("median neighbor distance is zero; duplicate rows: " + dups);
    }
    for (auto& e : edges)
        e.weight = kernel_weight(e.distance, sigma);
    return ManifoldGraph(n, k, sigma, std::move(edges));
}

NeighborBatch neighbor_batch(const ManifoldGraph& graph, std::span<const std::size_t> batch_indices) {
    NeighborBatch out;
    const auto k = graph.k();
    std::vector<std::uint32_t> targets;
    targets.reserve(batch_indices.size() * k);
    for (auto src : batch_indices) {
        if (src >= graph.n_nodes())
            throw ValidationError("batch index " + std::to_string(src) + " outside graph of " +
                                  std::to_string(graph.n_nodes()) + " nodes");
        for (const auto& e : graph.neighbors(src)) {
            targets.push_back(e.target);
            ++out.edges_touched;
        }
    }
    out.neighbors = targets;
    std::sort(out.neighbors.begin(), out.neighbors.end());
    out.neighbors.erase(std::unique(out.neighbors.begin(), out.neighbors.end()), out.neighbors.end());

    out.edges.reserve(targets.size());
    for (std::size_t b = 0; b < batch_indices.size(); ++b)
        for (const auto& e : graph.neighbors(batch_indices[b])) {
            const auto pos = std::lower_bound(out.neighbors.begin(), out.neighbors.end(), e.target) - out.neighbors.begin();
            out.edges.push_back(BatchEdge{static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(pos), e.weight});
        }
    return out;
}

void write_graph(const ManifoldGraph& graph, const std::filesystem::path& path, const std::string& provenance_json) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw ValidationError("cannot write " + path.string());
    out.write(kGraphMagic, 4);
    put<std::uint32_t>(out, kGraphVersion);
    put<std::uint64_t>(out, graph.n_nodes());
    put<std::uint32_t>(out, static_cast<std::uint32_t>(graph.k()));
    put<double>(out, graph.sigma());
    put<std::uint32_t>(out, static_cast<std::uint32_t>(provenance_json.size()));
    out.write(provenance_json.data(), static_cast<std::streamsize>(provenance_json.size()));
    for (const auto& e : graph.edges()) {
        put<std::uint32_t>(out, e.target);
        put<double>(out, e.weight);
        put<double>(out, e.distance);
    }
}

ManifoldGraph read_graph(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw MissingArtifactError("cannot open graph file " + path.string());
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kGraphMagic, 4) != 0)
        throw ValidationError(path.string() + ": not a graph file (bad magic)");
    const auto version = get<std::uint32_t>(in, path);
    if (version != kGraphVersion)
        throw ValidationError(path.string() + ": unsupported graph version " + std::to_string(version));
    const auto n = get<std::uint64_t>(in, path);
    const auto k = get<std::uint32_t>(in, path);
    const auto sigma = get<double>(in, path);
    const auto json_len = get<std::uint32_t>(in, path);
    in.seekg(json_len, std::ios::cur);
    std::vector<GraphEdge> edges(n * k);
    for (auto& e : edges) {
        e.target = get<std::uint32_t>(in, path);
        e.weight = get<double>(in, path);
        e.distance = get<double>(in, path);
    }
    return ManifoldGraph(n, k, sigma, std::move(edges));
}

void write_graph_csv(const ManifoldGraph& graph, const std::filesystem::path& path, const std::string& provenance_json) {
    std::ofstream out(path);
    if (!out)
        throw ValidationError("cannot write " + path.string());
    if (!provenance_json.empty())
        out << "# provenance " << provenance_json << '\n';
    out << "source,target,weight,distance\n";
    for (std::size_t i = 0; i < graph.n_nodes(); ++i)
        for (const auto& e : graph.neighbors(i))
            out << i << ',' << e.target << ',' << csv::format_double(e.weight) << ',' << csv::format_double(e.distance)
                << '\n';
}

} // namespace mrsae
