#pragma once

#include "mrsae/common.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace mrsae {

struct GraphEdge {
    std::uint32_t target = 0;
    double weight = 0.0;
    double distance = 0.0;

    bool operator==(const GraphEdge&) const = default;
};

/// Directed k-nearest-neighbor graph with Gaussian kernel weights
/// w = exp(-dist^2 / (2 sigma^2)), sigma the median retained edge distance.
class ManifoldGraph {
public:
    ManifoldGraph() = default;
    ManifoldGraph(std::size_t n_nodes, std::size_t k, double sigma, std::vector<GraphEdge> edges);

    std::size_t n_nodes() const noexcept { return n_nodes_; }
    std::size_t k() const noexcept { return k_; }
    double sigma() const noexcept { return sigma_; }

    std::span<const GraphEdge> neighbors(std::size_t node) const {
        return {edges_.data() + node * k_, k_};
    }
    std::span<const GraphEdge> edges() const noexcept { return edges_; }

    /// Checks degree, self-edge, weight range and sigma invariants.
    void validate() const;

    bool operator==(const ManifoldGraph&) const = default;

private:
    std::size_t n_nodes_ = 0;
    std::size_t k_ = 0;
    double sigma_ = 0.0;
    std::vector<GraphEdge> edges_;
};

/// Gaussian kernel weight; kept in (0, 1] and equal to 1 only at zero distance.
double kernel_weight(double distance, double sigma) noexcept;

/// Full symmetric Euclidean distance matrix. Row blocks may run on `threads`
/// threads; each entry is computed once with a fixed summation order.
Matrix pairwise_distances(const Matrix& H, std::size_t threads = 1);

/// Exact k-NN graph; ties broken by smaller row index.
ManifoldGraph build_knn_graph(const Matrix& H, std::size_t k, std::size_t threads = 1);

/// One directed edge in a training batch. `source` indexes the batch, `neighbor`
/// indexes NeighborBatch::neighbors.
struct BatchEdge {
    std::uint32_t source = 0;
    std::uint32_t neighbor = 0;
    double weight = 0.0;
};

struct NeighborBatch {
    std::vector<BatchEdge> edges;
    /// Unique dataset rows referenced as neighbors, ascending.
    std::vector<std::uint32_t> neighbors;
    /// Graph edges read while building the batch; always B * k.
    std::size_t edges_touched = 0;
};

NeighborBatch neighbor_batch(const ManifoldGraph& graph, std::span<const std::size_t> batch_indices);

/// Binary layout: "MRKG" magic, u32 version, u64 n, u32 k, f64 sigma, u32 json length,
/// provenance JSON, then n*k records of (u32 neighbor, f64 weight, f64 distance).
/// All little-endian.
void write_graph(const ManifoldGraph& graph, const std::filesystem::path& path, const std::string& provenance_json = {});
ManifoldGraph read_graph(const std::filesystem::path& path);
/// source,target,weight,distance
void write_graph_csv(const ManifoldGraph& graph, const std::filesystem::path& path, const std::string& provenance_json = {});

} // namespace mrsae
