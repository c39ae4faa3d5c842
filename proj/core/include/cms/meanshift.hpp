#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "cms/data.hpp"
#include "cms/matrix.hpp"

namespace cms {

enum class KernelKind { kKnn, kUniform, kGaussian };

std::string_view to_string(KernelKind kind);
KernelKind parse_kernel_kind(std::string_view token);

struct KernelConfig {
  KernelKind kind = KernelKind::kKnn;
  std::size_t k = 8;                 // knn
  double alpha = 0.5;                // knn
  double delta = 0.9;                // uniform: cosine threshold
  double sigma = 0.1;                // gaussian bandwidth
  std::size_t max_neighbors = 1000;  // uniform / gaussian retrieval cap
  // Literal reading of the neighborhood: the query may occupy one of its own
  // top-k slots. Off by default.
  bool include_self_in_topk = false;

  void validate() const;
  /// How many neighbors to retrieve for this kernel.
  std::size_t retrieval_size() const { return kind == KernelKind::kKnn ? k : max_neighbors; }
};

struct NeighborSet {
  std::optional<std::size_t> query_index;
  std::vector<std::size_t> indices;   // descending cosine, ties by ascending index
  std::vector<double> similarities;
  bool reduced = false;               // fewer than k candidates were available
};

/// Exhaustive top-k by cosine similarity (dot product of unit vectors).
NeighborSet knn_search(std::span<const double> query, const EmbeddingBank& bank, std::size_t k,
                       std::optional<std::size_t> exclude_index = std::nullopt);

struct KernelWeights {
  double center = 0.0;
  double neighbor = 0.0;
};

/// Center weight 1 - alpha, per-neighbor weight alpha / k. The divisor is the
/// configured k even when m < k neighbors exist.
KernelWeights kernel_weights(const KernelConfig& cfg, std::size_t m);

/// Weight a cosine-similarity kernel assigns to a neighbor at cosine `cos`.
double cosine_kernel(const KernelConfig& cfg, double cos);

struct ShiftResult {
  std::vector<double> z;               // unit vector
  double aggregate_norm = 0.0;         // norm of the weighted sum before normalization
  double center_weight = 0.0;
  std::vector<double> neighbor_weights;
};

/// One mean-shift step of `query` toward its neighbors.
ShiftResult shift_one_detailed(std::span<const double> query, std::span<const std::span<const double>> neighbors,
                               const KernelConfig& cfg);

std::vector<double> shift_one(std::span<const double> query, std::span<const std::span<const double>> neighbors,
                              const KernelConfig& cfg);

/// Gradient w.r.t. the query given the gradient w.r.t. the shifted vector.
/// Neighbors are constants.
std::vector<double> shift_one_backward(const ShiftResult& shift, std::span<const std::span<const double>> neighbors,
                                       const KernelConfig& cfg, std::span<const double> grad_z);

/// Synchronous mean shift of every row toward its neighbors in the input bank.
EmbeddingBank shift_all(const EmbeddingBank& bank, const KernelConfig& cfg);

}  // namespace cms
