#include "cms/meanshift.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "cms/error.hpp"
#include "cms/parallel.hpp"

namespace cms {

namespace {
constexpr double kDegenerateNorm = 1e-12;
}

std::string_view to_string(KernelKind kind) {
  switch (kind) {
    case KernelKind::kKnn: return "knn";
    case KernelKind::kUniform: return "uniform";
    case KernelKind::kGaussian: return "gaussian";
  }
  return "knn";
}

KernelKind parse_kernel_kind(std::string_view token) {
  if (token == "knn") return KernelKind::kKnn;
  if (token == "uniform") return KernelKind::kUniform;
  if (token == "gaussian") return KernelKind::kGaussian;
  throw Error(ErrorCode::kValidation, "unknown kernel '" + std::string(token) + "'");
}

void KernelConfig::validate() const {
  switch (kind) {
    case KernelKind::kKnn:
      if (k == 0) throw Error(ErrorCode::kValidation, "k must be positive");
      if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error(ErrorCode::kValidation, "alpha must be in [0, 1]");
      break;
    case KernelKind::kUniform:
      if (!(delta >= -1.0 && delta <= 1.0)) throw Error(ErrorCode::kValidation, "delta must be in [-1, 1]");
      if (max_neighbors == 0) throw Error(ErrorCode::kValidation, "max_neighbors must be positive");
      break;
    case KernelKind::kGaussian:
      if (!(sigma > 0.0)) throw Error(ErrorCode::kValidation, "sigma must be positive");
      if (max_neighbors == 0) throw Error(ErrorCode::kValidation, "max_neighbors must be positive");
      break;
  }
}

NeighborSet knn_search(std::span<const double> query, const EmbeddingBank& bank, std::size_t k,
                       std::optional<std::size_t> exclude_index) {
  if (bank.count() == 0) throw Error(ErrorCode::kEmpty, "knn_search on an empty bank");
  if (k == 0) throw Error(ErrorCode::kValidation, "k must be positive");
  if (query.size() != bank.dim()) throw Error(ErrorCode::kShapeMismatch, "query dimension differs from bank");

  std::vector<std::size_t> candidates;
  candidates.reserve(bank.count());
  std::vector<double> sims(bank.count());
  for (std::size_t j = 0; j < bank.count(); ++j) {
    if (exclude_index && *exclude_index == j) continue;
    sims[j] = dot(query, bank.row(j));
    candidates.push_back(j);
  }

  NeighborSet result;
  result.query_index = exclude_index;
  const std::size_t take = std::min(k, candidates.size());
  result.reduced = take < k;
  auto better = [&](std::size_t a, std::size_t b) { return sims[a] > sims[b] || (sims[a] == sims[b] && a < b); };
  std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(take), candidates.end(),
                    better);
  result.indices.assign(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(take));
  result.similarities.reserve(take);
  for (const auto j : result.indices) result.similarities.push_back(sims[j]);
  return result;
}

KernelWeights kernel_weights(const KernelConfig& cfg, std::size_t /*m*/) {
  return {1.0 - cfg.alpha, cfg.alpha / static_cast<double>(cfg.k)};
}

double cosine_kernel(const KernelConfig& cfg, double cos) {
  switch (cfg.kind) {
    case KernelKind::kUniform: return cos >= cfg.delta ? 1.0 : 0.0;
    case KernelKind::kGaussian: return std::exp(-(1.0 - cos) / (2.0 * cfg.sigma * cfg.sigma));
    case KernelKind::kKnn: break;
  }
  throw Error(ErrorCode::kValidation, "cosine_kernel called for the knn kernel");
}

ShiftResult shift_one_detailed(std::span<const double> query, std::span<const std::span<const double>> neighbors,
                               const KernelConfig& cfg) {
  ShiftResult out;
  out.neighbor_weights.resize(neighbors.size());
  if (cfg.kind == KernelKind::kKnn) {
    const auto w = kernel_weights(cfg, neighbors.size());
    out.center_weight = w.center;
    std::fill(out.neighbor_weights.begin(), out.neighbor_weights.end(), w.neighbor);
  } else {
    // The query sits in its own neighborhood with cos = 1, so its weight is phi(1) = 1.
    out.center_weight = 1.0;
    for (std::size_t j = 0; j < neighbors.size(); ++j) {
      out.neighbor_weights[j] = cosine_kernel(cfg, dot(query, neighbors[j]));
    }
  }

  out.z.resize(query.size());
  for (std::size_t t = 0; t < query.size(); ++t) out.z[t] = out.center_weight * query[t];
  for (std::size_t j = 0; j < neighbors.size(); ++j) {
    const double w = out.neighbor_weights[j];
    if (w == 0.0) continue;
    for (std::size_t t = 0; t < query.size(); ++t) out.z[t] += w * neighbors[j][t];
  }
  out.aggregate_norm = norm(out.z);
  if (!(out.aggregate_norm >= kDegenerateNorm)) {
    throw Error(ErrorCode::kDegenerate, "mean-shift aggregate has norm " + std::to_string(out.aggregate_norm));
  }
  for (double& x : out.z) x /= out.aggregate_norm;
  return out;
}

std::vector<double> shift_one(std::span<const double> query, std::span<const std::span<const double>> neighbors,
                              const KernelConfig& cfg) {
  return shift_one_detailed(query, neighbors, cfg).z;
}

std::vector<double> shift_one_backward(const ShiftResult& shift, std::span<const std::span<const double>> neighbors,
                                       const KernelConfig& cfg, std::span<const double> grad_z) {
  const auto& z = shift.z;
  const double radial = dot(grad_z, z);
  std::vector<double> grad_u(z.size());
  for (std::size_t t = 0; t < z.size(); ++t) grad_u[t] = (grad_z[t] - radial * z[t]) / shift.aggregate_norm;

  std::vector<double> grad_q(z.size());
  for (std::size_t t = 0; t < z.size(); ++t) grad_q[t] = shift.center_weight * grad_u[t];
  if (cfg.kind == KernelKind::kGaussian) {
    // d phi_j / d q = phi_j / (2 sigma^2) * n_j
    const double inv = 1.0 / (2.0 * cfg.sigma * cfg.sigma);
    for (std::size_t j = 0; j < neighbors.size(); ++j) {
      const double c = shift.neighbor_weights[j] * inv * dot(neighbors[j], grad_u);
      if (c == 0.0) continue;
      for (std::size_t t = 0; t < z.size(); ++t) grad_q[t] += c * neighbors[j][t];
    }
  }
  return grad_q;
}

EmbeddingBank shift_all(const EmbeddingBank& bank, const KernelConfig& cfg) {
  cfg.validate();
  Matrix out(bank.count(), bank.dim());
  const std::size_t retrieve = cfg.retrieval_size();
  parallel_for(bank.count(), [&](std::size_t begin, std::size_t end) {
    std::vector<std::span<const double>> neighbors;
    for (std::size_t i = begin; i < end; ++i) {
      const auto exclude = cfg.include_self_in_topk ? std::nullopt : std::optional<std::size_t>(i);
      neighbors.clear();
      const auto found = knn_search(bank.row(i), bank, retrieve, exclude);
      for (const auto j : found.indices) neighbors.push_back(bank.row(j));
      try {
        const auto z = shift_one(bank.row(i), neighbors, cfg);
        std::copy(z.begin(), z.end(), out.row(i).begin());
      } catch (const Error& e) {
        throw Error(e.code(), "row " + std::to_string(i) + ": " + e.what());
      }
    }
  });
  return EmbeddingBank(std::move(out));
}

}  // namespace cms
