#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "cms/matrix.hpp"

namespace cms {

struct HeadConfig {
  std::size_t in_dim = 768;
  std::size_t hidden_dim = 2048;
  std::size_t out_dim = 768;
  std::size_t num_blocks = 3;  // hidden (linear, GeLU) pairs before the output layer
  std::uint64_t init_seed = 0;

  void validate() const;
  bool operator==(const HeadConfig&) const = default;
};

/// Exact parameter count for a head built from `cfg`.
std::size_t parameter_count(const HeadConfig& cfg);

struct LayerShape {
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t offset = 0;  // start of the weights in the flat parameter vector; bias follows
};

/// MLP projection head: num_blocks x (linear -> GeLU), then a linear layer to
/// out_dim, then L2 normalization. All parameters live in one flat vector,
/// layer by layer, weights (row-major, out x in) followed by bias.
class ProjectionHead {
 public:
  ProjectionHead() = default;
  explicit ProjectionHead(const HeadConfig& cfg);  // zero parameters

  const HeadConfig& config() const noexcept { return cfg_; }
  const std::vector<LayerShape>& layers() const noexcept { return layers_; }

  std::span<double> parameters() noexcept { return params_; }
  std::span<const double> parameters() const noexcept { return params_; }

  std::span<double> weights(std::size_t layer);
  std::span<const double> weights(std::size_t layer) const;
  std::span<double> bias(std::size_t layer);
  std::span<const double> bias(std::size_t layer) const;

  bool operator==(const ProjectionHead& other) const { return cfg_ == other.cfg_ && params_ == other.params_; }

 private:
  HeadConfig cfg_;
  std::vector<LayerShape> layers_;
  std::vector<double> params_;
};

/// Weights uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], biases zero.
ProjectionHead init_head(const HeadConfig& cfg);

struct ForwardTape {
  std::size_t param_count = 0;
  std::vector<Matrix> inputs;  // input to each layer
  std::vector<Matrix> pre;     // pre-activation of each hidden layer
  std::vector<double> norms;   // norm of the final linear output per row
  Matrix outputs;              // normalized rows
};

struct ForwardResult {
  Matrix embeddings;  // unit rows
  ForwardTape tape;
};

ForwardResult forward(const ProjectionHead& head, const Matrix& base);

/// Gradient of a scalar objective w.r.t. the flat parameters, given its
/// gradient w.r.t. the normalized embeddings produced by the taped forward.
std::vector<double> backward(const ProjectionHead& head, const ForwardTape& tape, const Matrix& grad_embeddings);

double gelu(double x);
double gelu_derivative(double x);

struct OptimizerConfig {
  double learning_rate = 0.01;
  double weight_decay = 0.00005;
  double momentum = 0.9;
  std::size_t batch_size = 128;

  void validate() const;
};

struct MomentumState {
  std::vector<double> velocity;
};

/// m <- momentum*m + grad + weight_decay*theta; theta <- theta - lr*m.
void sgd_step(ProjectionHead& head, std::span<const double> grads, const OptimizerConfig& opt, MomentumState& state);

/// Two independent tangent-space Gaussian perturbations of a unit vector,
/// renormalized. noise_scale = 0 returns two copies of `base`.
std::pair<std::vector<double>, std::vector<double>> make_views(std::span<const double> base, double noise_scale,
                                                               std::mt19937_64& rng);

/// CMSH: "CMSH", u32 version, u32 in, u32 hidden, u32 out, u32 blocks,
/// u64 seed, then the parameters as f64, all little-endian.
void save_head(const ProjectionHead& head, const std::filesystem::path& path);
ProjectionHead load_head(const std::filesystem::path& path);

}  // namespace cms
