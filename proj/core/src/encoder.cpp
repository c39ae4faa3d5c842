#include "cms/encoder.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <numbers>

#include "cms/error.hpp"
#include "cms/parallel.hpp"

namespace cms {

void HeadConfig::validate() const {
  if (in_dim == 0 || hidden_dim == 0 || out_dim == 0) {
    throw Error(ErrorCode::kValidation, "head dimensions must be positive");
  }
  if (num_blocks == 0) throw Error(ErrorCode::kValidation, "num_blocks must be at least 1");
}

namespace {

std::vector<LayerShape> layer_shapes(const HeadConfig& cfg) {
  std::vector<LayerShape> shapes;
  std::size_t offset = 0;
  std::size_t in = cfg.in_dim;
  for (std::size_t l = 0; l <= cfg.num_blocks; ++l) {
    const std::size_t out = l == cfg.num_blocks ? cfg.out_dim : cfg.hidden_dim;
    shapes.push_back({in, out, offset});
    offset += out * in + out;
    in = out;
  }
  return shapes;
}

}  // namespace

std::size_t parameter_count(const HeadConfig& cfg) {
  const auto shapes = layer_shapes(cfg);
  const auto& last = shapes.back();
  return last.offset + last.out * last.in + last.out;
}

ProjectionHead::ProjectionHead(const HeadConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  layers_ = layer_shapes(cfg_);
  params_.assign(parameter_count(cfg_), 0.0);
}

std::span<double> ProjectionHead::weights(std::size_t layer) {
  const auto& s = layers_[layer];
  return {params_.data() + s.offset, s.out * s.in};
}

std::span<const double> ProjectionHead::weights(std::size_t layer) const {
  const auto& s = layers_[layer];
  return {params_.data() + s.offset, s.out * s.in};
}

std::span<double> ProjectionHead::bias(std::size_t layer) {
  const auto& s = layers_[layer];
  return {params_.data() + s.offset + s.out * s.in, s.out};
}

std::span<const double> ProjectionHead::bias(std::size_t layer) const {
  const auto& s = layers_[layer];
  return {params_.data() + s.offset + s.out * s.in, s.out};
}

ProjectionHead init_head(const HeadConfig& cfg) {
  ProjectionHead head(cfg);
  std::mt19937_64 rng(cfg.init_seed);
  for (std::size_t l = 0; l < head.layers().size(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(head.layers()[l].in));
    std::uniform_real_distribution<double> uniform(-bound, bound);
    for (double& w : head.weights(l)) w = uniform(rng);
  }
  return head;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_derivative(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

namespace {

// y[r] = W x[r] + b for every row.
Matrix linear_forward(const Matrix& x, std::span<const double> w, std::span<const double> b, std::size_t out) {
  Matrix y(x.rows(), out);
  const std::size_t in = x.cols();
  parallel_for(x.rows(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t r = begin; r < end; ++r) {
      const auto xr = x.row(r);
      auto yr = y.row(r);
      for (std::size_t o = 0; o < out; ++o) yr[o] = b[o] + dot(w.subspan(o * in, in), xr);
    }
  });
  return y;
}

}  // namespace

ForwardResult forward(const ProjectionHead& head, const Matrix& base) {
  const auto& cfg = head.config();
  if (base.cols() != cfg.in_dim) {
    throw Error(ErrorCode::kShapeMismatch, "base features have dim " + std::to_string(base.cols()) +
                                               ", head expects " + std::to_string(cfg.in_dim));
  }
  ForwardResult result;
  auto& tape = result.tape;
  tape.param_count = head.parameters().size();
  const std::size_t num_layers = head.layers().size();

  Matrix x = base;
  for (std::size_t l = 0; l < num_layers; ++l) {
    Matrix y = linear_forward(x, head.weights(l), head.bias(l), head.layers()[l].out);
    tape.inputs.push_back(std::move(x));
    if (l + 1 < num_layers) {
      x = y;
      for (double& v : x.data()) v = gelu(v);
      tape.pre.push_back(std::move(y));
    } else {
      x = std::move(y);
    }
  }

  tape.norms.resize(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const double n = norm(x.row(r));
    if (!std::isfinite(n)) throw Error(ErrorCode::kNumeric, "non-finite head output at row " + std::to_string(r));
    if (n == 0.0) throw Error(ErrorCode::kDegenerate, "zero-norm head output at row " + std::to_string(r));
    tape.norms[r] = n;
    for (double& v : x.row(r)) v /= n;
  }
  tape.outputs = x;
  result.embeddings = std::move(x);
  return result;
}

std::vector<double> backward(const ProjectionHead& head, const ForwardTape& tape, const Matrix& grad_embeddings) {
  const std::size_t num_layers = head.layers().size();
  if (tape.param_count != head.parameters().size() || tape.inputs.size() != num_layers ||
      grad_embeddings.rows() != tape.norms.size() || grad_embeddings.cols() != head.config().out_dim) {
    throw Error(ErrorCode::kShapeMismatch, "tape does not match head or gradient batch");
  }
  const std::size_t batch = grad_embeddings.rows();
  std::vector<double> grads(head.parameters().size(), 0.0);

  // Normalization Jacobian: du = (g - (g.v) v) / |u|, with v = u / |u|.
  Matrix delta(batch, head.config().out_dim);
  for (std::size_t r = 0; r < batch; ++r) {
    const auto g = grad_embeddings.row(r);
    const auto v = tape.outputs.row(r);
    auto d = delta.row(r);
    const double n = tape.norms[r];
    const double radial = dot(g, v);
    for (std::size_t o = 0; o < d.size(); ++o) d[o] = (g[o] - radial * v[o]) / n;
  }

  for (std::size_t l = num_layers; l-- > 0;) {
    const auto& shape = head.layers()[l];
    const Matrix& x = tape.inputs[l];
    std::span<double> dw(grads.data() + shape.offset, shape.out * shape.in);
    std::span<double> db(grads.data() + shape.offset + shape.out * shape.in, shape.out);
    parallel_for(shape.out, [&](std::size_t begin, std::size_t end) {
      for (std::size_t o = begin; o < end; ++o) {
        auto dwo = dw.subspan(o * shape.in, shape.in);
        double bsum = 0.0;
        for (std::size_t r = 0; r < batch; ++r) {
          const double d = delta(r, o);
          bsum += d;
          const auto xr = x.row(r);
          for (std::size_t i = 0; i < shape.in; ++i) dwo[i] += d * xr[i];
        }
        db[o] = bsum;
      }
    });
    if (l == 0) break;

    const auto w = head.weights(l);
    const Matrix& pre = tape.pre[l - 1];
    Matrix next(batch, shape.in);
    parallel_for(batch, [&](std::size_t begin, std::size_t end) {
      for (std::size_t r = begin; r < end; ++r) {
        auto nr = next.row(r);
        const auto dr = delta.row(r);
        for (std::size_t o = 0; o < shape.out; ++o) {
          const double d = dr[o];
          if (d == 0.0) continue;
          const auto wo = w.subspan(o * shape.in, shape.in);
          for (std::size_t i = 0; i < shape.in; ++i) nr[i] += d * wo[i];
        }
        const auto pr = pre.row(r);
        for (std::size_t i = 0; i < shape.in; ++i) nr[i] *= gelu_derivative(pr[i]);
      }
    });
    delta = std::move(next);
  }
  return grads;
}

void OptimizerConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw Error(ErrorCode::kValidation, "learning_rate must be non-negative");
  }
  if (!(weight_decay >= 0.0)) throw Error(ErrorCode::kValidation, "weight_decay must be non-negative");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw Error(ErrorCode::kValidation, "momentum must be in [0, 1)");
  if (batch_size == 0) throw Error(ErrorCode::kValidation, "batch_size must be positive");
}

void sgd_step(ProjectionHead& head, std::span<const double> grads, const OptimizerConfig& opt, MomentumState& state) {
  auto params = head.parameters();
  if (grads.size() != params.size()) throw Error(ErrorCode::kShapeMismatch, "gradient size mismatch");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads[i])) {
      throw Error(ErrorCode::kNumeric, "non-finite gradient at parameter " + std::to_string(i));
    }
  }
  if (state.velocity.size() != params.size()) state.velocity.assign(params.size(), 0.0);
  for (std::size_t i = 0; i < params.size(); ++i) {
    double& m = state.velocity[i];
    m = opt.momentum * m + grads[i] + opt.weight_decay * params[i];
    params[i] -= opt.learning_rate * m;
  }
}

std::pair<std::vector<double>, std::vector<double>> make_views(std::span<const double> base, double noise_scale,
                                                               std::mt19937_64& rng) {
  auto perturb = [&] {
    std::vector<double> view(base.begin(), base.end());
    if (noise_scale == 0.0) return view;
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> g(base.size());
    for (double& x : g) x = normal(rng);
    const double radial = dot(g, base);
    for (std::size_t i = 0; i < view.size(); ++i) view[i] += noise_scale * (g[i] - radial * base[i]);
    const double n = norm(view);
    for (double& x : view) x /= n;
    return view;
  };
  auto a = perturb();
  auto b = perturb();
  return {std::move(a), std::move(b)};
}

// ---------------------------------------------------------------------------
// CMSH checkpoints

namespace {

constexpr char kHeadMagic[4] = {'C', 'M', 'S', 'H'};
constexpr std::uint32_t kHeadVersion = 1;
constexpr std::size_t kHeadHeaderSize = 4 + 4 * 5 + 8;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_u(const std::vector<std::uint8_t>& in, std::size_t offset, std::size_t width) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(in[offset + i]) << (8 * i);
  return v;
}

std::uint32_t checked_u32(std::size_t v) {
  if (v > std::numeric_limits<std::uint32_t>::max()) throw Error(ErrorCode::kValidation, "dimension too large");
  return static_cast<std::uint32_t>(v);
}

}  // namespace

void save_head(const ProjectionHead& head, const std::filesystem::path& path) {
  const auto& cfg = head.config();
  std::vector<std::uint8_t> out(std::begin(kHeadMagic), std::end(kHeadMagic));
  put_u32(out, kHeadVersion);
  put_u32(out, checked_u32(cfg.in_dim));
  put_u32(out, checked_u32(cfg.hidden_dim));
  put_u32(out, checked_u32(cfg.out_dim));
  put_u32(out, checked_u32(cfg.num_blocks));
  put_u64(out, cfg.init_seed);
  for (const double p : head.parameters()) put_u64(out, std::bit_cast<std::uint64_t>(p));

  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw Error(ErrorCode::kIo, "cannot open " + path.string() + " for writing");
  file.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!file) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

ProjectionHead load_head(const std::filesystem::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  const std::vector<std::uint8_t> in{std::istreambuf_iterator<char>(file), std::istreambuf_iterator<char>()};
  if (in.size() < kHeadHeaderSize || std::memcmp(in.data(), kHeadMagic, 4) != 0) {
    throw Error(ErrorCode::kFormat, "missing CMSH magic");
  }
  if (get_u(in, 4, 4) != kHeadVersion) throw Error(ErrorCode::kFormat, "unsupported CMSH version");
  HeadConfig cfg;
  cfg.in_dim = get_u(in, 8, 4);
  cfg.hidden_dim = get_u(in, 12, 4);
  cfg.out_dim = get_u(in, 16, 4);
  cfg.num_blocks = get_u(in, 20, 4);
  cfg.init_seed = get_u(in, 24, 8);
  cfg.validate();
  ProjectionHead head(cfg);
  auto params = head.parameters();
  if (in.size() != kHeadHeaderSize + 8 * params.size()) {
    throw Error(ErrorCode::kCorruption, "CMSH payload size does not match header dimensions");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    params[i] = std::bit_cast<double>(get_u(in, kHeadHeaderSize + 8 * i, 8));
  }
  return head;
}

}  // namespace cms
