#include "cms/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>

#include "cms/error.hpp"

namespace cms {

void LossConfig::validate() const {
  if (!(tau_u > 0.0) || !(tau_s > 0.0)) throw Error(ErrorCode::kValidation, "temperatures must be positive");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw Error(ErrorCode::kValidation, "lambda must be in [0, 1]");
}

namespace {

void check_batch(const ContrastiveBatch& batch) {
  const auto b = batch.anchors_z.rows();
  const auto d = batch.anchors_z.cols();
  if (batch.positives_z.rows() != b || batch.positives_z.cols() != d || batch.raw_v.rows() != b ||
      batch.raw_v.cols() != d || batch.labels.size() != b) {
    throw Error(ErrorCode::kShapeMismatch, "contrastive batch members are not aligned");
  }
}

void axpy(double a, std::span<const double> x, std::span<double> y) {
  for (std::size_t t = 0; t < x.size(); ++t) y[t] += a * x[t];
}

// One InfoNCE-style anchor term over rows of `x`:
//   -mean_{p in positives} x_r.x_p / tau + log sum_{c in denominator} exp(x_r.x_c / tau)
// Accumulates scale * gradient into `grad` and returns the term.
double anchor_term(const Matrix& x, std::size_t r, std::span<const std::size_t> positives,
                   std::span<const std::size_t> denominator, double tau, double scale, Matrix& grad) {
  const auto xr = x.row(r);
  std::vector<double> logits(denominator.size());
  double max_logit = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < denominator.size(); ++c) {
    logits[c] = dot(xr, x.row(denominator[c])) / tau;
    max_logit = std::max(max_logit, logits[c]);
  }
  double sum = 0.0;
  for (double& l : logits) {
    l = std::exp(l - max_logit);
    sum += l;
  }
  const double lse = max_logit + std::log(sum);

  const double inv_pos = 1.0 / static_cast<double>(positives.size());
  double pos_mean = 0.0;
  for (const auto p : positives) pos_mean += dot(xr, x.row(p));
  pos_mean *= inv_pos / tau;

  auto gr = grad.row(r);
  for (const auto p : positives) {
    axpy(-scale * inv_pos / tau, x.row(p), gr);
    axpy(-scale * inv_pos / tau, xr, grad.row(p));
  }
  for (std::size_t c = 0; c < denominator.size(); ++c) {
    const double w = logits[c] / sum;
    axpy(scale * w / tau, x.row(denominator[c]), gr);
    axpy(scale * w / tau, xr, grad.row(denominator[c]));
  }
  return lse - pos_mean;
}

}  // namespace

CmsLossResult cms_loss(const ContrastiveBatch& batch, double tau_u, CmsOptions options) {
  check_batch(batch);
  if (!(tau_u > 0.0)) throw Error(ErrorCode::kValidation, "tau_u must be positive");
  const std::size_t b = batch.size();
  if (b < 2) throw Error(ErrorCode::kValidation, "cms_loss needs at least two items in the batch");
  const std::size_t d = batch.anchors_z.cols();

  // Rows 0..B-1 are view a, rows B..2B-1 view b.
  Matrix x(2 * b, d);
  for (std::size_t i = 0; i < b; ++i) {
    std::copy(batch.anchors_z.row(i).begin(), batch.anchors_z.row(i).end(), x.row(i).begin());
    std::copy(batch.positives_z.row(i).begin(), batch.positives_z.row(i).end(), x.row(b + i).begin());
  }

  const std::size_t views = options.symmetric ? 2 : 1;
  const std::size_t terms = views * b;
  const double scale = 1.0 / static_cast<double>(terms);
  Matrix grad(2 * b, d);
  double total = 0.0;
  std::vector<std::size_t> denominator;
  for (std::size_t view = 0; view < views; ++view) {
    const std::size_t own = view * b;
    const std::size_t other = (1 - view) * b;
    for (std::size_t i = 0; i < b; ++i) {
      denominator.clear();
      for (std::size_t j = 0; j < b; ++j) {
        if (j != i) denominator.push_back(own + j);
      }
      if (options.simclr_denominator) {
        for (std::size_t j = 0; j < b; ++j) denominator.push_back(other + j);
      }
      const std::size_t positive = other + i;
      total += anchor_term(x, own + i, std::span(&positive, 1), denominator, tau_u, scale, grad);
    }
  }

  CmsLossResult out;
  out.value = total * scale;
  out.anchor_terms = terms;
  out.grad_anchors = Matrix(b, d);
  out.grad_positives = Matrix(b, d);
  for (std::size_t i = 0; i < b; ++i) {
    std::copy(grad.row(i).begin(), grad.row(i).end(), out.grad_anchors.row(i).begin());
    std::copy(grad.row(b + i).begin(), grad.row(b + i).end(), out.grad_positives.row(i).begin());
  }
  return out;
}

SupConResult sup_con_loss(const ContrastiveBatch& batch, double tau_s) {
  check_batch(batch);
  if (!(tau_s > 0.0)) throw Error(ErrorCode::kValidation, "tau_s must be positive");
  const std::size_t b = batch.size();

  std::vector<std::size_t> labeled;
  for (std::size_t i = 0; i < b; ++i) {
    if (batch.labels[i]) labeled.push_back(i);
  }

  struct Anchor {
    std::size_t row;
    std::vector<std::size_t> positives;
    std::vector<std::size_t> negatives;
  };
  std::vector<Anchor> anchors;
  for (const auto i : labeled) {
    Anchor a{i, {}, {}};
    for (const auto j : labeled) {
      if (j == i) continue;
      (*batch.labels[j] == *batch.labels[i] ? a.positives : a.negatives).push_back(j);
    }
    if (!a.positives.empty() && !a.negatives.empty()) anchors.push_back(std::move(a));
  }

  SupConResult out;
  out.grad_raw = Matrix(b, batch.raw_v.cols());
  if (anchors.empty()) {
    out.empty_positive = true;
    return out;
  }
  const double scale = 1.0 / static_cast<double>(anchors.size());
  double total = 0.0;
  for (const auto& a : anchors) {
    total += anchor_term(batch.raw_v, a.row, a.positives, a.negatives, tau_s, scale, out.grad_raw);
  }
  out.value = total * scale;
  out.anchor_terms = anchors.size();
  return out;
}

TotalLossResult total_loss(const ContrastiveBatch& batch, const LossConfig& cfg) {
  cfg.validate();
  const auto cms = cms_loss(batch, cfg.tau_u, {cfg.symmetric, cfg.simclr_denominator});
  TotalLossResult out;
  out.cms = cms.value;
  out.grad_anchors = cms.grad_anchors;
  out.grad_positives = cms.grad_positives;
  for (double& g : out.grad_anchors.data()) g *= 1.0 - cfg.lambda;
  for (double& g : out.grad_positives.data()) g *= 1.0 - cfg.lambda;

  if (cfg.lambda > 0.0) {
    const auto sc = sup_con_loss(batch, cfg.tau_s);
    out.sup_con = sc.value;
    out.empty_positive = sc.empty_positive;
    out.grad_raw = sc.grad_raw;
    for (double& g : out.grad_raw.data()) g *= cfg.lambda;
  } else {
    out.grad_raw = Matrix(batch.size(), batch.raw_v.cols());
  }
  out.value = cfg.lambda * out.sup_con + (1.0 - cfg.lambda) * out.cms;
  return out;
}

}  // namespace cms
