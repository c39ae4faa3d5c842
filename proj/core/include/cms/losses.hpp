#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "cms/matrix.hpp"

namespace cms {

struct LossConfig {
  double tau_u = 0.3;    // temperature of the mean-shift contrastive term
  double tau_s = 0.07;   // temperature of the supervised term
  double lambda = 0.35;  // weight of the supervised term
  // Each view is an anchor once (2B anchor terms) instead of view a only.
  bool symmetric = true;
  // Adds the positives of all items to the denominator, SimCLR style.
  bool simclr_denominator = false;

  void validate() const;
};

/// Row i of every matrix belongs to batch item i.
struct ContrastiveBatch {
  Matrix anchors_z;    // mean-shifted embeddings of view a
  Matrix positives_z;  // mean-shifted embeddings of view b
  Matrix raw_v;        // embeddings of view a before the shift
  std::vector<std::optional<int>> labels;

  std::size_t size() const noexcept { return anchors_z.rows(); }
};

struct CmsOptions {
  bool symmetric = true;
  bool simclr_denominator = false;
};

struct CmsLossResult {
  double value = 0.0;  // mean over anchor terms
  std::size_t anchor_terms = 0;
  Matrix grad_anchors;
  Matrix grad_positives;
};

/// Anchor term: -log( exp(z_i . z_i+ / tau) / sum_{j != i} exp(z_i . z_j / tau) ),
/// where z_j runs over the other items' embeddings in the anchor's own view.
/// Requires B >= 2.
CmsLossResult cms_loss(const ContrastiveBatch& batch, double tau_u, CmsOptions options = {});

struct SupConResult {
  double value = 0.0;  // mean over labeled anchors with positives and negatives
  std::size_t anchor_terms = 0;
  bool empty_positive = false;  // no anchor qualified; value is 0
  Matrix grad_raw;
};

/// Supervised contrastive loss over the labeled items of the batch on the raw
/// (unshifted) embeddings. Positives of i are the other items with its label;
/// the denominator runs over labeled items of other classes.
SupConResult sup_con_loss(const ContrastiveBatch& batch, double tau_s);

struct TotalLossResult {
  double value = 0.0;
  double cms = 0.0;
  double sup_con = 0.0;
  bool empty_positive = false;
  Matrix grad_anchors;
  Matrix grad_positives;
  Matrix grad_raw;
};

/// lambda * sup_con + (1 - lambda) * cms, gradients combined the same way.
TotalLossResult total_loss(const ContrastiveBatch& batch, const LossConfig& cfg);

}  // namespace cms
