#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cms/clustering.hpp"
#include "cms/data.hpp"

namespace cms {

/// Intersection counts: rows are predicted clusters, columns classes.
struct CostMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::int64_t> entries;  // row-major

  std::int64_t operator()(std::size_t r, std::size_t c) const { return entries[r * cols + c]; }
  std::int64_t& operator()(std::size_t r, std::size_t c) { return entries[r * cols + c]; }
};

using Matching = std::vector<std::pair<std::size_t, std::size_t>>;  // (row, col), ascending row

/// Optimal one-to-one assignment of min(rows, cols) pairs. Rectangular input is
/// zero-padded to square; pairs involving padding are dropped.
Matching hungarian(const CostMatrix& cost, bool maximize);

std::int64_t matching_total(const CostMatrix& cost, const Matching& matching);

struct AccuracyReport {
  double all = 0.0;
  double old = 0.0;
  double novel = 0.0;
  std::size_t n_all = 0;
  std::size_t n_old = 0;
  std::size_t n_novel = 0;
  std::size_t correct_all = 0;
  std::size_t correct_old = 0;
  std::size_t correct_novel = 0;
  std::size_t k = 0;
  std::vector<std::pair<int, int>> matching;  // (cluster id, class id)
};

/// Hungarian accuracy over the unlabeled items. Old and Novel reuse the single
/// matching found on All; unmatched clusters and classes count as wrong.
AccuracyReport gcd_accuracy(const ClusteringResult& pred, const DatasetManifest& manifest);

enum class LabeledScope { kLabeledItems, kLabeledValidationItems };

/// Same protocol restricted to labeled items visible through the view.
double labeled_subset_accuracy(const ClusteringResult& pred, const ManifestView& view, LabeledScope scope);

/// "all,old,novel,K" with three decimals.
std::string format_report_line(const AccuracyReport& report);
/// key=value lines.
std::string format_report_block(const AccuracyReport& report);

}  // namespace cms
