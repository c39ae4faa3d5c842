#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cms/matrix.hpp"

namespace cms {

inline constexpr double kUnitNormTolerance = 1e-5;

/// Unit-norm feature vectors, one per row. This is the search space for
/// neighbor retrieval and the input/output type of the mean-shift steps.
class EmbeddingBank {
 public:
  EmbeddingBank() = default;

  /// Takes ownership of `vectors`. Throws kDegenerate on a zero-norm row and
  /// kValidation if any row deviates from unit norm by more than the tolerance.
  explicit EmbeddingBank(Matrix vectors);

  /// Renormalizes rows that are off the unit sphere. Throws kDegenerate on
  /// zero-norm rows.
  static EmbeddingBank normalized(Matrix vectors);

  std::size_t count() const noexcept { return vectors_.rows(); }
  std::size_t dim() const noexcept { return vectors_.cols(); }
  std::span<const double> row(std::size_t i) const { return vectors_.row(i); }
  const Matrix& matrix() const noexcept { return vectors_; }

  /// True when loading had to rescale at least one row.
  bool renormalized() const noexcept { return renormalized_; }

  EmbeddingBank select_rows(std::span<const std::size_t> rows) const;

  bool operator==(const EmbeddingBank& other) const { return vectors_ == other.vectors_; }

 private:
  Matrix vectors_;
  bool renormalized_ = false;
};

/// EMB1: "EMB1", u32 version=1, u64 N, u32 d, then N*d f32, all little-endian.
EmbeddingBank load_embedding_bank(const std::filesystem::path& path);
void save_embedding_bank(const EmbeddingBank& bank, const std::filesystem::path& path);
std::vector<std::uint8_t> encode_embedding_bank(const EmbeddingBank& bank);
EmbeddingBank decode_embedding_bank(std::span<const std::uint8_t> bytes);

enum class Split { kLabeled, kUnlabeled, kValidation };

std::string_view to_string(Split split);
Split parse_split(std::string_view token);

struct ManifestItem {
  std::size_t index = 0;
  int gt_class = 0;
  bool is_known_class = false;
  Split split = Split::kUnlabeled;

  bool operator==(const ManifestItem&) const = default;
};

/// Full ground truth for every item. Only evaluation reads it directly;
/// training and inference go through ManifestView.
class DatasetManifest {
 public:
  DatasetManifest() = default;
  /// Validates index coverage and the labeled-implies-known constraint.
  explicit DatasetManifest(std::vector<ManifestItem> items);

  std::size_t size() const noexcept { return items_.size(); }
  const ManifestItem& operator[](std::size_t i) const { return items_[i]; }
  const std::vector<ManifestItem>& items() const noexcept { return items_; }

  std::vector<std::size_t> indices_with(Split split) const;
  std::size_t count(Split split) const;

  bool operator==(const DatasetManifest&) const = default;

 private:
  std::vector<ManifestItem> items_;
};

DatasetManifest load_manifest(const std::filesystem::path& path);
DatasetManifest parse_manifest(std::string_view text);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
std::string format_manifest(const DatasetManifest& manifest);

/// What the learner is allowed to see: the split of every item and the class
/// of labeled items (training-labeled, plus the known-class items of the
/// validation split). Classes of unlabeled items are not copied in.
///
/// Asking for the label of an item without one is counted, so tests can
/// assert that a code path never even tried.
class ManifestView {
 public:
  ManifestView() = default;
  explicit ManifestView(const DatasetManifest& manifest);

  std::size_t size() const noexcept { return splits_.size(); }
  Split split(std::size_t i) const { return splits_[i]; }
  bool has_label(std::size_t i) const { return labels_[i].has_value(); }
  std::optional<int> label(std::size_t i) const;

  /// Training collection: labeled and unlabeled items, in index order.
  std::vector<std::size_t> training_items() const;
  std::vector<std::size_t> validation_items() const;
  std::vector<std::size_t> indices_with(Split split) const;

  std::size_t denied_reads() const { return denied_->load(); }

 private:
  std::vector<Split> splits_;
  std::vector<std::optional<int>> labels_;
  std::shared_ptr<std::atomic<std::size_t>> denied_ = std::make_shared<std::atomic<std::size_t>>(0);
};

struct SyntheticConfig {
  std::size_t num_classes = 4;
  std::size_t dim = 16;
  std::size_t per_class = 50;
  double center_max_cosine = 0.2;
  double noise_scale = 0.0;
  double known_fraction = 0.5;
  double labeled_fraction = 0.5;
  double val_fraction = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SyntheticDataset {
  EmbeddingBank bank;
  DatasetManifest manifest;
};

/// Hyperspherical mixture: class centers by rejection sampling under the
/// pairwise-cosine cap, members by tangent-space Gaussian noise around the
/// center. Items are stored class by class; within a class the first
/// ceil(labeled_fraction * per_class) items of a known class are labeled and
/// the next floor(val_fraction * per_class) go to validation.
SyntheticDataset generate_synthetic(const SyntheticConfig& cfg);

/// Number of known classes the generator uses for `cfg`.
std::size_t known_class_count(const SyntheticConfig& cfg);

}  // namespace cms
