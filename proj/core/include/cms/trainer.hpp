#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cms/clustering.hpp"
#include "cms/data.hpp"
#include "cms/encoder.hpp"
#include "cms/eval.hpp"
#include "cms/losses.hpp"
#include "cms/meanshift.hpp"

namespace cms {

enum class Preset { kCoarse, kFine };

Preset parse_preset(std::string_view token);

struct TrainConfig {
  std::size_t epochs = 30;
  KernelConfig kernel;
  LossConfig loss;
  OptimizerConfig optimizer;
  HeadConfig head;
  double view_noise_scale = 0.05;
  std::size_t k_search_max = 1000;
  std::size_t k_search_min = 1;
  bool use_gt_k_for_validation = false;
  std::optional<std::size_t> gt_k;  // consulted only with use_gt_k_for_validation
  // Each view retrieves its own neighbors; when false view b reuses view a's.
  bool per_view_neighbors = true;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Temperature and learning rate pairs for coarse / fine-grained data.
void apply_preset(TrainConfig& cfg, Preset preset);

/// Frozen inputs of a training run. Row i of every bank is manifest item i.
struct TrainingData {
  const EmbeddingBank* base = nullptr;
  const ManifestView* view = nullptr;
  // Optional precomputed augmented views; when present they replace make_views.
  const EmbeddingBank* view_a = nullptr;
  const EmbeddingBank* view_b = nullptr;

  void validate() const;
};

struct EpochState {
  ProjectionHead head;
  MomentumState momentum;
  EmbeddingBank bank;  // learned embeddings of all items at epoch start
  std::size_t epoch_index = 0;
  double loss = 0.0;
  double val_accuracy = 0.0;
  std::size_t estimated_k = 1;
};

/// forward(head, base) over every item.
EmbeddingBank refresh_bank(const ProjectionHead& head, const EmbeddingBank& base);

/// Neighbor lists for the 2B rows of a batch: rows 0..B-1 are view a, B..2B-1
/// view b. Indices refer to rows of the retrieval bank.
using NeighborFn = std::function<std::vector<std::vector<std::size_t>>(const Matrix& embeddings)>;

struct BatchObjective {
  double loss = 0.0;
  double cms = 0.0;
  double sup_con = 0.0;
  std::vector<double> grads;  // w.r.t. head parameters
};

/// The full training objective of one batch and its exact gradient: forward
/// both views, mean-shift each embedding toward its (constant) neighbors in
/// `bank`, combine the contrastive losses and backpropagate into the head.
BatchObjective evaluate_batch(const ProjectionHead& head, const Matrix& inputs_a, const Matrix& inputs_b,
                              const EmbeddingBank& bank, const NeighborFn& neighbors,
                              std::span<const std::optional<int>> labels, const KernelConfig& kernel,
                              const LossConfig& loss);

/// One pass over the training items (labeled and unlabeled) in seeded random
/// batches, with the bank frozen at its epoch-start value.
EpochState train_epoch(EpochState state, const TrainingData& data, const TrainConfig& cfg);

struct KEstimate {
  std::size_t k = 1;
  double accuracy = 0.0;
};

/// One Ward run over the validation embeddings, then every cut from
/// min_k to min(n, k_search_max) is scored on the labeled validation items.
/// Highest accuracy wins, ties go to the smaller K. With gt_k the K is fixed.
KEstimate estimate_k(const EmbeddingBank& val_embeddings, std::span<const std::size_t> val_items,
                     const ManifestView& view, std::size_t k_search_max, std::optional<std::size_t> gt_k,
                     std::size_t k_search_min = 1);

struct EpochLog {
  std::size_t epoch = 0;
  double loss = 0.0;  // NaN for the untrained epoch 0
  double val_accuracy = 0.0;
  std::size_t estimated_k = 1;
};

using ValidationFn = std::function<KEstimate(const EmbeddingBank& val_embeddings, std::size_t epoch)>;

struct FitResult {
  ProjectionHead best_head;
  std::size_t best_estimated_k = 1;
  std::size_t best_epoch = 0;
  double best_val_accuracy = 0.0;
  std::vector<EpochLog> log;  // epoch 0 is the untrained head
};

/// Trains for cfg.epochs and keeps the snapshot with the best validation
/// accuracy (earliest on ties). `validate` replaces estimate_k when set.
FitResult fit(const TrainingData& data, const TrainConfig& cfg, const ValidationFn& validate = {});

std::string format_training_log(const std::vector<EpochLog>& log);

struct InferenceConfig {
  std::size_t t_max = 10;
  std::optional<std::size_t> k_override;
  LabeledScope scope = LabeledScope::kLabeledItems;

  void validate() const;
};

/// Hooks let tests replace the clustering or the accuracy of an iteration.
struct InferenceHooks {
  std::function<ClusteringResult(const EmbeddingBank& embeddings, std::size_t k)> cluster;
  std::function<double(std::size_t iteration, const ClusteringResult& result)> score;
};

struct InferenceResult {
  ClusteringResult clustering;     // items are manifest indices
  std::size_t iterations_used = 0;  // mean-shift steps applied
  std::size_t selected_iteration = 0;
  std::vector<double> accuracies;   // labeled accuracy per evaluated iteration
  bool degenerate_stop = false;
};

/// Iterative mean shift over the training collection with early stopping on
/// the labeled accuracy: stop at t when acc[t-2] >= max(acc[t-1], acc[t]) and
/// return iteration t-2; otherwise the best iteration (earliest on ties).
InferenceResult final_inference(const ProjectionHead& head, const EmbeddingBank& base, const ManifestView& view,
                                std::size_t k, const InferenceConfig& inf, const KernelConfig& kernel,
                                const InferenceHooks& hooks = {});

/// The same loop over precomputed embeddings of `items`.
InferenceResult iterate_mean_shift(const EmbeddingBank& embeddings, std::span<const std::size_t> items,
                                   const ManifestView& view, std::size_t k, const InferenceConfig& inf,
                                   const KernelConfig& kernel, const InferenceHooks& hooks = {});

}  // namespace cms
