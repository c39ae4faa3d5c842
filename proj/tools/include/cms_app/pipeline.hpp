#pragma once

#include <cstddef>
#include <vector>

#include "cms/clustering.hpp"
#include "cms/data.hpp"
#include "cms/eval.hpp"
#include "cms/trainer.hpp"
#include "cms_app/settings.hpp"

namespace cms::app {

/// Training and inference only ever see the label-hiding view.
struct PipelineInputs {
  const EmbeddingBank* base = nullptr;
  const ManifestView* view = nullptr;
  const EmbeddingBank* view_a = nullptr;
  const EmbeddingBank* view_b = nullptr;
};

struct InferOutcome {
  ClusteringResult clustering;  // items are manifest indices of the training collection
  std::size_t k = 0;
  std::size_t iterations_used = 0;
  std::size_t selected_iteration = 0;
  std::vector<double> accuracies;
  bool degenerate_stop = false;
};

/// Copies the resolved settings into a TrainConfig sized for `base`.
TrainConfig train_config_for(const RunSettings& settings, const EmbeddingBank& base);

FitResult train_model(const PipelineInputs& inputs, const RunSettings& settings);

/// Clusters the training collection with `head`. K is settings.infer.k_override
/// when present, otherwise `estimated_k`.
InferOutcome infer_clusters(const ProjectionHead& head, std::size_t estimated_k, const PipelineInputs& inputs,
                            const RunSettings& settings);

/// The untrained head, its epoch-0 K estimate and the same inference as a
/// trained model gets. Baseline for "did training help".
InferOutcome untrained_inference(const PipelineInputs& inputs, const RunSettings& settings);

struct PipelineResult {
  FitResult fit;
  InferOutcome inference;
  AccuracyReport report;
};

/// train + infer + evaluate. The manifest is used by evaluation only.
PipelineResult run_pipeline(const PipelineInputs& inputs, const DatasetManifest& manifest,
                            const RunSettings& settings);

}  // namespace cms::app
