#include "cms_app/pipeline.hpp"

#include "cms/error.hpp"
#include "cms/parallel.hpp"

namespace cms::app {

TrainConfig train_config_for(const RunSettings& settings, const EmbeddingBank& base) {
  TrainConfig cfg = settings.train;
  cfg.head.in_dim = base.dim();
  return cfg;
}

namespace {

TrainingData training_data(const PipelineInputs& inputs) {
  TrainingData data{inputs.base, inputs.view, inputs.view_a, inputs.view_b};
  data.validate();
  return data;
}

InferOutcome semi_supervised(const ProjectionHead& head, std::size_t k, const PipelineInputs& inputs,
                             const RunSettings& settings) {
  const auto& view = *inputs.view;
  const auto items = view.training_items();
  const auto embeddings = refresh_bank(head, *inputs.base).select_rows(items);
  std::vector<LabeledPoint> labeled;
  for (std::size_t p = 0; p < items.size(); ++p) {
    if (view.split(items[p]) == Split::kLabeled) labeled.push_back({p, *view.label(items[p])});
  }
  InferOutcome out;
  out.clustering = semi_supervised_kmeans(embeddings.matrix(), labeled, k, 100, settings.seed);
  out.clustering.items = items;
  out.k = k;
  return out;
}

}  // namespace

FitResult train_model(const PipelineInputs& inputs, const RunSettings& settings) {
  set_thread_count(settings.threads);
  return fit(training_data(inputs), train_config_for(settings, *inputs.base));
}

InferOutcome infer_clusters(const ProjectionHead& head, std::size_t estimated_k, const PipelineInputs& inputs,
                            const RunSettings& settings) {
  set_thread_count(settings.threads);
  if (inputs.base == nullptr || inputs.view == nullptr) throw Error(ErrorCode::kValidation, "inference inputs missing");
  const std::size_t k = settings.infer.k_override.value_or(estimated_k);
  if (settings.method == Method::kSemiSupervisedKMeans) return semi_supervised(head, k, inputs, settings);

  const auto result = final_inference(head, *inputs.base, *inputs.view, k, settings.infer, settings.train.kernel);
  InferOutcome out;
  out.clustering = result.clustering;
  out.k = k;
  out.iterations_used = result.iterations_used;
  out.selected_iteration = result.selected_iteration;
  out.accuracies = result.accuracies;
  out.degenerate_stop = result.degenerate_stop;
  return out;
}

InferOutcome untrained_inference(const PipelineInputs& inputs, const RunSettings& settings) {
  set_thread_count(settings.threads);
  const auto data = training_data(inputs);
  const auto cfg = train_config_for(settings, *inputs.base);
  cfg.validate();
  const auto head = init_head(cfg.head);
  const auto val_items = inputs.view->validation_items();
  const auto bank = refresh_bank(head, *inputs.base);
  const std::optional<std::size_t> gt_k = cfg.use_gt_k_for_validation ? cfg.gt_k : std::nullopt;
  const auto estimate =
      estimate_k(bank.select_rows(val_items), val_items, *inputs.view, cfg.k_search_max, gt_k, cfg.k_search_min);
  return infer_clusters(head, estimate.k, inputs, settings);
}

PipelineResult run_pipeline(const PipelineInputs& inputs, const DatasetManifest& manifest,
                            const RunSettings& settings) {
  PipelineResult result;
  result.fit = train_model(inputs, settings);
  result.inference = infer_clusters(result.fit.best_head, result.fit.best_estimated_k, inputs, settings);
  result.report = gcd_accuracy(result.inference.clustering, manifest);
  return result;
}

}  // namespace cms::app
