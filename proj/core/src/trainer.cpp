#include "cms/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

#include "cms/error.hpp"
#include "cms/parallel.hpp"

namespace cms {

Preset parse_preset(std::string_view token) {
  if (token == "coarse") return Preset::kCoarse;
  if (token == "fine") return Preset::kFine;
  throw Error(ErrorCode::kValidation, "unknown preset '" + std::string(token) + "'");
}

void apply_preset(TrainConfig& cfg, Preset preset) {
  if (preset == Preset::kCoarse) {
    cfg.loss.tau_u = 0.3;
    cfg.optimizer.learning_rate = 0.01;
  } else {
    cfg.loss.tau_u = 0.25;
    cfg.optimizer.learning_rate = 0.05;
  }
}

void TrainConfig::validate() const {
  if (epochs == 0) throw Error(ErrorCode::kValidation, "epochs must be positive");
  kernel.validate();
  loss.validate();
  optimizer.validate();
  head.validate();
  if (!(view_noise_scale >= 0.0)) throw Error(ErrorCode::kValidation, "view_noise_scale must be non-negative");
  if (k_search_max == 0 || k_search_min == 0 || k_search_min > k_search_max) {
    throw Error(ErrorCode::kValidation, "K search range must satisfy 1 <= min <= max");
  }
  if (use_gt_k_for_validation && (!gt_k || *gt_k == 0)) {
    throw Error(ErrorCode::kValidation, "use_gt_k_for_validation needs a positive gt_k");
  }
}

void TrainingData::validate() const {
  if (base == nullptr || view == nullptr) throw Error(ErrorCode::kValidation, "training data is incomplete");
  if (base->count() != view->size()) {
    throw Error(ErrorCode::kShapeMismatch, "manifest and embedding bank differ in item count");
  }
  if ((view_a == nullptr) != (view_b == nullptr)) {
    throw Error(ErrorCode::kValidation, "paired views must be supplied together");
  }
  if (view_a != nullptr && (view_a->count() != base->count() || view_b->count() != base->count() ||
                            view_a->dim() != base->dim() || view_b->dim() != base->dim())) {
    throw Error(ErrorCode::kShapeMismatch, "paired view banks do not match the base bank");
  }
}

void InferenceConfig::validate() const {
  if (t_max == 0) throw Error(ErrorCode::kValidation, "t_max must be at least 1");
  if (k_override && *k_override == 0) throw Error(ErrorCode::kValidation, "k override must be positive");
}

EmbeddingBank refresh_bank(const ProjectionHead& head, const EmbeddingBank& base) {
  return EmbeddingBank(forward(head, base.matrix()).embeddings);
}

BatchObjective evaluate_batch(const ProjectionHead& head, const Matrix& inputs_a, const Matrix& inputs_b,
                              const EmbeddingBank& bank, const NeighborFn& neighbors,
                              std::span<const std::optional<int>> labels, const KernelConfig& kernel,
                              const LossConfig& loss) {
  const std::size_t b = inputs_a.rows();
  if (inputs_b.rows() != b || inputs_a.cols() != inputs_b.cols() || labels.size() != b) {
    throw Error(ErrorCode::kShapeMismatch, "batch views and labels are not aligned");
  }
  Matrix inputs(2 * b, inputs_a.cols());
  for (std::size_t i = 0; i < b; ++i) {
    std::copy(inputs_a.row(i).begin(), inputs_a.row(i).end(), inputs.row(i).begin());
    std::copy(inputs_b.row(i).begin(), inputs_b.row(i).end(), inputs.row(b + i).begin());
  }
  const auto fwd = forward(head, inputs);
  const Matrix& emb = fwd.embeddings;
  const std::size_t d = emb.cols();
  const auto lists = neighbors(emb);
  if (lists.size() != 2 * b) throw Error(ErrorCode::kShapeMismatch, "neighbor lists do not cover the batch");

  std::vector<std::vector<std::span<const double>>> nbr(2 * b);
  std::vector<ShiftResult> shifts(2 * b);
  parallel_for(2 * b, [&](std::size_t begin, std::size_t end) {
    for (std::size_t r = begin; r < end; ++r) {
      for (const auto j : lists[r]) nbr[r].push_back(bank.row(j));
      shifts[r] = shift_one_detailed(emb.row(r), nbr[r], kernel);
    }
  });

  ContrastiveBatch batch{Matrix(b, d), Matrix(b, d), Matrix(b, d), {labels.begin(), labels.end()}};
  for (std::size_t i = 0; i < b; ++i) {
    std::copy(shifts[i].z.begin(), shifts[i].z.end(), batch.anchors_z.row(i).begin());
    std::copy(shifts[b + i].z.begin(), shifts[b + i].z.end(), batch.positives_z.row(i).begin());
    std::copy(emb.row(i).begin(), emb.row(i).end(), batch.raw_v.row(i).begin());
  }
  const auto total = total_loss(batch, loss);

  Matrix grad_emb(2 * b, d);
  parallel_for(2 * b, [&](std::size_t begin, std::size_t end) {
    for (std::size_t r = begin; r < end; ++r) {
      const auto upstream = r < b ? total.grad_anchors.row(r) : total.grad_positives.row(r - b);
      const auto g = shift_one_backward(shifts[r], nbr[r], kernel, upstream);
      auto out = grad_emb.row(r);
      std::copy(g.begin(), g.end(), out.begin());
      if (r < b) {
        const auto raw = total.grad_raw.row(r);
        for (std::size_t t = 0; t < d; ++t) out[t] += raw[t];
      }
    }
  });

  BatchObjective result;
  result.loss = total.value;
  result.cms = total.cms;
  result.sup_con = total.sup_con;
  result.grads = backward(head, fwd.tape, grad_emb);
  return result;
}

namespace {

std::mt19937_64 epoch_rng(std::uint64_t seed, std::size_t epoch) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), 0x43u, 0x4d53u};
  return std::mt19937_64(seq);
}

void copy_row(std::span<const double> src, std::span<double> dst) { std::copy(src.begin(), src.end(), dst.begin()); }

}  // namespace

EpochState train_epoch(EpochState state, const TrainingData& data, const TrainConfig& cfg) {
  data.validate();
  const auto& view = *data.view;
  state.bank = refresh_bank(state.head, *data.base);

  const auto items = view.training_items();
  if (items.size() < 2) throw Error(ErrorCode::kValidation, "training needs at least two items");
  const auto retrieval = state.bank.select_rows(items);
  std::vector<std::size_t> position(view.size(), 0);
  for (std::size_t p = 0; p < items.size(); ++p) position[items[p]] = p;

  auto rng = epoch_rng(cfg.seed, state.epoch_index);
  auto order = items;
  std::shuffle(order.begin(), order.end(), rng);

  const std::size_t batch_size = cfg.optimizer.batch_size;
  const std::size_t retrieve = cfg.kernel.retrieval_size();
  double loss_sum = 0.0;
  std::size_t batches = 0;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t b = std::min(batch_size, order.size() - start);
    if (b < 2) break;
    const std::span<const std::size_t> members(order.data() + start, b);

    Matrix inputs_a(b, data.base->dim());
    Matrix inputs_b(b, data.base->dim());
    std::vector<std::optional<int>> labels(b);
    for (std::size_t i = 0; i < b; ++i) {
      const auto item = members[i];
      if (data.view_a != nullptr) {
        copy_row(data.view_a->row(item), inputs_a.row(i));
        copy_row(data.view_b->row(item), inputs_b.row(i));
      } else {
        const auto [va, vb] = make_views(data.base->row(item), cfg.view_noise_scale, rng);
        copy_row(va, inputs_a.row(i));
        copy_row(vb, inputs_b.row(i));
      }
      if (view.split(item) == Split::kLabeled) labels[i] = view.label(item);
    }

    const NeighborFn neighbors = [&](const Matrix& emb) {
      std::vector<std::vector<std::size_t>> lists(2 * b);
      parallel_for(2 * b, [&](std::size_t begin, std::size_t end) {
        for (std::size_t r = begin; r < end; ++r) {
          if (r >= b && !cfg.per_view_neighbors) continue;
          const auto item = members[r % b];
          const auto exclude =
              cfg.kernel.include_self_in_topk ? std::nullopt : std::optional<std::size_t>(position[item]);
          lists[r] = knn_search(emb.row(r), retrieval, retrieve, exclude).indices;
        }
      });
      if (!cfg.per_view_neighbors) {
        for (std::size_t i = 0; i < b; ++i) lists[b + i] = lists[i];
      }
      return lists;
    };

    const auto objective =
        evaluate_batch(state.head, inputs_a, inputs_b, retrieval, neighbors, labels, cfg.kernel, cfg.loss);
    sgd_step(state.head, objective.grads, cfg.optimizer, state.momentum);
    loss_sum += objective.loss;
    ++batches;
  }
  state.loss = batches == 0 ? 0.0 : loss_sum / static_cast<double>(batches);
  ++state.epoch_index;
  return state;
}

KEstimate estimate_k(const EmbeddingBank& val_embeddings, std::span<const std::size_t> val_items,
                     const ManifestView& view, std::size_t k_search_max, std::optional<std::size_t> gt_k,
                     std::size_t k_search_min) {
  const std::size_t n = val_embeddings.count();
  if (n == 0 || val_items.size() != n) throw Error(ErrorCode::kEmpty, "validation set is empty or misaligned");
  const auto history = ward_cluster(val_embeddings.matrix());
  auto score = [&](std::size_t k) {
    auto result = cut(history, k);
    result.items.assign(val_items.begin(), val_items.end());
    return labeled_subset_accuracy(result, view, LabeledScope::kLabeledValidationItems);
  };
  if (gt_k) return {*gt_k, score(*gt_k)};

  KEstimate best{0, -1.0};
  const std::size_t upper = std::min(n, k_search_max);
  for (std::size_t k = std::min(k_search_min, upper); k <= upper; ++k) {
    const double acc = score(k);
    if (acc > best.accuracy) best = {k, acc};
  }
  return best;
}

FitResult fit(const TrainingData& data, const TrainConfig& cfg, const ValidationFn& validate) {
  cfg.validate();
  data.validate();
  if (cfg.head.in_dim != data.base->dim()) {
    throw Error(ErrorCode::kShapeMismatch, "head in_dim does not match the base features");
  }
  if (cfg.loss.lambda > 0.0 && data.view->indices_with(Split::kLabeled).empty()) {
    throw Error(ErrorCode::kValidation, "the supervised term needs at least one labeled item");
  }
  const auto val_items = data.view->validation_items();
  const std::optional<std::size_t> gt_k = cfg.use_gt_k_for_validation ? cfg.gt_k : std::nullopt;
  auto run_validation = [&](const EmbeddingBank& bank, std::size_t epoch) {
    const auto val = bank.select_rows(val_items);
    if (validate) return validate(val, epoch);
    return estimate_k(val, val_items, *data.view, cfg.k_search_max, gt_k, cfg.k_search_min);
  };

  EpochState state;
  state.head = init_head(cfg.head);
  state.bank = refresh_bank(state.head, *data.base);

  FitResult result;
  const auto initial = run_validation(state.bank, 0);
  result.log.push_back({0, std::numeric_limits<double>::quiet_NaN(), initial.accuracy, initial.k});

  for (std::size_t e = 1; e <= cfg.epochs; ++e) {
    state = train_epoch(std::move(state), data, cfg);
    state.bank = refresh_bank(state.head, *data.base);
    const auto estimate = run_validation(state.bank, e);
    state.val_accuracy = estimate.accuracy;
    state.estimated_k = estimate.k;
    result.log.push_back({e, state.loss, estimate.accuracy, estimate.k});
    if (e == 1 || estimate.accuracy > result.best_val_accuracy) {
      result.best_head = state.head;
      result.best_epoch = e;
      result.best_val_accuracy = estimate.accuracy;
      result.best_estimated_k = estimate.k;
    }
  }
  return result;
}

std::string format_training_log(const std::vector<EpochLog>& log) {
  std::ostringstream out;
  out << "epoch,loss,val_acc,est_k\n" << std::setprecision(10);
  for (const auto& e : log) {
    out << e.epoch << ',';
    if (std::isnan(e.loss)) {
      out << "nan";
    } else {
      out << e.loss;
    }
    out << ',' << e.val_accuracy << ',' << e.estimated_k << '\n';
  }
  return out.str();
}

InferenceResult iterate_mean_shift(const EmbeddingBank& embeddings, std::span<const std::size_t> items,
                                   const ManifestView& view, std::size_t k, const InferenceConfig& inf,
                                   const KernelConfig& kernel, const InferenceHooks& hooks) {
  inf.validate();
  if (items.size() != embeddings.count()) throw Error(ErrorCode::kShapeMismatch, "items and embeddings differ");
  const std::size_t clusters = inf.k_override.value_or(k);

  InferenceResult out;
  std::vector<ClusteringResult> history;
  EmbeddingBank current = embeddings;
  for (std::size_t t = 0; t <= inf.t_max; ++t) {
    auto result = hooks.cluster ? hooks.cluster(current, clusters) : cut(ward_cluster(current.matrix()), clusters);
    result.items.assign(items.begin(), items.end());
    const double acc =
        hooks.score ? hooks.score(t, result) : labeled_subset_accuracy(result, view, inf.scope);
    history.push_back(std::move(result));
    out.accuracies.push_back(acc);
    out.iterations_used = t;

    const auto& a = out.accuracies;
    if (t > 1 && a[t - 2] >= std::max(a[t - 1], a[t])) {
      out.selected_iteration = t - 2;
      out.clustering = std::move(history[t - 2]);
      return out;
    }
    if (t == inf.t_max) break;
    try {
      current = shift_all(current, kernel);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kDegenerate) throw;
      out.degenerate_stop = true;
      break;
    }
  }
  const auto best = std::max_element(out.accuracies.begin(), out.accuracies.end());
  out.selected_iteration = static_cast<std::size_t>(best - out.accuracies.begin());
  out.clustering = std::move(history[out.selected_iteration]);
  return out;
}

InferenceResult final_inference(const ProjectionHead& head, const EmbeddingBank& base, const ManifestView& view,
                                std::size_t k, const InferenceConfig& inf, const KernelConfig& kernel,
                                const InferenceHooks& hooks) {
  if (base.count() != view.size()) throw Error(ErrorCode::kShapeMismatch, "manifest and bank differ in size");
  const auto items = view.training_items();
  const auto embeddings = refresh_bank(head, base).select_rows(items);
  return iterate_mean_shift(embeddings, items, view, k, inf, kernel, hooks);
}

}  // namespace cms
