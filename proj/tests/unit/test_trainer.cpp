#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "cms/error.hpp"
#include "cms/parallel.hpp"
#include "cms/trainer.hpp"
#include "doctest.h"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace cms;

namespace {

struct Small {
  SyntheticDataset data;
  ManifestView view;
  TrainConfig cfg;
};

Small small_problem(std::uint64_t seed = 3) {
  SyntheticConfig s;
  s.num_classes = 3;
  s.dim = 8;
  s.per_class = 20;
  s.center_max_cosine = 0.2;
  s.noise_scale = 0.3;
  s.known_fraction = 0.6;
  s.labeled_fraction = 0.5;
  s.val_fraction = 0.2;
  s.seed = seed;
  Small p{generate_synthetic(s), {}, {}};
  p.view = ManifestView(p.data.manifest);
  p.cfg.epochs = 2;
  p.cfg.head = {8, 16, 8, 1, seed};
  p.cfg.kernel.k = 4;
  p.cfg.optimizer.batch_size = 16;
  p.cfg.view_noise_scale = 0.1;
  p.cfg.seed = seed;
  return p;
}

EpochState initial_state(const Small& p) {
  EpochState st;
  st.head = init_head(p.cfg.head);
  st.bank = refresh_bank(st.head, p.data.bank);
  return st;
}

// Scores iteration t with seq[t]; every clustering puts all items together.
InferenceResult run_sequence(const std::vector<double>& seq, std::size_t t_max) {
  std::mt19937_64 rng(1);
  const EmbeddingBank bank(fixture::random_unit_matrix(6, 3, rng));
  std::vector<ManifestItem> items;
  for (std::size_t i = 0; i < 6; ++i) items.push_back({i, 0, true, Split::kLabeled});
  const DatasetManifest man(items);
  const ManifestView view(man);
  std::vector<std::size_t> ids{0, 1, 2, 3, 4, 5};
  InferenceHooks hooks;
  hooks.cluster = [](const EmbeddingBank& e, std::size_t k) {
    ClusteringResult r;
    r.assignments.assign(e.count(), 0);
    r.k = k;
    return r;
  };
  hooks.score = [&](std::size_t t, const ClusteringResult&) { return seq.at(t); };
  InferenceConfig inf;
  inf.t_max = t_max;
  return iterate_mean_shift(bank, ids, view, 1, inf, KernelConfig{}, hooks);
}

}  // namespace

TEST_CASE("presets") {
  TrainConfig cfg;
  apply_preset(cfg, parse_preset("coarse"));
  CHECK(cfg.loss.tau_u == 0.3);
  CHECK(cfg.optimizer.learning_rate == 0.01);
  apply_preset(cfg, parse_preset("fine"));
  CHECK(cfg.loss.tau_u == 0.25);
  CHECK(cfg.optimizer.learning_rate == 0.05);
  CHECK_THROWS_AS(parse_preset("medium"), Error);
}

TEST_CASE("refresh bank is the forward pass and changes after an update") {
  const auto p = small_problem();
  auto head = init_head(p.cfg.head);
  const auto bank = refresh_bank(head, p.data.bank);
  CHECK(bank.matrix() == forward(head, p.data.bank.matrix()).embeddings);
  CHECK(refresh_bank(head, p.data.bank) == bank);

  std::vector<double> g(head.parameters().size(), 0.01);
  MomentumState m;
  sgd_step(head, g, OptimizerConfig{}, m);
  CHECK_FALSE(refresh_bank(head, p.data.bank) == bank);
}

TEST_CASE("batch objective gradient matches central differences") {
  const auto p = small_problem(5);
  std::mt19937_64 rng(5);
  const std::size_t b = 6;
  HeadConfig hc{8, 10, 6, 3, 9};
  auto head = init_head(hc);
  std::normal_distribution<double> n(0.0, 0.05);
  for (std::size_t l = 0; l < head.layers().size(); ++l)
    for (auto& v : head.bias(l)) v = n(rng);
  const EmbeddingBank bank(fixture::random_unit_matrix(12, 6, rng));
  const auto in_a = fixture::random_matrix(b, 8, rng);
  const auto in_b = fixture::random_matrix(b, 8, rng);
  const std::vector<std::optional<int>> labels{0, 1, 0, std::nullopt, 1, std::nullopt};
  // fixed neighbor lists: retrieval is not differentiated
  std::vector<std::vector<std::size_t>> lists(2 * b);
  for (std::size_t r = 0; r < 2 * b; ++r) lists[r] = {r % 12, (r + 3) % 12, (r + 7) % 12};
  const NeighborFn nb = [&](const Matrix&) { return lists; };

  KernelConfig knn;
  knn.k = 3;
  KernelConfig gauss;
  gauss.kind = KernelKind::kGaussian;
  gauss.sigma = 0.7;
  for (const auto& kernel : {knn, gauss}) {
    for (double lambda : {0.0, 0.35, 1.0}) {
      LossConfig loss;
      loss.lambda = lambda;
      const auto res = evaluate_batch(head, in_a, in_b, bank, nb, labels, kernel, loss);
      auto f = [&](const oracle::Vec& v) {
        ProjectionHead h = head;
        std::copy(v.begin(), v.end(), h.parameters().begin());
        return evaluate_batch(h, in_a, in_b, bank, nb, labels, kernel, loss).loss;
      };
      const oracle::Vec params(head.parameters().begin(), head.parameters().end());
      const auto numeric = oracle::central_difference(f, params, 1e-6);
      CHECK(oracle::max_relative_error(res.grads, numeric, 1e-6) <= 1e-4);
    }
  }
}

TEST_CASE("zero learning rate leaves the head alone") {
  auto p = small_problem();
  p.cfg.optimizer.learning_rate = 0.0;
  p.cfg.optimizer.weight_decay = 0.0;
  const auto st = initial_state(p);
  const TrainingData data{&p.data.bank, &p.view};
  const auto after = train_epoch(st, data, p.cfg);
  CHECK(after.head == st.head);
  CHECK(after.epoch_index == 1);
  CHECK(std::isfinite(after.loss));
}

TEST_CASE("single-batch epoch loss equals an independent evaluation") {
  auto p = small_problem();
  p.cfg.loss.lambda = 0.0;
  p.cfg.view_noise_scale = 0.0;
  p.cfg.kernel.alpha = 0.0;
  p.cfg.optimizer.batch_size = 1000;
  const auto st = initial_state(p);
  const TrainingData data{&p.data.bank, &p.view};
  const auto after = train_epoch(st, data, p.cfg);

  const auto items = p.view.training_items();
  const auto z = refresh_bank(st.head, p.data.bank).select_rows(items).matrix();
  const double tau = p.cfg.loss.tau_u;
  double total = 0;
  for (std::size_t i = 0; i < z.rows(); ++i) {
    double denom = 0;
    for (std::size_t j = 0; j < z.rows(); ++j)
      if (j != i) denom += std::exp(dot(z.row(i), z.row(j)) / tau);
    total += std::log(denom) - 1.0 / tau;
  }
  CHECK(after.loss == doctest::Approx(total / static_cast<double>(z.rows())).epsilon(1e-10));
}

TEST_CASE("epochs are reproducible and thread-count independent") {
  const auto p = small_problem();
  const TrainingData data{&p.data.bank, &p.view};
  set_thread_count(1);
  const auto a = train_epoch(initial_state(p), data, p.cfg);
  const auto b = train_epoch(initial_state(p), data, p.cfg);
  set_thread_count(4);
  const auto c = train_epoch(initial_state(p), data, p.cfg);
  set_thread_count(1);
  CHECK(a.head == b.head);
  CHECK(a.head == c.head);
  CHECK(a.loss == b.loss);
  CHECK(a.loss == c.loss);
}

TEST_CASE("the retrieval bank stays frozen within an epoch") {
  // Paired views equal to the base plus a head update after every batch: the
  // bank carried in the state is the one computed from the incoming head.
  const auto p = small_problem();
  const auto st = initial_state(p);
  const TrainingData data{&p.data.bank, &p.view, &p.data.bank, &p.data.bank};
  const auto after = train_epoch(st, data, p.cfg);
  CHECK(after.bank == refresh_bank(st.head, p.data.bank));
  CHECK_FALSE(after.head == st.head);
}

TEST_CASE("K estimation") {
  SyntheticConfig s;
  s.num_classes = 3;
  s.per_class = 30;
  s.noise_scale = 0.0;
  s.known_fraction = 1.0;
  s.labeled_fraction = 0.3;
  s.val_fraction = 0.3;
  s.seed = 4;
  const auto data = generate_synthetic(s);
  const ManifestView view(data.manifest);
  const auto val = view.validation_items();
  const auto bank = data.bank.select_rows(val);
  const auto est = estimate_k(bank, val, view, 1000, std::nullopt);
  CHECK(est.k == 3);
  CHECK(est.accuracy == 1.0);
  const auto forced = estimate_k(bank, val, view, 1000, std::size_t{4});
  CHECK(forced.k == 4);

  std::vector<ManifestItem> one;
  for (std::size_t i = 0; i < 5; ++i) one.push_back({i, 0, true, Split::kValidation});
  const DatasetManifest single(one);
  std::mt19937_64 rng(2);
  const std::vector<std::size_t> ids{0, 1, 2, 3, 4};
  CHECK(estimate_k(EmbeddingBank(fixture::random_unit_matrix(5, 3, rng)), ids, ManifestView(single), 1000, std::nullopt)
            .k == 1);
}

TEST_CASE("fit snapshot selection") {
  auto p = small_problem();
  const TrainingData data{&p.data.bank, &p.view};

  p.cfg.epochs = 1;
  const auto one = fit(data, p.cfg);
  CHECK(one.best_epoch == 1);
  CHECK(one.log.size() == 2);
  CHECK(std::isnan(one.log[0].loss));
  EpochState st = initial_state(p);
  st = train_epoch(std::move(st), data, p.cfg);
  CHECK(one.best_head == st.head);

  p.cfg.epochs = 4;
  const std::vector<double> schedule{0.9, 0.2, 0.7, 0.7, 0.5};
  const ValidationFn mock = [&](const EmbeddingBank&, std::size_t e) { return KEstimate{e + 1, schedule[e]}; };
  const auto r = fit(data, p.cfg, mock);
  CHECK(r.best_epoch == 2);
  CHECK(r.best_estimated_k == 3);
  CHECK(r.best_val_accuracy == 0.7);
  CHECK(r.log.size() == 5);
  const auto text = format_training_log(r.log);
  CHECK(text.rfind("epoch,loss,val_acc,est_k\n0,nan,0.9,1\n", 0) == 0);

  auto bad = p.cfg;
  bad.epochs = 0;
  CHECK_THROWS_AS(fit(data, bad), Error);
}

TEST_CASE("supervised term needs labels") {
  auto p = small_problem();
  std::vector<ManifestItem> items = p.data.manifest.items();
  for (auto& it : items)
    if (it.split == Split::kLabeled) it.split = Split::kUnlabeled;
  const DatasetManifest unlabeled(items);
  const ManifestView view(unlabeled);
  const TrainingData data{&p.data.bank, &view};
  p.cfg.epochs = 1;
  try {
    fit(data, p.cfg);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kValidation);
  }
}

TEST_CASE("stop rule on injected accuracies") {
  auto r = run_sequence({0.9, 0.8, 0.7}, 10);
  CHECK(r.selected_iteration == 0);
  CHECK(r.iterations_used == 2);

  r = run_sequence({0.5, 0.6, 0.7, 0.7, 0.65}, 10);
  CHECK(r.selected_iteration == 2);
  CHECK(r.iterations_used == 4);

  r = run_sequence({0.1, 0.2, 0.3, 0.4}, 3);
  CHECK(r.selected_iteration == 3);
  CHECK(r.accuracies.size() == 4);

  r = run_sequence({0.5, 0.5, 0.6, 0.6}, 3);
  CHECK(r.selected_iteration == 2);

  r = run_sequence({0.4, 0.7}, 1);
  CHECK(r.accuracies.size() == 2);
  CHECK(r.selected_iteration == 1);
  r = run_sequence({0.7, 0.7}, 1);
  CHECK(r.selected_iteration == 0);

  InferenceConfig zero;
  zero.t_max = 0;
  CHECK_THROWS_AS(zero.validate(), Error);
}

TEST_CASE("final inference clusters the training collection") {
  const auto p = small_problem();
  const auto head = init_head(p.cfg.head);
  InferenceConfig inf;
  inf.t_max = 3;
  const auto r = final_inference(head, p.data.bank, p.view, 3, inf, p.cfg.kernel);
  CHECK(r.clustering.items == p.view.training_items());
  CHECK(r.clustering.k == 3);
  CHECK(r.selected_iteration <= r.iterations_used);
  inf.k_override = 5;
  CHECK(final_inference(head, p.data.bank, p.view, 3, inf, p.cfg.kernel).clustering.k == 5);
}

TEST_CASE("pinned first epoch loss") {
  const auto s = fixture::pinned_settings();
  const auto data = generate_synthetic(s.synthetic);
  const ManifestView view(data.manifest);
  auto cfg = s.train;
  cfg.head.in_dim = data.bank.dim();
  EpochState st;
  st.head = init_head(cfg.head);
  const TrainingData td{&data.bank, &view};
  for (std::size_t threads : {1u, 4u}) {
    set_thread_count(threads);
    const auto after = train_epoch(st, td, cfg);
    CHECK(std::abs(after.loss - 2.495920573) <= 1e-9);
  }
  set_thread_count(1);
}
