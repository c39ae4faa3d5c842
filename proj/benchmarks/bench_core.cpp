#include <benchmark/benchmark.h>

#include <random>

#include "cms/clustering.hpp"
#include "cms/encoder.hpp"
#include "cms/eval.hpp"
#include "cms/losses.hpp"
#include "cms/meanshift.hpp"

namespace {

cms::Matrix gaussian(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  cms::Matrix m(rows, cols);
  for (auto& x : m.data()) x = g(rng);
  return m;
}

cms::EmbeddingBank unit_bank(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  return cms::EmbeddingBank::normalized(gaussian(rows, cols, seed));
}

void BM_KnnSearch(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto bank = unit_bank(n, 64, 1);
  std::size_t q = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(cms::knn_search(bank.row(q), bank, 8, q));
    q = (q + 1) % n;
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_KnnSearch)->Arg(1000)->Arg(10000);

void BM_ShiftAll(benchmark::State& state) {
  const auto bank = unit_bank(static_cast<std::size_t>(state.range(0)), 32, 2);
  const cms::KernelConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(cms::shift_all(bank, cfg));
}
BENCHMARK(BM_ShiftAll)->Arg(500)->Arg(2000)->Unit(benchmark::kMillisecond);

void BM_Ward(benchmark::State& state) {
  const auto points = gaussian(static_cast<std::size_t>(state.range(0)), 16, 3);
  for (auto _ : state) benchmark::DoNotOptimize(cms::ward_cluster(points));
}
BENCHMARK(BM_Ward)->Arg(200)->Arg(1000)->Unit(benchmark::kMillisecond);

void BM_Hungarian(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<std::int64_t> u(0, 1000);
  cms::CostMatrix cost{n, n, std::vector<std::int64_t>(n * n)};
  for (auto& e : cost.entries) e = u(rng);
  for (auto _ : state) benchmark::DoNotOptimize(cms::hungarian(cost, true));
}
BENCHMARK(BM_Hungarian)->Arg(8)->Arg(100)->Arg(300);

void BM_HeadForwardBackward(benchmark::State& state) {
  cms::HeadConfig cfg{static_cast<std::size_t>(state.range(0)), 256, 64, 2, 5};
  const auto head = cms::init_head(cfg);
  const auto base = gaussian(128, cfg.in_dim, 6);
  const auto upstream = gaussian(128, cfg.out_dim, 7);
  for (auto _ : state) {
    const auto fwd = cms::forward(head, base);
    benchmark::DoNotOptimize(cms::backward(head, fwd.tape, upstream));
  }
}
BENCHMARK(BM_HeadForwardBackward)->Arg(64)->Arg(768)->Unit(benchmark::kMillisecond);

void BM_CmsLoss(benchmark::State& state) {
  const auto b = static_cast<std::size_t>(state.range(0));
  cms::ContrastiveBatch batch{unit_bank(b, 64, 8).matrix(), unit_bank(b, 64, 9).matrix(),
                              unit_bank(b, 64, 10).matrix(), std::vector<std::optional<int>>(b)};
  for (std::size_t i = 0; i < b; i += 2) batch.labels[i] = static_cast<int>(i % 10);
  const cms::LossConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(cms::total_loss(batch, cfg));
}
BENCHMARK(BM_CmsLoss)->Arg(128)->Arg(512)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
