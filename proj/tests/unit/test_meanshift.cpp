#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "cms/data.hpp"
#include "cms/error.hpp"
#include "cms/meanshift.hpp"
#include "doctest.h"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace cms;

namespace {

KernelConfig knn(std::size_t k, double alpha) {
  KernelConfig cfg;
  cfg.k = k;
  cfg.alpha = alpha;
  return cfg;
}

oracle::Rows rows_of(const EmbeddingBank& bank) {
  oracle::Rows out;
  for (std::size_t i = 0; i < bank.count(); ++i) out.emplace_back(bank.row(i).begin(), bank.row(i).end());
  return out;
}

double mean_within_class_cosine(const EmbeddingBank& bank, const DatasetManifest& m) {
  double total = 0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < bank.count(); ++i)
    for (std::size_t j = i + 1; j < bank.count(); ++j)
      if (m[i].gt_class == m[j].gt_class) {
        total += dot(bank.row(i), bank.row(j));
        ++pairs;
      }
  return total / static_cast<double>(pairs);
}

}  // namespace

TEST_CASE("knn on the standard basis breaks ties by index") {
  Matrix basis(4, 4, 0.0);
  for (std::size_t i = 0; i < 4; ++i) basis(i, i) = 1.0;
  const EmbeddingBank bank(basis);
  const std::vector<double> e1{1, 0, 0, 0};
  const auto res = knn_search(e1, bank, 2);
  CHECK(res.indices == std::vector<std::size_t>{0, 1});
  CHECK_FALSE(res.reduced);

  const auto excl = knn_search(bank.row(3), bank, 3, 3);
  CHECK(std::find(excl.indices.begin(), excl.indices.end(), 3u) == excl.indices.end());
  CHECK(excl.indices == std::vector<std::size_t>{0, 1, 2});

  const auto reduced = knn_search(e1, bank, 9, 0);
  CHECK(reduced.reduced);
  CHECK(reduced.indices.size() == 3);

  CHECK_THROWS_AS(knn_search(e1, EmbeddingBank(), 1), Error);
}

TEST_CASE("knn matches the exhaustive sort oracle") {
  std::mt19937_64 rng(64);
  const EmbeddingBank bank(fixture::random_unit_matrix(64, 8, rng));
  const auto rows = rows_of(bank);
  for (std::size_t q = 0; q < 64; ++q) {
    CHECK(knn_search(bank.row(q), bank, 8).indices == oracle::exhaustive_knn(rows[q], rows, 8, std::nullopt));
    CHECK(knn_search(bank.row(q), bank, 8, q).indices == oracle::exhaustive_knn(rows[q], rows, 8, q));
  }
}

TEST_CASE("kernel weight examples") {
  auto w = kernel_weights(knn(8, 0.5), 8);
  CHECK(w.center == 0.5);
  CHECK(w.neighbor == 0.0625);
  w = kernel_weights(knn(8, 0.0), 8);
  CHECK(w.center == 1.0);
  CHECK(w.neighbor == 0.0);
  w = kernel_weights(knn(4, 1.0), 4);
  CHECK(w.center == 0.0);
  CHECK(w.neighbor == 0.25);
  // the divisor stays k when fewer neighbors exist
  CHECK(kernel_weights(knn(4, 1.0), 2).neighbor == 0.25);
}

TEST_CASE("cosine kernels") {
  KernelConfig u;
  u.kind = KernelKind::kUniform;
  CHECK(cosine_kernel(u, 0.95) == 1.0);
  CHECK(cosine_kernel(u, 0.9) == 1.0);
  CHECK(cosine_kernel(u, 0.5) == 0.0);
  KernelConfig g;
  g.kind = KernelKind::kGaussian;
  CHECK(cosine_kernel(g, 1.0) == 1.0);
  CHECK(cosine_kernel(g, 0.98) == doctest::Approx(std::exp(-0.02 / 0.02)));
  CHECK_THROWS_AS(cosine_kernel(knn(1, 0.5), 0.3), Error);
  CHECK(parse_kernel_kind("gaussian") == KernelKind::kGaussian);
  CHECK_THROWS_AS(parse_kernel_kind("box"), Error);
}

TEST_CASE("shift_one examples") {
  const std::vector<double> q{1, 0}, n{0, 1}, anti{-1, 0};
  const std::vector<std::span<const double>> one{n};
  const auto z = shift_one(q, one, knn(1, 0.5));
  CHECK(std::abs(z[0] - std::sqrt(2.0) / 2) <= 1e-12);
  CHECK(std::abs(z[1] - std::sqrt(2.0) / 2) <= 1e-12);

  const std::vector<std::span<const double>> same{q, q, q};
  CHECK(shift_one(q, same, knn(3, 0.7)) == q);
  CHECK(shift_one(q, one, knn(1, 0.0)) == q);

  const std::vector<std::span<const double>> opposite{anti};
  try {
    shift_one(q, opposite, knn(1, 0.5));
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kDegenerate);
  }
}

TEST_CASE("shift_one_backward matches central differences for every kernel") {
  std::mt19937_64 rng(3);
  const auto nb = fixture::random_unit_matrix(5, 6, rng);
  const auto q0 = fixture::random_unit_matrix(1, 6, rng);
  const auto upstream = fixture::random_matrix(1, 6, rng);
  std::vector<std::span<const double>> neighbors;
  for (std::size_t i = 0; i < 5; ++i) neighbors.push_back(nb.row(i));

  KernelConfig gauss;
  gauss.kind = KernelKind::kGaussian;
  gauss.sigma = 0.8;
  KernelConfig uni;
  uni.kind = KernelKind::kUniform;
  uni.delta = -1.0;  // every neighbor inside, so the weights are locally constant
  for (const auto& cfg : {knn(5, 0.4), gauss, uni}) {
    auto f = [&](const oracle::Vec& q) {
      const auto z = shift_one(q, neighbors, cfg);
      return dot(z, upstream.row(0));
    };
    const oracle::Vec q(q0.row(0).begin(), q0.row(0).end());
    const auto detail = shift_one_detailed(q, neighbors, cfg);
    const auto analytic = shift_one_backward(detail, neighbors, cfg, upstream.row(0));
    const auto numeric = oracle::central_difference(f, q, 1e-6);
    CHECK(oracle::max_relative_error(analytic, numeric, 1e-6) <= 1e-6);
  }
}

TEST_CASE("shift_all boundary cases") {
  const EmbeddingBank single(Matrix(1, 3, {0, 1, 0}));
  CHECK(shift_all(single, knn(1, 0.5)) == single);

  Matrix clusters(6, 2);
  for (std::size_t i = 0; i < 3; ++i) clusters(i, 0) = 1.0;
  for (std::size_t i = 3; i < 6; ++i) clusters(i, 1) = 1.0;
  const EmbeddingBank coincident(clusters);
  CHECK(shift_all(coincident, knn(2, 0.5)) == coincident);

  std::mt19937_64 rng(8);
  const EmbeddingBank random(fixture::random_unit_matrix(20, 5, rng));
  const auto moved = shift_all(random, knn(4, 0.0));
  for (std::size_t i = 0; i < random.count(); ++i)
    for (std::size_t t = 0; t < random.dim(); ++t) CHECK(std::abs(moved.row(i)[t] - random.row(i)[t]) <= 1e-15);
}

TEST_CASE("shift_all matches the double-loop oracle and is synchronous") {
  std::mt19937_64 rng(12);
  const EmbeddingBank bank(fixture::random_unit_matrix(40, 6, rng));
  const auto got = shift_all(bank, knn(5, 0.5));
  const auto want = oracle::naive_shift_all_knn(rows_of(bank), 5, 0.5);
  for (std::size_t i = 0; i < 40; ++i)
    for (std::size_t t = 0; t < 6; ++t) CHECK(std::abs(got.row(i)[t] - want[i][t]) <= 1e-12);

  // permuting the rows permutes the result: each row only sees the old bank
  std::vector<std::size_t> perm(40);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  const auto shuffled = shift_all(bank.select_rows(perm), knn(5, 0.5));
  for (std::size_t i = 0; i < 40; ++i)
    for (std::size_t t = 0; t < 6; ++t) CHECK(std::abs(shuffled.row(i)[t] - got.row(perm[i])[t]) <= 1e-12);
}

TEST_CASE("repeated shifts tighten classes") {
  SyntheticConfig cfg;
  cfg.seed = 7;
  cfg.noise_scale = 0.08;
  const auto data = generate_synthetic(cfg);
  auto bank = data.bank;
  double previous = mean_within_class_cosine(bank, data.manifest);
  for (int step = 0; step < 5; ++step) {
    bank = shift_all(bank, knn(8, 0.5));
    const double now = mean_within_class_cosine(bank, data.manifest);
    CHECK(now >= previous);
    previous = now;
  }
}

TEST_CASE("uniform and gaussian shifts keep rows on the sphere") {
  std::mt19937_64 rng(2);
  const EmbeddingBank bank(fixture::random_unit_matrix(30, 4, rng));
  KernelConfig u;
  u.kind = KernelKind::kUniform;
  KernelConfig g;
  g.kind = KernelKind::kGaussian;
  for (const auto& cfg : {u, g}) {
    const auto out = shift_all(bank, cfg);
    for (std::size_t i = 0; i < out.count(); ++i) CHECK(norm(out.row(i)) == doctest::Approx(1.0));
  }
}
