#include <cmath>
#include <cstring>
#include <functional>
#include <numeric>
#include <set>
#include <filesystem>
#include <fstream>

#include "cms/data.hpp"
#include "cms/error.hpp"
#include "cms/eval.hpp"
#include "cms/clustering.hpp"
#include "doctest.h"
#include "fixtures.hpp"

using namespace cms;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::kFormat;
}

// Split counts by direct arithmetic on the generator's documented rules.
struct Counts {
  std::size_t known, labeled, validation, unlabeled;
};
Counts expected_counts(const SyntheticConfig& c) {
  std::size_t known = 0;
  while (static_cast<double>(known) < c.known_fraction * static_cast<double>(c.num_classes) - 1e-12) ++known;
  std::size_t lab = 0;
  while (static_cast<double>(lab) < c.labeled_fraction * static_cast<double>(c.per_class) - 1e-12) ++lab;
  const auto val = static_cast<std::size_t>(c.val_fraction * static_cast<double>(c.per_class) + 1e-12);
  const std::size_t total = c.num_classes * c.per_class;
  return {known, known * lab, c.num_classes * val, total - known * lab - c.num_classes * val};
}

}  // namespace

TEST_CASE("EMB1 round trip keeps a unit bank untouched") {
  std::mt19937_64 rng(1);
  const EmbeddingBank bank(fixture::random_unit_matrix(4, 3, rng));
  fixture::TempDir dir("emb");
  save_embedding_bank(bank, dir / "b.emb1");
  const auto back = load_embedding_bank(dir / "b.emb1");
  CHECK(back.count() == 4);
  CHECK(back.dim() == 3);
  CHECK_FALSE(back.renormalized());
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t t = 0; t < 3; ++t) CHECK(back.row(i)[t] == doctest::Approx(bank.row(i)[t]).epsilon(1e-7));
}

TEST_CASE("EMB1 rows of norm 2 are halved and flagged") {
  auto bytes = encode_embedding_bank(EmbeddingBank(Matrix(2, 2, {1, 0, 0, 1})));
  // payload starts after magic(4) + version(4) + N(8) + d(4)
  const float two = 2.0f;
  std::memcpy(bytes.data() + 20, &two, 4);
  std::memcpy(bytes.data() + 32, &two, 4);
  const auto bank = decode_embedding_bank(bytes);
  CHECK(bank.renormalized());
  CHECK(bank.row(0)[0] == 1.0);
  CHECK(bank.row(1)[1] == 1.0);
}

TEST_CASE("EMB1 size arithmetic and corruption") {
  const auto bytes = encode_embedding_bank(EmbeddingBank(Matrix(1, 2, {1, 0})));
  CHECK(bytes.size() == 4 + 4 + 8 + 4 + 8);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "EMB1");

  auto two_by_three = encode_embedding_bank(EmbeddingBank(Matrix(2, 3, {1, 0, 0, 0, 1, 0})));
  two_by_three.resize(20 + 5 * 4);
  CHECK(code_of([&] { decode_embedding_bank(two_by_three); }) == ErrorCode::kCorruption);

  auto bad = bytes;
  bad[0] = 'X';
  CHECK(code_of([&] { decode_embedding_bank(bad); }) == ErrorCode::kFormat);

  auto zero = encode_embedding_bank(EmbeddingBank(Matrix(1, 2, {1, 0})));
  std::fill(zero.begin() + 20, zero.end(), 0);
  CHECK(code_of([&] { decode_embedding_bank(zero); }) == ErrorCode::kDegenerate);
}

TEST_CASE("saving into a missing directory is an I/O error") {
  fixture::TempDir dir("ro");
  const EmbeddingBank bank(Matrix(1, 2, {1, 0}));
  CHECK(code_of([&] { save_embedding_bank(bank, dir / "no_such_dir" / "x.emb1"); }) == ErrorCode::kIo);
  CHECK(code_of([&] { load_embedding_bank(dir / "missing.emb1"); }) == ErrorCode::kIo);
}

TEST_CASE("manifest parsing and invariants") {
  const std::string ok =
      "index,gt_class,is_known_class,split\n0,0,1,labeled\n1,0,1,unlabeled\n2,1,0,unlabeled\n3,1,0,validation\n";
  const auto m = parse_manifest(ok);
  CHECK(m.size() == 4);
  CHECK(m[3].split == Split::kValidation);
  CHECK(parse_manifest(format_manifest(m)) == m);

  CHECK(code_of([] {
          parse_manifest("index,gt_class,is_known_class,split\n0,0,1,labeled\n2,0,1,unlabeled\n2,1,0,unlabeled\n");
        }) == ErrorCode::kConstraint);
  CHECK(code_of([] { parse_manifest("index,gt_class,is_known_class,split\n0,0,0,labeled\n"); }) ==
        ErrorCode::kConstraint);
  CHECK(code_of([] { parse_manifest("index,gt_class,is_known_class,split\n0,0,1,train\n"); }) == ErrorCode::kFormat);

  fixture::TempDir dir("man");
  save_manifest(m, dir / "m.csv");
  CHECK(load_manifest(dir / "m.csv") == m);
}

TEST_CASE("manifest view hides unlabeled classes and counts denied reads") {
  const auto m = parse_manifest(
      "index,gt_class,is_known_class,split\n0,0,1,labeled\n1,0,1,unlabeled\n2,1,0,validation\n3,0,1,validation\n");
  const ManifestView view(m);
  CHECK(view.label(0) == 0);
  CHECK(view.label(3) == 0);
  CHECK(view.denied_reads() == 0);
  CHECK_FALSE(view.label(1).has_value());
  CHECK_FALSE(view.label(2).has_value());
  CHECK(view.denied_reads() == 2);
  CHECK(view.training_items() == std::vector<std::size_t>{0, 1});
  CHECK(view.validation_items() == std::vector<std::size_t>{2, 3});
}

TEST_CASE("synthetic counts match independent arithmetic") {
  SyntheticConfig cfg;
  cfg.num_classes = 4;
  cfg.dim = 16;
  cfg.per_class = 50;
  cfg.known_fraction = 0.5;
  cfg.labeled_fraction = 0.5;
  cfg.val_fraction = 0.1;
  cfg.seed = 7;
  const auto data = generate_synthetic(cfg);
  CHECK(data.bank.count() == 200);
  CHECK(data.bank.dim() == 16);
  const auto want = expected_counts(cfg);
  CHECK(want.known == 2);
  CHECK(want.labeled == 50);
  CHECK(known_class_count(cfg) == want.known);
  CHECK(data.manifest.count(Split::kLabeled) == want.labeled);
  CHECK(data.manifest.count(Split::kValidation) == want.validation);
  CHECK(data.manifest.count(Split::kUnlabeled) == want.unlabeled);

  std::set<int> known;
  for (const auto& item : data.manifest.items())
    if (item.is_known_class) known.insert(item.gt_class);
  CHECK(known.size() == 2);

  SUBCASE("center cap holds") {
    cfg.noise_scale = 0.0;
    const auto clean = generate_synthetic(cfg);
    for (std::size_t a = 0; a < 4; ++a)
      for (std::size_t b = a + 1; b < 4; ++b)
        CHECK(dot(clean.bank.row(a * 50), clean.bank.row(b * 50)) <= 0.2 + 1e-12);
  }
}

TEST_CASE("pinned config counts") {
  const auto s = fixture::pinned_settings();
  const auto data = generate_synthetic(s.synthetic);
  const auto want = expected_counts(s.synthetic);
  CHECK(want.known == 3);
  CHECK(data.manifest.count(Split::kLabeled) == want.labeled);
  CHECK(data.manifest.count(Split::kValidation) == want.validation);
  CHECK(data.manifest.count(Split::kUnlabeled) == want.unlabeled);
}

TEST_CASE("noise 0 puts every member on its center and is perfectly clusterable") {
  SyntheticConfig cfg;
  cfg.seed = 7;
  cfg.noise_scale = 0.0;
  const auto data = generate_synthetic(cfg);
  for (std::size_t c = 0; c < cfg.num_classes; ++c)
    for (std::size_t j = 1; j < cfg.per_class; ++j) {
      const auto a = data.bank.row(c * cfg.per_class);
      const auto b = data.bank.row(c * cfg.per_class + j);
      CHECK(std::equal(a.begin(), a.end(), b.begin()));
    }
  auto result = cut(ward_cluster(data.bank.matrix()), cfg.num_classes);
  result.items.resize(data.bank.count());
  std::iota(result.items.begin(), result.items.end(), 0);
  CHECK(gcd_accuracy(result, data.manifest).all == 1.0);
}

TEST_CASE("synthetic generation is deterministic and seed sensitive") {
  SyntheticConfig cfg;
  cfg.seed = 11;
  cfg.noise_scale = 0.3;
  const auto a = generate_synthetic(cfg);
  const auto b = generate_synthetic(cfg);
  CHECK(a.bank == b.bank);
  CHECK(a.manifest == b.manifest);
  CHECK(encode_embedding_bank(a.bank) == encode_embedding_bank(b.bank));
  cfg.seed = 12;
  CHECK_FALSE(generate_synthetic(cfg).bank == a.bank);
}

TEST_CASE("impossible center caps are infeasible") {
  SyntheticConfig cfg;
  cfg.num_classes = 6;
  cfg.dim = 2;
  cfg.center_max_cosine = -0.9;
  CHECK(code_of([&] { generate_synthetic(cfg); }) == ErrorCode::kInfeasible);
}
