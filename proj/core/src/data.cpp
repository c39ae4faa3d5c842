#include "cms/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <random>
#include <sstream>

#include "cms/error.hpp"

namespace cms {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw Error(ErrorCode::kShapeMismatch, "matrix data does not match its shape");
  }
}

Matrix Matrix::select_rows(std::span<const std::size_t> rows) const {
  Matrix out(rows.size(), cols_);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto src = row(rows[r]);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return out;
}

// ---------------------------------------------------------------------------
// EmbeddingBank

namespace {

double checked_row_norm(const Matrix& m, std::size_t r) {
  const double n = norm(m.row(r));
  if (!std::isfinite(n)) {
    throw Error(ErrorCode::kNumeric, "row " + std::to_string(r) + " has non-finite entries");
  }
  if (n == 0.0) {
    throw Error(ErrorCode::kDegenerate, "row " + std::to_string(r) + " has zero norm");
  }
  return n;
}

}  // namespace

EmbeddingBank::EmbeddingBank(Matrix vectors) : vectors_(std::move(vectors)) {
  for (std::size_t r = 0; r < vectors_.rows(); ++r) {
    const double n = checked_row_norm(vectors_, r);
    if (std::abs(n - 1.0) > kUnitNormTolerance) {
      throw Error(ErrorCode::kValidation,
                  "row " + std::to_string(r) + " is not unit norm (" + std::to_string(n) + ")");
    }
  }
}

EmbeddingBank EmbeddingBank::normalized(Matrix vectors) {
  bool rescaled = false;
  for (std::size_t r = 0; r < vectors.rows(); ++r) {
    const double n = checked_row_norm(vectors, r);
    if (std::abs(n - 1.0) > kUnitNormTolerance) {
      for (double& x : vectors.row(r)) x /= n;
      rescaled = true;
    }
  }
  EmbeddingBank bank(std::move(vectors));
  bank.renormalized_ = rescaled;
  return bank;
}

EmbeddingBank EmbeddingBank::select_rows(std::span<const std::size_t> rows) const {
  EmbeddingBank out;
  out.vectors_ = vectors_.select_rows(rows);
  return out;
}

// ---------------------------------------------------------------------------
// EMB1

namespace {

constexpr char kEmbMagic[4] = {'E', 'M', 'B', '1'};
constexpr std::uint32_t kEmbVersion = 1;
constexpr std::size_t kEmbHeaderSize = 20;

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  using U = std::make_unsigned_t<T>;
  const U bits = static_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

template <typename T>
T get_le(std::span<const std::uint8_t> in, std::size_t offset) {
  std::make_unsigned_t<T> bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    bits |= static_cast<std::make_unsigned_t<T>>(in[offset + i]) << (8 * i);
  }
  return static_cast<T>(bits);
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

}  // namespace

std::vector<std::uint8_t> encode_embedding_bank(const EmbeddingBank& bank) {
  if (bank.dim() > std::numeric_limits<std::uint32_t>::max()) {
    throw Error(ErrorCode::kValidation, "dimension does not fit EMB1");
  }
  std::vector<std::uint8_t> out;
  out.reserve(kEmbHeaderSize + bank.count() * bank.dim() * 4);
  out.insert(out.end(), std::begin(kEmbMagic), std::end(kEmbMagic));
  put_le<std::uint32_t>(out, kEmbVersion);
  put_le<std::uint64_t>(out, bank.count());
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(bank.dim()));
  for (const double x : bank.matrix().data()) {
    put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(x)));
  }
  return out;
}

EmbeddingBank decode_embedding_bank(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kEmbHeaderSize || std::memcmp(bytes.data(), kEmbMagic, 4) != 0) {
    throw Error(ErrorCode::kFormat, "missing EMB1 magic");
  }
  const auto version = get_le<std::uint32_t>(bytes, 4);
  if (version != kEmbVersion) {
    throw Error(ErrorCode::kFormat, "unsupported EMB1 version " + std::to_string(version));
  }
  const auto n = get_le<std::uint64_t>(bytes, 8);
  const auto d = get_le<std::uint32_t>(bytes, 16);
  const std::uint64_t payload = bytes.size() - kEmbHeaderSize;
  if (d != 0 && n > payload / 4 / d) {
    throw Error(ErrorCode::kCorruption, "payload shorter than N*d floats");
  }
  const std::uint64_t floats = n * d;
  if (floats * 4 != payload) {
    throw Error(ErrorCode::kCorruption, "payload has " + std::to_string(payload) + " bytes, expected " +
                                            std::to_string(floats * 4));
  }
  if (d == 0 && n != 0) throw Error(ErrorCode::kFormat, "zero dimension");
  std::vector<double> values(floats);
  for (std::uint64_t i = 0; i < floats; ++i) {
    values[i] = std::bit_cast<float>(get_le<std::uint32_t>(bytes, kEmbHeaderSize + 4 * i));
  }
  return EmbeddingBank::normalized(Matrix(n, d, std::move(values)));
}

EmbeddingBank load_embedding_bank(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return decode_embedding_bank(bytes);
}

void save_embedding_bank(const EmbeddingBank& bank, const std::filesystem::path& path) {
  write_file(path, encode_embedding_bank(bank));
}

// ---------------------------------------------------------------------------
// Manifest

std::string_view to_string(Split split) {
  switch (split) {
    case Split::kLabeled: return "labeled";
    case Split::kUnlabeled: return "unlabeled";
    case Split::kValidation: return "validation";
  }
  return "unlabeled";
}

Split parse_split(std::string_view token) {
  if (token == "labeled") return Split::kLabeled;
  if (token == "unlabeled") return Split::kUnlabeled;
  if (token == "validation") return Split::kValidation;
  throw Error(ErrorCode::kFormat, "unknown split token '" + std::string(token) + "'");
}

DatasetManifest::DatasetManifest(std::vector<ManifestItem> items) {
  std::vector<bool> seen(items.size(), false);
  for (const auto& item : items) {
    if (item.index >= items.size()) {
      throw Error(ErrorCode::kConstraint, "index " + std::to_string(item.index) + " out of range");
    }
    if (seen[item.index]) {
      throw Error(ErrorCode::kConstraint, "duplicate index " + std::to_string(item.index));
    }
    seen[item.index] = true;
    if (item.split == Split::kLabeled && !item.is_known_class) {
      throw Error(ErrorCode::kConstraint,
                  "item " + std::to_string(item.index) + " is labeled but not of a known class");
    }
  }
  std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) { return a.index < b.index; });
  items_ = std::move(items);
}

std::vector<std::size_t> DatasetManifest::indices_with(Split split) const {
  std::vector<std::size_t> out;
  for (const auto& item : items_) {
    if (item.split == split) out.push_back(item.index);
  }
  return out;
}

std::size_t DatasetManifest::count(Split split) const {
  return static_cast<std::size_t>(
      std::count_if(items_.begin(), items_.end(), [&](const auto& item) { return item.split == split; }));
}

namespace {

constexpr std::string_view kManifestHeader = "index,gt_class,is_known_class,split";

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

template <typename T>
T parse_number(std::string_view token, std::size_t line) {
  std::istringstream in{std::string(token)};
  T value{};
  in >> value;
  if (!in || !in.eof()) {
    throw Error(ErrorCode::kFormat, "line " + std::to_string(line) + ": bad number '" + std::string(token) + "'");
  }
  return value;
}

}  // namespace

DatasetManifest parse_manifest(std::string_view text) {
  std::vector<ManifestItem> items;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (!text.empty()) {
    const auto eol = text.find('\n');
    const auto line = trim(text.substr(0, eol));
    text = eol == std::string_view::npos ? std::string_view{} : text.substr(eol + 1);
    ++line_no;
    if (line.empty()) continue;
    if (!header_seen) {
      if (line != kManifestHeader) throw Error(ErrorCode::kFormat, "missing manifest header");
      header_seen = true;
      continue;
    }
    std::vector<std::string_view> fields;
    std::string_view rest = line;
    for (;;) {
      const auto comma = rest.find(',');
      fields.push_back(trim(rest.substr(0, comma)));
      if (comma == std::string_view::npos) break;
      rest = rest.substr(comma + 1);
    }
    if (fields.size() != 4) {
      throw Error(ErrorCode::kFormat, "line " + std::to_string(line_no) + ": expected 4 fields");
    }
    ManifestItem item;
    const auto index = parse_number<long long>(fields[0], line_no);
    if (index < 0) throw Error(ErrorCode::kFormat, "line " + std::to_string(line_no) + ": negative index");
    item.index = static_cast<std::size_t>(index);
    item.gt_class = parse_number<int>(fields[1], line_no);
    if (fields[2] == "1") {
      item.is_known_class = true;
    } else if (fields[2] == "0") {
      item.is_known_class = false;
    } else {
      throw Error(ErrorCode::kFormat, "line " + std::to_string(line_no) + ": is_known_class must be 0 or 1");
    }
    item.split = parse_split(fields[3]);
    items.push_back(item);
  }
  if (!header_seen) throw Error(ErrorCode::kFormat, "empty manifest");
  return DatasetManifest(std::move(items));
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_manifest(buffer.str());
}

std::string format_manifest(const DatasetManifest& manifest) {
  std::ostringstream out;
  out << kManifestHeader << '\n';
  for (const auto& item : manifest.items()) {
    out << item.index << ',' << item.gt_class << ',' << (item.is_known_class ? 1 : 0) << ','
        << to_string(item.split) << '\n';
  }
  return out.str();
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  const auto text = format_manifest(manifest);
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

// ---------------------------------------------------------------------------
// ManifestView

ManifestView::ManifestView(const DatasetManifest& manifest) {
  splits_.reserve(manifest.size());
  labels_.reserve(manifest.size());
  for (const auto& item : manifest.items()) {
    splits_.push_back(item.split);
    const bool visible = item.split == Split::kLabeled || (item.split == Split::kValidation && item.is_known_class);
    labels_.push_back(visible ? std::optional<int>(item.gt_class) : std::nullopt);
  }
}

std::optional<int> ManifestView::label(std::size_t i) const {
  if (!labels_[i]) denied_->fetch_add(1);
  return labels_[i];
}

std::vector<std::size_t> ManifestView::indices_with(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < splits_.size(); ++i) {
    if (splits_[i] == split) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> ManifestView::training_items() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < splits_.size(); ++i) {
    if (splits_[i] != Split::kValidation) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> ManifestView::validation_items() const { return indices_with(Split::kValidation); }

// ---------------------------------------------------------------------------
// Synthetic generator

void SyntheticConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::kValidation, what); };
  if (num_classes == 0) fail("num_classes must be positive");
  if (dim == 0) fail("dim must be positive");
  if (per_class == 0) fail("per_class must be positive");
  if (!(center_max_cosine >= -1.0 && center_max_cosine <= 1.0)) fail("center_max_cosine must be in [-1, 1]");
  if (!(noise_scale >= 0.0) || !std::isfinite(noise_scale)) fail("noise_scale must be non-negative");
  if (!(known_fraction > 0.0 && known_fraction <= 1.0)) fail("known_fraction must be in (0, 1]");
  if (!(labeled_fraction > 0.0 && labeled_fraction <= 1.0)) fail("labeled_fraction must be in (0, 1]");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) fail("val_fraction must be in [0, 1)");
}

std::size_t known_class_count(const SyntheticConfig& cfg) {
  return static_cast<std::size_t>(std::ceil(cfg.known_fraction * static_cast<double>(cfg.num_classes) - 1e-12));
}

namespace {

std::vector<double> gaussian_vector(std::size_t dim, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(dim);
  for (double& x : v) x = normal(rng);
  return v;
}

}  // namespace

SyntheticDataset generate_synthetic(const SyntheticConfig& cfg) {
  cfg.validate();
  const std::size_t labeled_per_class =
      static_cast<std::size_t>(std::ceil(cfg.labeled_fraction * static_cast<double>(cfg.per_class) - 1e-12));
  const std::size_t val_per_class =
      static_cast<std::size_t>(std::floor(cfg.val_fraction * static_cast<double>(cfg.per_class) + 1e-12));
  const std::size_t known = known_class_count(cfg);
  if (labeled_per_class + val_per_class > cfg.per_class) {
    throw Error(ErrorCode::kInfeasible, "labeled and validation items exceed per_class");
  }

  std::mt19937_64 rng(cfg.seed);

  constexpr std::size_t kMaxAttempts = 100000;
  std::vector<std::vector<double>> centers;
  std::size_t attempts = 0;
  while (centers.size() < cfg.num_classes) {
    if (attempts++ >= kMaxAttempts) {
      throw Error(ErrorCode::kInfeasible, "could not place " + std::to_string(cfg.num_classes) +
                                              " centers under cosine cap " + std::to_string(cfg.center_max_cosine));
    }
    auto c = gaussian_vector(cfg.dim, rng);
    const double n = norm(c);
    if (n == 0.0) continue;
    for (double& x : c) x /= n;
    const bool ok = std::all_of(centers.begin(), centers.end(),
                                [&](const auto& other) { return dot(c, other) <= cfg.center_max_cosine; });
    if (ok) centers.push_back(std::move(c));
  }

  const std::size_t n = cfg.num_classes * cfg.per_class;
  Matrix vectors(n, cfg.dim);
  std::vector<ManifestItem> items;
  items.reserve(n);
  for (std::size_t c = 0; c < cfg.num_classes; ++c) {
    const auto& center = centers[c];
    const bool is_known = c < known;
    for (std::size_t j = 0; j < cfg.per_class; ++j) {
      const std::size_t idx = c * cfg.per_class + j;
      auto out = vectors.row(idx);
      auto g = gaussian_vector(cfg.dim, rng);
      const double radial = dot(g, center);
      for (std::size_t t = 0; t < cfg.dim; ++t) out[t] = center[t] + cfg.noise_scale * (g[t] - radial * center[t]);
      const double len = norm(out);
      for (double& x : out) x /= len;

      Split split = Split::kUnlabeled;
      if (is_known && j < labeled_per_class) {
        split = Split::kLabeled;
      } else if (j < (is_known ? labeled_per_class : 0) + val_per_class) {
        split = Split::kValidation;
      }
      items.push_back({idx, static_cast<int>(c), is_known, split});
    }
  }
  return {EmbeddingBank(std::move(vectors)), DatasetManifest(std::move(items))};
}

}  // namespace cms
