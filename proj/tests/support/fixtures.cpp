#include "fixtures.hpp"

#include <atomic>
#include <fstream>
#include <sstream>

#ifndef CMS_SOURCE_DIR
#error "CMS_SOURCE_DIR must point at the repository root"
#endif

namespace fixture {

namespace fs = std::filesystem;

TempDir::TempDir(const std::string& tag) {
  static std::atomic<int> counter{0};
  std::random_device rd;
  path_ = fs::temp_directory_path() /
          ("cms_" + tag + "_" + std::to_string(rd()) + "_" + std::to_string(counter++));
  fs::remove_all(path_);
  fs::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

cms::Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> g(0.0, scale);
  cms::Matrix m(rows, cols);
  for (auto& x : m.data()) x = g(rng);
  return m;
}

cms::Matrix random_unit_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  auto m = random_matrix(rows, cols, rng);
  for (std::size_t r = 0; r < rows; ++r) {
    const double n = cms::norm(m.row(r));
    for (auto& x : m.row(r)) x /= n;
  }
  return m;
}

fs::path pinned_config_path() { return fs::path(CMS_SOURCE_DIR) / "configs" / "pinned_synthetic.conf"; }

cms::app::RunSettings pinned_settings() {
  return cms::app::resolve_settings(cms::app::load_key_values(pinned_config_path()), {});
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace fixture
