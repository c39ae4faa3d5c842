#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "cms/data.hpp"
#include "cms/matrix.hpp"
#include "cms_app/settings.hpp"

namespace fixture {

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

cms::Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double scale = 1.0);
cms::Matrix random_unit_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng);

std::filesystem::path pinned_config_path();
cms::app::RunSettings pinned_settings();

std::string read_file(const std::filesystem::path& path);

}  // namespace fixture
