#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cms/matrix.hpp"

namespace cms {

/// Cost ties closer than this are resolved by cluster id.
inline constexpr double kWardTieTolerance = 1e-12;

struct Merge {
  std::size_t a = 0;  // smaller id
  std::size_t b = 0;  // larger id
  double cost = 0.0;
  std::size_t id = 0;  // n + position in the merge list

  bool operator==(const Merge&) const = default;
};

/// Dendrogram. Leaves are 0..n-1; merge t creates cluster n + t.
struct MergeHistory {
  std::size_t n = 0;
  std::vector<Merge> merges;
};

/// Ward linkage over squared Euclidean distances. Merge cost is the
/// Lance-Williams distance, which equals 2|A||B|/(|A|+|B|) * |c_A - c_B|^2.
/// Runs the nearest-neighbor chain and then replays its merges in cost order,
/// breaking cost ties (within kWardTieTolerance) by the smallest (a, b) id pair.
MergeHistory ward_cluster(const Matrix& points);

struct ClusteringResult {
  std::vector<std::size_t> items;  // which item each assignment belongs to
  std::vector<int> assignments;    // 0..k-1
  std::size_t k = 0;
};

/// Undo the last k-1 merges. Cluster ids are numbered by smallest member.
ClusteringResult cut(const MergeHistory& history, std::size_t k);

struct LabeledPoint {
  std::size_t index = 0;
  int label = 0;
};

/// Lloyd iterations with labeled points pinned to their class centroid. The
/// first centroids are the labeled class means (in ascending label order); the
/// rest are seeded by farthest-point selection among unlabeled points.
ClusteringResult semi_supervised_kmeans(const Matrix& points, std::span<const LabeledPoint> labeled, std::size_t k,
                                        std::size_t max_iters = 100, std::uint64_t seed = 0);

/// "index,cluster" text, one line per item.
std::string format_assignments(const ClusteringResult& result);
ClusteringResult parse_assignments(std::string_view text);
void save_assignments(const ClusteringResult& result, const std::filesystem::path& path);
ClusteringResult load_assignments(const std::filesystem::path& path);

}  // namespace cms
