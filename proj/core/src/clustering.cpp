#include "cms/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <queue>
#include <random>
#include <sstream>
#include <tuple>

#include "cms/error.hpp"
#include "cms/parallel.hpp"

namespace cms {

namespace {

class CondensedDistances {
 public:
  explicit CondensedDistances(std::size_t n) : n_(n), d_(n < 2 ? 0 : n * (n - 1) / 2) {}

  double& operator()(std::size_t i, std::size_t j) { return d_[index(i, j)]; }
  double operator()(std::size_t i, std::size_t j) const { return d_[index(i, j)]; }

 private:
  std::size_t index(std::size_t i, std::size_t j) const {
    if (i > j) std::swap(i, j);
    return i * (2 * n_ - i - 1) / 2 + (j - i - 1);
  }

  std::size_t n_;
  std::vector<double> d_;
};

struct RawMerge {
  std::size_t left;  // chain node ids: leaves 0..n-1, merges n + raw index
  std::size_t right;
  double cost;
};

std::vector<RawMerge> nn_chain(const Matrix& points) {
  const std::size_t n = points.rows();
  CondensedDistances dist(n);
  parallel_for(n, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) dist(i, j) = squared_distance(points.row(i), points.row(j));
    }
  });

  std::vector<bool> active(n, true);
  std::vector<std::size_t> size(n, 1);
  std::vector<std::size_t> node(n);
  std::iota(node.begin(), node.end(), 0);
  std::vector<RawMerge> merges;
  merges.reserve(n - 1);
  std::vector<std::size_t> chain;

  for (std::size_t remaining = n; remaining > 1; --remaining) {
    if (chain.empty()) {
      chain.push_back(static_cast<std::size_t>(std::find(active.begin(), active.end(), true) - active.begin()));
    }
    for (;;) {
      const std::size_t a = chain.back();
      const std::optional<std::size_t> prev =
          chain.size() >= 2 ? std::optional<std::size_t>(chain[chain.size() - 2]) : std::nullopt;
      std::size_t best = n;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < n; ++c) {
        if (!active[c] || c == a) continue;
        const double d = dist(a, c);
        if (d < best_d || (d == best_d && best < n && node[c] < node[best])) {
          best_d = d;
          best = c;
        }
      }
      // Prefer the predecessor on exact ties so the chain always terminates.
      if (prev && dist(a, *prev) == best_d) best = *prev;
      if (prev && best == *prev) break;
      chain.push_back(best);
    }

    const std::size_t a = chain.back();
    chain.pop_back();
    const std::size_t b = chain.back();
    chain.pop_back();
    const double dab = dist(a, b);
    merges.push_back({node[a], node[b], dab});

    const std::size_t keep = std::min(a, b);
    const std::size_t drop = std::max(a, b);
    const double sa = static_cast<double>(size[a]);
    const double sb = static_cast<double>(size[b]);
    for (std::size_t c = 0; c < n; ++c) {
      if (!active[c] || c == a || c == b) continue;
      const double sc = static_cast<double>(size[c]);
      dist(keep, c) = ((sa + sc) * dist(a, c) + (sb + sc) * dist(b, c) - sc * dab) / (sa + sb + sc);
    }
    active[drop] = false;
    size[keep] = size[a] + size[b];
    node[keep] = n + merges.size() - 1;
  }
  return merges;
}

}  // namespace

MergeHistory ward_cluster(const Matrix& points) {
  const std::size_t n = points.rows();
  if (n == 0) throw Error(ErrorCode::kEmpty, "ward_cluster needs at least one point");
  for (const double x : points.data()) {
    if (!std::isfinite(x)) throw Error(ErrorCode::kNumeric, "ward_cluster input has non-finite entries");
  }
  MergeHistory history;
  history.n = n;
  if (n == 1) return history;

  const auto raw = nn_chain(points);

  // Replay in cost order. A merge becomes ready once both children exist.
  std::vector<std::size_t> parent(2 * n - 1, raw.size());
  for (std::size_t r = 0; r < raw.size(); ++r) {
    parent[raw[r].left] = r;
    parent[raw[r].right] = r;
  }
  std::vector<std::size_t> final_id(2 * n - 1, std::numeric_limits<std::size_t>::max());
  for (std::size_t i = 0; i < n; ++i) final_id[i] = i;

  using Entry = std::tuple<double, std::size_t, std::size_t, std::size_t>;  // cost, a, b, raw index
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> ready;
  auto try_push = [&](std::size_t r) {
    const auto l = final_id[raw[r].left];
    const auto rr = final_id[raw[r].right];
    if (l == std::numeric_limits<std::size_t>::max() || rr == std::numeric_limits<std::size_t>::max()) return;
    ready.emplace(raw[r].cost, std::min(l, rr), std::max(l, rr), r);
  };
  for (std::size_t r = 0; r < raw.size(); ++r) try_push(r);

  std::vector<Entry> tied;
  while (!ready.empty()) {
    tied.clear();
    tied.push_back(ready.top());
    ready.pop();
    const double limit = std::get<0>(tied.front()) + kWardTieTolerance;
    while (!ready.empty() && std::get<0>(ready.top()) <= limit) {
      tied.push_back(ready.top());
      ready.pop();
    }
    const auto chosen = std::min_element(tied.begin(), tied.end(), [](const Entry& x, const Entry& y) {
      return std::tie(std::get<1>(x), std::get<2>(x)) < std::tie(std::get<1>(y), std::get<2>(y));
    });
    const auto [cost, a, b, r] = *chosen;
    for (auto it = tied.begin(); it != tied.end(); ++it) {
      if (it != chosen) ready.push(*it);
    }
    const std::size_t id = n + history.merges.size();
    history.merges.push_back({a, b, cost, id});
    final_id[n + r] = id;
    if (parent[n + r] < raw.size()) try_push(parent[n + r]);
  }
  return history;
}

ClusteringResult cut(const MergeHistory& history, std::size_t k) {
  const std::size_t n = history.n;
  if (k < 1 || k > n) {
    throw Error(ErrorCode::kValidation, "cut: k=" + std::to_string(k) + " outside [1, " + std::to_string(n) + "]");
  }
  std::vector<std::size_t> root(2 * n - 1);
  std::iota(root.begin(), root.end(), 0);
  auto find = [&](std::size_t x) {
    while (root[x] != x) {
      root[x] = root[root[x]];
      x = root[x];
    }
    return x;
  };
  for (std::size_t t = 0; t + k < n; ++t) {
    const auto& m = history.merges[t];
    root[find(m.a)] = m.id;
    root[find(m.b)] = m.id;
  }
  ClusteringResult result;
  result.items.resize(n);
  std::iota(result.items.begin(), result.items.end(), 0);
  result.assignments.resize(n);
  std::map<std::size_t, int> label_of;
  for (std::size_t i = 0; i < n; ++i) {
    const auto [it, inserted] = label_of.try_emplace(find(i), static_cast<int>(label_of.size()));
    result.assignments[i] = it->second;
  }
  result.k = label_of.size();
  return result;
}

// ---------------------------------------------------------------------------
// Semi-supervised k-means

ClusteringResult semi_supervised_kmeans(const Matrix& points, std::span<const LabeledPoint> labeled, std::size_t k,
                                        std::size_t max_iters, std::uint64_t seed) {
  const std::size_t n = points.rows();
  const std::size_t d = points.cols();
  if (n == 0) throw Error(ErrorCode::kEmpty, "semi_supervised_kmeans needs points");
  if (k < 1 || k > n) throw Error(ErrorCode::kValidation, "k must be in [1, n]");

  std::map<int, std::size_t> class_slot;
  for (const auto& p : labeled) {
    if (p.index >= n) throw Error(ErrorCode::kValidation, "labeled index out of range");
    class_slot.try_emplace(p.label, 0);
  }
  if (class_slot.size() > k) {
    throw Error(ErrorCode::kValidation, "k=" + std::to_string(k) + " is below the " +
                                            std::to_string(class_slot.size()) + " labeled classes");
  }
  std::size_t slot = 0;
  for (auto& [label, s] : class_slot) s = slot++;

  constexpr int kFree = -1;
  std::vector<int> pinned(n, kFree);
  for (const auto& p : labeled) pinned[p.index] = static_cast<int>(class_slot[p.label]);
  std::vector<std::size_t> unlabeled;
  for (std::size_t i = 0; i < n; ++i) {
    if (pinned[i] == kFree) unlabeled.push_back(i);
  }
  if (k - class_slot.size() > unlabeled.size()) {
    throw Error(ErrorCode::kValidation, "not enough unlabeled points to seed the remaining centroids");
  }

  Matrix centroids(k, d);
  std::vector<std::size_t> counts(k, 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (pinned[i] == kFree) continue;
    const auto c = static_cast<std::size_t>(pinned[i]);
    ++counts[c];
    for (std::size_t t = 0; t < d; ++t) centroids(c, t) += points(i, t);
  }
  for (std::size_t c = 0; c < class_slot.size(); ++c) {
    for (std::size_t t = 0; t < d; ++t) centroids(c, t) /= static_cast<double>(counts[c]);
  }

  auto nearest_distance = [&](std::size_t i, std::size_t upto) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < upto; ++c) best = std::min(best, squared_distance(points.row(i), centroids.row(c)));
    return best;
  };
  std::vector<bool> used(n, false);
  for (std::size_t c = class_slot.size(); c < k; ++c) {
    std::size_t pick = unlabeled.front();
    if (c == 0) {
      std::mt19937_64 rng(seed);
      pick = unlabeled[std::uniform_int_distribution<std::size_t>(0, unlabeled.size() - 1)(rng)];
    } else {
      double far = -1.0;
      for (const auto i : unlabeled) {
        if (used[i]) continue;
        const double dd = nearest_distance(i, c);
        if (dd > far) {
          far = dd;
          pick = i;
        }
      }
    }
    used[pick] = true;
    std::copy(points.row(pick).begin(), points.row(pick).end(), centroids.row(c).begin());
  }

  std::vector<int> assign(pinned);
  auto nearest_centroid = [&](std::size_t i) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) {
      const double dd = squared_distance(points.row(i), centroids.row(c));
      if (dd < best_d) {
        best_d = dd;
        best = static_cast<int>(c);
      }
    }
    return best;
  };

  for (std::size_t iter = 0; iter < max_iters; ++iter) {
    bool changed = false;
    for (const auto i : unlabeled) {
      const int c = nearest_centroid(i);
      if (c != assign[i]) {
        assign[i] = c;
        changed = true;
      }
    }
    // A centroid without members takes the unlabeled point farthest from its own centroid.
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < n; ++i) ++counts[static_cast<std::size_t>(assign[i])];
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] != 0) continue;
      std::size_t far_i = n;
      double far = -1.0;
      for (const auto i : unlabeled) {
        const auto own = static_cast<std::size_t>(assign[i]);
        if (counts[own] <= 1) continue;
        const double dd = squared_distance(points.row(i), centroids.row(own));
        if (dd > far) {
          far = dd;
          far_i = i;
        }
      }
      if (far_i == n) continue;
      --counts[static_cast<std::size_t>(assign[far_i])];
      assign[far_i] = static_cast<int>(c);
      counts[c] = 1;
      changed = true;
    }

    Matrix next(k, d);
    for (std::size_t i = 0; i < n; ++i) {
      const auto c = static_cast<std::size_t>(assign[i]);
      for (std::size_t t = 0; t < d; ++t) next(c, t) += points(i, t);
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) {
        std::copy(centroids.row(c).begin(), centroids.row(c).end(), next.row(c).begin());
        continue;
      }
      for (std::size_t t = 0; t < d; ++t) next(c, t) /= static_cast<double>(counts[c]);
    }
    centroids = std::move(next);
    if (!changed) break;
  }

  ClusteringResult result;
  result.items.resize(n);
  std::iota(result.items.begin(), result.items.end(), 0);
  result.assignments.resize(n);
  std::map<int, int> relabel;
  for (std::size_t i = 0; i < n; ++i) {
    const auto [it, inserted] = relabel.try_emplace(assign[i], static_cast<int>(relabel.size()));
    result.assignments[i] = it->second;
  }
  result.k = relabel.size();
  return result;
}

// ---------------------------------------------------------------------------
// Assignment files

std::string format_assignments(const ClusteringResult& result) {
  std::ostringstream out;
  out << "index,cluster\n";
  for (std::size_t i = 0; i < result.assignments.size(); ++i) {
    out << result.items[i] << ',' << result.assignments[i] << '\n';
  }
  return out.str();
}

ClusteringResult parse_assignments(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line) || line.substr(0, 13) != "index,cluster") {
    throw Error(ErrorCode::kFormat, "missing assignments header");
  }
  ClusteringResult result;
  std::map<int, int> distinct;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.find(',');
    long long index = -1;
    int cluster = 0;
    char extra = 0;
    std::istringstream fields(comma == std::string::npos ? std::string() : line.substr(0, comma) + " " +
                                                                               line.substr(comma + 1));
    if (!(fields >> index >> cluster) || (fields >> extra) || index < 0) {
      throw Error(ErrorCode::kFormat, "assignments line " + std::to_string(line_no) + " is malformed");
    }
    result.items.push_back(static_cast<std::size_t>(index));
    result.assignments.push_back(cluster);
    distinct.try_emplace(cluster, 0);
  }
  result.k = distinct.size();
  return result;
}

void save_assignments(const ClusteringResult& result, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot open " + path.string() + " for writing");
  out << format_assignments(result);
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

ClusteringResult load_assignments(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_assignments(buffer.str());
}

}  // namespace cms
