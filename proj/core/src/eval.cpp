#include "cms/eval.hpp"

#include <algorithm>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>
#include <unordered_map>

#include "cms/error.hpp"

namespace cms {

Matching hungarian(const CostMatrix& cost, bool maximize) {
  if (cost.rows == 0 || cost.cols == 0) throw Error(ErrorCode::kEmpty, "hungarian on an empty matrix");
  if (cost.entries.size() != cost.rows * cost.cols) throw Error(ErrorCode::kShapeMismatch, "cost matrix shape");
  const std::size_t n = std::max(cost.rows, cost.cols);

  std::int64_t top = 0;
  for (const auto v : cost.entries) top = std::max(top, v);
  auto at = [&](std::size_t r, std::size_t c) -> std::int64_t {
    const std::int64_t v = (r < cost.rows && c < cost.cols) ? cost(r, c) : 0;
    return maximize ? top - v : v;
  };

  // Shortest augmenting path with potentials, 1-based; column 0 is a sentinel.
  constexpr std::int64_t kInf = std::numeric_limits<std::int64_t>::max() / 4;
  std::vector<std::int64_t> u(n + 1, 0), v(n + 1, 0);
  std::vector<std::size_t> owner(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    owner[0] = i;
    std::size_t j0 = 0;
    std::vector<std::int64_t> minv(n + 1, kInf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = owner[j0];
      std::int64_t delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const std::int64_t cur = at(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[owner[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (owner[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      owner[j0] = owner[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  Matching matching;
  for (std::size_t j = 1; j <= n; ++j) {
    const std::size_t r = owner[j] - 1;
    const std::size_t c = j - 1;
    if (r < cost.rows && c < cost.cols) matching.emplace_back(r, c);
  }
  std::sort(matching.begin(), matching.end());
  return matching;
}

std::int64_t matching_total(const CostMatrix& cost, const Matching& matching) {
  std::int64_t total = 0;
  for (const auto& [r, c] : matching) total += cost(r, c);
  return total;
}

namespace {

struct Tally {
  std::vector<int> cluster_of;  // per evaluated item
  std::vector<int> class_of;
  std::vector<bool> correct;
  std::vector<std::pair<int, int>> matching;
};

// Builds the intersection matrix over the given (cluster, class) pairs,
// matches it and marks each item correct or not.
Tally match_items(std::vector<int> clusters, std::vector<int> classes) {
  std::map<int, std::size_t> row_of, col_of;
  for (const int c : clusters) row_of.try_emplace(c, 0);
  for (const int c : classes) col_of.try_emplace(c, 0);
  std::size_t next = 0;
  for (auto& [id, r] : row_of) r = next++;
  next = 0;
  for (auto& [id, c] : col_of) c = next++;

  CostMatrix cost{row_of.size(), col_of.size(), std::vector<std::int64_t>(row_of.size() * col_of.size(), 0)};
  for (std::size_t i = 0; i < clusters.size(); ++i) ++cost(row_of[clusters[i]], col_of[classes[i]]);

  std::vector<int> row_ids(row_of.size()), col_ids(col_of.size());
  for (const auto& [id, r] : row_of) row_ids[r] = id;
  for (const auto& [id, c] : col_of) col_ids[c] = id;

  Tally tally;
  std::unordered_map<int, int> matched_class;
  for (const auto& [r, c] : hungarian(cost, true)) {
    matched_class[row_ids[r]] = col_ids[c];
    tally.matching.emplace_back(row_ids[r], col_ids[c]);
  }
  tally.correct.resize(clusters.size());
  for (std::size_t i = 0; i < clusters.size(); ++i) {
    const auto it = matched_class.find(clusters[i]);
    tally.correct[i] = it != matched_class.end() && it->second == classes[i];
  }
  tally.cluster_of = std::move(clusters);
  tally.class_of = std::move(classes);
  return tally;
}

std::unordered_map<std::size_t, int> index_assignments(const ClusteringResult& pred) {
  if (pred.items.size() != pred.assignments.size()) {
    throw Error(ErrorCode::kShapeMismatch, "clustering result items and assignments differ in length");
  }
  std::unordered_map<std::size_t, int> by_item;
  for (std::size_t i = 0; i < pred.items.size(); ++i) {
    if (!by_item.emplace(pred.items[i], pred.assignments[i]).second) {
      throw Error(ErrorCode::kScopeMismatch, "item " + std::to_string(pred.items[i]) + " assigned twice");
    }
  }
  return by_item;
}

}  // namespace

AccuracyReport gcd_accuracy(const ClusteringResult& pred, const DatasetManifest& manifest) {
  const auto by_item = index_assignments(pred);
  std::vector<int> clusters, classes;
  std::vector<bool> known;
  for (const auto& item : manifest.items()) {
    if (item.split != Split::kUnlabeled) continue;
    const auto it = by_item.find(item.index);
    if (it == by_item.end()) {
      throw Error(ErrorCode::kScopeMismatch, "unlabeled item " + std::to_string(item.index) + " has no assignment");
    }
    clusters.push_back(it->second);
    classes.push_back(item.gt_class);
    known.push_back(item.is_known_class);
  }
  if (clusters.empty()) throw Error(ErrorCode::kEmpty, "manifest has no unlabeled items");

  const auto tally = match_items(std::move(clusters), std::move(classes));
  AccuracyReport report;
  for (std::size_t i = 0; i < tally.correct.size(); ++i) {
    const std::size_t hit = tally.correct[i] ? 1 : 0;
    ++report.n_all;
    report.correct_all += hit;
    if (known[i]) {
      ++report.n_old;
      report.correct_old += hit;
    } else {
      ++report.n_novel;
      report.correct_novel += hit;
    }
  }
  auto ratio = [](std::size_t a, std::size_t b) { return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b); };
  report.all = ratio(report.correct_all, report.n_all);
  report.old = ratio(report.correct_old, report.n_old);
  report.novel = ratio(report.correct_novel, report.n_novel);
  report.k = pred.k;
  report.matching = tally.matching;
  return report;
}

double labeled_subset_accuracy(const ClusteringResult& pred, const ManifestView& view, LabeledScope scope) {
  const Split wanted = scope == LabeledScope::kLabeledItems ? Split::kLabeled : Split::kValidation;
  if (pred.items.size() != pred.assignments.size()) {
    throw Error(ErrorCode::kShapeMismatch, "clustering result items and assignments differ in length");
  }
  std::vector<int> clusters, classes;
  for (std::size_t i = 0; i < pred.items.size(); ++i) {
    const auto item = pred.items[i];
    if (item >= view.size()) throw Error(ErrorCode::kScopeMismatch, "assignment for unknown item");
    if (view.split(item) != wanted || !view.has_label(item)) continue;
    clusters.push_back(pred.assignments[i]);
    classes.push_back(*view.label(item));
  }
  if (clusters.empty()) throw Error(ErrorCode::kEmpty, "no labeled items in scope");
  const auto tally = match_items(std::move(clusters), std::move(classes));
  const auto hits = std::count(tally.correct.begin(), tally.correct.end(), true);
  return static_cast<double>(hits) / static_cast<double>(tally.correct.size());
}

std::string format_report_line(const AccuracyReport& report) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(3) << report.all << ',' << report.old << ',' << report.novel << ','
      << report.k;
  return out.str();
}

std::string format_report_block(const AccuracyReport& report) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(6);
  out << "all=" << report.all << '\n'
      << "old=" << report.old << '\n'
      << "novel=" << report.novel << '\n'
      << "n_all=" << report.n_all << '\n'
      << "n_old=" << report.n_old << '\n'
      << "n_novel=" << report.n_novel << '\n'
      << "k=" << report.k << '\n';
  return out.str();
}

}  // namespace cms
