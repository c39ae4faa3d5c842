#pragma once

// Independent reference implementations used only by tests. They favour
// obviousness over speed and share no code with the library.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <set>
#include <tuple>
#include <vector>

namespace oracle {

using Vec = std::vector<double>;
using Rows = std::vector<Vec>;

Rows random_unit_rows(std::size_t n, std::size_t d, std::mt19937_64& rng);
Rows random_rows(std::size_t n, std::size_t d, std::mt19937_64& rng);

/// Ward by recomputing every pairwise cost from member lists at each step.
/// Returns (min id, max id, cost) per merge; new clusters get ids n, n+1, ...
std::vector<std::tuple<std::size_t, std::size_t, double>> naive_ward(const Rows& points, double tie_tol = 1e-12);

/// Partition after agglomerating from scratch until `k` clusters remain.
std::set<std::set<std::size_t>> naive_ward_partition(const Rows& points, std::size_t k);

/// Best assignment total over all permutations of the zero-padded square matrix.
std::int64_t brute_force_assignment(const std::vector<std::vector<std::int64_t>>& cost, bool maximize);

/// Full sort by (cosine desc, index asc), optionally dropping one index.
std::vector<std::size_t> exhaustive_knn(const Vec& query, const Rows& bank, std::size_t k,
                                        std::optional<std::size_t> exclude);

/// Double-loop synchronous kNN-kernel mean shift of every row.
Rows naive_shift_all_knn(const Rows& bank, std::size_t k, double alpha);

/// Central differences of f at x.
Vec central_difference(const std::function<double(const Vec&)>& f, Vec x, double h);

/// Fourth-order five-point stencil; far less truncation error for sharp
/// objectives at the same roundoff.
Vec five_point_difference(const std::function<double(const Vec&)>& f, Vec x, double h);

/// max_i |a_i - b_i| / max(scale, |a_i|, |b_i|)
double max_relative_error(const Vec& a, const Vec& b, double scale = 1e-8);

}  // namespace oracle
