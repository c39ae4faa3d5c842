#pragma once

#include <cstddef>
#include <functional>

namespace cms {

/// Process-wide cap on worker threads (default 1). Results never depend on it:
/// work is split into contiguous index ranges and every reduction is done by a
/// single owner in fixed order.
void set_thread_count(std::size_t n);
std::size_t thread_count();

/// Calls fn(begin, end) over a partition of [0, n). If several ranges throw,
/// the exception from the lowest range is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace cms
