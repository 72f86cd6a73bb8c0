#pragma once

#include <cstddef>
#include <functional>

namespace meshsplat {

/// Number of worker threads used by parallel_for. Defaults to 1.
int thread_count();
void set_thread_count(int n);

/// Splits [0, n) into contiguous chunks, one per worker, and runs body(begin, end)
/// on each. The partition depends only on n and the worker count, so callers that
/// write to disjoint outputs get results independent of scheduling.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body);

}  // namespace meshsplat
