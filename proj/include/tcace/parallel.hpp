#pragma once

#include <cstddef>
#include <functional>

namespace tcace {

// Worker count from TCACE_THREADS, else hardware concurrency; at least 1.
std::size_t thread_count();

// Calls fn(i) for i in [0, n) across up to thread_count() threads. The first
// exception thrown by any call is rethrown after all workers finish.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace tcace
