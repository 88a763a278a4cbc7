#pragma once

#include <cstddef>
#include <functional>

namespace v2c {

/// Worker count: V2C_THREADS if set and positive, else hardware concurrency.
std::size_t max_threads();

/// Overrides the worker cap for this process; 0 restores the default.
void set_max_threads(std::size_t n);

/// Runs body(i) for i in [0, n), splitting contiguous chunks over workers.
/// Each index is processed by exactly one worker, so per-index outputs are
/// schedule-independent as long as body only writes to slot i.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace v2c
