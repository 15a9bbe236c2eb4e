#pragma once

#include <cstddef>
#include <functional>

namespace resteer {

/// Worker cap: CORAL_THREADS if set to a positive integer, otherwise the
/// hardware concurrency.
int max_threads();

/// Runs body(i) for i in [0, n). Each index is owned by exactly one worker, so
/// results written to slot i are identical to a serial run.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace resteer
