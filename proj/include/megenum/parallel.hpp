#pragma once

#include <cstddef>
#include <functional>

namespace megenum {

/// Worker cap: MEG_ENUM_THREADS if set and positive, else the logical core count.
unsigned thread_count();

/// Runs fn(i) for i in [0, n). Work is handed out dynamically, so callers must
/// write results into slot i only; the outcome is then schedule independent.
/// The first exception thrown by any task is rethrown after all workers join.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace megenum
