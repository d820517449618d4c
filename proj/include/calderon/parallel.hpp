#pragma once

#include <cstddef>
#include <functional>

namespace calderon {

/// Number of worker threads used by parallel sweeps. Defaults to 1.
std::size_t thread_count();
void set_thread_count(std::size_t n);

/// Runs body(i) for i in [begin, end) over contiguous chunks. Callers write
/// results into per-index slots and reduce sequentially afterwards, so the
/// outcome never depends on the thread count.
void parallel_for(std::size_t begin, std::size_t end,
                  const std::function<void(std::size_t)>& body);

}  // namespace calderon
