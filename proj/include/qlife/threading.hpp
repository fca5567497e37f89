#pragma once

#include <cstddef>
#include <functional>

namespace qlife {

// Effective evaluation parallelism: hardware concurrency capped by the
// QLIFE_THREADS environment variable (values < 1 mean 1).
int max_threads();

// Splits [0, n) into contiguous chunks and runs `body(begin, end)` on up to
// `threads` workers. Falls back to inline execution for threads <= 1.
void parallel_chunks(std::size_t n, int threads,
                     const std::function<void(std::size_t, std::size_t)>& body);

}  // namespace qlife
