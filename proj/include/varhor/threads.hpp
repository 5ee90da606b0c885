#ifndef VARHOR_THREADS_HPP
#define VARHOR_THREADS_HPP

#include <cstddef>
#include <functional>

namespace varhor {

// Worker count: explicit override > VARHOR_THREADS env var > hardware.
void set_thread_count(int count); // 0 resets to automatic
int thread_count();

// Splits [0, count) into contiguous chunks, one per worker. Workers write to
// disjoint output slices only; reductions stay sequential so results are
// bit-identical for any worker count.
void parallel_for(std::size_t count, const std::function<void(std::size_t, std::size_t)>& body);

} // namespace varhor

#endif
