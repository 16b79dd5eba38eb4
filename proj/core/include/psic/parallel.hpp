#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>

namespace psic {

/// Calls fn(i) for every i in [0, n) using at most `threads` workers.
///
/// Work is split into contiguous static ranges. Callers that need
/// thread-count-independent results must write into per-index slots and
/// reduce them afterwards in index order. The first exception thrown by any
/// worker is rethrown on the calling thread.
void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn);

/// Maps 0 to the hardware concurrency and clamps the result to [1, 256].
unsigned resolve_threads(unsigned requested);

/// splitmix64 finalizer; used to derive independent RNG seeds.
std::uint64_t mix_seed(std::uint64_t x);

/// Derives a child seed from a parent seed and a stream/index pair.
std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t stream, std::uint64_t index = 0);

}  // namespace psic
