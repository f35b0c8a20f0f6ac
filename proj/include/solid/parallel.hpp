// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace solid::par {

inline int hardware_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

/// Resolve a requested thread count: 0 means "use all available".
inline int resolve_threads(int requested) {
  if (requested <= 0) return hardware_threads();
  return requested;
}

/// Parallel loop over [0, n). Iterations must be independent. With
/// threads <= 1 (or without OpenMP) this degenerates to a plain loop, so
/// parallel and serial paths produce identical results for elementwise
/// work; reductions need the chunked pattern used by the training step.
template <class F>
void for_n(int64_t n, int threads, F&& f) {
#ifdef _OPENMP
  if (threads > 1) {
#pragma omp parallel for schedule(static) num_threads(threads)
    for (int64_t i = 0; i < n; ++i) f(i);
    return;
  }
#endif
  (void)threads;
  for (int64_t i = 0; i < n; ++i) f(i);
}

}  // namespace solid::par
