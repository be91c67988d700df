#pragma once

#include <cstddef>
#include <vector>

#include <omp.h>

#include "sepsisrl/kernels.hpp"

namespace sepsisrl {

/// Evaluates map(i) for i in [0, n), possibly in parallel, then folds the
/// results with fold(i, result) in strictly ascending index order. Work is
/// chunked into blocks of `block` items so at most that many results are alive
/// at once. Because the fold order never depends on the thread count, the
/// outcome is bitwise identical to ordered_map_fold_serial.
template <typename Result, typename MapFn, typename FoldFn>
void ordered_map_fold(std::size_t n, std::size_t block, MapFn&& map, FoldFn&& fold) {
  if (block == 0) block = 1;
  const int threads = kernels::effective_threads();
  std::vector<Result> results(std::min(block, n == 0 ? std::size_t{1} : n));
  for (std::size_t start = 0; start < n; start += block) {
    const std::size_t count = std::min(block, n - start);
#pragma omp parallel for schedule(static) num_threads(threads)
    for (std::size_t k = 0; k < count; ++k) {
      results[k] = map(start + k);
    }
    for (std::size_t k = 0; k < count; ++k) {
      fold(start + k, results[k]);
    }
  }
}

/// Serial reference for ordered_map_fold, kept for tests.
template <typename Result, typename MapFn, typename FoldFn>
void ordered_map_fold_serial(std::size_t n, std::size_t block, MapFn&& map, FoldFn&& fold) {
  (void)block;
  for (std::size_t i = 0; i < n; ++i) {
    Result r = map(i);
    fold(i, r);
  }
}

}  // namespace sepsisrl
