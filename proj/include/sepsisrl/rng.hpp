#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace sepsisrl {

/// Deterministic random source. All distributions are written out by hand on
/// top of mt19937_64 so that streams are identical across standard libraries
/// and platforms.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform double in [0, 1) with 53 bits of randomness.
  double uniform();

  /// Uniform double in [lo, hi).
  double uniform(double lo, double hi);

  /// Standard normal via Box-Muller (two uniform draws per call, the second
  /// variate is discarded so the stream never depends on caching).
  double normal();

  double normal(double mean, double stddev);

  /// Uniform integer in [0, n). n must be > 0. Uses 64-bit multiply-shift
  /// (Lemire) on a fresh 64-bit word; deterministic and unbiased enough for
  /// simulation use without a rejection loop.
  std::uint64_t below(std::uint64_t n);

  /// Uniform integer in [lo, hi] inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);

  /// Bernoulli draw with success probability p.
  bool bernoulli(double p) { return uniform() < p; }

  /// Binomial(n, p) by summing Bernoulli draws (n is small everywhere we use
  /// this, so the O(n) cost is irrelevant and the stream is obvious).
  int binomial(int n, double p);

  /// Index drawn from an unnormalized non-negative weight vector.
  std::size_t categorical(const std::vector<double>& weights);

  /// Fisher-Yates shuffle, descending index order.
  template <typename T>
  void shuffle(std::vector<T>& items) {
    if (items.size() < 2) return;
    for (std::size_t i = items.size() - 1; i > 0; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i + 1));
      std::swap(items[i], items[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

/// Derives an independent stream seed from a master seed and a textual tag, so
/// each pipeline stage gets its own reproducible stream.
std::uint64_t derive_seed(std::uint64_t master, std::string_view tag);

/// Derives a seed from a master seed and two integer coordinates (e.g. epoch
/// and shard indices).
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b);

}  // namespace sepsisrl
