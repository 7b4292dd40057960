#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace fedbif {

/// Deterministic random stream. The raw mt19937_64 sequence is pinned by the
/// standard, and all distributions are implemented here (Box-Muller, rejection
/// sampling) instead of <random>'s implementation-defined ones, so identical
/// seeds give identical draws on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform double in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller; generates pairs and caches the spare.
  double normal();

  /// Uniform integer in [0, n), unbiased (rejection sampling). n must be > 0.
  std::uint64_t uniform_below(std::uint64_t n);

  /// Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    if (v.size() < 2) return;
    for (std::size_t i = v.size() - 1; i > 0; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_below(i + 1));
      std::swap(v[i], v[j]);
    }
  }

  /// Gamma(shape) draw, shape > 0. Marsaglia-Tsang with the shape<1 boost.
  double gamma(double shape);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Mixes one value into a stream id (SplitMix64 finalizer over the sum).
std::uint64_t mix_stream(std::uint64_t state, std::uint64_t value);

/// Derives an independent substream id from a base seed and a path of
/// indices, e.g. derive_stream(seed, {round, client, purpose}). Used so
/// clients can run in any order (or in parallel) with identical results.
std::uint64_t derive_stream(std::uint64_t seed, std::initializer_list<std::uint64_t> path);

}  // namespace fedbif
