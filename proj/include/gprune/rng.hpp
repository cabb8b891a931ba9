#pragma once

#include <cstdint>
#include <vector>

namespace gprune {

/// xoshiro256** with splitmix64 seeding. All stochastic behaviour in the
/// project (init, noise, sampling, shuffles) goes through explicit Rng
/// instances so runs are reproducible from a single seed.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0x9e3779b97f4a7c15ull) { reseed(seed); }

  void reseed(uint64_t seed);

  uint64_t next_u64();

  /// uniform in [0, 1)
  double uniform01();

  /// uniform in [lo, hi)
  double uniform(double lo, double hi);

  /// standard Box-Muller, one draw per call
  double normal(double mean = 0.0, double stddev = 1.0);

  /// uniform integer in [0, n)
  uint64_t uniform_int(uint64_t n);

  /// k distinct indices from [0, n), order randomized (partial Fisher-Yates)
  std::vector<size_t> sample_indices(size_t n, size_t k);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    if (v.size() < 2) return;
    for (size_t i = v.size() - 1; i > 0; --i) {
      size_t j = static_cast<size_t>(uniform_int(i + 1));
      std::swap(v[i], v[j]);
    }
  }

  uint64_t fork_seed();

 private:
  uint64_t s_[4];
};

}  // namespace gprune
