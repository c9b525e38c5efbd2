#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace moe {

// splitmix64; used to derive independent stream seeds from (seed, index) pairs.
inline uint64_t mix_seed(uint64_t seed, uint64_t index) {
  uint64_t z = seed + 0x9e3779b97f4a7c15ull * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Thin wrapper around mt19937_64 with hand-rolled distributions so that a
// given seed produces the same stream on every platform/compiler.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // uniform in [0, 1)
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n)
  uint64_t below(uint64_t n) {
    return static_cast<uint64_t>(uniform() * static_cast<double>(n));
  }

  // standard normal via Box-Muller (no state carried between calls)
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  // Poisson draw; Knuth multiplication for small lambda, normal
  // approximation above 64 (adequate for image-noise use).
  uint64_t poisson(double lambda) {
    if (lambda <= 0.0) return 0;
    if (lambda > 64.0) {
      double v = lambda + std::sqrt(lambda) * normal();
      return v <= 0.0 ? 0 : static_cast<uint64_t>(v + 0.5);
    }
    double limit = std::exp(-lambda);
    double prod = uniform();
    uint64_t k = 0;
    while (prod > limit) {
      prod *= uniform();
      ++k;
    }
    return k;
  }

  template <class It>
  void shuffle(It first, It last) {
    auto n = static_cast<uint64_t>(last - first);
    for (uint64_t i = n; i > 1; --i) {
      std::swap(first[i - 1], first[below(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace moe
