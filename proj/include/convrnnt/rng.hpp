#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace convrnnt {

// Counter-based generator: the n-th draw is a pure function of (seed, n),
// so the full state is two integers and can be stored in a checkpoint.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed = 0, std::uint64_t counter = 0)
      : seed_(seed), counter_(counter) {}

  std::uint64_t next_u64() {
    // splitmix64 finalizer applied to seed + (n+1) * golden gamma
    std::uint64_t z = seed_ + (++counter_) * 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer on [0, n). n must be positive.
  std::uint64_t uniform_int(std::uint64_t n) {
    return static_cast<std::uint64_t>(uniform() * static_cast<double>(n));
  }

  double normal() {
    double u1 = uniform();
    const double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_;
};

}  // namespace convrnnt
