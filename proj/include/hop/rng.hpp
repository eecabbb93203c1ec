#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace hop {

// splitmix64, used for seed mixing and stream derivation.
inline uint64_t mix64(uint64_t z) {
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

/// Deterministic RNG (xoshiro256**). All floating-point conversions are done
/// by hand so that identical seeds give bit-identical streams on any platform.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) {
    uint64_t z = seed;
    for (auto& si : s_) si = z = mix64(z);
    has_spare_ = false;
  }

  /// Independent stream derived from this generator's seed and an index.
  /// Used to hand each parallel worker its own generator.
  static Rng split(uint64_t seed, uint64_t stream) {
    return Rng(mix64(seed ^ mix64(stream + 0x632be59bd9b4e019ull)));
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  /// Uniform in [0, 1).
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). n must be > 0.
  uint64_t uniform_int(uint64_t n) {
    // Lemire-style rejection to avoid modulo bias.
    uint64_t x = next_u64();
    __uint128_t m = (__uint128_t)x * n;
    uint64_t l = (uint64_t)m;
    if (l < n) {
      uint64_t t = -n % n;
      while (l < t) {
        x = next_u64();
        m = (__uint128_t)x * n;
        l = (uint64_t)m;
      }
    }
    return (uint64_t)(m >> 64);
  }

  /// Standard normal via Box-Muller (cached spare).
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1, u2;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mu, double sigma) { return mu + sigma * normal(); }

  /// Normal(0, std) resampled until within [-2 std, 2 std].
  double truncated_normal(double std) {
    double x;
    do {
      x = normal() * std;
    } while (std::abs(x) > 2.0 * std);
    return x;
  }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  uint64_t s_[4];
  double spare_ = 0.0;
  bool has_spare_;
};

}  // namespace hop
