#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace pyrlip {

/// Seeded random stream. The engine is std::mt19937_64, whose output is fixed
/// by the standard; the conversions to doubles are done here so streams are
/// identical across standard library implementations.
class Rng {
public:
  explicit Rng(std::uint64_t seed = 0) : engine_(mix(seed)), seed_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n). Rejection sampling, no modulo bias.
  std::uint64_t uniform_int(std::uint64_t n) {
    if (n <= 1) return 0;
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v = 0;
    do {
      v = engine_();
    } while (v >= limit);
    return v % n;
  }

  /// Box-Muller, one value per call (the sine branch is cached).
  double normal(double mean = 0.0, double std = 1.0) {
    if (has_spare_) {
      has_spare_ = false;
      return mean + std * spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return mean + std * r * std::cos(theta);
  }

  /// Independent child stream derived from this stream's seed and a salt.
  Rng fork(std::uint64_t salt) const { return Rng(mix(seed_ ^ mix(salt + 0x9e3779b97f4a7c15ULL))); }

  static std::uint64_t mix(std::uint64_t x) {
    // splitmix64 finalizer
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

private:
  std::mt19937_64 engine_;
  std::uint64_t seed_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

} // namespace pyrlip
