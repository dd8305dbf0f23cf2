#pragma once

#include <cmath>
#include <cstdint>

namespace relic {

// Counter-based splitmix64 stream. Identical (seed, counter) always yields
// identical draws, so any consumer can be replayed or forked deterministically.
struct RngState {
  uint64_t seed = 0;
  uint64_t counter = 0;

  RngState() = default;
  explicit RngState(uint64_t s) : seed(s) {}

  static uint64_t mix(uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  uint64_t next_u64() { return mix(seed ^ (0x9e3779b97f4a7c15ULL * ++counter)); }

  // Uniform in [0, 1).
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in (0, 1]; safe as a log() argument.
  double uniform_pos() { return double((next_u64() >> 11) + 1) * 0x1.0p-53; }

  double normal(double mean = 0.0, double stddev = 1.0) {
    double u1 = uniform_pos();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * r * std::cos(2.0 * M_PI * u2);
  }

  // N(0, std^2) truncated to +-2 std by resampling.
  double trunc_normal(double stddev) {
    for (;;) {
      double v = normal(0.0, stddev);
      if (std::fabs(v) <= 2.0 * stddev) return v;
    }
  }

  uint64_t below(uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

  // Independent substream; used to split one run seed into per-purpose streams.
  RngState derive(uint64_t tag) const { return RngState(mix(seed ^ mix(tag))); }
};

}  // namespace relic
