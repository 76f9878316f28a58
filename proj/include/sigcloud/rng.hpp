#pragma once

#include <cstdint>
#include <random>

namespace sigcloud {

/// Deterministic 64-bit generator. All stochastic code takes an Rng by
/// reference; nothing reads ambient randomness. Real-valued draws are built
/// from raw 64-bit outputs so sequences do not depend on the standard
/// library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  /// Uniform in [0, 1).
  double unit() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  /// Uniform in the open interval (0, 1); a drawn 0 is redrawn.
  double open_unit() {
    for (;;) {
      const double u = unit();
      if (u > 0.0) return u;
    }
  }

  /// Uniform in [lo, hi]. Returns lo exactly when lo == hi.
  double uniform(double lo, double hi) { return lo + (hi - lo) * unit(); }

  /// Uniform index in [0, n).
  std::size_t index(std::size_t n) {
    return static_cast<std::size_t>(unit() * static_cast<double>(n)) % n;
  }

  /// Independent child stream, seeded from this stream's next output.
  Rng split() { return Rng(next() ^ 0x9E3779B97F4A7C15ULL); }

 private:
  std::mt19937_64 engine_;
};

}  // namespace sigcloud
