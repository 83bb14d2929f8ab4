#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace coop {

/// Seedable RNG stream with platform-independent variate generation.
///
/// Variates are derived directly from mt19937_64 output bits instead of the
/// implementation-defined std distributions, so a given seed yields the same
/// sequence on every standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on the open interval (0, 1).
  double uniform_open() {
    for (;;) {
      const double u = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
      if (u > 0.0) return u;
    }
  }

  /// Uniform on [lo, hi).
  double uniform(double lo, double hi) {
    return lo + (hi - lo) * (static_cast<double>(engine_() >> 11) * 0x1.0p-53);
  }

  /// Uniform integer on [0, n). Rejection sampling, no modulo bias.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    for (;;) {
      const std::uint64_t r = engine_();
      if (r < limit) return r % n;
    }
  }

  /// Standard normal via Box-Muller (one variate per call).
  double normal();

  std::string state() const;
  void set_state(const std::string& state);

 private:
  std::mt19937_64 engine_;
};

/// splitmix64 mix of (seed, stream); used to derive independent per-purpose streams.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace coop
