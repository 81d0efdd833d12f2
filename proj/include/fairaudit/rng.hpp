#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace fairaudit {

/// Deterministic random source. All distribution transforms are implemented
/// here rather than with std:: distributions, whose output sequences are
/// implementation defined. Given a seed, every draw is reproducible across
/// standard libraries and releases.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  /// Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). Rejection sampling, unbiased.
  std::uint64_t uniform_int(std::uint64_t n);

  /// Standard normal via Box-Muller. One value per call, no caching, so the
  /// draw count stays predictable.
  double normal();

  double normal(double mean, double stdev) { return mean + stdev * normal(); }

  /// log of a Gamma(shape, 1) variate. Stable for very small shapes, where
  /// the variate itself underflows to zero.
  double log_gamma_variate(double shape);

  /// Beta(a, b) in [0, 1], computed in log space.
  double beta(double a, double b);

  /// Fisher-Yates shuffle.
  template <class Vec>
  void shuffle(Vec& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

private:
  std::mt19937_64 engine_;
};

/// Derives a worker seed from (master_seed, stage_name, index). Pure and
/// stable: FNV-1a over the stage name, mixed with the master seed and index
/// through two splitmix64 rounds.
std::uint64_t derive_seed(std::uint64_t master_seed, std::string_view stage,
                          std::uint64_t index);

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace fairaudit
