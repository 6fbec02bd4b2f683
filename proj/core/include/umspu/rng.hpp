#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace umspu {

/// mt19937_64 engine plus explicit value transforms. The engine sequence is
/// pinned by the standard; the transforms are pinned here, so streams are
/// reproducible across standard libraries (std::*_distribution is not).
class Rng {
public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  /// Independent stream for sample `id` of a dataset seeded with `seed`.
  static Rng for_sample(uint64_t seed, uint64_t id) {
    // SplitMix64 mix of (seed, id) so neighbouring ids do not correlate.
    uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (id + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    z = z ^ (z >> 31);
    return Rng(z);
  }

  uint64_t next_u64() { return eng_(); }

  /// Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  int uniform_int(int lo, int hi) {  // inclusive range
    return lo + static_cast<int>(uniform() * (hi - lo + 1));
  }

  /// Standard normal via Box-Muller (pair cached).
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

private:
  std::mt19937_64 eng_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace umspu
