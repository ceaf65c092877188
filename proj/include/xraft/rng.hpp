#pragma once

#include <cstdint>
#include <random>

namespace xraft {

/// Seeded generator used for every random draw in the toolkit.
///
/// Bits come from std::mt19937_64, whose output sequence is fixed by the C++
/// standard. Uniform doubles take the top 53 bits of one draw; normals use the
/// Box-Muller transform on two uniforms, caching the second variate. Nothing
/// here goes through std::*_distribution, whose algorithms vary by library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)); }

  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Derives an independent stream, e.g. one per dataset item.
  Rng fork(std::uint64_t salt);

 private:
  std::mt19937_64 engine_;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

// SplitMix64 finalizer; mixes a seed with a salt into a fresh seed.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt);

}  // namespace xraft
