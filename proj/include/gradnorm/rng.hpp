#pragma once

#include <cstdint>
#include <optional>
#include <random>

#include "gradnorm/matrix.hpp"

namespace gradnorm {

/// Seeded generator with a platform-independent draw sequence.
///
/// Raw bits come from std::mt19937_64, whose output is fixed by the standard.
/// Uniform and normal variates are produced here rather than through the
/// <random> distributions, whose algorithms are implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform on [0, 1) with 53 bits of resolution.
  double uniform();
  /// Uniform on [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal via the Marsaglia polar method.
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

 private:
  std::mt19937_64 engine_;
  std::optional<double> spare_;
};

/// Derives an independent child seed from (seed, stream) with splitmix64 mixing.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

/// Matrix with IID N(mean, stddev²) entries. stddev must be nonnegative.
Matrix gaussian_fill(Rng& rng, std::size_t rows, std::size_t cols, double mean, double stddev);

}  // namespace gradnorm
