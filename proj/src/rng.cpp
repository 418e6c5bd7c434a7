#include "gradnorm/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace gradnorm {

double Rng::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
  if (spare_) {
    const double v = *spare_;
    spare_.reset();
    return v;
  }
  double u, v, s;
  do {
    u = 2.0 * uniform() - 1.0;
    v = 2.0 * uniform() - 1.0;
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  const double factor = std::sqrt(-2.0 * std::log(s) / s);
  spare_ = v * factor;
  return u * factor;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

Matrix gaussian_fill(Rng& rng, std::size_t rows, std::size_t cols, double mean, double stddev) {
  if (!(stddev >= 0.0)) {
    throw std::invalid_argument("gaussian_fill: standard deviation must be nonnegative");
  }
  Matrix m(rows, cols);
  for (double& x : m.data()) x = rng.normal(mean, stddev);
  return m;
}

}  // namespace gradnorm
