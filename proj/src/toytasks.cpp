#include "gradnorm/toytasks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace gradnorm {

namespace {

constexpr std::uint64_t kBaseStream = 1;
constexpr std::uint64_t kEpsilonStream = 2;
constexpr std::uint64_t kSigmaStream = 3;

double to_stddev(double spread, SpreadConvention convention) {
  if (!(spread >= 0.0)) throw std::invalid_argument("taskset spread must be nonnegative");
  return convention == SpreadConvention::variance ? std::sqrt(spread) : spread;
}

}  // namespace

std::vector<double> sample_sigmas(Rng& rng, std::size_t num_tasks, double spread) {
  if (!(spread > 0.0)) throw std::invalid_argument("sigma sampling spread must be positive");
  std::vector<double> out;
  out.reserve(num_tasks);
  while (out.size() < num_tasks) {
    const double s = std::abs(rng.normal(0.0, spread));
    if (s > 0.0) out.push_back(s);
  }
  return out;
}

ToyTaskSet generate_taskset(const TaskSetSpec& spec) {
  if (spec.num_tasks == 0) throw std::invalid_argument("taskset: need at least one task");
  if (spec.input_dim == 0 || spec.output_dim == 0) {
    throw std::invalid_argument("taskset: dimensions must be positive");
  }
  ToyTaskSet ts;
  ts.seed = spec.seed;
  ts.input_dim = spec.input_dim;
  ts.output_dim = spec.output_dim;

  if (spec.sigmas.empty()) {
    Rng sigma_rng(derive_seed(spec.seed, kSigmaStream));
    ts.sigmas = sample_sigmas(sigma_rng, spec.num_tasks, spec.sigma_sampling_std);
  } else {
    if (spec.sigmas.size() != spec.num_tasks) {
      throw std::invalid_argument("taskset: expected " + std::to_string(spec.num_tasks) +
                                  " sigmas, got " + std::to_string(spec.sigmas.size()));
    }
    for (double s : spec.sigmas) {
      if (!(s > 0.0)) throw std::invalid_argument("taskset: sigmas must be positive");
    }
    ts.sigmas = spec.sigmas;
  }

  Rng base_rng(derive_seed(spec.seed, kBaseStream));
  ts.base = gaussian_fill(base_rng, spec.output_dim, spec.input_dim, 0.0,
                          to_stddev(spec.base_spread, spec.convention));
  Rng eps_rng(derive_seed(spec.seed, kEpsilonStream));
  const double eps_std = to_stddev(spec.epsilon_spread, spec.convention);
  for (std::size_t t = 0; t < spec.num_tasks; ++t) {
    ts.epsilons.push_back(gaussian_fill(eps_rng, spec.output_dim, spec.input_dim, 0.0, eps_std));
    ts.task_maps.push_back(ts.base + ts.epsilons.back());
  }
  return ts;
}

std::vector<Matrix> compute_targets(const ToyTaskSet& taskset, const Matrix& inputs) {
  if (inputs.cols() != taskset.input_dim) {
    throw ShapeError("compute_targets: inputs have " + std::to_string(inputs.cols()) +
                     " columns, taskset expects " + std::to_string(taskset.input_dim));
  }
  std::vector<Matrix> out;
  out.reserve(taskset.num_tasks());
  for (std::size_t t = 0; t < taskset.num_tasks(); ++t) {
    Matrix y = map_elementwise(matmul_transpose_b(inputs, taskset.task_maps[t]), Elementwise::tanh);
    y *= taskset.sigmas[t];
    out.push_back(std::move(y));
  }
  return out;
}

Batch sample_batch(const ToyTaskSet& taskset, Rng& rng, std::size_t batch_size) {
  if (batch_size == 0) throw std::invalid_argument("sample_batch: batch size must be >= 1");
  Batch b;
  b.inputs = gaussian_fill(rng, batch_size, taskset.input_dim, 0.0, 1.0);
  b.targets = compute_targets(taskset, b.inputs);
  return b;
}

LossOrdering expected_initial_loss_ordering(const ToyTaskSet& taskset) {
  LossOrdering out;
  out.order.resize(taskset.num_tasks());
  std::iota(out.order.begin(), out.order.end(), std::size_t{0});
  auto scale = [&](std::size_t i) { return taskset.sigmas[i] * taskset.sigmas[i]; };
  std::stable_sort(out.order.begin(), out.order.end(),
                   [&](std::size_t a, std::size_t b) { return scale(a) > scale(b); });
  for (std::size_t k = 1; k < out.order.size(); ++k) {
    if (scale(out.order[k - 1]) == scale(out.order[k])) out.has_tie = true;
  }
  return out;
}

}  // namespace gradnorm
