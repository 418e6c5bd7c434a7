#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "gradnorm/matrix.hpp"
#include "gradnorm/rng.hpp"

namespace gradnorm {

/// How the second parameter of the N(0, ·) draws for B and ε_i is read.
enum class SpreadConvention { stddev, variance };

struct TaskSetSpec {
  std::uint64_t seed = 0;
  std::size_t num_tasks = 2;
  /// Explicit scales. When empty, scales are sampled as |N(0, sigma_sampling_std)|.
  std::vector<double> sigmas;
  double sigma_sampling_std = 50.0;
  std::size_t input_dim = 250;
  std::size_t output_dim = 100;
  double base_spread = 10.0;
  double epsilon_spread = 3.5;
  SpreadConvention convention = SpreadConvention::stddev;
};

/// T regression tasks f_i(x) = σ_i·tanh((B + ε_i)·x) sharing B.
///
/// B and ε_i are stored as output_dim × input_dim, so a batch X (batch ×
/// input_dim) maps to targets σ_i·tanh(X·(B + ε_i)ᵀ).
struct ToyTaskSet {
  Matrix base;
  std::vector<Matrix> epsilons;
  std::vector<double> sigmas;
  std::size_t input_dim = 0;
  std::size_t output_dim = 0;
  std::uint64_t seed = 0;

  std::size_t num_tasks() const noexcept { return sigmas.size(); }
  /// B + ε_i, precomputed by generate_taskset.
  std::vector<Matrix> task_maps;
};

struct Batch {
  Matrix inputs;
  std::vector<Matrix> targets;
};

/// Draws |N(0, spread)| scales, redrawing exact zeros.
std::vector<double> sample_sigmas(Rng& rng, std::size_t num_tasks, double spread);

ToyTaskSet generate_taskset(const TaskSetSpec& spec);

/// Targets for a given input matrix; a pure function of (taskset, inputs).
std::vector<Matrix> compute_targets(const ToyTaskSet& taskset, const Matrix& inputs);

/// Inputs ~ N(0, 1) IID, targets per task.
Batch sample_batch(const ToyTaskSet& taskset, Rng& rng, std::size_t batch_size);

struct LossOrdering {
  /// Task indices sorted by descending σ_i².
  std::vector<std::size_t> order;
  /// True when some adjacent pair in the ordering has equal σ_i².
  bool has_tie = false;
};

LossOrdering expected_initial_loss_ordering(const ToyTaskSet& taskset);

}  // namespace gradnorm
