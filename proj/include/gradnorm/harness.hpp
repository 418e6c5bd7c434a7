#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "gradnorm/balancer.hpp"
#include "gradnorm/network.hpp"
#include "gradnorm/toytasks.hpp"

namespace gradnorm {

/// α used to fill the rate columns of traces for strategies that have no α of their own.
inline constexpr double kDiagnosticAlpha = 0.12;

struct ModelSpec {
  std::size_t hidden = 100;
  std::size_t depth = 4;
  std::uint64_t init_seed = 0;
  /// Trunk layer used as W; defaults to the last trunk layer.
  std::optional<std::size_t> shared_layer;
};

struct StrategySpec {
  StrategyKind kind = StrategyKind::gradnorm;
  double alpha = 0.12;                 // gradnorm only
  std::vector<double> static_weights;  // static only
};

struct OptimizerSpec {
  double network_lr = 1e-3;
  double weight_lr = 0.025;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  bool persistent_weight_state = true;
};

struct TrainingSpec {
  std::size_t steps = 20000;
  std::size_t batch_size = 100;
  std::size_t eval_every = 100;
  std::uint64_t data_seed = 0;
  std::uint64_t test_seed = 0;
  std::size_t test_batch_size = 1000;
  double weight_floor = 1e-4;
};

struct ExperimentConfig {
  TaskSetSpec taskset;
  ModelSpec model;
  StrategySpec strategy;
  OptimizerSpec optimizer;
  TrainingSpec training;
};

/// Throws std::invalid_argument naming the offending field.
void validate(const ExperimentConfig& config);

/// Derives every seed in the config (taskset, init, data, test) from one master seed.
void apply_master_seed(ExperimentConfig& config, std::uint64_t seed);

/// Two tasks with σ = (1, 100), α = 0.12.
ExperimentConfig preset_toy2(std::uint64_t seed = 0);
/// Ten tasks with sampled σ, α = 0.12.
ExperimentConfig preset_toy10(std::uint64_t seed = 0);

std::unique_ptr<LossWeighting> make_strategy(const ExperimentConfig& config,
                                             std::size_t num_tasks);

struct TraceRow {
  std::size_t step = 0;
  std::vector<double> weights;
  std::vector<double> train_losses;
  std::vector<double> test_losses;
  std::vector<double> loss_ratios;
  std::vector<double> rates;
  std::vector<double> grad_norms;
  double mean_grad_norm = 0.0;
  double lgrad = 0.0;
};

struct RunRecord {
  std::size_t num_tasks = 0;
  StrategyKind strategy = StrategyKind::gradnorm;
  std::vector<double> sigmas;
  std::vector<double> initial_train_losses;
  std::vector<double> initial_test_losses;
  std::vector<TraceRow> rows;
  bool diverged = false;
  std::string diagnostic;
  std::vector<std::string> warnings;
  /// Wall-clock seconds spent in the strategy update and in the whole loop.
  double balancer_seconds = 0.0;
  double total_seconds = 0.0;
};

/// Runs the full training loop. Rows are logged at every multiple of
/// eval_every from 0 through steps; each row holds the weights in force at
/// that step and the model's test losses before that step's update.
RunRecord train_run(const ExperimentConfig& config);

/// Σ_i L_i(row)/L_i(0) on the fixed test batch.
double task_normalized_test_loss(const RunRecord& record, std::size_t row);
/// Same as above at the last logged row.
double task_normalized_test_loss(const RunRecord& record);
/// Final test loss ratio per task.
std::vector<double> final_test_loss_ratios(const RunRecord& record);

/// Arithmetic mean of the weight trace over rows with step ≥ from_step.
std::vector<double> time_averaged_weights(const RunRecord& record, std::size_t from_step = 0);

/// Time-averaged weights over every logged row, renormalized to sum to T.
std::vector<double> extract_static_weights(const RunRecord& record);

/// Runs fn(i) for i in [0, count) across `workers` threads; results are in index order.
void parallel_for(std::size_t count, std::size_t workers,
                  const std::function<void(std::size_t)>& fn);

struct StudyRow {
  std::size_t index = 0;
  bool reference = false;
  std::vector<double> weights;
  double normalized_loss = 0.0;
  double distance = 0.0;
  /// 100·(loss − reference loss)/reference loss.
  double delta_percent = 0.0;
  bool diverged = false;
};

struct StudyResult {
  std::size_t steps = 0;
  std::vector<double> reference_weights;  // E_t[w] of the reference run
  double reference_loss = 0.0;
  std::vector<StudyRow> rows;  // random static runs, then the reference row
  /// Spearman correlation of distance vs normalized loss over the random runs.
  double spearman = 0.0;
};

/// Shortened budget used by the grid-search study: a quarter of the full budget.
std::size_t shortened_budget(std::size_t full_steps);

/// Random static-weight runs compared against a GradNorm reference at the shortened budget.
StudyResult grid_search_study(const ExperimentConfig& base, std::size_t n_runs,
                              std::uint64_t study_seed, std::size_t workers = 1);

struct SweepRow {
  double alpha = 0.0;
  std::vector<double> percent_change;  // per task, vs equal weights
  double mean_percent_change = 0.0;
  /// −mean_percent_change: positive means lower test loss than equal weights.
  double gain = 0.0;
  bool diverged = false;
};

/// Percent change of final test loss ratios: 100·(candidate − baseline)/baseline per task.
std::vector<double> percent_change(const RunRecord& candidate, const RunRecord& baseline);

std::vector<SweepRow> alpha_sweep(const ExperimentConfig& base, const std::vector<double>& alphas,
                                  std::size_t workers = 1);

}  // namespace gradnorm
