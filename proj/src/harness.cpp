#include "gradnorm/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <numeric>
#include <stdexcept>
#include <thread>

#include "gradnorm/adam.hpp"
#include "gradnorm/stats.hpp"

namespace gradnorm {

namespace {

void require(bool ok, const std::string& field, const std::string& message) {
  if (!ok) throw std::invalid_argument(field + ": " + message);
}

bool all_finite(std::span<const double> xs) {
  return std::all_of(xs.begin(), xs.end(), [](double x) { return std::isfinite(x); });
}

std::vector<double> evaluate_losses(const MlpModel& model, const Batch& batch) {
  const auto fwd = forward(model, batch.inputs);
  std::vector<double> out(fwd.predictions.size());
  for (std::size_t t = 0; t < out.size(); ++t) {
    out[t] = squared_loss(fwd.predictions[t], batch.targets[t]);
  }
  return out;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

void validate(const ExperimentConfig& c) {
  const auto& ts = c.taskset;
  require(ts.num_tasks >= 1, "taskset.num_tasks", "must be >= 1");
  require(ts.input_dim >= 1, "taskset.input_dim", "must be >= 1");
  require(ts.output_dim >= 1, "taskset.output_dim", "must be >= 1");
  require(ts.sigmas.empty() || ts.sigmas.size() == ts.num_tasks, "taskset.sigmas",
          "must have num_tasks entries");
  for (double s : ts.sigmas) require(s > 0.0, "taskset.sigmas", "entries must be positive");
  require(ts.sigma_sampling_std > 0.0, "taskset.sigma_sampling_std", "must be positive");
  require(ts.base_spread >= 0.0, "taskset.base_spread", "must be >= 0");
  require(ts.epsilon_spread >= 0.0, "taskset.epsilon_spread", "must be >= 0");

  require(c.model.hidden >= 1, "model.hidden", "must be >= 1");
  require(c.model.depth >= 1, "model.depth", "must be >= 1");
  require(!c.model.shared_layer || *c.model.shared_layer < c.model.depth, "model.shared_layer",
          "must index a trunk layer");

  switch (c.strategy.kind) {
    case StrategyKind::gradnorm:
      require(c.strategy.alpha >= 0.0, "strategy.alpha", "must be >= 0");
      require(c.strategy.static_weights.empty(), "strategy.weights",
              "only valid for the static strategy");
      break;
    case StrategyKind::fixed:
      require(c.strategy.static_weights.size() == ts.num_tasks, "strategy.weights",
              "must have num_tasks entries");
      for (double w : c.strategy.static_weights) {
        require(w > 0.0, "strategy.weights", "entries must be positive");
      }
      break;
    case StrategyKind::equal:
    case StrategyKind::uncertainty:
      require(c.strategy.static_weights.empty(), "strategy.weights",
              "only valid for the static strategy");
      break;
  }

  require(c.optimizer.network_lr >= 0.0, "optimizer.network_lr", "must be >= 0");
  require(c.optimizer.weight_lr >= 0.0, "optimizer.weight_lr", "must be >= 0");
  require(c.optimizer.beta1 >= 0.0 && c.optimizer.beta1 < 1.0, "optimizer.beta1",
          "must lie in [0, 1)");
  require(c.optimizer.beta2 >= 0.0 && c.optimizer.beta2 < 1.0, "optimizer.beta2",
          "must lie in [0, 1)");
  require(c.optimizer.epsilon > 0.0, "optimizer.epsilon", "must be positive");

  require(c.training.batch_size >= 1, "training.batch_size", "must be >= 1");
  require(c.training.eval_every >= 1, "training.eval_every", "must be >= 1");
  require(c.training.test_batch_size >= 1, "training.test_batch_size", "must be >= 1");
  require(c.training.weight_floor > 0.0 && c.training.weight_floor < 1.0, "training.weight_floor",
          "must lie in (0, 1)");
}

void apply_master_seed(ExperimentConfig& config, std::uint64_t seed) {
  config.taskset.seed = derive_seed(seed, 101);
  config.model.init_seed = derive_seed(seed, 102);
  config.training.data_seed = derive_seed(seed, 103);
  config.training.test_seed = derive_seed(seed, 104);
}

ExperimentConfig preset_toy2(std::uint64_t seed) {
  ExperimentConfig c;
  c.taskset.num_tasks = 2;
  c.taskset.sigmas = {1.0, 100.0};
  c.strategy.alpha = 0.12;
  apply_master_seed(c, seed);
  return c;
}

ExperimentConfig preset_toy10(std::uint64_t seed) {
  ExperimentConfig c;
  c.taskset.num_tasks = 10;
  c.taskset.sigmas.clear();
  c.strategy.alpha = 0.12;
  apply_master_seed(c, seed);
  return c;
}

std::unique_ptr<LossWeighting> make_strategy(const ExperimentConfig& config,
                                             std::size_t num_tasks) {
  const auto& opt = config.optimizer;
  const AdamConfig weight_adam{.learning_rate = opt.weight_lr,
                               .beta1 = opt.beta1,
                               .beta2 = opt.beta2,
                               .epsilon = opt.epsilon};
  switch (config.strategy.kind) {
    case StrategyKind::gradnorm:
      return std::make_unique<GradNormBalancer>(
          num_tasks, GradNormOptions{.alpha = config.strategy.alpha,
                                     .optimizer = weight_adam,
                                     .weight_floor = config.training.weight_floor,
                                     .persistent_optimizer_state = opt.persistent_weight_state});
    case StrategyKind::equal:
      return std::make_unique<EqualWeighting>(num_tasks);
    case StrategyKind::uncertainty:
      return std::make_unique<UncertaintyWeighting>(num_tasks, weight_adam);
    case StrategyKind::fixed:
      return std::make_unique<StaticWeighting>(config.strategy.static_weights);
  }
  throw std::invalid_argument("unknown strategy");
}

RunRecord train_run(const ExperimentConfig& config) {
  validate(config);
  const auto loop_start = std::chrono::steady_clock::now();

  const ToyTaskSet taskset = generate_taskset(config.taskset);
  const std::size_t num_tasks = taskset.num_tasks();

  ModelShape shape{.input_dim = taskset.input_dim,
                   .hidden = config.model.hidden,
                   .depth = config.model.depth,
                   .output_dim = taskset.output_dim,
                   .num_tasks = num_tasks,
                   .shared_layer = config.model.shared_layer.value_or(config.model.depth - 1)};
  Rng init_rng(config.model.init_seed);
  MlpModel model = init_model(init_rng, shape);

  auto strategy = make_strategy(config, num_tasks);
  const double alpha =
      config.strategy.kind == StrategyKind::gradnorm ? config.strategy.alpha : kDiagnosticAlpha;

  const auto& opt = config.optimizer;
  Adam network_optimizer({.learning_rate = opt.network_lr,
                          .beta1 = opt.beta1,
                          .beta2 = opt.beta2,
                          .epsilon = opt.epsilon},
                         model.parameters().parameter_count());

  Rng test_rng(config.training.test_seed);
  const Batch test_batch = sample_batch(taskset, test_rng, config.training.test_batch_size);
  Rng data_rng(config.training.data_seed);

  RunRecord record;
  record.num_tasks = num_tasks;
  record.strategy = config.strategy.kind;
  record.sigmas = taskset.sigmas;
  record.initial_test_losses = evaluate_losses(model, test_batch);
  if (!all_finite(record.initial_test_losses)) {
    record.diverged = true;
    record.diagnostic = "non-finite initial test loss";
    return record;
  }

  const std::size_t steps = config.training.steps;
  const std::size_t eval_every = config.training.eval_every;
  bool warned_dominant = false;

  for (std::size_t step = 0; step <= steps; ++step) {
    const Batch batch = sample_batch(taskset, data_rng, config.training.batch_size);
    const auto fwd = forward(model, batch.inputs);

    std::vector<double> losses(num_tasks);
    std::vector<Matrix> residuals;
    residuals.reserve(num_tasks);
    for (std::size_t t = 0; t < num_tasks; ++t) {
      losses[t] = squared_loss(fwd.predictions[t], batch.targets[t]);
      residuals.push_back(squared_loss_gradient(fwd.predictions[t], batch.targets[t]));
    }
    const std::vector<double> weights(strategy->weights().begin(), strategy->weights().end());
    if (!all_finite(losses) || !all_finite(weights)) {
      record.diverged = true;
      record.diagnostic = "non-finite training loss or weight at step " + std::to_string(step);
      break;
    }
    if (step == 0) {
      record.initial_train_losses = losses;
      if (auto* gn = dynamic_cast<GradNormBalancer*>(strategy.get())) {
        gn->set_initial_losses(losses);
      }
    }

    const auto grads = backward(model, fwd.cache, residuals, weights);
    std::vector<double> norms(num_tasks);
    for (std::size_t t = 0; t < num_tasks; ++t) norms[t] = l2_norm(grads.tasks.shared[t]);

    std::optional<RateSnapshot> snapshot;
    if (step < steps) {
      const auto balance_start = std::chrono::steady_clock::now();
      snapshot = strategy->update(losses, norms);
      record.balancer_seconds += seconds_since(balance_start);
    }
    const bool log_row = step % eval_every == 0;
    if (log_row && !snapshot) {
      snapshot = compute_rate_snapshot(losses, record.initial_train_losses, norms, weights, alpha);
    }
    if (log_row) {
      TraceRow row;
      row.step = step;
      row.weights = weights;
      row.train_losses = losses;
      row.test_losses = evaluate_losses(model, test_batch);
      row.loss_ratios = snapshot->loss_ratios;
      row.rates = snapshot->relative_rates;
      row.grad_norms = snapshot->grad_norms;
      row.mean_grad_norm = snapshot->mean_grad_norm;
      row.lgrad = snapshot->lgrad;
      const bool finite = all_finite(row.test_losses);
      record.rows.push_back(std::move(row));
      if (!finite) {
        record.diverged = true;
        record.diagnostic = "non-finite test loss at step " + std::to_string(step);
        break;
      }
    }
    if (step == steps) break;

    if (!warned_dominant && strategy->renormalizes()) {
      const double ceiling = 0.9 * static_cast<double>(num_tasks);
      const auto w = strategy->weights();
      if (std::any_of(w.begin(), w.end(), [&](double x) { return x > ceiling; })) {
        record.warnings.push_back("step " + std::to_string(step) +
                                  ": a task weight exceeds 0.9*T; other tasks are nearly "
                                  "switched off");
        warned_dominant = true;
      }
    }

    network_optimizer.update(model.mutable_parameters(), grads.total);
  }
  record.total_seconds = seconds_since(loop_start);
  return record;
}

double task_normalized_test_loss(const RunRecord& record, std::size_t row) {
  if (row >= record.rows.size()) throw std::out_of_range("task_normalized_test_loss: row");
  const auto& losses = record.rows[row].test_losses;
  double acc = 0.0;
  for (std::size_t t = 0; t < losses.size(); ++t) {
    if (!(record.initial_test_losses[t] > 0.0)) {
      throw std::invalid_argument("task_normalized_test_loss: initial test loss must be positive");
    }
    acc += losses[t] / record.initial_test_losses[t];
  }
  return acc;
}

double task_normalized_test_loss(const RunRecord& record) {
  if (record.rows.empty()) throw std::invalid_argument("task_normalized_test_loss: empty trace");
  return task_normalized_test_loss(record, record.rows.size() - 1);
}

std::vector<double> final_test_loss_ratios(const RunRecord& record) {
  if (record.rows.empty()) throw std::invalid_argument("final_test_loss_ratios: empty trace");
  return loss_ratios(record.rows.back().test_losses, record.initial_test_losses);
}

std::vector<double> time_averaged_weights(const RunRecord& record, std::size_t from_step) {
  std::vector<double> acc(record.num_tasks, 0.0);
  std::size_t count = 0;
  for (const auto& row : record.rows) {
    if (row.step < from_step) continue;
    for (std::size_t t = 0; t < acc.size(); ++t) acc[t] += row.weights[t];
    ++count;
  }
  if (count == 0) throw std::invalid_argument("time_averaged_weights: no rows in range");
  for (double& x : acc) x /= static_cast<double>(count);
  return acc;
}

std::vector<double> extract_static_weights(const RunRecord& record) {
  if (record.rows.empty()) throw std::invalid_argument("extract_static_weights: empty trace");
  return renormalize(time_averaged_weights(record), record.num_tasks);
}

void parallel_for(std::size_t count, std::size_t workers,
                  const std::function<void(std::size_t)>& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, count));
  if (workers == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

std::size_t shortened_budget(std::size_t full_steps) { return std::max<std::size_t>(1, full_steps / 4); }

StudyResult grid_search_study(const ExperimentConfig& base, std::size_t n_runs,
                              std::uint64_t study_seed, std::size_t workers) {
  if (n_runs < 2) throw std::invalid_argument("grid_search_study: need at least 2 runs");
  const std::size_t num_tasks = base.taskset.num_tasks;

  StudyResult result;
  result.steps = shortened_budget(base.training.steps);

  ExperimentConfig reference_cfg = base;
  reference_cfg.training.steps = result.steps;
  reference_cfg.strategy.kind = StrategyKind::gradnorm;
  reference_cfg.strategy.static_weights.clear();
  if (base.strategy.kind != StrategyKind::gradnorm) reference_cfg.strategy.alpha = kDiagnosticAlpha;

  std::vector<std::vector<double>> sampled(n_runs);
  Rng rng(study_seed);
  for (auto& w : sampled) {
    w.resize(num_tasks);
    for (double& x : w) {
      do {
        x = rng.uniform();
      } while (x == 0.0);
    }
    w = renormalize(w, num_tasks);
  }

  // Index n_runs is the reference run; it is trained alongside the random ones.
  std::vector<RunRecord> records(n_runs + 1);
  parallel_for(n_runs + 1, workers, [&](std::size_t i) {
    ExperimentConfig cfg = reference_cfg;
    if (i < n_runs) {
      cfg.strategy.kind = StrategyKind::fixed;
      cfg.strategy.static_weights = sampled[i];
    }
    records[i] = train_run(cfg);
  });

  const RunRecord& reference = records[n_runs];
  if (reference.diverged) {
    throw std::runtime_error("grid_search_study: reference run diverged: " + reference.diagnostic);
  }
  result.reference_weights = extract_static_weights(reference);
  result.reference_loss = task_normalized_test_loss(reference);

  std::vector<double> distances, losses;
  for (std::size_t i = 0; i <= n_runs; ++i) {
    const bool is_ref = i == n_runs;
    StudyRow row;
    row.index = i;
    row.reference = is_ref;
    row.weights = is_ref ? result.reference_weights : sampled[i];
    row.diverged = records[i].diverged;
    row.normalized_loss = records[i].rows.empty()
                              ? std::numeric_limits<double>::quiet_NaN()
                              : task_normalized_test_loss(records[i]);
    row.distance = euclidean_distance(row.weights, result.reference_weights);
    row.delta_percent = 100.0 * (row.normalized_loss - result.reference_loss) / result.reference_loss;
    if (!is_ref && !row.diverged) {
      distances.push_back(row.distance);
      losses.push_back(row.normalized_loss);
    }
    result.rows.push_back(std::move(row));
  }
  result.spearman = distances.size() >= 2 ? spearman_correlation(distances, losses) : 0.0;
  return result;
}

std::vector<double> percent_change(const RunRecord& candidate, const RunRecord& baseline) {
  const auto c = final_test_loss_ratios(candidate);
  const auto b = final_test_loss_ratios(baseline);
  if (c.size() != b.size()) throw std::invalid_argument("percent_change: task count mismatch");
  std::vector<double> out(c.size());
  for (std::size_t t = 0; t < c.size(); ++t) out[t] = 100.0 * (c[t] - b[t]) / b[t];
  return out;
}

std::vector<SweepRow> alpha_sweep(const ExperimentConfig& base, const std::vector<double>& alphas,
                                  std::size_t workers) {
  if (alphas.empty()) throw std::invalid_argument("alpha_sweep: no alphas");
  for (double a : alphas) {
    if (!(a >= 0.0)) throw std::invalid_argument("alpha_sweep: alphas must be >= 0");
  }
  // Index 0 is the equal-weights baseline shared by every α.
  std::vector<RunRecord> records(alphas.size() + 1);
  parallel_for(records.size(), workers, [&](std::size_t i) {
    ExperimentConfig cfg = base;
    cfg.strategy.static_weights.clear();
    if (i == 0) {
      cfg.strategy.kind = StrategyKind::equal;
    } else {
      cfg.strategy.kind = StrategyKind::gradnorm;
      cfg.strategy.alpha = alphas[i - 1];
    }
    records[i] = train_run(cfg);
  });
  if (records[0].diverged) {
    throw std::runtime_error("alpha_sweep: baseline diverged: " + records[0].diagnostic);
  }

  std::vector<SweepRow> rows;
  for (std::size_t k = 0; k < alphas.size(); ++k) {
    const RunRecord& run = records[k + 1];
    SweepRow row;
    row.alpha = alphas[k];
    row.diverged = run.diverged;
    row.percent_change = percent_change(run, records[0]);
    row.mean_percent_change =
        std::accumulate(row.percent_change.begin(), row.percent_change.end(), 0.0) /
        static_cast<double>(row.percent_change.size());
    row.gain = -row.mean_percent_change;
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace gradnorm
