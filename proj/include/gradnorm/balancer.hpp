#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "gradnorm/adam.hpp"

namespace gradnorm {

// ---------------------------------------------------------------------------
// Rate-balancing primitives
// ---------------------------------------------------------------------------

/// Validates and stores measured initial losses; every entry must be > 0.
std::vector<double> capture_initial_losses(std::span<const double> losses);

/// log(C): the expected initial cross-entropy of a C-class classifier.
double theoretical_initial_loss(std::size_t num_classes);

/// L̃_i = L_i(t) / L_i(0).
std::vector<double> loss_ratios(std::span<const double> losses,
                                std::span<const double> initial_losses);

/// r_i = L̃_i / mean(L̃). Rejects a nonpositive mean.
std::vector<double> relative_rates(std::span<const double> ratios);

/// Gradient-norm targets Ḡ · r_i^α.
std::vector<double> gradnorm_targets(double mean_grad_norm, std::span<const double> rates,
                                     double alpha);

/// Σ_i |G_i − target_i|.
double gradnorm_loss(std::span<const double> grad_norms, std::span<const double> targets);

/// ∂L_grad/∂w_i with targets held constant and G_i = w_i·g_i:
/// sign(w_i·g_i − target_i)·g_i, where sign(0) = 0.
std::vector<double> gradnorm_weight_gradient(std::span<const double> unweighted_norms,
                                             std::span<const double> weights,
                                             std::span<const double> targets);

/// Rescales w to sum to num_tasks. Entries that fall below `floor` are pinned
/// at the floor and the remaining entries are rescaled so the sum is still
/// num_tasks. Rejects a nonpositive sum.
std::vector<double> renormalize(std::span<const double> weights, std::size_t num_tasks,
                                double floor = 0.0);

struct RateSnapshot {
  std::vector<double> loss_ratios;
  std::vector<double> relative_rates;
  std::vector<double> grad_norms;  // G_i = w_i·g_i
  double mean_grad_norm = 0.0;
  std::vector<double> targets;
  double lgrad = 0.0;
};

/// Everything GradNorm measures at one step, for the given weights.
RateSnapshot compute_rate_snapshot(std::span<const double> losses,
                                   std::span<const double> initial_losses,
                                   std::span<const double> unweighted_norms,
                                   std::span<const double> weights, double alpha);

// ---------------------------------------------------------------------------
// Strategies
// ---------------------------------------------------------------------------

enum class StrategyKind { gradnorm, equal, uncertainty, fixed };

std::string_view to_string(StrategyKind kind);

/// A rule for choosing per-task loss weights as training progresses.
class LossWeighting {
 public:
  virtual ~LossWeighting() = default;

  virtual StrategyKind kind() const = 0;
  virtual std::size_t num_tasks() const = 0;
  /// Weights to apply to the current step's network gradient.
  virtual std::span<const double> weights() const = 0;
  /// True when weights always sum to num_tasks().
  virtual bool renormalizes() const = 0;

  /// Advances the strategy by one training step. `unweighted_norms` are
  /// ‖∇_W L_i‖₂ at the shared layer. Strategies that compute rate statistics
  /// return them.
  virtual std::optional<RateSnapshot> update(std::span<const double> losses,
                                             std::span<const double> unweighted_norms) = 0;
};

struct GradNormOptions {
  double alpha = 0.12;
  AdamConfig optimizer{.learning_rate = 0.025};
  double weight_floor = 1e-4;
  /// When false the weight optimizer's moments are cleared before every step.
  bool persistent_optimizer_state = true;
};

struct BalancerState {
  std::vector<double> weights;
  std::optional<std::vector<double>> initial_losses;
  double alpha = 0.0;
  double weight_floor = 0.0;
};

struct GradNormStep {
  RateSnapshot snapshot;
  double lgrad = 0.0;
  std::vector<double> weight_gradient;
  /// Set when some weight exceeds 0.9·T after the step.
  bool dominant_weight = false;
};

/// Adaptive loss weighting that drives per-task gradient norms at the shared
/// layer toward Ḡ·r_i^α.
class GradNormBalancer final : public LossWeighting {
 public:
  GradNormBalancer(std::size_t num_tasks, GradNormOptions options = {});

  StrategyKind kind() const override { return StrategyKind::gradnorm; }
  std::size_t num_tasks() const override { return state_.weights.size(); }
  std::span<const double> weights() const override { return state_.weights; }
  bool renormalizes() const override { return true; }
  std::optional<RateSnapshot> update(std::span<const double> losses,
                                     std::span<const double> unweighted_norms) override;

  const BalancerState& state() const noexcept { return state_; }
  const GradNormOptions& options() const noexcept { return options_; }
  const Adam& optimizer() const noexcept { return optimizer_; }

  /// Fixes L(0). Without this, the losses seen by the first step are used.
  void set_initial_losses(std::span<const double> losses);
  /// Changes the step size of the weight optimizer for subsequent steps.
  void set_learning_rate(double learning_rate) { optimizer_.set_learning_rate(learning_rate); }
  /// Uses log(C) as every task's initial loss.
  void use_theoretical_initial_losses(std::size_t num_classes);

  /// One full balancing step: G, Ḡ, L̃, r, targets, L_grad, an Adam update
  /// of w, then renormalization.
  GradNormStep step(std::span<const double> losses, std::span<const double> unweighted_norms);

 private:
  GradNormOptions options_;
  BalancerState state_;
  Adam optimizer_;
};

class EqualWeighting final : public LossWeighting {
 public:
  explicit EqualWeighting(std::size_t num_tasks) : weights_(num_tasks, 1.0) {}

  StrategyKind kind() const override { return StrategyKind::equal; }
  std::size_t num_tasks() const override { return weights_.size(); }
  std::span<const double> weights() const override { return weights_; }
  bool renormalizes() const override { return true; }
  std::optional<RateSnapshot> update(std::span<const double>, std::span<const double>) override {
    return std::nullopt;
  }

 private:
  std::vector<double> weights_;
};

/// Weights held constant for the whole run, normalized to sum to T at construction.
class StaticWeighting final : public LossWeighting {
 public:
  explicit StaticWeighting(std::span<const double> weights);

  StrategyKind kind() const override { return StrategyKind::fixed; }
  std::size_t num_tasks() const override { return weights_.size(); }
  std::span<const double> weights() const override { return weights_; }
  bool renormalizes() const override { return true; }
  std::optional<RateSnapshot> update(std::span<const double>, std::span<const double>) override {
    return std::nullopt;
  }

 private:
  std::vector<double> weights_;
};

std::vector<double> equal_weights(std::size_t num_tasks);

/// Σ_i exp(−s_i)·L_i + s_i.
double uncertainty_objective(std::span<const double> log_variances,
                             std::span<const double> losses);
/// ∂/∂s_i of uncertainty_objective: −exp(−s_i)·L_i + 1.
std::vector<double> uncertainty_gradient(std::span<const double> log_variances,
                                         std::span<const double> losses);

struct UncertaintyStep {
  std::vector<double> weights;  // exp(−s_i) after the update
  double total_loss = 0.0;      // objective before the update
};

/// Learned per-task log-variances s_i with effective weights exp(−s_i). No
/// sum constraint is applied.
class UncertaintyWeighting final : public LossWeighting {
 public:
  UncertaintyWeighting(std::size_t num_tasks, AdamConfig optimizer = {.learning_rate = 0.025});

  StrategyKind kind() const override { return StrategyKind::uncertainty; }
  std::size_t num_tasks() const override { return log_variances_.size(); }
  std::span<const double> weights() const override { return weights_; }
  bool renormalizes() const override { return false; }
  std::optional<RateSnapshot> update(std::span<const double> losses,
                                     std::span<const double>) override {
    step(losses);
    return std::nullopt;
  }

  std::span<const double> log_variances() const noexcept { return log_variances_; }
  UncertaintyStep step(std::span<const double> losses);

 private:
  std::vector<double> log_variances_;
  std::vector<double> weights_;
  Adam optimizer_;
};

}  // namespace gradnorm
