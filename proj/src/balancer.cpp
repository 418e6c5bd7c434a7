#include "gradnorm/balancer.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace gradnorm {

namespace {

void require_length(std::size_t actual, std::size_t expected, const char* what) {
  if (actual != expected) {
    throw std::invalid_argument(std::string(what) + ": expected " + std::to_string(expected) +
                                " entries, got " + std::to_string(actual));
  }
}

double mean(std::span<const double> xs) {
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

}  // namespace

std::vector<double> capture_initial_losses(std::span<const double> losses) {
  for (std::size_t i = 0; i < losses.size(); ++i) {
    if (!(losses[i] > 0.0) || !std::isfinite(losses[i])) {
      throw std::invalid_argument("initial loss for task " + std::to_string(i) +
                                  " must be positive and finite, got " +
                                  std::to_string(losses[i]));
    }
  }
  return {losses.begin(), losses.end()};
}

double theoretical_initial_loss(std::size_t num_classes) {
  if (num_classes < 2) {
    throw std::invalid_argument("theoretical_initial_loss: need at least two classes");
  }
  return std::log(static_cast<double>(num_classes));
}

std::vector<double> loss_ratios(std::span<const double> losses,
                                std::span<const double> initial_losses) {
  require_length(initial_losses.size(), losses.size(), "loss_ratios");
  std::vector<double> out(losses.size());
  for (std::size_t i = 0; i < losses.size(); ++i) {
    if (!(initial_losses[i] > 0.0)) {
      throw std::invalid_argument("loss_ratios: initial loss must be positive");
    }
    out[i] = losses[i] / initial_losses[i];
  }
  return out;
}

std::vector<double> relative_rates(std::span<const double> ratios) {
  if (ratios.empty()) throw std::invalid_argument("relative_rates: no tasks");
  const double m = mean(ratios);
  if (!(m > 0.0)) {
    throw std::invalid_argument("relative_rates: mean loss ratio is not positive");
  }
  std::vector<double> out(ratios.size());
  for (std::size_t i = 0; i < ratios.size(); ++i) out[i] = ratios[i] / m;
  return out;
}

std::vector<double> gradnorm_targets(double mean_grad_norm, std::span<const double> rates,
                                     double alpha) {
  std::vector<double> out(rates.size());
  for (std::size_t i = 0; i < rates.size(); ++i) {
    out[i] = mean_grad_norm * std::pow(rates[i], alpha);
  }
  return out;
}

double gradnorm_loss(std::span<const double> grad_norms, std::span<const double> targets) {
  require_length(targets.size(), grad_norms.size(), "gradnorm_loss");
  double acc = 0.0;
  for (std::size_t i = 0; i < grad_norms.size(); ++i) acc += std::abs(grad_norms[i] - targets[i]);
  return acc;
}

std::vector<double> gradnorm_weight_gradient(std::span<const double> unweighted_norms,
                                             std::span<const double> weights,
                                             std::span<const double> targets) {
  require_length(weights.size(), unweighted_norms.size(), "gradnorm_weight_gradient");
  require_length(targets.size(), unweighted_norms.size(), "gradnorm_weight_gradient");
  std::vector<double> out(weights.size());
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double diff = weights[i] * unweighted_norms[i] - targets[i];
    const double sign = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
    out[i] = sign * unweighted_norms[i];
  }
  return out;
}

std::vector<double> renormalize(std::span<const double> weights, std::size_t num_tasks,
                                double floor) {
  require_length(weights.size(), num_tasks, "renormalize");
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (!(total > 0.0)) throw std::invalid_argument("renormalize: weights sum is not positive");
  const double target = static_cast<double>(num_tasks);
  if (floor * target >= target) {
    throw std::invalid_argument("renormalize: floor leaves no mass for the weights");
  }

  std::vector<double> out(weights.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = weights[i] * target / total;
  if (floor <= 0.0) return out;

  std::vector<bool> pinned(out.size(), false);
  // Each pass pins at least one more entry, so this terminates within T passes.
  for (std::size_t pass = 0; pass < out.size(); ++pass) {
    bool clamped = false;
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (!pinned[i] && out[i] < floor) {
        pinned[i] = true;
        clamped = true;
      }
    }
    if (!clamped) break;
    double free_mass = 0.0;
    std::size_t pinned_count = 0;
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (pinned[i]) {
        ++pinned_count;
      } else {
        free_mass += out[i];
      }
    }
    const double budget = target - floor * static_cast<double>(pinned_count);
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] = pinned[i] ? floor : out[i] * budget / free_mass;
    }
  }
  return out;
}

RateSnapshot compute_rate_snapshot(std::span<const double> losses,
                                   std::span<const double> initial_losses,
                                   std::span<const double> unweighted_norms,
                                   std::span<const double> weights, double alpha) {
  const std::size_t n = losses.size();
  require_length(unweighted_norms.size(), n, "compute_rate_snapshot");
  require_length(weights.size(), n, "compute_rate_snapshot");
  RateSnapshot s;
  s.grad_norms.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (weights[i] < 0.0) throw std::invalid_argument("compute_rate_snapshot: negative weight");
    s.grad_norms[i] = weights[i] * unweighted_norms[i];
  }
  s.mean_grad_norm = mean(s.grad_norms);
  s.loss_ratios = loss_ratios(losses, initial_losses);
  s.relative_rates = relative_rates(s.loss_ratios);
  s.targets = gradnorm_targets(s.mean_grad_norm, s.relative_rates, alpha);
  s.lgrad = gradnorm_loss(s.grad_norms, s.targets);
  return s;
}

std::string_view to_string(StrategyKind kind) {
  switch (kind) {
    case StrategyKind::gradnorm:
      return "gradnorm";
    case StrategyKind::equal:
      return "equal";
    case StrategyKind::uncertainty:
      return "uncertainty";
    case StrategyKind::fixed:
      return "static";
  }
  return "unknown";
}

GradNormBalancer::GradNormBalancer(std::size_t num_tasks, GradNormOptions options)
    : options_(options), optimizer_(options.optimizer, num_tasks) {
  if (num_tasks == 0) throw std::invalid_argument("GradNormBalancer: no tasks");
  if (!(options.alpha >= 0.0)) throw std::invalid_argument("GradNormBalancer: alpha must be >= 0");
  if (!(options.weight_floor > 0.0) || options.weight_floor >= 1.0) {
    throw std::invalid_argument("GradNormBalancer: weight floor must lie in (0, 1)");
  }
  state_.weights.assign(num_tasks, 1.0);
  state_.alpha = options.alpha;
  state_.weight_floor = options.weight_floor;
}

void GradNormBalancer::set_initial_losses(std::span<const double> losses) {
  require_length(losses.size(), num_tasks(), "set_initial_losses");
  state_.initial_losses = capture_initial_losses(losses);
}

void GradNormBalancer::use_theoretical_initial_losses(std::size_t num_classes) {
  state_.initial_losses = std::vector<double>(num_tasks(), theoretical_initial_loss(num_classes));
}

GradNormStep GradNormBalancer::step(std::span<const double> losses,
                                    std::span<const double> unweighted_norms) {
  require_length(losses.size(), num_tasks(), "GradNormBalancer::step");
  require_length(unweighted_norms.size(), num_tasks(), "GradNormBalancer::step");
  if (!state_.initial_losses) set_initial_losses(losses);

  GradNormStep out;
  out.snapshot = compute_rate_snapshot(losses, *state_.initial_losses, unweighted_norms,
                                       state_.weights, state_.alpha);
  out.lgrad = out.snapshot.lgrad;
  out.weight_gradient =
      gradnorm_weight_gradient(unweighted_norms, state_.weights, out.snapshot.targets);

  if (!options_.persistent_optimizer_state) optimizer_.reset();
  std::vector<double> updated = state_.weights;
  optimizer_.update(updated, out.weight_gradient);
  state_.weights = renormalize(updated, num_tasks(), state_.weight_floor);

  const double ceiling = 0.9 * static_cast<double>(num_tasks());
  for (double w : state_.weights) out.dominant_weight = out.dominant_weight || w > ceiling;
  return out;
}

std::optional<RateSnapshot> GradNormBalancer::update(std::span<const double> losses,
                                                     std::span<const double> unweighted_norms) {
  return step(losses, unweighted_norms).snapshot;
}

StaticWeighting::StaticWeighting(std::span<const double> weights) {
  if (weights.empty()) throw std::invalid_argument("static weights: no tasks");
  for (double w : weights) {
    if (!(w > 0.0)) throw std::invalid_argument("static weights must be positive");
  }
  weights_ = renormalize(weights, weights.size());
}

std::vector<double> equal_weights(std::size_t num_tasks) {
  return std::vector<double>(num_tasks, 1.0);
}

double uncertainty_objective(std::span<const double> log_variances,
                             std::span<const double> losses) {
  require_length(losses.size(), log_variances.size(), "uncertainty_objective");
  double acc = 0.0;
  for (std::size_t i = 0; i < losses.size(); ++i) {
    acc += std::exp(-log_variances[i]) * losses[i] + log_variances[i];
  }
  return acc;
}

std::vector<double> uncertainty_gradient(std::span<const double> log_variances,
                                         std::span<const double> losses) {
  require_length(losses.size(), log_variances.size(), "uncertainty_gradient");
  std::vector<double> out(losses.size());
  for (std::size_t i = 0; i < losses.size(); ++i) {
    out[i] = -std::exp(-log_variances[i]) * losses[i] + 1.0;
  }
  return out;
}

UncertaintyWeighting::UncertaintyWeighting(std::size_t num_tasks, AdamConfig optimizer)
    : log_variances_(num_tasks, 0.0), weights_(num_tasks, 1.0), optimizer_(optimizer, num_tasks) {
  if (num_tasks == 0) throw std::invalid_argument("UncertaintyWeighting: no tasks");
}

UncertaintyStep UncertaintyWeighting::step(std::span<const double> losses) {
  require_length(losses.size(), num_tasks(), "UncertaintyWeighting::step");
  UncertaintyStep out;
  out.total_loss = uncertainty_objective(log_variances_, losses);
  optimizer_.update(log_variances_, uncertainty_gradient(log_variances_, losses));
  for (std::size_t i = 0; i < weights_.size(); ++i) weights_[i] = std::exp(-log_variances_[i]);
  out.weights = weights_;
  return out;
}

}  // namespace gradnorm
