#include "gradnorm/checks.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>

#include "gradnorm/balancer.hpp"
#include "gradnorm/harness.hpp"
#include "gradnorm/network.hpp"
#include "gradnorm/rng.hpp"
#include "gradnorm/toytasks.hpp"

namespace gradnorm {

namespace {

constexpr double kStep = 1e-4;
constexpr double kBackpropTolerance = 1e-4;
constexpr double kScalarTolerance = 1e-6;
// Gradients below this magnitude are compared in absolute terms.
constexpr double kBackpropFloor = 1e-4;
constexpr double kScalarFloor = 1e-3;
// Instances with a ReLU input closer than this to zero are redrawn so the
// finite-difference stencil never straddles a kink.
constexpr double kKinkMargin = 1e-2;

using Clock = std::chrono::steady_clock;

CheckOutcome named(std::string name, double tolerance) {
  CheckOutcome out;
  out.name = std::move(name);
  out.tolerance = tolerance;
  return out;
}

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng.uniform() * static_cast<double>(hi - lo + 1));
}

struct TinyInstance {
  MlpModel model;
  Matrix inputs;
  std::vector<Matrix> targets;
  std::vector<double> task_weights;
};

double min_abs_pre_activation(const BatchCache& cache) {
  double m = std::numeric_limits<double>::infinity();
  for (const auto& z : cache.pre_activations) {
    for (double v : z.data()) m = std::min(m, std::abs(v));
  }
  return m;
}

TinyInstance make_instance(Rng& rng, std::size_t min_tasks) {
  for (;;) {
    ModelShape shape;
    shape.input_dim = pick(rng, 1, 5);
    shape.hidden = pick(rng, 1, 5);
    shape.depth = pick(rng, 1, 3);
    shape.output_dim = pick(rng, 1, 3);
    shape.num_tasks = pick(rng, min_tasks, 3);
    shape.shared_layer = pick(rng, 0, shape.depth - 1);
    const std::size_t batch = pick(rng, 1, 3);

    MlpModel model = init_model(rng, shape);
    for (Matrix* t : model.mutable_parameters().tensors()) {
      if (t->rows() == 1) {
        for (double& b : t->data()) b = rng.normal(0.0, 0.5);
      }
    }
    Matrix inputs = gaussian_fill(rng, batch, shape.input_dim, 0.0, 1.0);
    std::vector<Matrix> targets;
    std::vector<double> task_weights;
    for (std::size_t t = 0; t < shape.num_tasks; ++t) {
      targets.push_back(gaussian_fill(rng, batch, shape.output_dim, 0.0, 1.0));
      task_weights.push_back(rng.uniform(0.2, 2.0));
    }
    if (min_abs_pre_activation(forward(model, inputs).cache) < kKinkMargin) continue;
    return {std::move(model), std::move(inputs), std::move(targets), std::move(task_weights)};
  }
}

std::vector<double> task_losses(const MlpModel& model, const TinyInstance& inst) {
  const auto fwd = forward(model, inst.inputs);
  std::vector<double> out;
  for (std::size_t t = 0; t < inst.targets.size(); ++t) {
    out.push_back(squared_loss(fwd.predictions[t], inst.targets[t]));
  }
  return out;
}

BackwardResult analytic(const TinyInstance& inst) {
  const auto fwd = forward(inst.model, inst.inputs);
  std::vector<Matrix> residuals;
  for (std::size_t t = 0; t < inst.targets.size(); ++t) {
    residuals.push_back(squared_loss_gradient(fwd.predictions[t], inst.targets[t]));
  }
  return backward(inst.model, fwd.cache, residuals, inst.task_weights);
}

// Finite difference of `objective` with respect to entry `index` of tensor `tensor`.
template <typename Objective>
double numeric_entry(TinyInstance& inst, std::size_t tensor, std::size_t index,
                     Objective&& objective) {
  const double original = inst.model.parameters().tensors()[tensor]->data()[index];
  auto at = [&](double value) {
    inst.model.mutable_parameters().tensors()[tensor]->data()[index] = value;
    return objective(task_losses(inst.model, inst));
  };
  const double d = central_difference(at, original, kStep);
  inst.model.mutable_parameters().tensors()[tensor]->data()[index] = original;
  return d;
}

CheckOutcome finish(CheckOutcome out, Clock::time_point start) {
  out.passed = out.worst <= out.tolerance;
  out.seconds = seconds_since(start);
  std::ostringstream os;
  os << out.cases << " instances, worst relative error " << out.worst << " (tolerance "
     << out.tolerance << ")";
  out.detail = os.str();
  return out;
}

}  // namespace

double relative_error(double analytic_value, double numeric_value, double floor) {
  const double scale =
      std::max({std::abs(analytic_value), std::abs(numeric_value), std::abs(floor)});
  if (scale == 0.0) return 0.0;
  return std::abs(analytic_value - numeric_value) / scale;
}

CheckOutcome check_backprop_gradients(std::size_t instances, std::uint64_t seed) {
  const auto start = Clock::now();
  CheckOutcome out = named("backprop gradients", kBackpropTolerance);
  Rng rng(seed);
  for (std::size_t i = 0; i < instances; ++i) {
    TinyInstance inst = make_instance(rng, 1);
    const BackwardResult grads = analytic(inst);
    const auto total_tensors = grads.total.tensors();

    auto weighted = [&](const std::vector<double>& losses) {
      double acc = 0.0;
      for (std::size_t t = 0; t < losses.size(); ++t) acc += inst.task_weights[t] * losses[t];
      return acc;
    };
    for (std::size_t k = 0; k < total_tensors.size(); ++k) {
      const auto a = total_tensors[k]->data();
      for (std::size_t j = 0; j < a.size(); ++j) {
        const double n = numeric_entry(inst, k, j, weighted);
        out.worst = std::max(out.worst, relative_error(a[j], n, kBackpropFloor));
      }
    }

    // Index of W among the tensors: trunk layers contribute weight and bias.
    const std::size_t shared_tensor = 2 * inst.model.shape().shared_layer;
    for (std::size_t t = 0; t < inst.targets.size(); ++t) {
      const auto a = grads.tasks.shared[t].data();
      for (std::size_t j = 0; j < a.size(); ++j) {
        const double n = numeric_entry(inst, shared_tensor, j,
                                       [t](const std::vector<double>& losses) { return losses[t]; });
        out.worst = std::max(out.worst, relative_error(a[j], n, kBackpropFloor));
      }
    }
    ++out.cases;
  }
  return finish(out, start);
}

CheckOutcome check_gradnorm_weight_gradient(std::size_t instances, std::uint64_t seed) {
  const auto start = Clock::now();
  CheckOutcome out = named("gradnorm weight gradient", kScalarTolerance);
  Rng rng(seed);
  for (std::size_t i = 0; i < instances; ++i) {
    TinyInstance inst = make_instance(rng, 2);
    const std::size_t n = inst.targets.size();
    const BackwardResult grads = analytic(inst);
    std::vector<double> norms(n);
    for (std::size_t t = 0; t < n; ++t) norms[t] = l2_norm(grads.tasks.shared[t]);
    if (std::any_of(norms.begin(), norms.end(), [](double g) { return g < 1e-6; })) {
      --i;
      continue;
    }

    std::vector<double> losses(n), initial(n), weights(n);
    for (std::size_t t = 0; t < n; ++t) {
      losses[t] = rng.uniform(0.1, 5.0);
      initial[t] = rng.uniform(0.5, 5.0);
      weights[t] = rng.uniform(0.1, 2.0);
    }
    weights = renormalize(weights, n);
    const double alpha = rng.uniform(0.0, 3.0);
    const RateSnapshot snap = compute_rate_snapshot(losses, initial, norms, weights, alpha);

    // Keep every w_i·g_i away from its target so the stencil stays on one side of the kink.
    bool near_kink = false;
    for (std::size_t t = 0; t < n; ++t) {
      near_kink = near_kink || std::abs(weights[t] * norms[t] - snap.targets[t]) < 1e-2 * norms[t];
    }
    if (near_kink) {
      --i;
      continue;
    }

    const auto analytic_grad = gradnorm_weight_gradient(norms, weights, snap.targets);
    for (std::size_t t = 0; t < n; ++t) {
      auto lgrad_at = [&](double w) {
        std::vector<double> shifted = weights;
        shifted[t] = w;
        std::vector<double> g(n);
        for (std::size_t k = 0; k < n; ++k) g[k] = shifted[k] * norms[k];
        return gradnorm_loss(g, snap.targets);
      };
      const double numeric = central_difference(lgrad_at, weights[t], kStep * 1e-2);
      out.worst = std::max(out.worst, relative_error(analytic_grad[t], numeric, kScalarFloor));
    }
    ++out.cases;
  }
  return finish(out, start);
}

CheckOutcome check_uncertainty_gradient(std::size_t instances, std::uint64_t seed) {
  const auto start = Clock::now();
  CheckOutcome out = named("uncertainty gradient", kScalarTolerance);
  Rng rng(seed);
  for (std::size_t i = 0; i < instances; ++i) {
    const std::size_t n = pick(rng, 1, 5);
    std::vector<double> s(n), losses(n);
    for (std::size_t t = 0; t < n; ++t) {
      s[t] = rng.normal(0.0, 1.5);
      losses[t] = rng.uniform(0.01, 20.0);
    }
    const auto a = uncertainty_gradient(s, losses);
    for (std::size_t t = 0; t < n; ++t) {
      auto f = [&](double v) {
        std::vector<double> shifted = s;
        shifted[t] = v;
        return uncertainty_objective(shifted, losses);
      };
      const double numeric = central_difference(f, s[t], kStep);
      out.worst = std::max(out.worst, relative_error(a[t], numeric, kScalarFloor));
    }
    ++out.cases;
  }
  return finish(out, start);
}

std::vector<CheckOutcome> gradient_check_suite(std::size_t instances, std::uint64_t seed) {
  return {check_backprop_gradients(instances, derive_seed(seed, 1)),
          check_gradnorm_weight_gradient(instances, derive_seed(seed, 2)),
          check_uncertainty_gradient(instances, derive_seed(seed, 3))};
}

namespace {

ExperimentConfig invariant_config(ExperimentConfig c, StrategyKind kind, std::size_t steps) {
  c.strategy.kind = kind;
  if (kind == StrategyKind::fixed) {
    c.strategy.static_weights.assign(c.taskset.num_tasks, 1.0);
    c.strategy.static_weights.front() = 3.0;
  }
  c.training.steps = steps;
  c.training.eval_every = 1;
  c.training.test_batch_size = 250;
  return c;
}

CheckOutcome symmetric_tasks_check(const InvariantOptions& options) {
  const auto start = Clock::now();
  CheckOutcome out = named("symmetric tasks keep equal weights", 1e-6);

  TaskSetSpec spec;
  spec.seed = derive_seed(options.seed, 7);
  spec.num_tasks = 2;
  spec.sigmas = {5.0, 5.0};
  spec.epsilon_spread = 0.0;
  const ToyTaskSet taskset = generate_taskset(spec);

  Rng init_rng(derive_seed(options.seed, 8));
  MlpModel model = init_model(init_rng, ModelShape{});
  {
    ParameterSet& params = model.mutable_parameters();
    params.heads[1] = params.heads[0];
  }
  GradNormBalancer balancer(2);
  Adam network_optimizer({}, model.parameters().parameter_count());
  Rng data_rng(derive_seed(options.seed, 9));

  for (std::size_t step = 0; step < options.symmetric_steps; ++step) {
    const Batch batch = sample_batch(taskset, data_rng, 100);
    const auto fwd = forward(model, batch.inputs);
    std::vector<double> losses;
    std::vector<Matrix> residuals;
    for (std::size_t t = 0; t < 2; ++t) {
      losses.push_back(squared_loss(fwd.predictions[t], batch.targets[t]));
      residuals.push_back(squared_loss_gradient(fwd.predictions[t], batch.targets[t]));
    }
    const std::vector<double> weights(balancer.weights().begin(), balancer.weights().end());
    const auto grads = backward(model, fwd.cache, residuals, weights);
    const std::vector<double> norms{l2_norm(grads.tasks.shared[0]), l2_norm(grads.tasks.shared[1])};
    balancer.step(losses, norms);
    for (double w : balancer.weights()) out.worst = std::max(out.worst, std::abs(w - 1.0));
    network_optimizer.update(model.mutable_parameters(), grads.total);
    ++out.cases;
  }
  out.passed = out.worst < out.tolerance;
  out.seconds = seconds_since(start);
  std::ostringstream os;
  os << out.cases << " steps, max |w - 1| = " << out.worst;
  out.detail = os.str();
  return out;
}

}  // namespace

std::vector<CheckOutcome> invariant_suite(const InvariantOptions& options) {
  const auto start = Clock::now();
  CheckOutcome sums = named("renormalized weights sum to T", 1e-9);
  CheckOutcome rates = named("relative rates have mean 1", 1e-9);
  CheckOutcome initial = named("step-0 normalized test loss equals T", 1e-9);

  struct Case {
    ExperimentConfig base;
    StrategyKind kind;
  };
  std::vector<Case> cases;
  for (StrategyKind kind : {StrategyKind::gradnorm, StrategyKind::equal, StrategyKind::fixed,
                            StrategyKind::uncertainty}) {
    cases.push_back({preset_toy2(options.seed), kind});
  }
  cases.push_back({preset_toy10(options.seed), StrategyKind::gradnorm});

  for (const auto& c : cases) {
    const RunRecord record = train_run(invariant_config(c.base, c.kind, options.steps));
    const double T = static_cast<double>(record.num_tasks);
    const bool renormalizes = c.kind != StrategyKind::uncertainty;
    for (const auto& row : record.rows) {
      if (renormalizes) {
        double s = 0.0;
        for (double w : row.weights) s += w;
        sums.worst = std::max(sums.worst, std::abs(s - T));
        ++sums.cases;
      }
      double m = 0.0;
      for (double r : row.rates) m += r;
      rates.worst = std::max(rates.worst, std::abs(m / T - 1.0));
      ++rates.cases;
    }
    if (record.diverged || record.rows.empty()) {
      initial.worst = std::numeric_limits<double>::infinity();
    } else {
      initial.worst = std::max(initial.worst, std::abs(task_normalized_test_loss(record, 0) - T));
    }
    ++initial.cases;
  }

  std::vector<CheckOutcome> out;
  for (CheckOutcome* c : {&sums, &rates, &initial}) {
    c->passed = c->worst <= c->tolerance;
    c->seconds = seconds_since(start);
    std::ostringstream os;
    os << c->cases << " checks, worst deviation " << c->worst;
    c->detail = os.str();
    out.push_back(*c);
  }
  out.push_back(symmetric_tasks_check(options));
  return out;
}

std::vector<FixedPointCase> alpha_zero_fixed_points(std::size_t cases, std::uint64_t seed,
                                                    std::size_t iterations) {
  constexpr double T = 2.0;
  constexpr std::size_t kGrid = 2'000'000;
  Rng rng(seed);
  std::vector<FixedPointCase> out;
  for (std::size_t c = 0; c < cases; ++c) {
    FixedPointCase fp;
    // Log-uniform norms spanning two decades.
    fp.g1 = std::pow(10.0, rng.uniform(-1.0, 1.0));
    fp.g2 = std::pow(10.0, rng.uniform(-1.0, 1.0));
    const std::vector<double> norms{fp.g1, fp.g2};
    const std::vector<double> losses{1.0, 1.0};

    GradNormBalancer balancer(2, GradNormOptions{.alpha = 0.0});
    balancer.set_initial_losses(losses);
    // Constant-step Adam circles the kink at a radius set by the step size, so
    // the step size is annealed; the fixed point does not depend on it.
    const double lr0 = balancer.options().optimizer.learning_rate;
    for (std::size_t k = 0; k < iterations; ++k) {
      balancer.set_learning_rate(lr0 / (1.0 + static_cast<double>(k) / 50.0));
      balancer.step(losses, norms);
    }
    const auto w = balancer.weights();
    fp.iterated_w1 = w[0];
    const double a = w[0] * fp.g1;
    const double b = w[1] * fp.g2;
    fp.balance_error = std::abs(a - b) / (0.5 * (a + b));
    fp.closed_form_w1 = T * fp.g2 / (fp.g1 + fp.g2);

    double best = std::numeric_limits<double>::infinity();
    for (std::size_t k = 1; k < kGrid; ++k) {
      const double w1 = T * static_cast<double>(k) / static_cast<double>(kGrid);
      // With α = 0 both targets equal the mean weighted norm.
      const double G1 = w1 * fp.g1;
      const double G2 = (T - w1) * fp.g2;
      const double mean = 0.5 * (G1 + G2);
      const double lgrad = std::abs(G1 - mean) + std::abs(G2 - mean);
      if (lgrad < best) {
        best = lgrad;
        fp.scanned_w1 = w1;
      }
    }
    out.push_back(fp);
  }
  return out;
}

CheckOutcome check_alpha_zero_fixed_point(std::size_t cases, std::uint64_t seed) {
  const auto start = Clock::now();
  CheckOutcome out = named("alpha=0 fixed point", 1e-3);
  for (const auto& fp : alpha_zero_fixed_points(cases, seed)) {
    out.worst = std::max({out.worst, fp.balance_error,
                          std::abs(fp.iterated_w1 - fp.closed_form_w1) / fp.closed_form_w1,
                          std::abs(fp.iterated_w1 - fp.scanned_w1) / fp.scanned_w1});
    ++out.cases;
  }
  out.passed = out.worst <= out.tolerance;
  out.seconds = seconds_since(start);
  std::ostringstream os;
  os << out.cases << " cases, worst relative error " << out.worst;
  out.detail = os.str();
  return out;
}

std::vector<CheckOutcome> run_selftest() {
  auto out = gradient_check_suite();
  for (auto& c : invariant_suite()) out.push_back(std::move(c));
  out.push_back(check_alpha_zero_fixed_point());
  return out;
}

}  // namespace gradnorm
