#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace gradnorm {

/// Result of one self-check. `worst` is the largest observed error in the
/// check's own metric; the check passes when worst <= tolerance.
struct CheckOutcome {
  std::string name;
  bool passed = false;
  double worst = 0.0;
  double tolerance = 0.0;
  std::size_t cases = 0;
  double seconds = 0.0;
  std::string detail;
};

/// |analytic − numeric| / max(|analytic|, |numeric|, floor).
double relative_error(double analytic, double numeric, double floor);

/// Fourth-order central difference of f at x with step h.
template <typename F>
double central_difference(F&& f, double x, double h) {
  return (f(x - 2.0 * h) - 8.0 * f(x - h) + 8.0 * f(x + h) - f(x + 2.0 * h)) / (12.0 * h);
}

/// Every parameter of the weighted total loss and every per-task shared-layer
/// gradient, against finite differences on small random networks.
CheckOutcome check_backprop_gradients(std::size_t instances, std::uint64_t seed);
/// ∂L_grad/∂w with targets held fixed, shared-layer norms taken from small networks.
CheckOutcome check_gradnorm_weight_gradient(std::size_t instances, std::uint64_t seed);
/// ∂/∂s of the uncertainty objective.
CheckOutcome check_uncertainty_gradient(std::size_t instances, std::uint64_t seed);

std::vector<CheckOutcome> gradient_check_suite(std::size_t instances = 100,
                                               std::uint64_t seed = 2024);

struct InvariantOptions {
  std::size_t steps = 200;
  std::size_t symmetric_steps = 1000;
  std::uint64_t seed = 11;
};

/// Weight sums, mean relative rate, symmetric tasks and the step-0 normalized loss.
std::vector<CheckOutcome> invariant_suite(const InvariantOptions& options = {});

struct FixedPointCase {
  double g1 = 0.0;
  double g2 = 0.0;
  double iterated_w1 = 0.0;
  double closed_form_w1 = 0.0;
  double scanned_w1 = 0.0;
  /// |w1·g1 − w2·g2| / mean(w·g) at the iterated weights.
  double balance_error = 0.0;
};

/// Two-task balancing with α = 0 and frozen norms. Each case iterates the
/// weight update and compares against T·g2/(g1+g2) and a grid scan of L_grad.
std::vector<FixedPointCase> alpha_zero_fixed_points(std::size_t cases, std::uint64_t seed,
                                                    std::size_t iterations = 50000);
CheckOutcome check_alpha_zero_fixed_point(std::size_t cases = 20, std::uint64_t seed = 5);

/// Every suite above, in order.
std::vector<CheckOutcome> run_selftest();

}  // namespace gradnorm
