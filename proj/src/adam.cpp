#include "gradnorm/adam.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace gradnorm {

Adam::Adam(AdamConfig config, std::size_t size) : config_(config), m_(size, 0.0), v_(size, 0.0) {}

void Adam::set_learning_rate(double learning_rate) {
  if (!(learning_rate >= 0.0)) throw std::invalid_argument("Adam: learning rate must be >= 0");
  config_.learning_rate = learning_rate;
}

void Adam::reset() {
  std::fill(m_.begin(), m_.end(), 0.0);
  std::fill(v_.begin(), v_.end(), 0.0);
  step_ = 0;
}

void Adam::apply(std::size_t offset, std::span<double> params, std::span<const double> grads,
                 double correction1, double correction2) {
  const double b1 = config_.beta1;
  const double b2 = config_.beta2;
  const double lr = config_.learning_rate;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    double& m = m_[offset + i];
    double& v = v_[offset + i];
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g * g;
    const double m_hat = m / correction1;
    const double v_hat = v / correction2;
    params[i] -= lr * m_hat / (std::sqrt(v_hat) + config_.epsilon);
  }
}

void Adam::update(std::span<double> params, std::span<const double> grads) {
  if (params.size() != m_.size() || grads.size() != m_.size()) {
    throw ShapeError("Adam::update: expected " + std::to_string(m_.size()) + " values, got " +
                     std::to_string(params.size()) + " params and " +
                     std::to_string(grads.size()) + " grads");
  }
  ++step_;
  const double t = static_cast<double>(step_);
  apply(0, params, grads, 1.0 - std::pow(config_.beta1, t), 1.0 - std::pow(config_.beta2, t));
}

void Adam::update(ParameterSet& params, const ParameterSet& grads) {
  if (!params.same_shape(grads) || params.parameter_count() != m_.size()) {
    throw ShapeError("Adam::update: parameter set does not match optimizer state");
  }
  ++step_;
  const double t = static_cast<double>(step_);
  const double c1 = 1.0 - std::pow(config_.beta1, t);
  const double c2 = 1.0 - std::pow(config_.beta2, t);
  auto p = params.tensors();
  const auto g = grads.tensors();
  std::size_t offset = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    apply(offset, p[i]->data(), g[i]->data(), c1, c2);
    offset += p[i]->size();
  }
}

}  // namespace gradnorm
