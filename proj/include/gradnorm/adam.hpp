#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "gradnorm/network.hpp"

namespace gradnorm {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam with bias correction over a flat parameter vector of fixed size.
///
/// One call to update() is one optimizer step, regardless of how many
/// tensors the parameters are split across.
class Adam {
 public:
  Adam(AdamConfig config, std::size_t size);

  const AdamConfig& config() const noexcept { return config_; }
  std::size_t size() const noexcept { return m_.size(); }
  std::uint64_t step_count() const noexcept { return step_; }
  std::span<const double> first_moment() const noexcept { return m_; }
  std::span<const double> second_moment() const noexcept { return v_; }

  void update(std::span<double> params, std::span<const double> grads);
  void update(ParameterSet& params, const ParameterSet& grads);

  /// Takes effect from the next update; moments are kept.
  void set_learning_rate(double learning_rate);
  /// Clears moments and the step counter.
  void reset();

 private:
  void apply(std::size_t offset, std::span<double> params, std::span<const double> grads,
             double correction1, double correction2);

  AdamConfig config_;
  std::vector<double> m_;
  std::vector<double> v_;
  std::uint64_t step_ = 0;
};

}  // namespace gradnorm
