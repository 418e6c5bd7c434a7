#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "gradnorm/matrix.hpp"
#include "gradnorm/rng.hpp"

namespace gradnorm {

/// Affine layer y = x·weight + bias, weight is fan_in × fan_out, bias is 1 × fan_out.
struct DenseLayer {
  Matrix weight;
  Matrix bias;
};

/// Parameters (or parameter-shaped gradients) of a multitask MLP.
struct ParameterSet {
  std::vector<DenseLayer> trunk;
  std::vector<DenseLayer> heads;

  /// Zero-filled set with the same shapes.
  ParameterSet zeros_like() const;
  std::size_t parameter_count() const;
  bool same_shape(const ParameterSet& other) const;

  /// Every weight and bias matrix, trunk first then heads, weight before bias.
  std::vector<Matrix*> tensors();
  std::vector<const Matrix*> tensors() const;

  ParameterSet& operator+=(const ParameterSet& other);
  ParameterSet& operator*=(double scale);
};

struct ModelShape {
  std::size_t input_dim = 250;
  std::size_t hidden = 100;
  std::size_t depth = 4;
  std::size_t output_dim = 100;
  std::size_t num_tasks = 2;
  /// Trunk layer whose weight matrix is W. Defaults to the last trunk layer.
  std::size_t shared_layer = 3;
};

/// Shared ReLU trunk followed by one affine head per task.
///
/// The version counter increments on every mutable access to the parameters,
/// which lets backward() reject caches produced before an update.
class MlpModel {
 public:
  MlpModel(ModelShape shape, ParameterSet params);

  const ModelShape& shape() const noexcept { return shape_; }
  std::size_t num_tasks() const noexcept { return shape_.num_tasks; }
  const ParameterSet& parameters() const noexcept { return params_; }
  ParameterSet& mutable_parameters() {
    ++version_;
    return params_;
  }
  std::uint64_t version() const noexcept { return version_; }

  /// The shared-layer weight matrix W.
  const Matrix& shared_weight() const { return params_.trunk[shape_.shared_layer].weight; }

 private:
  ModelShape shape_;
  ParameterSet params_;
  std::uint64_t version_ = 0;
};

/// Gaussian weights with std sqrt(2/fan_in), zero biases.
MlpModel init_model(Rng& rng, const ModelShape& shape);

struct BatchCache {
  const MlpModel* model = nullptr;
  std::uint64_t model_version = 0;
  std::size_t batch = 0;
  /// activations[0] is the input; activations[l + 1] = relu(pre_activations[l]).
  std::vector<Matrix> activations;
  std::vector<Matrix> pre_activations;
};

struct ForwardResult {
  std::vector<Matrix> predictions;
  BatchCache cache;
};

ForwardResult forward(const MlpModel& model, const Matrix& x);

/// Mean over batch and output dimensions of (pred − target)².
double squared_loss(const Matrix& pred, const Matrix& target);
/// ∂ squared_loss / ∂ pred.
Matrix squared_loss_gradient(const Matrix& pred, const Matrix& target);

/// Unweighted per-task gradients with respect to the shared layer weights W.
struct TaskGradients {
  std::vector<Matrix> shared;
};

struct BackwardResult {
  ParameterSet total;  // gradient of Σ w_i L_i
  TaskGradients tasks;
};

/// residual_grads[i] is ∂L_i/∂prediction_i for the batch in cache.
BackwardResult backward(const MlpModel& model, const BatchCache& cache,
                        std::span<const Matrix> residual_grads,
                        std::span<const double> task_weights);

/// Full-parameter gradient of the single unweighted loss L_task.
ParameterSet task_gradient(const MlpModel& model, const BatchCache& cache,
                           std::span<const Matrix> residual_grads, std::size_t task);

/// G_W^(i) = w_i · ‖∇_W L_i‖₂.
double shared_layer_grad_norm(const TaskGradients& grads, std::size_t task, double weight);

}  // namespace gradnorm
