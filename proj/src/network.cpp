#include "gradnorm/network.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace gradnorm {

ParameterSet ParameterSet::zeros_like() const {
  ParameterSet out;
  auto zero_layer = [](const DenseLayer& l) {
    return DenseLayer{Matrix(l.weight.rows(), l.weight.cols()), Matrix(1, l.bias.cols())};
  };
  for (const auto& l : trunk) out.trunk.push_back(zero_layer(l));
  for (const auto& l : heads) out.heads.push_back(zero_layer(l));
  return out;
}

std::size_t ParameterSet::parameter_count() const {
  std::size_t n = 0;
  for (const Matrix* m : tensors()) n += m->size();
  return n;
}

bool ParameterSet::same_shape(const ParameterSet& other) const {
  const auto a = tensors();
  const auto b = other.tensors();
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!a[i]->same_shape(*b[i])) return false;
  }
  return true;
}

std::vector<Matrix*> ParameterSet::tensors() {
  std::vector<Matrix*> out;
  for (auto* group : {&trunk, &heads}) {
    for (auto& l : *group) {
      out.push_back(&l.weight);
      out.push_back(&l.bias);
    }
  }
  return out;
}

std::vector<const Matrix*> ParameterSet::tensors() const {
  std::vector<const Matrix*> out;
  for (const auto* group : {&trunk, &heads}) {
    for (const auto& l : *group) {
      out.push_back(&l.weight);
      out.push_back(&l.bias);
    }
  }
  return out;
}

ParameterSet& ParameterSet::operator+=(const ParameterSet& other) {
  if (!same_shape(other)) throw ShapeError("ParameterSet::operator+=: shape mismatch");
  auto mine = tensors();
  const auto theirs = other.tensors();
  for (std::size_t i = 0; i < mine.size(); ++i) *mine[i] += *theirs[i];
  return *this;
}

ParameterSet& ParameterSet::operator*=(double scale) {
  for (Matrix* m : tensors()) *m *= scale;
  return *this;
}

MlpModel::MlpModel(ModelShape shape, ParameterSet params)
    : shape_(shape), params_(std::move(params)) {
  if (shape_.depth == 0 || shape_.num_tasks == 0) {
    throw std::invalid_argument("MlpModel: depth and num_tasks must be positive");
  }
  if (shape_.shared_layer >= shape_.depth) {
    throw std::invalid_argument("MlpModel: shared layer " + std::to_string(shape_.shared_layer) +
                                " is not a trunk layer (depth " + std::to_string(shape_.depth) +
                                ")");
  }
  if (params_.trunk.size() != shape_.depth || params_.heads.size() != shape_.num_tasks) {
    throw ShapeError("MlpModel: layer count does not match shape");
  }
  std::size_t fan_in = shape_.input_dim;
  for (const auto& l : params_.trunk) {
    if (l.weight.rows() != fan_in || l.weight.cols() != shape_.hidden ||
        l.bias.rows() != 1 || l.bias.cols() != shape_.hidden) {
      throw ShapeError("MlpModel: trunk layer shapes do not chain");
    }
    fan_in = shape_.hidden;
  }
  for (const auto& l : params_.heads) {
    if (l.weight.rows() != shape_.hidden || l.weight.cols() != shape_.output_dim ||
        l.bias.rows() != 1 || l.bias.cols() != shape_.output_dim) {
      throw ShapeError("MlpModel: head shape mismatch");
    }
  }
}

MlpModel init_model(Rng& rng, const ModelShape& shape) {
  if (shape.input_dim == 0 || shape.hidden == 0 || shape.depth == 0 || shape.output_dim == 0 ||
      shape.num_tasks == 0) {
    throw std::invalid_argument("init_model: all dimensions must be positive");
  }
  auto make_layer = [&rng](std::size_t fan_in, std::size_t fan_out) {
    return DenseLayer{gaussian_fill(rng, fan_in, fan_out, 0.0, std::sqrt(2.0 / fan_in)),
                      Matrix(1, fan_out)};
  };
  ParameterSet params;
  std::size_t fan_in = shape.input_dim;
  for (std::size_t l = 0; l < shape.depth; ++l) {
    params.trunk.push_back(make_layer(fan_in, shape.hidden));
    fan_in = shape.hidden;
  }
  for (std::size_t t = 0; t < shape.num_tasks; ++t) {
    params.heads.push_back(make_layer(shape.hidden, shape.output_dim));
  }
  return MlpModel(shape, std::move(params));
}

ForwardResult forward(const MlpModel& model, const Matrix& x) {
  const auto& shape = model.shape();
  if (x.cols() != shape.input_dim) {
    throw ShapeError("forward: input has " + std::to_string(x.cols()) + " columns, model expects " +
                     std::to_string(shape.input_dim));
  }
  const auto& params = model.parameters();
  ForwardResult result;
  auto& cache = result.cache;
  cache.model = &model;
  cache.model_version = model.version();
  cache.batch = x.rows();
  cache.activations.reserve(shape.depth + 1);
  cache.pre_activations.reserve(shape.depth);
  cache.activations.push_back(x);
  for (const auto& layer : params.trunk) {
    Matrix pre = matmul(cache.activations.back(), layer.weight);
    add_row_broadcast(pre, layer.bias);
    cache.activations.push_back(map_elementwise(pre, Elementwise::relu));
    cache.pre_activations.push_back(std::move(pre));
  }
  const Matrix& features = cache.activations.back();
  result.predictions.reserve(params.heads.size());
  for (const auto& head : params.heads) {
    Matrix out = matmul(features, head.weight);
    add_row_broadcast(out, head.bias);
    result.predictions.push_back(std::move(out));
  }
  return result;
}

double squared_loss(const Matrix& pred, const Matrix& target) {
  if (!pred.same_shape(target)) {
    throw ShapeError("squared_loss: " + pred.shape_string() + " vs " + target.shape_string());
  }
  const auto p = pred.data();
  const auto t = target.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double d = p[i] - t[i];
    acc += d * d;
  }
  return acc / static_cast<double>(p.size());
}

Matrix squared_loss_gradient(const Matrix& pred, const Matrix& target) {
  if (!pred.same_shape(target)) {
    throw ShapeError("squared_loss_gradient: " + pred.shape_string() + " vs " +
                     target.shape_string());
  }
  Matrix g = pred;
  g -= target;
  g *= 2.0 / static_cast<double>(pred.size());
  return g;
}

namespace {

void check_cache(const MlpModel& model, const BatchCache& cache,
                 std::span<const Matrix> residual_grads) {
  if (cache.model != &model || cache.model_version != model.version()) {
    throw std::invalid_argument("backward: cache was not produced by this model state");
  }
  if (residual_grads.size() != model.num_tasks()) {
    throw std::invalid_argument("backward: expected one residual gradient per task");
  }
  for (const auto& r : residual_grads) {
    if (r.rows() != cache.batch || r.cols() != model.shape().output_dim) {
      throw ShapeError("backward: residual gradient shape " + r.shape_string());
    }
  }
}

// Relu backward in place: zeroes entries whose pre-activation is not positive.
void mask_relu(Matrix& delta, const Matrix& pre) {
  auto d = delta.data();
  const auto p = pre.data();
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (!(p[i] > 0.0)) d[i] = 0.0;
  }
}

}  // namespace

BackwardResult backward(const MlpModel& model, const BatchCache& cache,
                        std::span<const Matrix> residual_grads,
                        std::span<const double> task_weights) {
  check_cache(model, cache, residual_grads);
  const auto& shape = model.shape();
  const auto& params = model.parameters();
  const std::size_t num_tasks = shape.num_tasks;
  if (task_weights.size() != num_tasks) {
    throw std::invalid_argument("backward: expected one weight per task");
  }

  BackwardResult result;
  result.total = params.zeros_like();
  result.tasks.shared.resize(num_tasks);

  const Matrix& features = cache.activations.back();
  // Per-task gradient with respect to the trunk output, unweighted.
  std::vector<Matrix> task_delta(num_tasks);
  Matrix combined(cache.batch, shape.hidden);
  for (std::size_t t = 0; t < num_tasks; ++t) {
    const double w = task_weights[t];
    const Matrix& r = residual_grads[t];
    auto& head_grad = result.total.heads[t];
    head_grad.weight = matmul_transpose_a(features, r);
    head_grad.weight *= w;
    head_grad.bias = column_sums(r);
    head_grad.bias *= w;
    task_delta[t] = matmul_transpose_b(r, params.heads[t].weight);
    combined.add_scaled(task_delta[t], w);
  }

  for (std::size_t l = shape.depth; l-- > 0;) {
    const Matrix& pre = cache.pre_activations[l];
    const Matrix& input = cache.activations[l];
    const bool track_tasks = l >= shape.shared_layer;

    mask_relu(combined, pre);
    auto& layer_grad = result.total.trunk[l];
    layer_grad.weight = matmul_transpose_a(input, combined);
    layer_grad.bias = column_sums(combined);

    if (track_tasks) {
      for (std::size_t t = 0; t < num_tasks; ++t) {
        mask_relu(task_delta[t], pre);
        if (l == shape.shared_layer) {
          result.tasks.shared[t] = matmul_transpose_a(input, task_delta[t]);
        } else {
          task_delta[t] = matmul_transpose_b(task_delta[t], params.trunk[l].weight);
        }
      }
    }
    if (l > 0) combined = matmul_transpose_b(combined, params.trunk[l].weight);
  }
  return result;
}

ParameterSet task_gradient(const MlpModel& model, const BatchCache& cache,
                           std::span<const Matrix> residual_grads, std::size_t task) {
  if (task >= model.num_tasks()) throw std::out_of_range("task_gradient: task index");
  std::vector<double> one_hot(model.num_tasks(), 0.0);
  one_hot[task] = 1.0;
  return backward(model, cache, residual_grads, one_hot).total;
}

double shared_layer_grad_norm(const TaskGradients& grads, std::size_t task, double weight) {
  if (task >= grads.shared.size()) throw std::out_of_range("shared_layer_grad_norm: task index");
  if (weight < 0.0) throw std::invalid_argument("shared_layer_grad_norm: negative task weight");
  return weight * l2_norm(grads.shared[task]);
}

}  // namespace gradnorm
