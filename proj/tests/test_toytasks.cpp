#include <doctest.h>

#include <cmath>

#include "gradnorm/network.hpp"
#include "gradnorm/toytasks.hpp"

using namespace gradnorm;

namespace {

TaskSetSpec two_task_spec(std::uint64_t seed = 1) {
  TaskSetSpec s;
  s.seed = seed;
  s.num_tasks = 2;
  s.sigmas = {1.0, 100.0};
  return s;
}

double sample_std(std::span<const double> xs) {
  double m = 0.0;
  for (double x : xs) m += x;
  m /= static_cast<double>(xs.size());
  double v = 0.0;
  for (double x : xs) v += (x - m) * (x - m);
  return std::sqrt(v / static_cast<double>(xs.size() - 1));
}

}  // namespace

TEST_CASE("two-task benchmark layout") {
  const ToyTaskSet ts = generate_taskset(two_task_spec());
  CHECK(ts.num_tasks() == 2);
  CHECK(ts.sigmas == std::vector<double>{1.0, 100.0});
  CHECK(ts.base.shape_string() == "100x250");
  REQUIRE(ts.epsilons.size() == 2);
  CHECK(ts.epsilons[0].shape_string() == "100x250");
  CHECK(sample_std(ts.base.data()) == doctest::Approx(10.0).epsilon(0.02));
  CHECK(sample_std(ts.epsilons[1].data()) == doctest::Approx(3.5).epsilon(0.02));
  CHECK(ts.task_maps[1] == ts.base + ts.epsilons[1]);
}

TEST_CASE("variance convention takes square roots of the spreads") {
  TaskSetSpec s = two_task_spec();
  s.convention = SpreadConvention::variance;
  const ToyTaskSet ts = generate_taskset(s);
  CHECK(sample_std(ts.base.data()) == doctest::Approx(std::sqrt(10.0)).epsilon(0.02));
  CHECK(sample_std(ts.epsilons[0].data()) == doctest::Approx(std::sqrt(3.5)).epsilon(0.02));
}

TEST_CASE("same seed gives identical task sets; different seeds differ") {
  const ToyTaskSet a = generate_taskset(two_task_spec(5));
  const ToyTaskSet b = generate_taskset(two_task_spec(5));
  const ToyTaskSet c = generate_taskset(two_task_spec(6));
  CHECK(a.base == b.base);
  CHECK(a.epsilons[1] == b.epsilons[1]);
  CHECK_FALSE(a.base == c.base);
}

TEST_CASE("ten tasks with sampled scales") {
  TaskSetSpec s;
  s.seed = 3;
  s.num_tasks = 10;
  const ToyTaskSet ts = generate_taskset(s);
  REQUIRE(ts.sigmas.size() == 10);
  for (double sigma : ts.sigmas) CHECK(sigma > 0.0);
  CHECK(generate_taskset(s).sigmas == ts.sigmas);

  Rng rng(12);
  const auto many = sample_sigmas(rng, 20000, 50.0);
  double ss = 0.0;
  for (double x : many) {
    CHECK(x > 0.0);
    ss += x * x;
  }
  // |N(0, 50)| has second moment 2500.
  CHECK(std::sqrt(ss / 20000.0) == doctest::Approx(50.0).epsilon(0.02));
}

TEST_CASE("invalid task set specifications") {
  TaskSetSpec s = two_task_spec();
  s.sigmas = {1.0};
  CHECK_THROWS_AS(generate_taskset(s), std::invalid_argument);
  s.sigmas = {1.0, -2.0};
  CHECK_THROWS_AS(generate_taskset(s), std::invalid_argument);
  s = two_task_spec();
  s.num_tasks = 0;
  s.sigmas.clear();
  CHECK_THROWS_AS(generate_taskset(s), std::invalid_argument);
  Rng rng(1);
  CHECK_THROWS_AS(sample_sigmas(rng, 3, 0.0), std::invalid_argument);
}

TEST_CASE("targets") {
  const ToyTaskSet ts = generate_taskset(two_task_spec());
  Rng rng(2);
  Matrix x = gaussian_fill(rng, 8, 250, 0.0, 1.0);
  for (std::size_t c = 0; c < 250; ++c) x(0, c) = 0.0;
  const auto y = compute_targets(ts, x);
  for (std::size_t t = 0; t < 2; ++t) {
    for (std::size_t c = 0; c < 100; ++c) CHECK(y[t](0, c) == 0.0);
    for (double v : y[t].data()) CHECK(std::abs(v) <= ts.sigmas[t]);
  }
  CHECK(compute_targets(ts, x)[1] == y[1]);
  CHECK_THROWS_AS(compute_targets(ts, Matrix(2, 10)), ShapeError);

  Rng batch_rng(3);
  const Batch b = sample_batch(ts, batch_rng, 5);
  CHECK(b.inputs.shape_string() == "5x250");
  CHECK(b.targets[0].shape_string() == "5x100");
  CHECK(compute_targets(ts, b.inputs)[0] == b.targets[0]);
  CHECK_THROWS_AS(sample_batch(ts, batch_rng, 0), std::invalid_argument);
}

TEST_CASE("tasks with equal scales and offsets have identical targets") {
  TaskSetSpec s = two_task_spec();
  s.sigmas = {4.0, 4.0};
  s.epsilon_spread = 0.0;
  const ToyTaskSet ts = generate_taskset(s);
  Rng rng(9);
  const Batch b = sample_batch(ts, rng, 10);
  CHECK(b.targets[0] == b.targets[1]);
}

TEST_CASE("scaling a task's sigma scales its targets and zero-predictor loss") {
  TaskSetSpec s = two_task_spec();
  const ToyTaskSet a = generate_taskset(s);
  s.sigmas = {3.0, 100.0};
  const ToyTaskSet b = generate_taskset(s);
  Rng rng(4);
  const Matrix x = gaussian_fill(rng, 6, 250, 0.0, 1.0);
  const auto ya = compute_targets(a, x);
  const auto yb = compute_targets(b, x);
  for (std::size_t i = 0; i < ya[0].data().size(); ++i) {
    CHECK(yb[0].data()[i] == doctest::Approx(3.0 * ya[0].data()[i]));
  }
  const Matrix zero(6, 100);
  CHECK(squared_loss(zero, yb[0]) == doctest::Approx(9.0 * squared_loss(zero, ya[0])));
}

TEST_CASE("expected initial loss ordering") {
  const ToyTaskSet ts = generate_taskset(two_task_spec());
  const auto order = expected_initial_loss_ordering(ts);
  CHECK(order.order == std::vector<std::size_t>{1, 0});
  CHECK_FALSE(order.has_tie);

  TaskSetSpec s = two_task_spec();
  s.sigmas = {2.0, 2.0};
  CHECK(expected_initial_loss_ordering(generate_taskset(s)).has_tie);
}

TEST_CASE("measured initial losses follow the sigma ordering") {
  TaskSetSpec s;
  s.seed = 8;
  s.num_tasks = 4;
  s.sigmas = {0.5, 30.0, 4.0, 120.0};
  const ToyTaskSet ts = generate_taskset(s);
  Rng init(1);
  const MlpModel model = init_model(init, ModelShape{.num_tasks = 4});
  Rng rng(2);
  const Batch b = sample_batch(ts, rng, 10000);
  const auto pred = forward(model, b.inputs).predictions;
  std::vector<double> losses;
  for (std::size_t t = 0; t < 4; ++t) losses.push_back(squared_loss(pred[t], b.targets[t]));
  const auto expected = expected_initial_loss_ordering(ts).order;
  for (std::size_t k = 1; k < expected.size(); ++k) {
    CHECK(losses[expected[k - 1]] > losses[expected[k]]);
  }
}
