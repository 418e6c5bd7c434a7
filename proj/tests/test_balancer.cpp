#include <doctest.h>

#include <cmath>
#include <numeric>

#include "gradnorm/balancer.hpp"
#include "gradnorm/rng.hpp"

using namespace gradnorm;

namespace {

double total(std::span<const double> xs) { return std::accumulate(xs.begin(), xs.end(), 0.0); }

void check_vec(const std::vector<double>& got, const std::vector<double>& want, double tol = 1e-12) {
  REQUIRE(got.size() == want.size());
  for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(tol));
}

}  // namespace

TEST_CASE("initial loss capture") {
  check_vec(capture_initial_losses(std::vector<double>{4.0, 400.0}), {4.0, 400.0});
  CHECK_THROWS_AS(capture_initial_losses(std::vector<double>{1.0, 0.0}), std::invalid_argument);
  CHECK_THROWS_AS(capture_initial_losses(std::vector<double>{-1.0}), std::invalid_argument);
  CHECK_THROWS_AS(capture_initial_losses(std::vector<double>{NAN}), std::invalid_argument);
  CHECK(theoretical_initial_loss(13) == doctest::Approx(2.5649).epsilon(1e-4));
  CHECK_THROWS_AS(theoretical_initial_loss(1), std::invalid_argument);

  GradNormBalancer b(3);
  b.use_theoretical_initial_losses(13);
  REQUIRE(b.state().initial_losses);
  for (double l : *b.state().initial_losses) CHECK(l == std::log(13.0));
}

TEST_CASE("loss ratios") {
  check_vec(loss_ratios(std::vector<double>{3.0, 7.0}, std::vector<double>{3.0, 7.0}), {1.0, 1.0});
  check_vec(loss_ratios(std::vector<double>{1.0}, std::vector<double>{2.0}), {0.5});
  check_vec(loss_ratios(std::vector<double>{2.0, 6.0}, std::vector<double>{4.0, 4.0}), {0.5, 1.5});
  CHECK_THROWS_AS(loss_ratios(std::vector<double>{1.0}, std::vector<double>{0.0}),
                  std::invalid_argument);
  CHECK_THROWS_AS(loss_ratios(std::vector<double>{1.0, 2.0}, std::vector<double>{1.0}),
                  std::invalid_argument);
}

TEST_CASE("relative rates") {
  check_vec(relative_rates(std::vector<double>{0.4, 0.4, 0.4}), {1.0, 1.0, 1.0});
  check_vec(relative_rates(std::vector<double>{0.5, 1.5}), {0.5, 1.5});
  CHECK_THROWS_AS(relative_rates(std::vector<double>{0.0, 0.0}), std::invalid_argument);
  CHECK_THROWS_AS(relative_rates(std::vector<double>{}), std::invalid_argument);

  Rng rng(17);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> ratios(1 + trial % 12);
    for (double& r : ratios) r = std::exp(rng.normal(0.0, 3.0));
    const auto r = relative_rates(ratios);
    CHECK(std::abs(total(r) / static_cast<double>(r.size()) - 1.0) < 1e-9);
  }
}

TEST_CASE("gradient-norm targets") {
  check_vec(gradnorm_targets(3.0, std::vector<double>{0.2, 1.8}, 0.0), {3.0, 3.0});
  check_vec(gradnorm_targets(3.0, std::vector<double>{1.0, 1.0}, 2.7), {3.0, 3.0});
  check_vec(gradnorm_targets(2.0, std::vector<double>{0.5, 2.0}, 1.0), {1.0, 4.0});
}

TEST_CASE("L_grad") {
  CHECK(gradnorm_loss(std::vector<double>{1.0, 2.0}, std::vector<double>{1.0, 2.0}) == 0.0);
  CHECK(gradnorm_loss(std::vector<double>{3.0, 1.0}, std::vector<double>{1.0, 1.0}) == 2.0);
  Rng rng(4);
  for (int i = 0; i < 100; ++i) {
    const std::vector<double> g{rng.normal(), rng.normal()};
    const std::vector<double> t{rng.normal(), rng.normal()};
    CHECK(gradnorm_loss(g, t) >= 0.0);
  }
}

TEST_CASE("weight gradient: kink, sign and scale") {
  const std::vector<double> g{2.0, 3.0};
  check_vec(gradnorm_weight_gradient(g, std::vector<double>{1.0, 1.0}, std::vector<double>{2.0, 3.0}),
            {0.0, 0.0});
  const auto above = gradnorm_weight_gradient(g, std::vector<double>{1.0, 1.0},
                                              std::vector<double>{1.0, 5.0});
  CHECK(above[0] == 2.0);
  CHECK(above[1] == -3.0);

  Rng rng(8);
  for (int i = 0; i < 50; ++i) {
    std::vector<double> norms{rng.uniform(0.1, 3), rng.uniform(0.1, 3), rng.uniform(0.1, 3)};
    std::vector<double> w{rng.uniform(0.1, 2), rng.uniform(0.1, 2), rng.uniform(0.1, 2)};
    std::vector<double> t{rng.uniform(0.1, 3), rng.uniform(0.1, 3), rng.uniform(0.1, 3)};
    const double c = rng.uniform(0.1, 10.0);
    const auto base = gradnorm_weight_gradient(norms, w, t);
    for (double& x : norms) x *= c;
    for (double& x : t) x *= c;
    const auto scaled = gradnorm_weight_gradient(norms, w, t);
    for (std::size_t k = 0; k < 3; ++k) CHECK(scaled[k] == doctest::Approx(c * base[k]));
  }
}

TEST_CASE("weight gradient agrees with numerical differentiation away from kinks") {
  Rng rng(99);
  int checked = 0;
  double worst = 0.0;
  while (checked < 100) {
    const std::size_t n = 2 + checked % 4;
    std::vector<double> g(n), w(n), t(n);
    for (std::size_t i = 0; i < n; ++i) {
      g[i] = rng.uniform(0.05, 5.0);
      w[i] = rng.uniform(0.05, 2.0);
      t[i] = rng.uniform(0.05, 5.0);
    }
    bool near_kink = false;
    for (std::size_t i = 0; i < n; ++i) near_kink = near_kink || std::abs(w[i] * g[i] - t[i]) <= 1e-3;
    if (near_kink) continue;
    const auto analytic = gradnorm_weight_gradient(g, w, t);
    for (std::size_t i = 0; i < n; ++i) {
      const double h = 1e-7;
      auto lg = [&](double wi) {
        std::vector<double> ww = w;
        ww[i] = wi;
        std::vector<double> G(n);
        for (std::size_t k = 0; k < n; ++k) G[k] = ww[k] * g[k];
        return gradnorm_loss(G, t);
      };
      const double numeric = (lg(w[i] + h) - lg(w[i] - h)) / (2 * h);
      worst = std::max(worst, std::abs(numeric - analytic[i]) / std::abs(analytic[i]));
    }
    ++checked;
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("renormalize") {
  check_vec(renormalize(std::vector<double>{0.5, 1.5}, 2), {0.5, 1.5});
  check_vec(renormalize(std::vector<double>{2.0, 2.0}, 2), {1.0, 1.0});
  check_vec(renormalize(std::vector<double>{1.0, 3.0}, 2), {0.5, 1.5});
  CHECK_THROWS_AS(renormalize(std::vector<double>{0.0, 0.0}, 2), std::invalid_argument);
  CHECK_THROWS_AS(renormalize(std::vector<double>{1.0}, 2), std::invalid_argument);

  SUBCASE("entries below the floor are pinned and the rest absorb the mass") {
    const auto w = renormalize(std::vector<double>{1e-9, 1.0, 1.0}, 3, 1e-4);
    CHECK(w[0] == 1e-4);
    CHECK(w[1] == doctest::Approx((3.0 - 1e-4) / 2.0));
    CHECK(total(w) == doctest::Approx(3.0).epsilon(1e-15));
  }
}

TEST_CASE("gradnorm step") {
  SUBCASE("identical tasks keep equal weights") {
    GradNormBalancer b(4);
    const std::vector<double> losses{2.0, 2.0, 2.0, 2.0};
    const std::vector<double> norms{0.7, 0.7, 0.7, 0.7};
    for (int i = 0; i < 100; ++i) b.step(losses, norms);
    for (double w : b.weights()) CHECK(w == 1.0);
  }
  SUBCASE("the task with the larger gradient loses weight") {
    GradNormBalancer b(2);
    b.set_initial_losses(std::vector<double>{1.0, 100.0});
    const auto s = b.step(std::vector<double>{0.5, 50.0}, std::vector<double>{0.1, 10.0});
    CHECK(b.weights()[0] > 1.0);
    CHECK(b.weights()[1] < 1.0);
    CHECK(s.lgrad == doctest::Approx(9.9));
  }
  SUBCASE("weights stay on the simplex above the floor") {
    Rng rng(31);
    GradNormBalancer b(5, GradNormOptions{.alpha = 1.5});
    std::vector<double> losses(5), norms(5);
    for (int step = 0; step < 2000; ++step) {
      for (std::size_t i = 0; i < 5; ++i) {
        losses[i] = std::exp(rng.normal(0.0, 2.0));
        norms[i] = std::exp(rng.normal(0.0, 3.0));
      }
      b.step(losses, norms);
      CHECK(std::abs(total(b.weights()) - 5.0) < 1e-9);
      for (double w : b.weights()) CHECK(w >= 1e-4);
    }
  }
  SUBCASE("L(0) is captured on the first step when unset") {
    GradNormBalancer b(2);
    b.step(std::vector<double>{3.0, 4.0}, std::vector<double>{1.0, 1.0});
    REQUIRE(b.state().initial_losses);
    check_vec(*b.state().initial_losses, {3.0, 4.0});
  }
  SUBCASE("dominant weights are flagged") {
    GradNormBalancer b(2, GradNormOptions{.optimizer = {.learning_rate = 0.5}});
    bool flagged = false;
    for (int i = 0; i < 100 && !flagged; ++i) {
      flagged = b.step(std::vector<double>{1.0, 1.0}, std::vector<double>{0.001, 100.0})
                    .dominant_weight;
    }
    CHECK(flagged);
  }
  SUBCASE("resetting optimizer state") {
    GradNormBalancer b(2, GradNormOptions{.persistent_optimizer_state = false});
    b.step(std::vector<double>{1.0, 1.0}, std::vector<double>{1.0, 2.0});
    CHECK(b.optimizer().step_count() == 1);
    b.step(std::vector<double>{1.0, 1.0}, std::vector<double>{1.0, 2.0});
    CHECK(b.optimizer().step_count() == 1);
  }
  SUBCASE("invalid construction and inputs") {
    CHECK_THROWS_AS(GradNormBalancer(0), std::invalid_argument);
    CHECK_THROWS_AS(GradNormBalancer(2, GradNormOptions{.alpha = -1.0}), std::invalid_argument);
    CHECK_THROWS_AS(GradNormBalancer(2, GradNormOptions{.weight_floor = 0.0}),
                    std::invalid_argument);
    GradNormBalancer b(2);
    CHECK_THROWS_AS(b.step(std::vector<double>{1.0}, std::vector<double>{1.0, 1.0}),
                    std::invalid_argument);
    CHECK_THROWS_AS(b.set_initial_losses(std::vector<double>{1.0, 0.0}), std::invalid_argument);
  }
}

TEST_CASE("uncertainty weighting") {
  SUBCASE("starts at unit weights") {
    UncertaintyWeighting u(3);
    for (double w : u.weights()) CHECK(w == 1.0);
    CHECK_FALSE(u.renormalizes());
  }
  SUBCASE("the gradient vanishes exactly where exp(-s) = 1/L") {
    const std::vector<double> losses{0.25, 4.0, 17.0};
    std::vector<double> s(3);
    for (std::size_t i = 0; i < 3; ++i) s[i] = std::log(losses[i]);
    for (double g : uncertainty_gradient(s, losses)) CHECK(std::abs(g) < 1e-12);
  }
  SUBCASE("iterating on fixed losses converges to 1/L") {
    UncertaintyWeighting u(2);
    const std::vector<double> losses{0.5, 8.0};
    for (int i = 0; i < 5000; ++i) u.step(losses);
    CHECK(u.weights()[0] == doctest::Approx(2.0).epsilon(1e-3));
    CHECK(u.weights()[1] == doctest::Approx(0.125).epsilon(1e-3));
  }
  SUBCASE("gradient matches numerical differentiation") {
    Rng rng(6);
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<double> s{rng.normal(), rng.normal()};
      const std::vector<double> l{rng.uniform(0.1, 10.0), rng.uniform(0.1, 10.0)};
      const auto a = uncertainty_gradient(s, l);
      for (std::size_t i = 0; i < 2; ++i) {
        const double h = 1e-5;
        auto f = [&](double v) {
          auto ss = s;
          ss[i] = v;
          return uncertainty_objective(ss, l);
        };
        const double numeric = (f(s[i] + h) - f(s[i] - h)) / (2 * h);
        CHECK(std::abs(numeric - a[i]) / std::max(std::abs(a[i]), 1e-3) < 1e-6);
      }
    }
  }
  SUBCASE("objective hand value") {
    // exp(-0)*2 + 0 + exp(-log 3)*3 + log 3
    CHECK(uncertainty_objective(std::vector<double>{0.0, std::log(3.0)},
                                std::vector<double>{2.0, 3.0}) ==
          doctest::Approx(3.0 + std::log(3.0)));
  }
}

TEST_CASE("equal and static weights") {
  check_vec(equal_weights(3), {1.0, 1.0, 1.0});
  EqualWeighting e(3);
  for (int i = 0; i < 10; ++i) e.update(std::vector<double>{1, 2, 3}, std::vector<double>{1, 1, 1});
  check_vec({e.weights().begin(), e.weights().end()}, {1.0, 1.0, 1.0});

  StaticWeighting ones(std::vector<double>{1.0, 1.0, 1.0});
  check_vec({ones.weights().begin(), ones.weights().end()}, {1.0, 1.0, 1.0});

  StaticWeighting s(std::vector<double>{2.0, 1.0});
  check_vec({s.weights().begin(), s.weights().end()}, {4.0 / 3.0, 2.0 / 3.0});
  s.update(std::vector<double>{5.0, 1.0}, std::vector<double>{1.0, 9.0});
  check_vec({s.weights().begin(), s.weights().end()}, {4.0 / 3.0, 2.0 / 3.0});
  CHECK_THROWS_AS(StaticWeighting(std::vector<double>{1.0, 0.0}), std::invalid_argument);
  CHECK_THROWS_AS(StaticWeighting(std::vector<double>{}), std::invalid_argument);
  CHECK(to_string(StrategyKind::fixed) == "static");
}

TEST_CASE("rate snapshot") {
  const auto s = compute_rate_snapshot(std::vector<double>{2.0, 6.0}, std::vector<double>{4.0, 4.0},
                                       std::vector<double>{1.0, 3.0}, std::vector<double>{1.0, 1.0},
                                       1.0);
  check_vec(s.loss_ratios, {0.5, 1.5});
  check_vec(s.relative_rates, {0.5, 1.5});
  check_vec(s.grad_norms, {1.0, 3.0});
  CHECK(s.mean_grad_norm == 2.0);
  check_vec(s.targets, {1.0, 3.0});
  CHECK(s.lgrad == 0.0);
}
