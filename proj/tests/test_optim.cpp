#include <doctest.h>

#include <cmath>

#include "fisheripm/optim.hpp"
#include "fisheripm/rng.hpp"

using namespace fisheripm;

TEST_SUITE("optim") {
  TEST_CASE("first adam step has magnitude eta") {
    AdamState st = AdamState::make(1, AdamConfig{1e-3, 0.5, 0.999, 1e-8});
    Vec p{0.0};
    adam_step(st, p, {0.37}, false);
    CHECK(std::abs(std::abs(p[0]) - 1e-3) < 1e-6 * 1e-3);
    CHECK(p[0] < 0.0);  // descent moves against the gradient
  }

  TEST_CASE("maximize flips the step direction") {
    AdamState st = AdamState::make(1, AdamConfig{});
    Vec p{0.0};
    adam_step(st, p, {1.0}, true);
    CHECK(p[0] > 0.0);
  }

  TEST_CASE("zero gradients leave parameters untouched forever") {
    AdamState st = AdamState::make(3, AdamConfig{});
    Vec p{1.0, -2.0, 0.5};
    const Vec orig = p;
    for (int i = 0; i < 100; ++i) adam_step(st, p, {0.0, 0.0, 0.0}, false);
    CHECK(p == orig);
  }

  TEST_CASE("identical inputs give bit-identical trajectories") {
    Rng rng(5);
    std::vector<Vec> grads;
    for (int i = 0; i < 50; ++i) {
      Vec g(4);
      for (auto& v : g) v = rng.normal();
      grads.push_back(g);
    }
    const auto run = [&] {
      AdamState st = AdamState::make(4, AdamConfig{});
      Vec p(4, 0.1);
      for (const auto& g : grads) adam_step(st, p, g, true);
      return p;
    };
    CHECK(run() == run());
  }

  TEST_CASE("non-finite gradients are rejected") {
    AdamState st = AdamState::make(1, AdamConfig{});
    Vec p{0.0};
    CHECK_THROWS_AS(adam_step(st, p, {std::numeric_limits<double>::infinity()}, false),
                    NonFiniteGradientError);
  }

  TEST_CASE("step magnitude stays within the sanity bound") {
    AdamState st = AdamState::make(2, AdamConfig{1e-3, 0.5, 0.999, 1e-8});
    Vec p(2, 0.0);
    Rng rng(6);
    for (int i = 0; i < 2000; ++i) {
      Vec g{rng.normal() * std::pow(10.0, rng.uniform(-3.0, 3.0)), rng.normal()};
      adam_step(st, p, g, false);
    }
    CHECK(st.max_step_ratio <= 10.0);
  }

  TEST_CASE("lambda update follows the multiplier rule") {
    AlmState alm{0.0, 0.1};
    lambda_step(alm, 1.0);
    CHECK(alm.lambda == 0.0);
    lambda_step(alm, 1.5);
    CHECK(alm.lambda == doctest::Approx(0.05).epsilon(1e-15));
  }

  TEST_CASE("lambda rises exactly when the constraint is exceeded") {
    Rng rng(7);
    for (int i = 0; i < 200; ++i) {
      const double om = rng.uniform(0.0, 2.0);
      AlmState alm{rng.uniform(-1.0, 1.0), rng.uniform(0.01, 1.0)};
      const double before = alm.lambda;
      lambda_step(alm, om);
      if (om > 1.0) CHECK(alm.lambda > before);
      if (om < 1.0) CHECK(alm.lambda < before);
    }
  }

  TEST_CASE("lambda falls monotonically while the moment stays under target") {
    AlmState alm{0.0, 0.05};
    double prev = alm.lambda;
    for (int i = 0; i < 50; ++i) {
      lambda_step(alm, 0.4);
      CHECK(alm.lambda < prev);
      prev = alm.lambda;
    }
  }

  TEST_CASE("negative moment is rejected") {
    AlmState alm{0.0, 0.1};
    CHECK_THROWS_AS(lambda_step(alm, -0.1), std::invalid_argument);
  }
}
