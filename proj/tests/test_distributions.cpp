#include <doctest.h>
#include <omp.h>

#include <cmath>
#include <numbers>

#include "fisheripm/distributions.hpp"
#include "fisheripm/harness.hpp"
#include "fisheripm/oracle.hpp"

using namespace fisheripm;

namespace {

DistributionSpec std_gaussian_1d() { return Gaussian({0.0}, Matrix(1, 1, 1.0)); }

Matrix identity(std::size_t d) {
  Matrix m(d, d);
  for (std::size_t i = 0; i < d; ++i) m(i, i) = 1.0;
  return m;
}

}  // namespace

TEST_SUITE("distzoo") {
  TEST_CASE("construction rejects invalid specs") {
    CHECK_THROWS_AS(GaussianMixture({0.5, 0.6}, {Gaussian({0.0}, Matrix(1, 1, 1.0)),
                                                 Gaussian({1.0}, Matrix(1, 1, 1.0))}),
                    std::invalid_argument);
    Matrix not_spd(2, 2);
    not_spd(0, 0) = 1.0;
    not_spd(1, 1) = -1.0;
    CHECK_THROWS(Gaussian({0.0, 0.0}, not_spd));
    CHECK_THROWS_AS(UniformBox({0.0}, {0.0}), std::invalid_argument);
    CHECK_THROWS_AS(Ring(0, 1.0, 0.1), std::invalid_argument);
  }

  TEST_CASE("gaussian sample mean obeys the CLT bound") {
    const DistributionSpec g = std_gaussian_1d();
    const Matrix xs = sample(g, 100000, 123);
    double acc = 0.0;
    for (std::size_t r = 0; r < xs.rows; ++r) acc += xs(r, 0);
    CHECK(std::abs(acc / 100000.0) < 4.0 / std::sqrt(100000.0));
  }

  TEST_CASE("ring sample populates every mode") {
    const DistributionSpec ring = Ring(8, 2.0, 0.02);
    const Matrix xs = sample(ring, 8000, 99);
    // brute-force nearest-center assignment
    std::vector<int> counts(8, 0);
    for (std::size_t r = 0; r < xs.rows; ++r) {
      int best = 0;
      double best_d = 1e300;
      for (int j = 0; j < 8; ++j) {
        const double a = 2.0 * std::numbers::pi * j / 8;
        const double dx = xs(r, 0) - 2.0 * std::cos(a);
        const double dy = xs(r, 1) - 2.0 * std::sin(a);
        if (dx * dx + dy * dy < best_d) {
          best_d = dx * dx + dy * dy;
          best = j;
        }
      }
      counts[best]++;
    }
    for (int c : counts) CHECK(c > 0);
  }

  TEST_CASE("same spec and seed sample bit-identically, any thread count") {
    const DistributionSpec ring = Ring(5, 1.5, 0.3);
    const Matrix a = sample(ring, 10000, 7, Exec::Serial);
    const int saved = omp_get_max_threads();
    for (int threads : {1, 3}) {
      omp_set_num_threads(threads);
      const Matrix b = sample(ring, 10000, 7, Exec::OpenMP);
      CHECK(a.a == b.a);
    }
    omp_set_num_threads(saved);
  }

  TEST_CASE("densities match analytic values") {
    const DistributionSpec g = std_gaussian_1d();
    const double x0 = 0.0;
    CHECK(density(g, &x0) == doctest::Approx(1.0 / std::sqrt(2.0 * std::numbers::pi))
                                 .epsilon(1e-12));

    const DistributionSpec box = UniformBox({0.0}, {1.0});
    const double x2 = 2.0;
    CHECK(density(box, &x2) == 0.0);

    const DistributionSpec mix =
        GaussianMixture({0.5, 0.5}, {Gaussian({-1.0}, Matrix(1, 1, 1.0)),
                                     Gaussian({1.0}, Matrix(1, 1, 1.0))});
    const DistributionSpec one = Gaussian({1.0}, Matrix(1, 1, 1.0));
    CHECK(density(mix, &x0) == doctest::Approx(density(one, &x0)).epsilon(1e-12));
  }

  TEST_CASE("density integrates to one on a refining grid (d <= 2)") {
    const std::vector<DistributionSpec> specs = {
        std_gaussian_1d(),
        GaussianMixture({0.3, 0.7}, {Gaussian({-2.0}, Matrix(1, 1, 0.5)),
                                     Gaussian({1.0}, Matrix(1, 1, 2.0))}),
        Ring(6, 1.5, 0.25),
        UniformBox({-1.0, 0.0}, {1.0, 3.0}),
    };
    for (const auto& spec : specs) {
      Vec lo, hi;
      support_box(spec, lo, hi);
      std::vector<std::array<double, 2>> bounds;
      for (std::size_t i = 0; i < lo.size(); ++i) bounds.push_back({lo[i], hi[i]});
      const int n = lo.size() == 1 ? 2048 : 256;
      const auto eval = [&](int pts) {
        return integrate_box(bounds, pts, QuadratureConfig::Scheme::Trapezoid,
                             [&](const double* x) { return density(spec, x); });
      };
      const double coarse = eval(n);
      const double fine = eval(2 * n);
      CHECK(std::abs(fine - 1.0) < 1e-3);
      CHECK(std::abs(fine - 1.0) <= std::abs(coarse - 1.0) + 1e-9);
    }
  }

  TEST_CASE("density is finite and non-negative everywhere probed") {
    const std::vector<DistributionSpec> specs = {Ring(3, 1.0, 0.05),
                                                 UniformBox({0.0, 0.0}, {1.0, 1.0})};
    Rng rng(31);
    for (const auto& spec : specs)
      for (int i = 0; i < 1000; ++i) {
        const double x[2] = {rng.uniform(-50.0, 50.0), rng.uniform(-50.0, 50.0)};
        const double v = density(spec, x);
        REQUIRE(std::isfinite(v));
        REQUIRE(v >= 0.0);
      }
  }

  TEST_CASE("empirical moments converge at the Monte Carlo rate") {
    const DistributionSpec mix =
        GaussianMixture({0.5, 0.5}, {Gaussian({-1.0, 0.0}, identity(2)),
                                     Gaussian({1.0, 0.5}, identity(2))});
    const Vec mean = analytic_mean(mix);
    const std::vector<std::size_t> sizes = {1000, 10000, 100000};
    Vec errs;
    for (const std::size_t n : sizes) {
      double err = 0.0;
      const int reps = 8;
      for (int rep = 0; rep < reps; ++rep) {
        const Matrix xs = sample(mix, n, 1000 + rep);
        Vec m(2, 0.0);
        for (std::size_t r = 0; r < xs.rows; ++r)
          for (int j = 0; j < 2; ++j) m[j] += xs(r, j);
        double e = 0.0;
        for (int j = 0; j < 2; ++j) {
          const double diff = m[j] / static_cast<double>(n) - mean[j];
          e += diff * diff;
        }
        err += std::sqrt(e);
      }
      errs.push_back(err / reps);
    }
    const double slope = loglog_slope({1e3, 1e4, 1e5}, errs);
    CHECK(slope > -0.65);
    CHECK(slope < -0.35);
  }

  TEST_CASE("labeled sampling matches the class prior and marks labels") {
    const GaussianMixture c0({1.0}, {Gaussian({-2.0, 0.0}, identity(2))});
    const GaussianMixture c1({1.0}, {Gaussian({2.0, 0.0}, identity(2))});
    const LabeledMixture lm({c0, c1}, {0.25, 0.75});
    const LabeledSample ls = sample_labeled(lm, 40000, 5);
    std::size_t ones = 0;
    for (std::size_t i = 0; i < ls.labels.size(); ++i) {
      REQUIRE(ls.labels[i] >= 0);
      REQUIRE(ls.labels[i] < 2);
      if (ls.labels[i] == 1) ++ones;
      // label 1 sits on the right
      if (ls.labels[i] == 1) CHECK(ls.x(i, 0) > -2.0);
    }
    CHECK(std::abs(static_cast<double>(ones) / 40000.0 - 0.75) < 0.01);
  }

  TEST_CASE("json round trip preserves densities") {
    const std::vector<DistributionSpec> specs = {
        Gaussian({0.5, -0.25}, identity(2)),
        GaussianMixture({0.4, 0.6}, {Gaussian({-1.0}, Matrix(1, 1, 0.7)),
                                     Gaussian({2.0}, Matrix(1, 1, 1.3))}),
        Ring(4, 2.5, 0.2),
        UniformBox({-1.0}, {4.0}),
        LabeledMixture({GaussianMixture({1.0}, {Gaussian({0.0, 0.0}, identity(2))}),
                        GaussianMixture({1.0}, {Gaussian({3.0, 3.0}, identity(2))})},
                       {0.5, 0.5}),
    };
    Rng rng(77);
    for (const auto& spec : specs) {
      const DistributionSpec back = spec_from_json(spec_to_json(spec));
      REQUIRE(dim(back) == dim(spec));
      for (int i = 0; i < 200; ++i) {
        Vec x(dim(spec));
        for (auto& v : x) v = rng.uniform(-5.0, 5.0);
        CHECK(density(back, x) == density(spec, x));
      }
    }
  }
}
