#pragma once

#include <array>
#include <functional>
#include <stdexcept>
#include <vector>

#include "fisheripm/distributions.hpp"
#include "fisheripm/linalg.hpp"
#include "fisheripm/parallel.hpp"

namespace fisheripm {

// Exact reference computations on analytic densities: the chi-squared
// distance, its optimal critic, Pearson/Neyman divergences, the closed-form
// linear-critic distance, and the effective-dimension diagnostic.

struct NonConvergedError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct UnboundedIntegrandError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DegenerateDistanceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct SingularCovarianceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct QuadratureConfig {
  // Per-axis [lo, hi]; empty means the union of the two specs' support boxes.
  std::vector<std::array<double, 2>> bounds;
  // 0 means the per-dimension default: 2048 (d=1), 512 (d=2), 96 (d=3), 40 (d=4).
  int points_per_axis = 0;
  enum class Scheme { Trapezoid, GaussLegendre } scheme = Scheme::Trapezoid;
  int refinement_factor = 2;
  double converge_tol = 1e-3;

  void validate() const;
};

int default_points_per_axis(std::size_t d);

// Tensor-grid integral of fn over the box; blocked evaluation with a
// fixed-shape pairwise reduction, so the result is bit-identical for any
// thread count.
double integrate_box(const std::vector<std::array<double, 2>>& bounds, int points_per_axis,
                     QuadratureConfig::Scheme scheme,
                     const std::function<double(const double*)>& fn,
                     Exec exec = default_exec());

struct QuadratureResult {
  double value = 0.0;
  double error_estimate = 0.0;  // |refined - coarse| on the reported scale
  int points_per_axis = 0;      // resolution of the reported (refined) value
};

// sqrt of integral of (P-Q)^2 / ((P+Q)/2) over the truncated domain.
// Grid points where P+Q underflows below 1e-300 contribute zero.
QuadratureResult chi2_distance(const DistributionSpec& p, const DistributionSpec& q,
                               const QuadratureConfig& quad = {},
                               Exec exec = default_exec());

struct CriticValue {
  double value = 0.0;
  bool underflow = false;  // P(x)+Q(x) fell below the density floor
};

// (1/chi2) * (P(x)-Q(x)) / ((P(x)+Q(x))/2). Requires chi2 > tolerance.
CriticValue optimal_critic(const DistributionSpec& p, const DistributionSpec& q, double chi2,
                           const double* x, double degenerate_tol = 1e-12);

// integral of (P-Q)^2 / Q. Throws UnboundedIntegrandError when the integrand
// exceeds the overflow threshold anywhere on the grid.
QuadratureResult pearson_divergence(const DistributionSpec& p, const DistributionSpec& q,
                                    const QuadratureConfig& quad = {},
                                    Exec exec = default_exec());

// integral of (P-Q)^2 / P; identical to pearson_divergence with the roles of
// P and Q swapped in the denominator.
QuadratureResult neyman_divergence(const DistributionSpec& p, const DistributionSpec& q,
                                   const QuadratureConfig& quad = {},
                                   Exec exec = default_exec());

// Mean-difference / pooled-second-moment ratio of an arbitrary critic,
// evaluated by quadrature. feasibility is the pooled second moment itself.
struct CriticRatio {
  double ratio = 0.0;
  double mean_diff = 0.0;
  double feasibility = 0.0;
};
CriticRatio quadrature_fisher_ratio(const DistributionSpec& p, const DistributionSpec& q,
                                    const std::function<double(const double*)>& critic,
                                    const QuadratureConfig& quad = {},
                                    Exec exec = default_exec());

// Closed-form distance between whitened feature means: value is
// || Sigma^{-1/2} (muP - muQ) || with Sigma = (GramP + GramQ)/2 + gamma I,
// and v_star the maximizer normalized to v^T Sigma v = 1.
struct LinearFisherResult {
  double value = 0.0;
  Vec v_star;
};
LinearFisherResult linear_fisher_ipm(const Matrix& feat_p, const Matrix& feat_q, double gamma);

// sum_j s_j^2 / (s_j^2 + gamma); zero singular values contribute zero.
double effective_dimension(const Vec& singular_values, double gamma);

}  // namespace fisheripm
