#include "fisheripm/oracle.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>

namespace fisheripm {

namespace {

constexpr double kDensityFloor = 1e-300;
constexpr double kOverflowThreshold = 1e250;

// 8-point Gauss-Legendre nodes/weights on [-1, 1].
constexpr std::array<double, 8> kGlNodes = {
    -0.9602898564975362, -0.7966664774136267, -0.5255324099163290, -0.1834346424956498,
    0.1834346424956498,  0.5255324099163290,  0.7966664774136267,  0.9602898564975362};
constexpr std::array<double, 8> kGlWeights = {
    0.1012285362903763, 0.2223810344533745, 0.3137066458778873, 0.3626837833783620,
    0.3626837833783620, 0.3137066458778873, 0.2223810344533745, 0.1012285362903763};

struct Axis {
  Vec nodes;
  Vec weights;
};

Axis build_axis(double lo, double hi, int n, QuadratureConfig::Scheme scheme) {
  Axis ax;
  if (scheme == QuadratureConfig::Scheme::Trapezoid) {
    const double h = (hi - lo) / (n - 1);
    ax.nodes.resize(n);
    ax.weights.resize(n, h);
    for (int i = 0; i < n; ++i) ax.nodes[i] = lo + h * i;
    ax.weights.front() = 0.5 * h;
    ax.weights.back() = 0.5 * h;
  } else {
    const int panels = (n + 7) / 8;
    const double w = (hi - lo) / panels;
    ax.nodes.reserve(panels * 8);
    ax.weights.reserve(panels * 8);
    for (int p = 0; p < panels; ++p) {
      const double c = lo + (p + 0.5) * w;
      for (int g = 0; g < 8; ++g) {
        ax.nodes.push_back(c + 0.5 * w * kGlNodes[g]);
        ax.weights.push_back(0.5 * w * kGlWeights[g]);
      }
    }
  }
  return ax;
}

std::vector<std::array<double, 2>> resolve_bounds(const DistributionSpec& p,
                                                  const DistributionSpec& q,
                                                  const QuadratureConfig& quad) {
  if (!quad.bounds.empty()) return quad.bounds;
  Vec lo_p, hi_p, lo_q, hi_q;
  support_box(p, lo_p, hi_p);
  support_box(q, lo_q, hi_q);
  std::vector<std::array<double, 2>> bounds(lo_p.size());
  for (std::size_t i = 0; i < bounds.size(); ++i)
    bounds[i] = {std::min(lo_p[i], lo_q[i]), std::max(hi_p[i], hi_q[i])};
  return bounds;
}

int resolve_points(const QuadratureConfig& quad, std::size_t d) {
  return quad.points_per_axis > 0 ? quad.points_per_axis : default_points_per_axis(d);
}

// Integrates an integrand of the two densities at two resolutions and reports
// the refined value with the refinement gap, mapped through `report`.
QuadratureResult refine_integral(const DistributionSpec& p, const DistributionSpec& q,
                                 const QuadratureConfig& quad, Exec exec,
                                 const std::function<double(double, double)>& integrand,
                                 const std::function<double(double)>& report) {
  quad.validate();
  const std::size_t d = dim(p);
  if (dim(q) != d) throw std::invalid_argument("quadrature: dimension mismatch");
  if (d > 4) throw std::invalid_argument("quadrature: only d <= 4 supported");
  const auto bounds = resolve_bounds(p, q, quad);
  if (bounds.size() != d)
    throw std::invalid_argument("quadrature: bounds dimension mismatch");
  const int n0 = resolve_points(quad, d);

  const auto fn = [&](const double* x) {
    return integrand(density(p, x), density(q, x));
  };
  const double coarse = report(integrate_box(bounds, n0, quad.scheme, fn, exec));
  const double fine =
      report(integrate_box(bounds, n0 * quad.refinement_factor, quad.scheme, fn, exec));

  QuadratureResult res;
  res.value = fine;
  res.error_estimate = std::abs(fine - coarse);
  res.points_per_axis = n0 * quad.refinement_factor;
  if (res.error_estimate > quad.converge_tol)
    throw NonConvergedError("quadrature did not converge: refinement gap " +
                            std::to_string(res.error_estimate));
  return res;
}

}  // namespace

void QuadratureConfig::validate() const {
  for (const auto& b : bounds)
    if (!(b[0] < b[1])) throw std::invalid_argument("QuadratureConfig: lo must be < hi");
  if (points_per_axis != 0 && points_per_axis < 16)
    throw std::invalid_argument("QuadratureConfig: points_per_axis must be >= 16");
  if (refinement_factor < 2)
    throw std::invalid_argument("QuadratureConfig: refinement_factor must be >= 2");
}

int default_points_per_axis(std::size_t d) {
  switch (d) {
    case 1: return 2048;
    case 2: return 512;
    case 3: return 96;
    default: return 40;
  }
}

double integrate_box(const std::vector<std::array<double, 2>>& bounds, int points_per_axis,
                     QuadratureConfig::Scheme scheme,
                     const std::function<double(const double*)>& fn, Exec exec) {
  const std::size_t d = bounds.size();
  std::vector<Axis> axes;
  axes.reserve(d);
  std::size_t total = 1;
  for (const auto& b : bounds) {
    axes.push_back(build_axis(b[0], b[1], points_per_axis, scheme));
    total *= axes.back().nodes.size();
  }
  return par::map_sum(total, exec, [&](std::size_t k) {
    double x[4];
    double w = 1.0;
    std::size_t rem = k;
    for (std::size_t ax = d; ax-- > 0;) {
      const std::size_t n = axes[ax].nodes.size();
      const std::size_t i = rem % n;
      rem /= n;
      x[ax] = axes[ax].nodes[i];
      w *= axes[ax].weights[i];
    }
    return w * fn(x);
  });
}

QuadratureResult chi2_distance(const DistributionSpec& p, const DistributionSpec& q,
                               const QuadratureConfig& quad, Exec exec) {
  return refine_integral(
      p, q, quad, exec,
      [](double fp, double fq) {
        const double pooled = 0.5 * (fp + fq);
        if (fp + fq < kDensityFloor) return 0.0;
        const double diff = fp - fq;
        return diff * diff / pooled;
      },
      [](double integral) { return std::sqrt(std::max(integral, 0.0)); });
}

CriticValue optimal_critic(const DistributionSpec& p, const DistributionSpec& q, double chi2,
                           const double* x, double degenerate_tol) {
  if (!(chi2 > degenerate_tol))
    throw DegenerateDistanceError("optimal_critic: chi2 distance is degenerate (P = Q?)");
  const double fp = density(p, x);
  const double fq = density(q, x);
  if (fp + fq < kDensityFloor) return {0.0, true};
  return {(fp - fq) / (0.5 * (fp + fq)) / chi2, false};
}

QuadratureResult pearson_divergence(const DistributionSpec& p, const DistributionSpec& q,
                                    const QuadratureConfig& quad, Exec exec) {
  // Exceptions cannot cross the parallel region, so unbounded grid points set
  // a flag that is checked after each integration pass.
  std::atomic<bool> unbounded{false};
  QuadratureResult res = refine_integral(
      p, q, quad, exec,
      [&unbounded](double fp, double fq) {
        const double diff = fp - fq;
        const double num = diff * diff;
        if (num == 0.0) return 0.0;
        if (fq < kDensityFloor || num / fq > kOverflowThreshold) {
          unbounded.store(true, std::memory_order_relaxed);
          return 0.0;
        }
        return num / fq;
      },
      [&unbounded](double integral) {
        if (unbounded.load(std::memory_order_relaxed))
          throw UnboundedIntegrandError("pearson_divergence: integrand unbounded on grid");
        return integral;
      });
  return res;
}

QuadratureResult neyman_divergence(const DistributionSpec& p, const DistributionSpec& q,
                                   const QuadratureConfig& quad, Exec exec) {
  return pearson_divergence(q, p, quad, exec);
}

CriticRatio quadrature_fisher_ratio(const DistributionSpec& p, const DistributionSpec& q,
                                    const std::function<double(const double*)>& critic,
                                    const QuadratureConfig& quad, Exec exec) {
  quad.validate();
  const std::size_t d = dim(p);
  const auto bounds = resolve_bounds(p, q, quad);
  const int n = resolve_points(quad, d) * quad.refinement_factor;
  const double mean_diff = integrate_box(
      bounds, n, quad.scheme,
      [&](const double* x) { return critic(x) * (density(p, x) - density(q, x)); }, exec);
  const double second = integrate_box(
      bounds, n, quad.scheme,
      [&](const double* x) {
        const double f = critic(x);
        return 0.5 * f * f * (density(p, x) + density(q, x));
      },
      exec);
  CriticRatio out;
  out.mean_diff = mean_diff;
  out.feasibility = second;
  out.ratio = second > 0.0 ? mean_diff / std::sqrt(second) : 0.0;
  return out;
}

LinearFisherResult linear_fisher_ipm(const Matrix& feat_p, const Matrix& feat_q, double gamma) {
  if (feat_p.cols != feat_q.cols || feat_p.rows == 0 || feat_q.rows == 0)
    throw std::invalid_argument("linear_fisher_ipm: bad feature matrices");
  if (gamma < 0.0) throw std::invalid_argument("linear_fisher_ipm: gamma must be >= 0");
  const std::size_t m = feat_p.cols;

  Vec mu_p(m, 0.0), mu_q(m, 0.0);
  Matrix sigma(m, m);
  const auto accumulate = [&](const Matrix& feat, Vec& mu, double half_inv_n) {
    for (std::size_t r = 0; r < feat.rows; ++r) {
      const double* row = feat.row(r);
      for (std::size_t i = 0; i < m; ++i) {
        mu[i] += row[i];
        for (std::size_t j = 0; j <= i; ++j) sigma(i, j) += half_inv_n * row[i] * row[j];
      }
    }
    for (std::size_t i = 0; i < m; ++i) mu[i] /= static_cast<double>(feat.rows);
  };
  accumulate(feat_p, mu_p, 0.5 / static_cast<double>(feat_p.rows));
  accumulate(feat_q, mu_q, 0.5 / static_cast<double>(feat_q.rows));
  for (std::size_t i = 0; i < m; ++i) {
    sigma(i, i) += gamma;
    for (std::size_t j = 0; j < i; ++j) sigma(j, i) = sigma(i, j);
  }

  Matrix chol;
  try {
    chol = linalg::cholesky(sigma);
  } catch (const SingularMatrixError&) {
    throw SingularCovarianceError("linear_fisher_ipm: pooled Gramian is singular");
  }

  Vec delta(m);
  for (std::size_t i = 0; i < m; ++i) delta[i] = mu_p[i] - mu_q[i];
  Vec w = linalg::chol_solve(chol, delta);  // Sigma^{-1} (muP - muQ)
  const double value_sq = linalg::dot(delta, w);
  LinearFisherResult res;
  res.value = std::sqrt(std::max(value_sq, 0.0));
  if (res.value > 0.0) {
    res.v_star = std::move(w);
    for (double& v : res.v_star) v /= res.value;
  } else {
    // Degenerate direction: any v with v^T Sigma v = 1 is maximizing.
    res.v_star.assign(m, 0.0);
    res.v_star[0] = 1.0 / std::sqrt(sigma(0, 0));
  }
  return res;
}

double effective_dimension(const Vec& singular_values, double gamma) {
  if (gamma < 0.0) throw std::invalid_argument("effective_dimension: gamma must be >= 0");
  double s = 0.0;
  for (double sv : singular_values) {
    if (sv < 0.0) throw std::invalid_argument("effective_dimension: negative singular value");
    const double sq = sv * sv;
    if (sq + gamma > 0.0) s += sq / (sq + gamma);
  }
  return s;
}

}  // namespace fisheripm
