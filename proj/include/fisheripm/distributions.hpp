#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "fisheripm/linalg.hpp"
#include "fisheripm/parallel.hpp"

#include <json.hpp>

namespace fisheripm {

// Analytic synthetic distributions: exact density plus seeded sampling.
// Every oracle computation in the project is grounded on these.

struct Gaussian {
  Vec mean;
  Matrix cov;

  Gaussian(Vec mean_, Matrix cov_);

  std::size_t dim() const { return mean.size(); }
  double density(const double* x) const;
  double log_density(const double* x) const;

  const Matrix& chol() const { return chol_; }

 private:
  Matrix chol_;      // lower Cholesky factor of cov
  double log_norm_;  // -(d/2) log(2 pi) - (1/2) log det cov
};

struct GaussianMixture {
  Vec weights;  // simplex: nonnegative, sums to 1 within 1e-12
  std::vector<Gaussian> components;

  GaussianMixture(Vec weights_, std::vector<Gaussian> components_);

  std::size_t dim() const { return components.front().dim(); }
  double density(const double* x) const;
};

// k isotropic Gaussian modes, equally weighted, centered at angles 2*pi*j/k
// on the circle of the given radius. Always 2-D.
struct Ring {
  int k;
  double radius;
  double sigma;

  Ring(int k_, double radius_, double sigma_);
};

struct UniformBox {
  Vec lo, hi;  // lo < hi elementwise

  UniformBox(Vec lo_, Vec hi_);

  std::size_t dim() const { return lo.size(); }
  double density(const double* x) const;
  double volume() const;
};

// Class-conditional mixtures with a prior over labels 0..K-1.
struct LabeledMixture {
  std::vector<GaussianMixture> classes;
  Vec prior;  // simplex over classes

  LabeledMixture(std::vector<GaussianMixture> classes_, Vec prior_);

  std::size_t dim() const { return classes.front().dim(); }
  std::size_t num_classes() const { return classes.size(); }
};

using DistributionSpec =
    std::variant<Gaussian, GaussianMixture, Ring, UniformBox, LabeledMixture>;

std::size_t dim(const DistributionSpec& spec);

// Exact pointwise density. Ring and LabeledMixture evaluate through their
// mixture form (the LabeledMixture density is the label-marginal).
double density(const DistributionSpec& spec, const double* x);
double density(const DistributionSpec& spec, const Vec& x);

// n i.i.d. rows; identical (spec, n, seed) gives bit-identical output for any
// exec policy or thread count (fixed row blocks, split RNG streams).
Matrix sample(const DistributionSpec& spec, std::size_t n, uint64_t seed,
              Exec exec = default_exec());

// Joint (x, y) draws from a LabeledMixture.
struct LabeledSample {
  Matrix x;
  std::vector<int> labels;
};
LabeledSample sample_labeled(const LabeledMixture& spec, std::size_t n, uint64_t seed,
                             Exec exec = default_exec());

// Row-at-a-time sampler over a caller-supplied stream; the allocation-free
// path behind sample(), exposed for Monte Carlo loops.
class SpecSampler {
 public:
  explicit SpecSampler(const DistributionSpec& spec);
  void row(class Rng& rng, double* out) const;
  std::size_t dim() const { return dim_; }

 private:
  const DistributionSpec* spec_;
  std::unique_ptr<GaussianMixture> mix_;  // set for Ring/GaussianMixture
  std::size_t dim_;
};

Vec analytic_mean(const DistributionSpec& spec);
Matrix analytic_cov(const DistributionSpec& spec);

// Mixture representation of any spec made of Gaussian pieces (Gaussian,
// GaussianMixture, Ring, LabeledMixture marginal). Throws for UniformBox.
GaussianMixture as_mixture(const DistributionSpec& spec);

// The equal-weight pool (P + Q) / 2 as an explicit mixture spec.
GaussianMixture pooled_mixture(const DistributionSpec& p, const DistributionSpec& q);

// Per-axis box [lo, hi] that carries all but a negligible tail of the mass:
// union over Gaussian components of mean +/- 8 sigma, exact support for
// uniform boxes.
void support_box(const DistributionSpec& spec, Vec& lo, Vec& hi);

// JSON schema with a "variant" tag field; see docs/formats.md.
nlohmann::json spec_to_json(const DistributionSpec& spec);
DistributionSpec spec_from_json(const nlohmann::json& j);

}  // namespace fisheripm
