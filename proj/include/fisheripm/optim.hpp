#pragma once

#include <stdexcept>

#include "fisheripm/linalg.hpp"

namespace fisheripm {

struct NonFiniteGradientError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct AdamConfig {
  double eta = 1e-3;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam over a flat parameter vector. One owner per state;
// `maximize` flips the step direction (the critic ascends its objective).
struct AdamState {
  AdamConfig cfg;
  Vec m, u;
  long t = 0;
  double max_step_ratio = 0.0;  // running max of |step| / eta, a divergence canary

  static AdamState make(std::size_t n, const AdamConfig& cfg);
};

void adam_step(AdamState& state, Vec& params, const Vec& grad, bool maximize);

// Lagrange multiplier and quadratic penalty weight of the augmented
// Lagrangian; rho is fixed for a run and doubles as the multiplier's SGD
// learning rate.
struct AlmState {
  double lambda = 0.0;
  double rho = 1e-2;
};

// lambda' = lambda - rho * (1 - omega_hat): the multiplier rises exactly when
// the pooled second moment exceeds its target of one.
void lambda_step(AlmState& alm, double omega_hat);

}  // namespace fisheripm
