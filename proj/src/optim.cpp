#include "fisheripm/optim.hpp"

#include <algorithm>
#include <cmath>

namespace fisheripm {

AdamState AdamState::make(std::size_t n, const AdamConfig& cfg) {
  AdamState s;
  s.cfg = cfg;
  s.m.assign(n, 0.0);
  s.u.assign(n, 0.0);
  return s;
}

void adam_step(AdamState& state, Vec& params, const Vec& grad, bool maximize) {
  if (params.size() != grad.size() || params.size() != state.m.size())
    throw std::invalid_argument("adam_step: shape mismatch");
  const AdamConfig& c = state.cfg;
  state.t += 1;
  const double corr1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.t));
  const double corr2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.t));
  const double sign = maximize ? 1.0 : -1.0;
  double max_ratio = state.max_step_ratio;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grad[i];
    if (!std::isfinite(g)) throw NonFiniteGradientError("adam_step: non-finite gradient");
    state.m[i] = c.beta1 * state.m[i] + (1.0 - c.beta1) * g;
    state.u[i] = c.beta2 * state.u[i] + (1.0 - c.beta2) * g * g;
    const double m_hat = state.m[i] / corr1;
    const double u_hat = state.u[i] / corr2;
    const double step = c.eta * m_hat / (std::sqrt(u_hat) + c.eps);
    params[i] += sign * step;
    max_ratio = std::max(max_ratio, std::abs(step) / c.eta);
  }
  state.max_step_ratio = max_ratio;
}

void lambda_step(AlmState& alm, double omega_hat) {
  if (!(omega_hat >= 0.0)) throw std::invalid_argument("lambda_step: omega_hat must be >= 0");
  alm.lambda -= alm.rho * (1.0 - omega_hat);
}

}  // namespace fisheripm
