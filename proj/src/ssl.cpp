#include "fisheripm/ssl.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "fisheripm/optim.hpp"

namespace fisheripm {

namespace {

// Row softmax log-probabilities with the max-shift trick.
void log_softmax_row(const double* logits, int k, double* out) {
  double mx = logits[0];
  for (int y = 1; y < k; ++y) mx = std::max(mx, logits[y]);
  double z = 0.0;
  for (int y = 0; y < k; ++y) z += std::exp(logits[y] - mx);
  const double log_z = mx + std::log(z);
  for (int y = 0; y < k; ++y) out[y] = logits[y] - log_z;
}

void check_labels(const std::vector<int>& labels, std::size_t n, int k) {
  if (labels.size() != n) throw ShapeMismatchError("ce: label count mismatch");
  for (int y : labels)
    if (y < 0 || y >= k) throw std::invalid_argument("ce: label out of range");
}

}  // namespace

void SslConfig::validate() const {
  if (k < 2) throw std::invalid_argument("SslConfig: k must be >= 2");
  if (lambda_d < 0.0 || lambda_g < 0.0)
    throw std::invalid_argument("SslConfig: CE weights must be >= 0");
  if (labeled_per_class < 1)
    throw std::invalid_argument("SslConfig: labeled_per_class must be >= 1");
}

double ce_loss(const Matrix& s, const Matrix& features, const std::vector<int>& labels) {
  const int k = static_cast<int>(s.rows);
  const int m = static_cast<int>(s.cols);
  if (features.cols != static_cast<std::size_t>(m))
    throw ShapeMismatchError("ce_loss: feature width mismatch");
  check_labels(labels, features.rows, k);
  Vec logits(k), logp(k);
  double acc = 0.0;
  for (std::size_t r = 0; r < features.rows; ++r) {
    const double* f = features.row(r);
    for (int y = 0; y < k; ++y) {
      double t = 0.0;
      const double* sy = s.row(y);
      for (int i = 0; i < m; ++i) t += sy[i] * f[i];
      logits[y] = t;
    }
    log_softmax_row(logits.data(), k, logp.data());
    acc -= logp[labels[r]];
  }
  return acc / static_cast<double>(features.rows);
}

double critic_loss_ssl(double l_f, double ce, double lambda_d) { return l_f - lambda_d * ce; }

double generator_loss_ssl(double e_hat, double ce_gen, double lambda_g) {
  return e_hat + lambda_g * ce_gen;
}

double ce_with_grad(const Params& p, const ForwardTrace& t, const std::vector<int>& labels,
                    double coeff, Gradient* grad, Matrix* d_input, Exec exec) {
  if (p.klass_count <= 0 || p.s_off < 0)
    throw ShapeMismatchError("ce_with_grad: params carry no classifier block");
  const Matrix& phi = t.features();
  const int k = p.klass_count;
  const int m = p.spec.feature_dim();
  check_labels(labels, phi.rows, k);
  const double* s = p.s();
  const double inv_n = 1.0 / static_cast<double>(phi.rows);

  Matrix d_phi(phi.rows, m);
  Vec logits(k), logp(k);
  double loss = 0.0;
  // dCE/dlogit = (softmax - onehot)/n; serial accumulation keeps the S-block
  // gradient deterministic (labeled batches are small).
  Vec g_s(static_cast<std::size_t>(k) * m, 0.0);
  for (std::size_t r = 0; r < phi.rows; ++r) {
    const double* f = phi.row(r);
    for (int y = 0; y < k; ++y) {
      double acc = 0.0;
      const double* sy = s + static_cast<std::size_t>(y) * m;
      for (int i = 0; i < m; ++i) acc += sy[i] * f[i];
      logits[y] = acc;
    }
    log_softmax_row(logits.data(), k, logp.data());
    loss -= logp[labels[r]];
    double* dp = d_phi.row(r);
    for (int i = 0; i < m; ++i) dp[i] = 0.0;
    for (int y = 0; y < k; ++y) {
      const double dt = coeff * inv_n * (std::exp(logp[y]) - (labels[r] == y ? 1.0 : 0.0));
      const double* sy = s + static_cast<std::size_t>(y) * m;
      double* gy = g_s.data() + static_cast<std::size_t>(y) * m;
      for (int i = 0; i < m; ++i) {
        gy[i] += dt * f[i];
        dp[i] += dt * sy[i];
      }
    }
  }
  if (grad)
    for (int i = 0; i < k * m; ++i) (*grad)[p.s_off + i] += g_s[i];
  backward_from_features(p, t, d_phi, grad, d_input, exec);
  return loss * inv_n;
}

Matrix conditional_forward(const Params& gen, const Matrix& z, const std::vector<int>& labels,
                           Exec exec) {
  const int k = gen.spec.input_dim() - static_cast<int>(z.cols);
  if (k < 1) throw ShapeMismatchError("conditional_forward: generator lacks label inputs");
  check_labels(labels, z.rows, k);
  Matrix input(z.rows, z.cols + k);
  for (std::size_t r = 0; r < z.rows; ++r) {
    double* dst = input.row(r);
    const double* src = z.row(r);
    for (std::size_t j = 0; j < z.cols; ++j) dst[j] = src[j];
    for (int j = 0; j < k; ++j) dst[z.cols + j] = 0.0;
    dst[z.cols + labels[r]] = 1.0;
  }
  return forward(gen, input, exec);
}

double classifier_accuracy(const Params& critic, const Matrix& x, const std::vector<int>& labels,
                           Exec exec) {
  if (critic.s_off < 0) throw ShapeMismatchError("classifier_accuracy: no classifier block");
  const ForwardTrace t = forward_trace(critic, x, exec);
  const Matrix& phi = t.features();
  const int k = critic.klass_count;
  const int m = critic.spec.feature_dim();
  const double* s = critic.s();
  std::size_t hits = 0;
  for (std::size_t r = 0; r < phi.rows; ++r) {
    const double* f = phi.row(r);
    int best = 0;
    double best_v = -std::numeric_limits<double>::infinity();
    for (int y = 0; y < k; ++y) {
      double t_y = 0.0;
      const double* sy = s + static_cast<std::size_t>(y) * m;
      for (int i = 0; i < m; ++i) t_y += sy[i] * f[i];
      if (t_y > best_v) {
        best_v = t_y;
        best = y;
      }
    }
    if (best == labels[r]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(x.rows);
}

void fit_classifier_head(Params& critic, const Matrix& x, const std::vector<int>& labels,
                         int iters, double eta, Exec exec) {
  if (critic.s_off < 0) throw ShapeMismatchError("fit_classifier_head: no classifier block");
  const ForwardTrace t = forward_trace(critic, x, exec);
  const int k = critic.klass_count;
  const int m = critic.spec.feature_dim();
  AdamState adam = AdamState::make(static_cast<std::size_t>(k) * m, AdamConfig{eta, 0.9, 0.999, 1e-8});
  Vec s_params(critic.x.begin() + critic.s_off, critic.x.begin() + critic.s_off + k * m);
  const Matrix& phi = t.features();
  Vec logits(k), logp(k);
  Vec grad(static_cast<std::size_t>(k) * m);
  const double inv_n = 1.0 / static_cast<double>(phi.rows);
  for (int it = 0; it < iters; ++it) {
    std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t r = 0; r < phi.rows; ++r) {
      const double* f = phi.row(r);
      for (int y = 0; y < k; ++y) {
        double acc = 0.0;
        for (int i = 0; i < m; ++i) acc += s_params[static_cast<std::size_t>(y) * m + i] * f[i];
        logits[y] = acc;
      }
      log_softmax_row(logits.data(), k, logp.data());
      for (int y = 0; y < k; ++y) {
        const double dt = inv_n * (std::exp(logp[y]) - (labels[r] == y ? 1.0 : 0.0));
        for (int i = 0; i < m; ++i) grad[static_cast<std::size_t>(y) * m + i] += dt * f[i];
      }
    }
    adam_step(adam, s_params, grad, /*maximize=*/false);
  }
  std::copy(s_params.begin(), s_params.end(), critic.x.begin() + critic.s_off);
}

}  // namespace fisheripm
