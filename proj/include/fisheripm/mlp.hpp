#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

#include "fisheripm/linalg.hpp"
#include "fisheripm/parallel.hpp"

namespace fisheripm {

// Fixed-topology feed-forward stack with hand-derived reverse mode.
// Covers the three roles in this project: scalar critic (last linear layer
// doubling as the direction v over features Phi), the K+1 critic head, and
// the generator. All math is in 64-bit floats.

struct NonFiniteLossError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ShapeMismatchError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class OutputActivation { Linear, Tanh };

struct MlpSpec {
  std::vector<int> layer_sizes;  // input, hidden..., output
  double leaky_slope = 0.2;
  OutputActivation output_activation = OutputActivation::Linear;
  bool output_bias = true;

  int input_dim() const { return layer_sizes.front(); }
  int output_dim() const { return layer_sizes.back(); }
  // Width of the penultimate activation, i.e. the feature map Phi.
  int feature_dim() const { return layer_sizes[layer_sizes.size() - 2]; }
  int num_layers() const { return static_cast<int>(layer_sizes.size()) - 1; }

  void validate() const;
};

// Flat parameter vector with layout metadata. Slices per layer are the
// weight matrix (out x in, row-major) followed by the bias. An optional
// classifier block S (klass_count x feature_dim) sits at the end.
// Partitions: omega = everything before the last layer, v = the last layer,
// S = the classifier block.
struct Params {
  MlpSpec spec;
  int klass_count = 0;
  Vec x;

  std::vector<int> w_off, b_off;  // b_off[l] < 0 when the layer has no bias
  int s_off = -1;
  int omega_size = 0;  // v partition is [omega_size, v_end)
  int v_end = 0;

  int size() const { return static_cast<int>(x.size()); }
  double* w(int l) { return x.data() + w_off[l]; }
  const double* w(int l) const { return x.data() + w_off[l]; }
  double* b(int l) { return b_off[l] >= 0 ? x.data() + b_off[l] : nullptr; }
  const double* b(int l) const { return b_off[l] >= 0 ? x.data() + b_off[l] : nullptr; }
  double* s() { return s_off >= 0 ? x.data() + s_off : nullptr; }
  const double* s() const { return s_off >= 0 ? x.data() + s_off : nullptr; }
};

// Layout without values; used to size gradients and optimizer state.
Params make_params(const MlpSpec& spec, int klass_count = 0);

// Weights ~ N(0, stdev^2) from the seeded stream, biases exactly zero.
Params init_params(const MlpSpec& spec, uint64_t seed, double stdev, int klass_count = 0);

using Gradient = Vec;  // congruent with Params::x

struct ForwardTrace {
  Matrix input;
  std::vector<Matrix> h;     // post-activation per layer; back() is the output
  std::vector<Matrix> mask;  // activation derivative at the preactivation, per layer
  const Matrix& output() const { return h.back(); }
  // Phi features: activation feeding the last layer.
  const Matrix& features() const { return h[h.size() - 2]; }
};

Matrix forward(const Params& p, const Matrix& x, Exec exec = default_exec());
ForwardTrace forward_trace(const Params& p, const Matrix& x, Exec exec = default_exec());

// Accumulates dLoss/dparams into grad (must be sized and initialized by the
// caller) and optionally writes dLoss/dinput. Deterministic for any thread
// count: per-block partial gradients merge through a fixed pairwise tree.
void backward(const Params& p, const ForwardTrace& t, const Matrix& d_out, Gradient* grad,
              Matrix* d_input = nullptr, Exec exec = default_exec());

// Same, but the upstream gradient enters at the feature map Phi instead of
// the output; layers above the features are untouched.
void backward_from_features(const Params& p, const ForwardTrace& t, const Matrix& d_features,
                            Gradient* grad, Matrix* d_input = nullptr,
                            Exec exec = default_exec());

// Per-row gradient of a scalar-output critic with respect to its input.
Matrix grad_input(const Params& p, const Matrix& x, Exec exec = default_exec());

// Loss closure interface: fills dLoss/dY and returns the loss.
using LossFn = std::function<double(const Matrix& y, Matrix& d_y)>;

// Scalar-loss reverse-mode gradient; throws NonFiniteLossError when the
// forward pass or loss is not finite.
Gradient grad_params(const Params& p, const Matrix& x, const LossFn& loss,
                     Exec exec = default_exec());

// K+1 critic: f(x) = sum_y p(y|x) <S_y, Phi(x)> - <v, Phi(x)> with
// p(y|x) = softmax(S Phi(x)).
struct KPlusOneEval {
  Vec f;
  Matrix p;       // n x K softmax probabilities
  Matrix logits;  // n x K
};
KPlusOneEval kplus1_forward(const Params& p, const ForwardTrace& t);
// Accumulates d(sum_i df_i * f_i)/dparams given df, including the path
// through S, v and down the Phi layers; optionally also d/dinput.
void kplus1_backward(const Params& p, const ForwardTrace& t, const KPlusOneEval& eval,
                     const Vec& df, Gradient* grad, Matrix* d_input = nullptr,
                     Exec exec = default_exec());

// Gradient of mean_i (||grad_x f(x_i)|| - 1)^2 over a batch of interpolates,
// accumulated into grad. Scalar-output LeakyReLU critics only; activation
// masks are treated as locally constant.
void gradient_penalty_grad(const Params& p, const Matrix& x, double weight, Gradient* grad,
                           Exec exec = default_exec());
// The penalty value itself (for logging/tests).
double gradient_penalty_value(const Params& p, const Matrix& x, Exec exec = default_exec());

bool all_finite(const Vec& v);
bool all_finite(const Matrix& m);

}  // namespace fisheripm
