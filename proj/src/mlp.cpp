#include "fisheripm/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "fisheripm/rng.hpp"

namespace fisheripm {

namespace {

void check(bool ok, const char* msg) {
  if (!ok) throw ShapeMismatchError(msg);
}

// z-row = h_prev-row * W^T + b for one layer, one batch row.
void layer_affine(const double* w, const double* b, const double* in, int n_in, double* out,
                  int n_out) {
  for (int u = 0; u < n_out; ++u) {
    const double* wr = w + static_cast<std::size_t>(u) * n_in;
    double s = b ? b[u] : 0.0;
    for (int i = 0; i < n_in; ++i) s += wr[i] * in[i];
    out[u] = s;
  }
}

}  // namespace

void MlpSpec::validate() const {
  if (layer_sizes.size() < 3)
    throw std::invalid_argument("MlpSpec: need at least one hidden layer");
  for (int s : layer_sizes)
    if (s < 1) throw std::invalid_argument("MlpSpec: layer sizes must be >= 1");
  if (!(leaky_slope > 0.0 && leaky_slope < 1.0))
    throw std::invalid_argument("MlpSpec: leaky slope must lie in (0, 1)");
}

Params make_params(const MlpSpec& spec, int klass_count) {
  spec.validate();
  Params p;
  p.spec = spec;
  p.klass_count = klass_count;
  const int layers = spec.num_layers();
  p.w_off.resize(layers);
  p.b_off.resize(layers);
  int off = 0;
  for (int l = 0; l < layers; ++l) {
    const int n_in = spec.layer_sizes[l];
    const int n_out = spec.layer_sizes[l + 1];
    p.w_off[l] = off;
    off += n_in * n_out;
    const bool has_bias = l + 1 < layers || spec.output_bias;
    p.b_off[l] = has_bias ? off : -1;
    if (has_bias) off += n_out;
    if (l + 1 == layers) p.omega_size = p.w_off[l];
  }
  p.v_end = off;
  if (klass_count > 0) {
    p.s_off = off;
    off += klass_count * spec.feature_dim();
  }
  p.x.assign(off, 0.0);
  return p;
}

Params init_params(const MlpSpec& spec, uint64_t seed, double stdev, int klass_count) {
  if (!(stdev > 0.0)) throw std::invalid_argument("init_params: stdev must be > 0");
  Params p = make_params(spec, klass_count);
  Rng rng = Rng(seed).split(0x6d6c70 /* stream tag */);
  for (int l = 0; l < spec.num_layers(); ++l) {
    const int count = spec.layer_sizes[l] * spec.layer_sizes[l + 1];
    double* w = p.w(l);
    for (int i = 0; i < count; ++i) w[i] = stdev * rng.normal();
  }
  if (p.s_off >= 0) {
    const int count = klass_count * spec.feature_dim();
    double* s = p.s();
    for (int i = 0; i < count; ++i) s[i] = stdev * rng.normal();
  }
  return p;
}

Matrix forward(const Params& p, const Matrix& x, Exec exec) {
  const MlpSpec& spec = p.spec;
  check(static_cast<int>(x.cols) == spec.input_dim(), "forward: input width mismatch");
  const int layers = spec.num_layers();
  const int out_dim = spec.output_dim();
  Matrix y(x.rows, out_dim);
  int max_w = 0;
  for (int s : spec.layer_sizes) max_w = std::max(max_w, s);

  par::for_blocks(x.rows, par::kRowBlock, exec, [&](std::size_t, std::size_t r0, std::size_t r1) {
    Vec buf_a(max_w), buf_b(max_w);
    for (std::size_t r = r0; r < r1; ++r) {
      const double* in = x.row(r);
      double* cur = buf_a.data();
      double* nxt = buf_b.data();
      int n_in = spec.input_dim();
      for (int i = 0; i < n_in; ++i) cur[i] = in[i];
      for (int l = 0; l < layers; ++l) {
        const int n_out = spec.layer_sizes[l + 1];
        layer_affine(p.w(l), p.b(l), cur, n_in, nxt, n_out);
        if (l + 1 < layers) {
          for (int u = 0; u < n_out; ++u)
            if (nxt[u] < 0.0) nxt[u] *= spec.leaky_slope;
        } else if (spec.output_activation == OutputActivation::Tanh) {
          for (int u = 0; u < n_out; ++u) nxt[u] = std::tanh(nxt[u]);
        }
        std::swap(cur, nxt);
        n_in = n_out;
      }
      double* out = y.row(r);
      for (int u = 0; u < out_dim; ++u) out[u] = cur[u];
    }
  });
  return y;
}

ForwardTrace forward_trace(const Params& p, const Matrix& x, Exec exec) {
  const MlpSpec& spec = p.spec;
  check(static_cast<int>(x.cols) == spec.input_dim(), "forward_trace: input width mismatch");
  const int layers = spec.num_layers();
  ForwardTrace t;
  t.input = x;
  t.h.resize(layers);
  t.mask.resize(layers);
  for (int l = 0; l < layers; ++l) {
    const int n_out = spec.layer_sizes[l + 1];
    t.h[l] = Matrix(x.rows, n_out);
    const bool hidden = l + 1 < layers;
    if (hidden || spec.output_activation == OutputActivation::Tanh)
      t.mask[l] = Matrix(x.rows, n_out);
  }

  par::for_blocks(x.rows, par::kRowBlock, exec, [&](std::size_t, std::size_t r0, std::size_t r1) {
    for (std::size_t r = r0; r < r1; ++r) {
      const double* in = t.input.row(r);
      for (int l = 0; l < layers; ++l) {
        const int n_in = spec.layer_sizes[l];
        const int n_out = spec.layer_sizes[l + 1];
        double* z = t.h[l].row(r);
        layer_affine(p.w(l), p.b(l), in, n_in, z, n_out);
        if (l + 1 < layers) {
          double* m = t.mask[l].row(r);
          for (int u = 0; u < n_out; ++u) {
            if (z[u] < 0.0) {
              z[u] *= spec.leaky_slope;
              m[u] = spec.leaky_slope;
            } else {
              m[u] = 1.0;
            }
          }
        } else if (spec.output_activation == OutputActivation::Tanh) {
          double* m = t.mask[l].row(r);
          for (int u = 0; u < n_out; ++u) {
            z[u] = std::tanh(z[u]);
            m[u] = 1.0 - z[u] * z[u];
          }
        }
        in = z;
      }
    }
  });
  return t;
}

namespace {

// Shared backward walk. d_top is the gradient at the post-activation of
// layer `top`; gradients accumulate into per-block partials merged through a
// fixed pairwise tree, so the result is identical for any thread count.
void backward_impl(const Params& p, const ForwardTrace& t, const Matrix& d_top, int top,
                   Gradient* grad, Matrix* d_input, Exec exec) {
  const MlpSpec& spec = p.spec;
  const std::size_t n = t.input.rows;
  check(d_top.rows == n, "backward: gradient row count mismatch");
  check(static_cast<int>(d_top.cols) == spec.layer_sizes[top + 1],
        "backward: gradient width mismatch");
  if (grad)
    check(grad->size() == p.x.size(), "backward: gradient buffer size mismatch");
  if (d_input) *d_input = Matrix(n, spec.input_dim());

  const std::size_t nb = par::block_count(n, par::kRowBlock);
  std::vector<Vec> partials;
  if (grad) partials.assign(nb, Vec(p.x.size(), 0.0));

  int max_w = 0;
  for (int s : spec.layer_sizes) max_w = std::max(max_w, s);

  par::for_blocks(n, par::kRowBlock, exec, [&](std::size_t b, std::size_t r0, std::size_t r1) {
    Vec delta(max_w), prev(max_w);
    Vec* part = grad ? &partials[b] : nullptr;
    for (std::size_t r = r0; r < r1; ++r) {
      const int top_w = spec.layer_sizes[top + 1];
      const double* d = d_top.row(r);
      if (!t.mask[top].empty()) {
        const double* m = t.mask[top].row(r);
        for (int u = 0; u < top_w; ++u) delta[u] = d[u] * m[u];
      } else {
        for (int u = 0; u < top_w; ++u) delta[u] = d[u];
      }
      for (int l = top; l >= 0; --l) {
        const int n_in = spec.layer_sizes[l];
        const int n_out = spec.layer_sizes[l + 1];
        const double* h_prev = l > 0 ? t.h[l - 1].row(r) : t.input.row(r);
        if (part) {
          double* gw = part->data() + p.w_off[l];
          for (int u = 0; u < n_out; ++u) {
            const double du = delta[u];
            double* gwr = gw + static_cast<std::size_t>(u) * n_in;
            for (int i = 0; i < n_in; ++i) gwr[i] += du * h_prev[i];
          }
          if (p.b_off[l] >= 0) {
            double* gb = part->data() + p.b_off[l];
            for (int u = 0; u < n_out; ++u) gb[u] += delta[u];
          }
        }
        if (l > 0 || d_input) {
          const double* w = p.w(l);
          for (int i = 0; i < n_in; ++i) {
            double s = 0.0;
            for (int u = 0; u < n_out; ++u)
              s += delta[u] * w[static_cast<std::size_t>(u) * n_in + i];
            prev[i] = s;
          }
          if (l > 0) {
            const double* m = t.mask[l - 1].row(r);
            for (int i = 0; i < n_in; ++i) prev[i] *= m[i];
            std::swap(delta, prev);
          } else {
            double* di = d_input->row(r);
            for (int i = 0; i < n_in; ++i) di[i] = prev[i];
          }
        }
      }
    }
  });

  if (grad) {
    Vec merged;
    par::pairwise_combine_vec(partials, merged);
    for (std::size_t i = 0; i < merged.size(); ++i) (*grad)[i] += merged[i];
  }
}

}  // namespace

void backward(const Params& p, const ForwardTrace& t, const Matrix& d_out, Gradient* grad,
              Matrix* d_input, Exec exec) {
  backward_impl(p, t, d_out, p.spec.num_layers() - 1, grad, d_input, exec);
}

void backward_from_features(const Params& p, const ForwardTrace& t, const Matrix& d_features,
                            Gradient* grad, Matrix* d_input, Exec exec) {
  backward_impl(p, t, d_features, p.spec.num_layers() - 2, grad, d_input, exec);
}

Matrix grad_input(const Params& p, const Matrix& x, Exec exec) {
  check(p.spec.output_dim() == 1, "grad_input: critic output must be scalar");
  const ForwardTrace t = forward_trace(p, x, exec);
  Matrix ones(x.rows, 1, 1.0);
  Matrix dx;
  backward(p, t, ones, nullptr, &dx, exec);
  return dx;
}

Gradient grad_params(const Params& p, const Matrix& x, const LossFn& loss, Exec exec) {
  const ForwardTrace t = forward_trace(p, x, exec);
  if (!all_finite(t.output())) throw NonFiniteLossError("grad_params: non-finite forward pass");
  Matrix d_y(t.output().rows, t.output().cols);
  const double value = loss(t.output(), d_y);
  if (!std::isfinite(value)) throw NonFiniteLossError("grad_params: non-finite loss");
  Gradient g(p.x.size(), 0.0);
  backward(p, t, d_y, &g, nullptr, exec);
  return g;
}

KPlusOneEval kplus1_forward(const Params& p, const ForwardTrace& t) {
  check(p.klass_count > 0, "kplus1: params carry no classifier block");
  check(p.spec.output_dim() == 1, "kplus1: critic output must be scalar");
  const Matrix& phi = t.features();
  const int k = p.klass_count;
  const int m = p.spec.feature_dim();
  const int last = p.spec.num_layers() - 1;
  const double* v = p.w(last);
  const double* bv = p.b(last);
  const double* s = p.s();

  KPlusOneEval ev;
  ev.f.resize(phi.rows);
  ev.p = Matrix(phi.rows, k);
  ev.logits = Matrix(phi.rows, k);
  for (std::size_t r = 0; r < phi.rows; ++r) {
    const double* f = phi.row(r);
    double* lg = ev.logits.row(r);
    double mx = -std::numeric_limits<double>::infinity();
    for (int y = 0; y < k; ++y) {
      double acc = 0.0;
      const double* sy = s + static_cast<std::size_t>(y) * m;
      for (int i = 0; i < m; ++i) acc += sy[i] * f[i];
      lg[y] = acc;
      mx = std::max(mx, acc);
    }
    double z = 0.0;
    double* pr = ev.p.row(r);
    for (int y = 0; y < k; ++y) {
      pr[y] = std::exp(lg[y] - mx);
      z += pr[y];
    }
    double cls = 0.0;
    for (int y = 0; y < k; ++y) {
      pr[y] /= z;
      cls += pr[y] * lg[y];
    }
    double vf = bv ? bv[0] : 0.0;
    for (int i = 0; i < m; ++i) vf += v[i] * f[i];
    ev.f[r] = cls - vf;
  }
  return ev;
}

void kplus1_backward(const Params& p, const ForwardTrace& t, const KPlusOneEval& ev,
                     const Vec& df, Gradient* grad, Matrix* d_input, Exec exec) {
  const Matrix& phi = t.features();
  check(df.size() == phi.rows, "kplus1_backward: df length mismatch");
  const int k = p.klass_count;
  const int m = p.spec.feature_dim();
  const int last = p.spec.num_layers() - 1;
  const double* v = p.w(last);
  const double* s = p.s();

  Matrix d_phi(phi.rows, m);
  const std::size_t nb = par::block_count(phi.rows, par::kRowBlock);
  // Head gradients (S, v, and the v-bias) accumulate per block.
  const std::size_t head_len = static_cast<std::size_t>(k) * m + m + 1;
  std::vector<Vec> partials(nb, Vec(head_len, 0.0));

  par::for_blocks(phi.rows, par::kRowBlock, exec,
                  [&](std::size_t b, std::size_t r0, std::size_t r1) {
    Vec dlogit(k);
    Vec& part = partials[b];
    double* g_s = part.data();
    double* g_v = part.data() + static_cast<std::size_t>(k) * m;
    double* g_bv = g_v + m;
    for (std::size_t r = r0; r < r1; ++r) {
      const double* f = phi.row(r);
      const double* lg = ev.logits.row(r);
      const double* pr = ev.p.row(r);
      double cls = 0.0;
      for (int y = 0; y < k; ++y) cls += pr[y] * lg[y];
      const double dfr = df[r];
      for (int y = 0; y < k; ++y) dlogit[y] = dfr * pr[y] * (1.0 + lg[y] - cls);
      double* dp = d_phi.row(r);
      for (int i = 0; i < m; ++i) dp[i] = -dfr * v[i];
      for (int y = 0; y < k; ++y) {
        const double dy = dlogit[y];
        const double* sy = s + static_cast<std::size_t>(y) * m;
        double* gsy = g_s + static_cast<std::size_t>(y) * m;
        for (int i = 0; i < m; ++i) {
          gsy[i] += dy * f[i];
          dp[i] += dy * sy[i];
        }
      }
      for (int i = 0; i < m; ++i) g_v[i] -= dfr * f[i];
      *g_bv -= dfr;
    }
  });

  if (grad) {
    Vec merged;
    par::pairwise_combine_vec(partials, merged);
    const double* g_s = merged.data();
    const double* g_v = merged.data() + static_cast<std::size_t>(k) * m;
    for (int i = 0; i < k * m; ++i) (*grad)[p.s_off + i] += g_s[i];
    for (int i = 0; i < m; ++i) (*grad)[p.w_off[last] + i] += g_v[i];
    if (p.b_off[last] >= 0) (*grad)[p.b_off[last]] += g_v[m];
  }
  backward_from_features(p, t, d_phi, grad, d_input, exec);
}

namespace {

// Sensitivities of the scalar output at every preactivation, per row.
// delta[l] has width layer_sizes[l+1].
void scalar_sensitivities(const Params& p, const ForwardTrace& t, std::size_t r,
                          std::vector<Vec>& delta) {
  const MlpSpec& spec = p.spec;
  const int layers = spec.num_layers();
  delta[layers - 1].assign(1, 1.0);
  for (int l = layers - 1; l > 0; --l) {
    const int n_in = spec.layer_sizes[l];
    const int n_out = spec.layer_sizes[l + 1];
    const double* w = p.w(l);
    const double* m = t.mask[l - 1].row(r);
    Vec& dst = delta[l - 1];
    dst.assign(n_in, 0.0);
    const Vec& src = delta[l];
    for (int i = 0; i < n_in; ++i) {
      double s = 0.0;
      for (int u = 0; u < n_out; ++u) s += src[u] * w[static_cast<std::size_t>(u) * n_in + i];
      dst[i] = s * m[i];
    }
  }
}

}  // namespace

void gradient_penalty_grad(const Params& p, const Matrix& x, double weight, Gradient* grad,
                           Exec exec) {
  check(p.spec.output_dim() == 1, "gradient_penalty: critic output must be scalar");
  check(p.spec.output_activation == OutputActivation::Linear,
        "gradient_penalty: linear critic output required");
  const MlpSpec& spec = p.spec;
  const int layers = spec.num_layers();
  const int d = spec.input_dim();
  const ForwardTrace t = forward_trace(p, x, exec);
  const std::size_t n = x.rows;
  const double scale = weight / static_cast<double>(n);

  const std::size_t nb = par::block_count(n, par::kRowBlock);
  std::vector<Vec> partials(nb, Vec(p.x.size(), 0.0));

  par::for_blocks(n, par::kRowBlock, exec, [&](std::size_t b, std::size_t r0, std::size_t r1) {
    std::vector<Vec> delta(layers);
    std::vector<Vec> tangent(layers);  // tangent activations per layer
    Vec g(d), a(d);
    Vec& part = partials[b];
    for (std::size_t r = r0; r < r1; ++r) {
      scalar_sensitivities(p, t, r, delta);
      // input gradient g = delta_0 W_0
      const double* w0 = p.w(0);
      const int n0 = spec.layer_sizes[1];
      for (int i = 0; i < d; ++i) {
        double s = 0.0;
        for (int u = 0; u < n0; ++u) s += delta[0][u] * w0[static_cast<std::size_t>(u) * d + i];
        g[i] = s;
      }
      double norm_sq = 0.0;
      for (int i = 0; i < d; ++i) norm_sq += g[i] * g[i];
      const double norm = std::sqrt(norm_sq);
      const double coef = norm > 0.0 ? 2.0 * (norm - 1.0) / norm : 0.0;
      for (int i = 0; i < d; ++i) a[i] = coef * g[i];
      // tangent pass along direction a; masks are frozen
      const double* prev = a.data();
      int n_in = d;
      for (int l = 0; l < layers; ++l) {
        const int n_out = spec.layer_sizes[l + 1];
        tangent[l].assign(n_out, 0.0);
        layer_affine(p.w(l), nullptr, prev, n_in, tangent[l].data(), n_out);
        if (l + 1 < layers) {
          const double* m = t.mask[l].row(r);
          for (int u = 0; u < n_out; ++u) tangent[l][u] *= m[u];
        }
        prev = tangent[l].data();
        n_in = n_out;
      }
      // dR/dW_l += scale * delta_l^T tangent_{l-1}; biases get nothing
      for (int l = 0; l < layers; ++l) {
        const int nin = spec.layer_sizes[l];
        const int nout = spec.layer_sizes[l + 1];
        const double* t_prev = l > 0 ? tangent[l - 1].data() : a.data();
        double* gw = part.data() + p.w_off[l];
        for (int u = 0; u < nout; ++u) {
          const double du = scale * delta[l][u];
          double* gwr = gw + static_cast<std::size_t>(u) * nin;
          for (int i = 0; i < nin; ++i) gwr[i] += du * t_prev[i];
        }
      }
    }
  });

  Vec merged;
  par::pairwise_combine_vec(partials, merged);
  for (std::size_t i = 0; i < merged.size(); ++i) (*grad)[i] += merged[i];
}

double gradient_penalty_value(const Params& p, const Matrix& x, Exec exec) {
  const Matrix g = grad_input(p, x, exec);
  const std::size_t nb = par::block_count(x.rows, par::kRowBlock);
  std::vector<double> partials(nb, 0.0);
  par::for_blocks(x.rows, par::kRowBlock, Exec::Serial,
                  [&](std::size_t b, std::size_t r0, std::size_t r1) {
    double acc = 0.0;
    for (std::size_t r = r0; r < r1; ++r) {
      double ns = 0.0;
      const double* row = g.row(r);
      for (std::size_t i = 0; i < g.cols; ++i) ns += row[i] * row[i];
      const double diff = std::sqrt(ns) - 1.0;
      acc += diff * diff;
    }
    partials[b] = acc;
  });
  return par::pairwise_combine(partials) / static_cast<double>(x.rows);
}

bool all_finite(const Vec& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

bool all_finite(const Matrix& m) { return all_finite(m.a); }

}  // namespace fisheripm
