#include "fisheripm/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

namespace fisheripm {

namespace {

Vec output_column(const Matrix& y) {
  Vec f(y.rows);
  for (std::size_t r = 0; r < y.rows; ++r) f[r] = y(r, 0);
  return f;
}

double mean(const Vec& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double max_abs(const Vec& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

double median_of(std::vector<double> xs) {
  if (xs.empty()) return 0.0;
  const std::size_t mid = xs.size() / 2;
  std::nth_element(xs.begin(), xs.begin() + mid, xs.end());
  return xs[mid];
}

Matrix one_hot_concat(const Matrix& z, const std::vector<int>& labels, int k) {
  Matrix out(z.rows, z.cols + k);
  for (std::size_t r = 0; r < z.rows; ++r) {
    double* dst = out.row(r);
    const double* src = z.row(r);
    for (std::size_t j = 0; j < z.cols; ++j) dst[j] = src[j];
    for (int j = 0; j < k; ++j) dst[z.cols + j] = 0.0;
    dst[z.cols + labels[r]] = 1.0;
  }
  return out;
}

struct CriticEval {
  ForwardTrace trace;
  KPlusOneEval head;  // populated for the K+1 form
  Vec f;
  bool kplus1 = false;
};

CriticEval eval_critic(const Params& p, const Matrix& x, bool kplus1, Exec exec) {
  CriticEval ev;
  ev.kplus1 = kplus1;
  ev.trace = forward_trace(p, x, exec);
  if (kplus1) {
    ev.head = kplus1_forward(p, ev.trace);
    ev.f = ev.head.f;
  } else {
    ev.f = output_column(ev.trace.output());
  }
  return ev;
}

void critic_backward(const Params& p, const CriticEval& ev, const Vec& df, Gradient* grad,
                     Matrix* d_input, Exec exec) {
  if (ev.kplus1) {
    kplus1_backward(p, ev.trace, ev.head, df, grad, d_input, exec);
  } else {
    Matrix dy(df.size(), 1);
    for (std::size_t r = 0; r < df.size(); ++r) dy(r, 0) = df[r];
    backward(p, ev.trace, dy, grad, d_input, exec);
  }
}

struct LabeledBatch {
  const Matrix* x = nullptr;
  const std::vector<int>* labels = nullptr;
  double lambda_d = 0.0;
};

struct ObjectiveResult {
  CriticStepStats stats;
  Gradient grad;
  bool update_lambda = false;
};

// Ascent gradient and batch statistics of the mode's critic objective,
// before weight decay and freezing.
ObjectiveResult critic_objective(const Params& params, const AlmState& alm, const Matrix& x_p,
                                 const Matrix& x_q, const LabeledBatch& lab,
                                 const TrainConfig& cfg, Rng& interp_rng, Exec exec) {
  const bool kplus1 =
      cfg.ssl && cfg.ssl->critic_form == SslConfig::CriticForm::KPlusOne;
  const CriticEval ep = eval_critic(params, x_p, kplus1, exec);
  const CriticEval eq = eval_critic(params, x_q, kplus1, exec);
  if (!all_finite(ep.f) || !all_finite(eq.f))
    throw NonFiniteLossError("critic_update: non-finite critic values");

  const std::size_t n = ep.f.size();
  const std::size_t m = eq.f.size();
  const double inv_n = 1.0 / static_cast<double>(n);
  const double inv_m = 1.0 / static_cast<double>(m);

  ObjectiveResult out;
  CriticStepStats& stats = out.stats;
  stats.e_hat = empirical_mean_diff(ep.f, eq.f);
  const bool neyman = std::holds_alternative<NeymanAlm>(cfg.mode);
  stats.omega_hat = neyman ? empirical_omega_p_only(ep.f) : empirical_omega(ep.f, eq.f);
  stats.max_abs_f = std::max(max_abs(ep.f), max_abs(eq.f));

  Vec df_p(n), df_q(m);
  if (std::holds_alternative<FisherAlm>(cfg.mode)) {
    const double dl_dom = -alm.lambda - alm.rho * (stats.omega_hat - 1.0);
    for (std::size_t i = 0; i < n; ++i) df_p[i] = inv_n + dl_dom * ep.f[i] * inv_n;
    for (std::size_t j = 0; j < m; ++j) df_q[j] = -inv_m + dl_dom * eq.f[j] * inv_m;
    stats.loss = alm_objective(stats.e_hat, stats.omega_hat, alm);
    out.update_lambda = true;
  } else if (std::holds_alternative<NeymanAlm>(cfg.mode)) {
    const double dl_dom = -alm.lambda - alm.rho * (stats.omega_hat - 1.0);
    for (std::size_t i = 0; i < n; ++i) df_p[i] = inv_n + dl_dom * 2.0 * ep.f[i] * inv_n;
    for (std::size_t j = 0; j < m; ++j) df_q[j] = -inv_m;
    stats.loss = alm_objective(stats.e_hat, stats.omega_hat, alm);
    out.update_lambda = true;
  } else if (std::holds_alternative<FGanChi2>(cfg.mode)) {
    for (std::size_t i = 0; i < n; ++i) df_p[i] = 0.5 * inv_n - 0.25 * ep.f[i] * inv_n;
    for (std::size_t j = 0; j < m; ++j) df_q[j] = -0.5 * inv_m - 0.25 * eq.f[j] * inv_m;
    stats.loss = 0.5 * stats.e_hat - 0.25 * stats.omega_hat;
  } else {  // WeightClip, GradientPenalty: plain mean-difference ascent
    for (std::size_t i = 0; i < n; ++i) df_p[i] = inv_n;
    for (std::size_t j = 0; j < m; ++j) df_q[j] = -inv_m;
    stats.loss = stats.e_hat;
  }

  out.grad.assign(params.x.size(), 0.0);
  critic_backward(params, ep, df_p, &out.grad, nullptr, exec);
  critic_backward(params, eq, df_q, &out.grad, nullptr, exec);

  if (const auto* gp = std::get_if<GradientPenalty>(&cfg.mode)) {
    // One u per sample pair, two-sided penalty on the interpolates.
    const std::size_t ni = std::min(n, m);
    Matrix interp(ni, x_p.cols);
    for (std::size_t i = 0; i < ni; ++i) {
      const double u = interp_rng.uniform();
      const double* a = x_p.row(i);
      const double* b = x_q.row(i);
      double* dst = interp.row(i);
      for (std::size_t j = 0; j < x_p.cols; ++j) dst[j] = u * a[j] + (1.0 - u) * b[j];
    }
    stats.loss -= gp->mu * gradient_penalty_value(params, interp, exec);
    gradient_penalty_grad(params, interp, -gp->mu, &out.grad, exec);
  }

  if (lab.x != nullptr && lab.lambda_d > 0.0) {
    const ForwardTrace tl = forward_trace(params, *lab.x, exec);
    const double ce =
        ce_with_grad(params, tl, *lab.labels, -lab.lambda_d, &out.grad, nullptr, exec);
    stats.loss = critic_loss_ssl(stats.loss, ce, lab.lambda_d);
  }

  if (!std::isfinite(stats.loss)) throw NonFiniteLossError("critic_update: non-finite loss");
  return out;
}

CriticStepStats critic_update_impl(CriticState& st, const Matrix& x_p, const Matrix& x_q,
                                   const LabeledBatch& lab, const TrainConfig& cfg,
                                   Rng& interp_rng, Exec exec) {
  ObjectiveResult obj = critic_objective(st.params, st.alm, x_p, x_q, lab, cfg, interp_rng, exec);
  // Ascent objective carries -wd/2 ||p||^2 per partition; S gets no decay.
  for (int i = 0; i < st.params.omega_size; ++i) obj.grad[i] -= cfg.wd_omega * st.params.x[i];
  for (int i = st.params.omega_size; i < st.params.v_end; ++i)
    obj.grad[i] -= cfg.wd_v * st.params.x[i];
  if (cfg.train_v_only)
    for (int i = 0; i < st.params.omega_size; ++i) obj.grad[i] = 0.0;
  if (!cfg.freeze_critic) {
    adam_step(st.adam, st.params.x, obj.grad, /*maximize=*/true);
    if (const auto* wc = std::get_if<WeightClip>(&cfg.mode))
      for (double& w : st.params.x) w = std::clamp(w, -wc->c, wc->c);
  }
  if (obj.update_lambda) lambda_step(st.alm, obj.stats.omega_hat);
  return obj.stats;
}

bool is_divergence(const std::exception& e) {
  return dynamic_cast<const NonFiniteLossError*>(&e) != nullptr ||
         dynamic_cast<const NonFiniteGradientError*>(&e) != nullptr;
}

}  // namespace

const char* mode_name(const ConstraintMode& mode) {
  if (std::holds_alternative<FisherAlm>(mode)) return "fisher_alm";
  if (std::holds_alternative<WeightClip>(mode)) return "weight_clip";
  if (std::holds_alternative<GradientPenalty>(mode)) return "gradient_penalty";
  if (std::holds_alternative<FGanChi2>(mode)) return "fgan_chi2";
  return "neyman_alm";
}

void TrainConfig::validate() const {
  critic.validate();
  if (n_c < 1) throw std::invalid_argument("TrainConfig: n_c must be >= 1");
  if (batch < 2) throw std::invalid_argument("TrainConfig: batch must be >= 2");
  if (n_z < 1) throw std::invalid_argument("TrainConfig: n_z must be >= 1");
  if (!(rho > 0.0)) throw std::invalid_argument("TrainConfig: rho must be > 0");
  if (total_iters < 1) throw std::invalid_argument("TrainConfig: total_iters must be >= 1");
  if (ssl) ssl->validate();
}

double empirical_mean_diff(const Vec& f_p, const Vec& f_q) {
  if (f_p.empty() || f_q.empty())
    throw std::invalid_argument("empirical_mean_diff: empty input");
  return mean(f_p) - mean(f_q);
}

double empirical_omega(const Vec& f_p, const Vec& f_q) {
  if (f_p.empty() || f_q.empty()) throw std::invalid_argument("empirical_omega: empty input");
  double sp = 0.0, sq = 0.0;
  for (double f : f_p) sp += f * f;
  for (double f : f_q) sq += f * f;
  return 0.5 * sp / static_cast<double>(f_p.size()) + 0.5 * sq / static_cast<double>(f_q.size());
}

double empirical_omega_p_only(const Vec& f_p) {
  if (f_p.empty()) throw std::invalid_argument("empirical_omega_p_only: empty input");
  double s = 0.0;
  for (double f : f_p) s += f * f;
  return s / static_cast<double>(f_p.size());
}

double alm_objective(double e_hat, double omega_hat, const AlmState& alm) {
  const double viol = omega_hat - 1.0;
  return e_hat - alm.lambda * viol - 0.5 * alm.rho * viol * viol;
}

CriticStepStats critic_update(CriticState& state, const Matrix& x_p, const Matrix& x_q,
                              const TrainConfig& cfg, Rng& interp_rng, Exec exec) {
  return critic_update_impl(state, x_p, x_q, LabeledBatch{}, cfg, interp_rng, exec);
}

Gradient critic_objective_grad(const Params& params, const AlmState& alm, const Matrix& x_p,
                               const Matrix& x_q, const TrainConfig& cfg, Exec exec) {
  Rng interp_rng(derive_seed(cfg.seed, 5));
  return critic_objective(params, alm, x_p, x_q, LabeledBatch{}, cfg, interp_rng, exec).grad;
}

double generator_update(GeneratorState& gen, const CriticState& critic, const Matrix& z,
                        const std::vector<int>& labels, const TrainConfig& cfg, Exec exec) {
  const bool conditional = cfg.ssl && cfg.ssl->conditional;
  const bool kplus1 = cfg.ssl && cfg.ssl->critic_form == SslConfig::CriticForm::KPlusOne;
  const Matrix input = conditional ? one_hot_concat(z, labels, cfg.ssl->k) : z;
  const ForwardTrace tg = forward_trace(gen.params, input, exec);
  const Matrix& x_g = tg.output();
  if (!all_finite(x_g)) throw NonFiniteLossError("generator_update: non-finite samples");

  const CriticEval ev = eval_critic(critic.params, x_g, kplus1, exec);
  const std::size_t m = ev.f.size();
  const double inv_m = 1.0 / static_cast<double>(m);

  // Generator sees only its own half of E_hat: minimize -mean f(g(z)).
  Vec df(m, -inv_m);
  Matrix dx;
  critic_backward(critic.params, ev, df, nullptr, &dx, exec);
  double loss = -mean(ev.f);

  if (conditional && cfg.ssl->lambda_g > 0.0) {
    Matrix dx_ce;
    const double ce =
        ce_with_grad(critic.params, ev.trace, labels, cfg.ssl->lambda_g, nullptr, &dx_ce, exec);
    for (std::size_t i = 0; i < dx.a.size(); ++i) dx.a[i] += dx_ce.a[i];
    loss = generator_loss_ssl(loss, ce, cfg.ssl->lambda_g);
  }
  if (!std::isfinite(loss)) throw NonFiniteLossError("generator_update: non-finite loss");

  Gradient grad(gen.params.x.size(), 0.0);
  backward(gen.params, tg, dx, &grad, nullptr, exec);
  adam_step(gen.adam, gen.params.x, grad, /*maximize=*/false);
  return loss;
}

uint64_t derive_seed(uint64_t seed, uint64_t tag) {
  uint64_t x = seed ^ (tag * 0x9e3779b97f4a7c15ULL);
  Rng::splitmix64(x);
  return Rng::splitmix64(x);
}

Matrix standard_normal(std::size_t n, std::size_t d, Rng& rng) {
  Matrix z(n, d);
  for (double& v : z.a) v = rng.normal();
  return z;
}

namespace {

struct KdeDensity {
  const Matrix* centers;
  Vec bandwidth;    // per-axis, Scott's rule
  double log_norm;  // -log(n) - sum_j log(h_j sqrt(2 pi))

  static KdeDensity fit(const Matrix& samples) {
    KdeDensity k;
    k.centers = &samples;
    const std::size_t n = samples.rows, d = samples.cols;
    k.bandwidth.assign(d, 0.0);
    const double factor =
        std::pow(static_cast<double>(n), -1.0 / (static_cast<double>(d) + 4.0));
    double log_norm = -std::log(static_cast<double>(n));
    for (std::size_t j = 0; j < d; ++j) {
      double s = 0.0, ss = 0.0;
      for (std::size_t r = 0; r < n; ++r) {
        s += samples(r, j);
        ss += samples(r, j) * samples(r, j);
      }
      const double mu = s / static_cast<double>(n);
      const double var = std::max(ss / static_cast<double>(n) - mu * mu, 0.0);
      k.bandwidth[j] = std::max(std::sqrt(var) * factor, 1e-3);
      log_norm -= std::log(k.bandwidth[j] * std::sqrt(2.0 * 3.14159265358979323846));
    }
    k.log_norm = log_norm;
    return k;
  }

  double density(const double* x) const {
    const std::size_t n = centers->rows, d = centers->cols;
    double acc = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      const double* c = centers->row(r);
      double q = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double t = (x[j] - c[j]) / bandwidth[j];
        q += t * t;
      }
      acc += std::exp(-0.5 * q);
    }
    return acc * std::exp(log_norm);
  }

  void sample_row(Rng& rng, double* out) const {
    const std::size_t r = rng.below(centers->rows);
    const double* c = centers->row(r);
    for (std::size_t j = 0; j < centers->cols; ++j)
      out[j] = c[j] + bandwidth[j] * rng.normal();
  }
};

}  // namespace

double chi2_kde_proxy(const DistributionSpec& data, const Matrix& samples, std::size_t mc_n,
                      uint64_t seed) {
  if (!all_finite(samples)) return std::numeric_limits<double>::quiet_NaN();
  const KdeDensity kde = KdeDensity::fit(samples);
  const std::size_t d = samples.cols;
  Rng rng(seed);
  const SpecSampler data_sampler(data);
  Vec x(d);
  double acc = 0.0;
  for (std::size_t i = 0; i < mc_n; ++i) {
    if (rng.uniform() < 0.5) {
      data_sampler.row(rng, x.data());
    } else {
      kde.sample_row(rng, x.data());
    }
    const double pd = density(data, x.data());
    const double pk = kde.density(x.data());
    if (pd + pk < 1e-300) continue;
    const double r = 2.0 * (pd - pk) / (pd + pk);
    acc += r * r;
  }
  return std::sqrt(std::max(acc / static_cast<double>(mc_n), 0.0));
}

namespace {

// Stratified labeled subset: labeled_per_class draws from each class.
void draw_labeled_set(const LabeledMixture& src, int per_class, uint64_t seed, Matrix& x,
                      std::vector<int>& labels) {
  const std::size_t k = src.num_classes();
  const std::size_t d = src.dim();
  x = Matrix(static_cast<std::size_t>(per_class) * k, d);
  labels.assign(static_cast<std::size_t>(per_class) * k, 0);
  for (std::size_t c = 0; c < k; ++c) {
    DistributionSpec cls = src.classes[c];
    const Matrix xc = sample(cls, per_class, derive_seed(seed, 100 + c), Exec::Serial);
    for (int i = 0; i < per_class; ++i) {
      const std::size_t row = c * per_class + i;
      for (std::size_t j = 0; j < d; ++j) x(row, j) = xc(i, j);
      labels[row] = static_cast<int>(c);
    }
  }
}

TrainResult run_training(const DistributionSpec& data, const LabeledMixture* labeled_src,
                         const TrainConfig& cfg, Exec exec) {
  cfg.validate();
  cfg.generator.validate();
  const SslConfig* ssl = cfg.ssl ? &*cfg.ssl : nullptr;
  const bool conditional = ssl && ssl->conditional;
  const int klass = ssl && ssl->needs_classifier() ? ssl->k : 0;
  const int gen_in = cfg.n_z + (conditional ? ssl->k : 0);
  if (cfg.generator.input_dim() != gen_in)
    throw ShapeMismatchError("train: generator input dim must be n_z (+ K when conditional)");
  if (static_cast<std::size_t>(cfg.generator.output_dim()) != dim(data))
    throw ShapeMismatchError("train: generator output dim must match the data");

  CriticState critic{init_params(cfg.critic, derive_seed(cfg.seed, 1), cfg.init_stdev, klass),
                     AdamState{}, AlmState{0.0, cfg.rho}};
  critic.adam = AdamState::make(critic.params.x.size(), cfg.critic_adam);
  GeneratorState gen{init_params(cfg.generator, derive_seed(cfg.seed, 2), cfg.init_stdev),
                     AdamState{}};
  gen.adam = AdamState::make(gen.params.x.size(), cfg.gen_adam);

  Rng data_rng(derive_seed(cfg.seed, 3));
  Rng z_rng(derive_seed(cfg.seed, 4));
  Rng interp_rng(derive_seed(cfg.seed, 5));
  Rng label_rng(derive_seed(cfg.seed, 6));
  Rng lab_batch_rng(derive_seed(cfg.seed, 10));
  const uint64_t eval_seed = derive_seed(cfg.seed, 7);

  const bool use_ce = ssl && ssl->lambda_d > 0.0;
  Matrix lab_x;
  std::vector<int> lab_y;
  if (use_ce) {
    if (!labeled_src)
      throw std::invalid_argument("train: CE term requires a labeled data source");
    draw_labeled_set(*labeled_src, ssl->labeled_per_class, derive_seed(cfg.seed, 8), lab_x,
                     lab_y);
  }

  TrainResult out;
  out.metrics.reserve(cfg.total_iters / std::max(cfg.metrics_every, 1) + 2);
  Vec good_critic = critic.params.x, good_gen = gen.params.x;

  std::vector<double> iter_ms;
  iter_ms.reserve(cfg.total_iters);

  const auto draw_labels = [&](std::size_t count) {
    std::vector<int> y(count);
    for (auto& v : y) v = static_cast<int>(label_rng.below(ssl->k));
    return y;
  };

  const auto kde_eval = [&](long iter) {
    Rng er(derive_seed(eval_seed, static_cast<uint64_t>(iter)));
    Matrix z = standard_normal(10000, cfg.n_z, er);
    Matrix input = std::move(z);
    if (conditional) {
      std::vector<int> y(input.rows);
      for (auto& v : y) v = static_cast<int>(er.below(ssl->k));
      input = one_hot_concat(input, y, ssl->k);
    }
    const Matrix xs = forward(gen.params, input, exec);
    return chi2_kde_proxy(data, xs, 2048, derive_seed(eval_seed, 7919 + iter));
  };

  const bool kplus1 = ssl && ssl->critic_form == SslConfig::CriticForm::KPlusOne;
  // Fresh-batch measurement of the critic's mean gap and pooled second
  // moment; a lower-noise view of the same quantities the training batches
  // estimate, drawn from a dedicated stream.
  const auto metrics_eval = [&](long iter, MetricsRecord& rec) {
    Rng er(derive_seed(eval_seed, 0xe7a1u * static_cast<uint64_t>(iter)));
    const Matrix xp = sample(data, cfg.metrics_eval_n, er.next_u64(), exec);
    Matrix z = standard_normal(cfg.metrics_eval_n, cfg.n_z, er);
    Matrix input = std::move(z);
    if (conditional) {
      std::vector<int> y(input.rows);
      for (auto& v : y) v = static_cast<int>(er.below(ssl->k));
      input = one_hot_concat(input, y, ssl->k);
    }
    const Matrix xq = forward(gen.params, input, exec);
    const CriticEval ep = eval_critic(critic.params, xp, kplus1, exec);
    const CriticEval eq = eval_critic(critic.params, xq, kplus1, exec);
    rec.e_hat = empirical_mean_diff(ep.f, eq.f);
    rec.omega_hat = std::holds_alternative<NeymanAlm>(cfg.mode)
                        ? empirical_omega_p_only(ep.f)
                        : empirical_omega(ep.f, eq.f);
  };

  // The labeled batch: the full set when it fits the batch size, otherwise a
  // per-update subsample.
  Matrix lab_sub;
  std::vector<int> lab_sub_y;
  const auto labeled_batch = [&]() {
    LabeledBatch lab;
    if (!use_ce) return lab;
    lab.lambda_d = ssl->lambda_d;
    if (lab_x.rows <= static_cast<std::size_t>(cfg.batch)) {
      lab.x = &lab_x;
      lab.labels = &lab_y;
    } else {
      lab_sub = Matrix(cfg.batch, lab_x.cols);
      lab_sub_y.assign(cfg.batch, 0);
      for (int r = 0; r < cfg.batch; ++r) {
        const std::size_t src = lab_batch_rng.below(lab_x.rows);
        for (std::size_t j = 0; j < lab_x.cols; ++j) lab_sub(r, j) = lab_x(src, j);
        lab_sub_y[r] = lab_y[src];
      }
      lab.x = &lab_sub;
      lab.labels = &lab_sub_y;
    }
    return lab;
  };

  for (long iter = 1; iter <= cfg.total_iters; ++iter) {
    const auto t0 = std::chrono::steady_clock::now();
    CriticStepStats last{};
    try {
      for (int j = 0; j < cfg.n_c; ++j) {
        const Matrix x_p = sample(data, cfg.batch, data_rng.next_u64(), exec);
        Matrix z = standard_normal(cfg.batch, cfg.n_z, z_rng);
        std::vector<int> y;
        Matrix gin = std::move(z);
        if (conditional) {
          y = draw_labels(gin.rows);
          gin = one_hot_concat(gin, y, ssl->k);
        }
        const Matrix x_q = forward(gen.params, gin, exec);
        if (!all_finite(x_q)) throw NonFiniteLossError("train: non-finite generator samples");
        last = critic_update_impl(critic, x_p, x_q, labeled_batch(), cfg, interp_rng, exec);
        out.max_abs_f = std::max(out.max_abs_f, last.max_abs_f);
      }
      Matrix z = standard_normal(cfg.batch, cfg.n_z, z_rng);
      std::vector<int> y;
      if (conditional) y = draw_labels(z.rows);
      generator_update(gen, critic, z, y, cfg, exec);
    } catch (const std::exception& e) {
      if (!is_divergence(e)) throw;
      out.diverged = true;
      out.nan_flag = true;
      out.fail_iter = iter;
      critic.params.x = good_critic;
      gen.params.x = good_gen;
      break;
    }
    const auto t1 = std::chrono::steady_clock::now();
    const double ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    iter_ms.push_back(ms);
    good_critic = critic.params.x;
    good_gen = gen.params.x;

    if (iter % std::max(cfg.metrics_every, 1) == 0 || iter == cfg.total_iters || iter == 100) {
      MetricsRecord rec;
      rec.iter = iter;
      rec.e_hat = last.e_hat;
      rec.omega_hat = last.omega_hat;
      rec.lambda = critic.alm.lambda;
      rec.loss = last.loss;
      rec.wall_ms = ms;
      if (cfg.metrics_eval_n > 0) metrics_eval(iter, rec);
      if (dim(data) <= 2 &&
          (iter == 100 || iter == cfg.total_iters ||
           (cfg.proxy_every > 0 && iter % cfg.proxy_every == 0)))
        rec.chi2_kde_proxy = kde_eval(iter);
      out.metrics.push_back(rec);
    }
  }

  if (iter_ms.size() > 10) iter_ms.erase(iter_ms.begin(), iter_ms.begin() + 10);
  out.median_iter_ms = median_of(std::move(iter_ms));
  out.generator = std::move(gen.params);
  out.critic = std::move(critic.params);

  if (labeled_src && ssl && out.critic.s_off >= 0) {
    const LabeledSample heldout =
        sample_labeled(*labeled_src, 10000, derive_seed(cfg.seed, 9), exec);
    out.test_accuracy = classifier_accuracy(out.critic, heldout.x, heldout.labels, exec);
  }
  return out;
}

}  // namespace

TrainResult train_gan(const DistributionSpec& data, const TrainConfig& cfg, Exec exec) {
  return run_training(data, std::get_if<LabeledMixture>(&data), cfg, exec);
}

TrainResult train_ssl(const LabeledMixture& data, const SslConfig& ssl, const TrainConfig& cfg,
                      Exec exec) {
  TrainConfig c = cfg;
  c.ssl = ssl;
  const DistributionSpec spec = data;
  return run_training(spec, &data, c, exec);
}

EstimateResult estimate_ipm(const DistributionSpec& p, const DistributionSpec& q,
                            const TrainConfig& cfg_in, long n_train, long n_eval, Exec exec) {
  TrainConfig cfg = cfg_in;
  cfg.ssl.reset();  // estimation always trains a plain scalar critic
  cfg.validate();
  if (n_eval < 1) throw std::invalid_argument("estimate_ipm: n_eval must be >= 1");

  CriticState critic{init_params(cfg.critic, derive_seed(cfg.seed, 1), cfg.init_stdev, 0),
                     AdamState{}, AlmState{0.0, cfg.rho}};
  critic.adam = AdamState::make(critic.params.x.size(), cfg.critic_adam);
  Rng data_rng(derive_seed(cfg.seed, 3));
  Rng interp_rng(derive_seed(cfg.seed, 5));

  Matrix train_p, train_q;
  if (n_train > 0) {
    train_p = sample(p, n_train, derive_seed(cfg.seed, 11), exec);
    train_q = sample(q, n_train, derive_seed(cfg.seed, 12), exec);
  }
  const auto minibatch = [&](const Matrix& pool) {
    Matrix b(cfg.batch, pool.cols);
    for (int r = 0; r < cfg.batch; ++r) {
      const std::size_t src = data_rng.below(pool.rows);
      for (std::size_t j = 0; j < pool.cols; ++j) b(r, j) = pool(src, j);
    }
    return b;
  };

  EstimateResult out;
  out.metrics.reserve(cfg.total_iters / std::max(cfg.metrics_every, 1) + 1);
  std::vector<double> iter_ms;
  iter_ms.reserve(cfg.total_iters);
  Vec good = critic.params.x;

  for (long iter = 1; iter <= cfg.total_iters; ++iter) {
    const auto t0 = std::chrono::steady_clock::now();
    CriticStepStats stats{};
    try {
      const Matrix x_p =
          n_train > 0 ? minibatch(train_p) : sample(p, cfg.batch, data_rng.next_u64(), exec);
      const Matrix x_q =
          n_train > 0 ? minibatch(train_q) : sample(q, cfg.batch, data_rng.next_u64(), exec);
      stats = critic_update_impl(critic, x_p, x_q, LabeledBatch{}, cfg, interp_rng, exec);
    } catch (const std::exception& e) {
      if (!is_divergence(e)) throw;
      out.diverged = true;
      out.nan_flag = true;
      critic.params.x = good;
      break;
    }
    const auto t1 = std::chrono::steady_clock::now();
    iter_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    good = critic.params.x;
    out.max_abs_f = std::max(out.max_abs_f, stats.max_abs_f);
    if (iter % std::max(cfg.metrics_every, 1) == 0 || iter == cfg.total_iters) {
      MetricsRecord rec;
      rec.iter = iter;
      rec.e_hat = stats.e_hat;
      rec.omega_hat = stats.omega_hat;
      rec.lambda = critic.alm.lambda;
      rec.loss = stats.loss;
      rec.wall_ms = iter_ms.back();
      out.metrics.push_back(rec);
    }
  }

  if (iter_ms.size() > 10) iter_ms.erase(iter_ms.begin(), iter_ms.begin() + 10);
  out.median_iter_ms = median_of(std::move(iter_ms));

  // Out-of-sample ratio on held-out draws, with a block-resampled SE.
  const Matrix ev_p = sample(p, n_eval, derive_seed(cfg.seed, 21), exec);
  const Matrix ev_q = sample(q, n_eval, derive_seed(cfg.seed, 22), exec);
  const Vec f_p = output_column(forward(critic.params, ev_p, exec));
  const Vec f_q = output_column(forward(critic.params, ev_q, exec));
  const double e = empirical_mean_diff(f_p, f_q);
  const double om = empirical_omega(f_p, f_q);
  out.estimate = om > 0.0 ? e / std::sqrt(om) : 0.0;

  const int blocks = 50;
  const std::size_t bsz = f_p.size() / blocks;
  if (bsz >= 2) {
    Vec ests;
    ests.reserve(blocks);
    for (int b = 0; b < blocks; ++b) {
      double sp = 0.0, sq = 0.0, ssp = 0.0, ssq = 0.0;
      for (std::size_t i = b * bsz; i < (b + 1) * bsz; ++i) {
        sp += f_p[i];
        ssp += f_p[i] * f_p[i];
        sq += f_q[i];
        ssq += f_q[i] * f_q[i];
      }
      const double eb = (sp - sq) / static_cast<double>(bsz);
      const double ob = 0.5 * (ssp + ssq) / static_cast<double>(bsz);
      ests.push_back(ob > 0.0 ? eb / std::sqrt(ob) : 0.0);
    }
    double m = mean(ests), var = 0.0;
    for (double v : ests) var += (v - m) * (v - m);
    var /= static_cast<double>(blocks - 1);
    out.std_error = std::sqrt(var / static_cast<double>(blocks));
  }
  out.critic = std::move(critic.params);
  return out;
}

}  // namespace fisheripm
