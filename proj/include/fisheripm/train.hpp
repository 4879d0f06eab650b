#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <variant>
#include <vector>

#include "fisheripm/distributions.hpp"
#include "fisheripm/mlp.hpp"
#include "fisheripm/optim.hpp"
#include "fisheripm/rng.hpp"
#include "fisheripm/ssl.hpp"

namespace fisheripm {

// Fisher IPM objectives, the alternating ALM training loop for both IPM
// estimation and GAN training, and the baseline constraint mechanisms.

struct FisherAlm {};
struct WeightClip {
  double c = 0.01;
};
struct GradientPenalty {
  double mu = 10.0;
};
struct FGanChi2 {};   // fixed multiplier 1/2, no penalty, no lambda update
struct NeymanAlm {};  // second-moment constraint over P samples only
using ConstraintMode = std::variant<FisherAlm, WeightClip, GradientPenalty, FGanChi2, NeymanAlm>;

const char* mode_name(const ConstraintMode& mode);

struct TrainConfig {
  MlpSpec critic;
  MlpSpec generator;
  int n_c = 2;      // critic iterations per generator iteration
  int batch = 512;  // N; generated minibatches use the same size
  int n_z = 4;
  ConstraintMode mode = FisherAlm{};
  AdamConfig critic_adam{};
  AdamConfig gen_adam{};
  double rho = 1e-2;
  double gamma = 1e-6;  // regularizer for closed-form feature comparisons
  long total_iters = 1000;
  uint64_t seed = 1;
  double init_stdev = 0.02;
  double wd_omega = 1e-6;  // L2 decay on everything before the last layer
  double wd_v = 1e-3;      // L2 decay on the last layer
  bool train_v_only = false;
  bool freeze_critic = false;  // skip parameter steps; lambda still updates
  long fixed_dataset = 0;      // 0 = fresh samples every critic iteration
  int proxy_every = 500;       // KDE-proxy cadence in train_gan (plus iter 100 and last)
  int metrics_every = 1;
  // When > 0, metrics rows report E_hat/Omega_hat measured on a fresh batch
  // of this size per side instead of the last training minibatch; the
  // training updates themselves are untouched.
  int metrics_eval_n = 0;
  std::optional<SslConfig> ssl;

  void validate() const;
};

// Per-iteration log row; unavailable fields hold NaN.
struct MetricsRecord {
  long iter = 0;
  double e_hat = 0.0;
  double omega_hat = 0.0;
  double lambda = 0.0;
  double loss = 0.0;
  double chi2_oracle = std::numeric_limits<double>::quiet_NaN();
  double chi2_kde_proxy = std::numeric_limits<double>::quiet_NaN();
  double wall_ms = 0.0;
};

double empirical_mean_diff(const Vec& f_p, const Vec& f_q);
double empirical_omega(const Vec& f_p, const Vec& f_q);
double empirical_omega_p_only(const Vec& f_p);
double alm_objective(double e_hat, double omega_hat, const AlmState& alm);

struct CriticState {
  Params params;
  AdamState adam;
  AlmState alm;
};

struct GeneratorState {
  Params params;
  AdamState adam;
};

struct CriticStepStats {
  double e_hat = 0.0;
  double omega_hat = 0.0;
  double loss = 0.0;
  double max_abs_f = 0.0;
};

// One critic ascent step/lambda step on a fresh pair of minibatches.
// interp_rng supplies the interpolation draws for the gradient-penalty mode.
CriticStepStats critic_update(CriticState& state, const Matrix& x_p, const Matrix& x_q,
                              const TrainConfig& cfg, Rng& interp_rng,
                              Exec exec = default_exec());

// Raw ascent gradient of the mode's critic objective at fixed parameters and
// multiplier, before weight decay or any update.
Gradient critic_objective_grad(const Params& params, const AlmState& alm, const Matrix& x_p,
                               const Matrix& x_q, const TrainConfig& cfg,
                               Exec exec = default_exec());

// One Adam descent step on the generator against the frozen critic; labels
// drive the conditional embedding and generator CE when SSL is active.
double generator_update(GeneratorState& gen, const CriticState& critic, const Matrix& z,
                        const std::vector<int>& labels, const TrainConfig& cfg,
                        Exec exec = default_exec());

struct EstimateResult {
  double estimate = 0.0;
  double std_error = 0.0;
  Params critic;
  std::vector<MetricsRecord> metrics;
  bool diverged = false;
  bool nan_flag = false;
  double max_abs_f = 0.0;
  double median_iter_ms = 0.0;  // median per-iteration wallclock, first 10 excluded
};

// Trains the critic alone (generated sampling replaced by Q) and returns the
// out-of-sample ratio E_hat / sqrt(Omega_hat) on n_eval held-out samples.
// n_train > 0 trains on a fixed dataset of that size with fresh minibatches;
// n_train = 0 draws fresh samples every iteration.
EstimateResult estimate_ipm(const DistributionSpec& p, const DistributionSpec& q,
                            const TrainConfig& cfg, long n_train, long n_eval,
                            Exec exec = default_exec());

struct TrainResult {
  Params generator;
  Params critic;
  std::vector<MetricsRecord> metrics;
  bool diverged = false;
  long fail_iter = -1;
  bool nan_flag = false;
  double max_abs_f = 0.0;
  double test_accuracy = std::numeric_limits<double>::quiet_NaN();  // SSL runs only
  double median_iter_ms = 0.0;
};

// Full alternating loop of the GAN objective on an analytic target. On a
// non-finite loss the result carries the last good parameters and the
// failure iteration instead of throwing.
TrainResult train_gan(const DistributionSpec& data, const TrainConfig& cfg,
                      Exec exec = default_exec());

// SSL trainer: three minibatches per critic update (labeled, unlabeled,
// generated) with CE terms per the SslConfig; identical to train_gan when
// every SSL term is disabled.
TrainResult train_ssl(const LabeledMixture& data, const SslConfig& ssl, const TrainConfig& cfg,
                      Exec exec = default_exec());

// Monte Carlo chi-squared between an analytic density and a Gaussian-KDE fit
// (Scott's rule) of the given samples; trend diagnostic only.
double chi2_kde_proxy(const DistributionSpec& data, const Matrix& samples, std::size_t mc_n,
                      uint64_t seed);

// Standard normal matrix drawn sequentially from the stream.
Matrix standard_normal(std::size_t n, std::size_t d, Rng& rng);

uint64_t derive_seed(uint64_t seed, uint64_t tag);

}  // namespace fisheripm
