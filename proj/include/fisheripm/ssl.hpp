#pragma once

#include <vector>

#include "fisheripm/distributions.hpp"
#include "fisheripm/mlp.hpp"

namespace fisheripm {

// Cross-entropy-regularized critic training and conditional generation for
// toy semi-supervised learning.

struct SslConfig {
  int k = 3;                   // class count
  double lambda_d = 0.1;       // CE weight in the critic objective
  double lambda_g = 0.1;       // CE weight in the generator objective
  int labeled_per_class = 10;
  enum class CriticForm { Split, KPlusOne } critic_form = CriticForm::Split;
  bool conditional = false;

  void validate() const;
  // The classifier block S exists when CE is trained or the K+1 form is used.
  bool needs_classifier() const {
    return lambda_d > 0.0 || critic_form == CriticForm::KPlusOne;
  }
};

// Mean negative log softmax probability of the true label; S is K x m,
// features n x m, labels in [0, K).
double ce_loss(const Matrix& s, const Matrix& features, const std::vector<int>& labels);

// L_D combiner: the critic maximizes L_F - lambda_d * CE.
double critic_loss_ssl(double l_f, double ce, double lambda_d);

// L_G combiner: the generator minimizes E_hat + lambda_g * CE.
double generator_loss_ssl(double e_hat, double ce_gen, double lambda_g);

// CE through a Params-owned classifier block over the trace's features.
// Adds coeff * dCE/dparams into grad (S block plus the feature layers) when
// grad is non-null; writes coeff * dCE/dinput when d_input is non-null.
double ce_with_grad(const Params& p, const ForwardTrace& t, const std::vector<int>& labels,
                    double coeff, Gradient* grad, Matrix* d_input = nullptr,
                    Exec exec = default_exec());

// Generator forward on noise concatenated with a 1-of-K label embedding.
Matrix conditional_forward(const Params& gen, const Matrix& z, const std::vector<int>& labels,
                           Exec exec = default_exec());

// argmax_y <S_y, Phi(x)> accuracy of the critic's classifier head.
double classifier_accuracy(const Params& critic, const Matrix& x, const std::vector<int>& labels,
                           Exec exec = default_exec());

// Trains only the S block by CE on a fixed labeled set over frozen features;
// baseline for judging SSL accuracy targets.
void fit_classifier_head(Params& critic, const Matrix& x, const std::vector<int>& labels,
                         int iters, double eta, Exec exec = default_exec());

}  // namespace fisheripm
