#include "fisheripm/linalg.hpp"

#include <cmath>

namespace fisheripm::linalg {

Matrix cholesky(const Matrix& spd) {
  const std::size_t n = spd.rows;
  if (n != spd.cols) throw std::invalid_argument("cholesky: matrix not square");
  Matrix L(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double diag = spd(j, j);
    for (std::size_t k = 0; k < j; ++k) diag -= L(j, k) * L(j, k);
    if (!(diag > 0.0)) throw SingularMatrixError("cholesky: matrix not positive definite");
    L(j, j) = std::sqrt(diag);
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = spd(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= L(i, k) * L(j, k);
      L(i, j) = s / L(j, j);
    }
  }
  return L;
}

Vec chol_solve(const Matrix& L, const Vec& b) {
  const std::size_t n = L.rows;
  Vec y(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = b[i];
    for (std::size_t k = 0; k < i; ++k) s -= L(i, k) * y[k];
    y[i] = s / L(i, i);
  }
  Vec x(n);
  for (std::size_t ii = n; ii-- > 0;) {
    double s = y[ii];
    for (std::size_t k = ii + 1; k < n; ++k) s -= L(k, ii) * x[k];
    x[ii] = s / L(ii, ii);
  }
  return x;
}

double quad_form_inv(const Matrix& L, const Vec& x) {
  const std::size_t n = L.rows;
  Vec y(n);
  double q = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double s = x[i];
    for (std::size_t k = 0; k < i; ++k) s -= L(i, k) * y[k];
    y[i] = s / L(i, i);
    q += y[i] * y[i];
  }
  return q;
}

double dot(const Vec& x, const Vec& y) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
  return s;
}

Vec matvec(const Matrix& m, const Vec& x) {
  Vec out(m.rows, 0.0);
  for (std::size_t i = 0; i < m.rows; ++i) {
    double s = 0.0;
    const double* r = m.row(i);
    for (std::size_t j = 0; j < m.cols; ++j) s += r[j] * x[j];
    out[i] = s;
  }
  return out;
}

double log_det(const Matrix& L) {
  double s = 0.0;
  for (std::size_t i = 0; i < L.rows; ++i) s += std::log(L(i, i));
  return 2.0 * s;
}

}  // namespace fisheripm::linalg
