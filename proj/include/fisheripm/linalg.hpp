#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

namespace fisheripm {

// Row-major dense matrix of doubles. Covers everything this project needs
// (sample batches, feature matrices, d<=4 covariances, m<=64 Gramians).
struct Matrix {
  std::size_t rows = 0, cols = 0;
  std::vector<double> a;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), a(r * c, fill) {}

  double& operator()(std::size_t i, std::size_t j) { return a[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return a[i * cols + j]; }
  double* row(std::size_t i) { return a.data() + i * cols; }
  const double* row(std::size_t i) const { return a.data() + i * cols; }
  bool empty() const { return rows == 0 || cols == 0; }
};

using Vec = std::vector<double>;

struct SingularMatrixError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace linalg {

// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
// Throws SingularMatrixError when a pivot is not strictly positive.
Matrix cholesky(const Matrix& spd);

// Solves L y = b then L^T x = y for the factor returned by cholesky().
Vec chol_solve(const Matrix& chol_lower, const Vec& b);

// x^T A^{-1} x via one triangular solve against the Cholesky factor.
double quad_form_inv(const Matrix& chol_lower, const Vec& x);

double dot(const Vec& x, const Vec& y);
Vec matvec(const Matrix& m, const Vec& x);

// log(det A) from its Cholesky factor.
double log_det(const Matrix& chol_lower);

}  // namespace linalg
}  // namespace fisheripm
