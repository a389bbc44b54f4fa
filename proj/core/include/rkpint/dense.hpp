#pragma once

// Dense kernels for the small matrices this project manipulates: Butcher
// matrices (s <= 12), their SVD factors, and densely materialized operators
// used as oracles in tests and spectrum studies (a few thousand rows at most).
// Everything is deterministic: fixed sweep orders, fixed tie-breaking, and a
// fixed sign convention for singular vectors.

#include <complex>
#include <cstddef>
#include <vector>

#include "rkpint/errors.hpp"

namespace rkpint {

class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static DenseMatrix identity(std::size_t n) {
    DenseMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  /// max |a_ij|
  double max_abs() const;
  bool all_finite() const;

 private:
  std::size_t rows_ = 0, cols_ = 0;
  std::vector<double> data_;
};

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix transpose(const DenseMatrix& a);
std::vector<double> matvec(const DenseMatrix& a, const std::vector<double>& x);

// --- LU with partial pivoting -------------------------------------------------

struct LuFactors {
  DenseMatrix lu;          // packed L (unit diagonal, below) and U (on/above)
  std::vector<int> perm;   // row permutation applied to the input
  int sign = 1;            // permutation parity, for determinants
};

/// Factor a square matrix; throws SingularMatrixError when a pivot falls at or
/// below 1e-14 * max|A|, naming the pivot index.
LuFactors lu_factor(const DenseMatrix& a);
void lu_solve_inplace(const LuFactors& f, std::vector<double>& x);
double lu_determinant(const LuFactors& f);

std::vector<double> solve_dense(const DenseMatrix& a, const std::vector<double>& b);
/// Multi-RHS solve; columns of `b` are independent right-hand sides.
DenseMatrix solve_dense(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix dense_inverse(const DenseMatrix& a);

// --- SVD ----------------------------------------------------------------------

struct SvdResult {
  DenseMatrix u;              // n x n orthogonal
  std::vector<double> sigma;  // descending, nonnegative
  DenseMatrix v;              // n x n orthogonal, A = U diag(sigma) V^T
};

// One-sided Jacobi on columns.  Cyclic (p,q) sweeps rotate until every
// off-diagonal Gram ratio |g_pq| / sqrt(g_pp g_qq) drops to 1e-14.  Singular
// values are sorted descending (stable under ties) and signs are chosen so the
// diagonal of V is nonnegative wherever that is achievable by a column flip.
SvdResult svd_real(const DenseMatrix& a);

// --- Eigenvalues ----------------------------------------------------------------

// Real nonsymmetric spectrum: balance, Householder reduction to Hessenberg,
// then Francis double-shift QR.  Returns eigenvalues sorted lexicographically
// by (re, im); conjugate pairs come out exactly conjugate because 2x2 blocks
// are resolved with one real discriminant.  `max_dim` guards against
// accidentally feeding a huge operator to an O(n^3) routine.
std::vector<std::complex<double>> eig_dense(const DenseMatrix& a,
                                            std::size_t max_dim = 10000);

// --- small vector helpers used across modules ----------------------------------

double dot(const std::vector<double>& x, const std::vector<double>& y);
double norm2(const std::vector<double>& x);
/// y += alpha * x
void axpy(double alpha, const std::vector<double>& x, std::vector<double>& y);
void scale(std::vector<double>& x, double alpha);

}  // namespace rkpint
