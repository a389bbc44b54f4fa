#pragma once

// Shared helpers for the test suites: random fills, matrix comparisons, and
// dense materialization of abstract operators (the workhorse oracle used to
// pit structured applies against plain dense algebra).

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "rkpint/dense.hpp"

namespace testsupport {

inline std::mt19937& rng() {
  static std::mt19937 gen(0x5eed1234u);
  return gen;
}

inline double uniform(double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  return d(rng());
}

inline std::vector<double> random_vector(std::size_t n, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = uniform(lo, hi);
  return v;
}

inline rkpint::DenseMatrix random_matrix(std::size_t r, std::size_t c,
                                         double lo = -1.0, double hi = 1.0) {
  rkpint::DenseMatrix m(r, c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) m(i, j) = uniform(lo, hi);
  return m;
}

inline double max_abs_diff(const rkpint::DenseMatrix& a, const rkpint::DenseMatrix& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j)
      m = std::max(m, std::fabs(a(i, j) - b(i, j)));
  return m;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

inline double max_abs(const std::vector<double>& a) {
  double m = 0.0;
  for (double x : a) m = std::max(m, std::fabs(x));
  return m;
}

/// || I - M^T M ||_max, distance of M from orthogonality
inline double orthogonality_defect(const rkpint::DenseMatrix& m) {
  using namespace rkpint;
  DenseMatrix g = matmul(transpose(m), m);
  for (std::size_t i = 0; i < g.rows(); ++i) g(i, i) -= 1.0;
  return g.max_abs();
}

/// Probe an abstract apply with unit vectors to recover its dense matrix.
inline rkpint::DenseMatrix materialize(
    std::size_t rows, std::size_t cols,
    const std::function<void(const std::vector<double>&, std::vector<double>&)>& apply) {
  rkpint::DenseMatrix m(rows, cols);
  std::vector<double> e(cols, 0.0), y(rows, 0.0);
  for (std::size_t j = 0; j < cols; ++j) {
    e[j] = 1.0;
    apply(e, y);
    for (std::size_t i = 0; i < rows; ++i) m(i, j) = y[i];
    e[j] = 0.0;
  }
  return m;
}

}  // namespace testsupport
