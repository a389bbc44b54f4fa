#include "rkpint/chebyshev.hpp"

#include <cmath>
#include <random>

#include "rkpint/dense.hpp"
#include "rkpint/errors.hpp"

namespace rkpint {

ChebyshevMassSolver::ChebyshevMassSolver(const SparseMatrix& m, int steps, int power_iters,
                                         double widen)
    : m_(&m), steps_(steps) {
  if (m.rows() != m.cols()) throw DimensionError("ChebyshevMassSolver: matrix not square");
  if (steps < 1) throw DomainError("ChebyshevMassSolver: steps must be positive");
  const std::size_t n = m.rows();
  inv_diag_.resize(n);
  const auto d = m.diagonal();
  for (std::size_t i = 0; i < n; ++i) {
    if (d[i] == 0.0) throw SingularMatrixError("ChebyshevMassSolver: zero diagonal", i);
    inv_diag_[i] = 1.0 / d[i];
  }

  // power iterations on D^-1 M for the top of the interval, then on
  // (hi I - D^-1 M) for the bottom; fixed seed keeps this reproducible
  std::mt19937 gen(0x9e3779b9u);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n), w(n);
  auto normalize = [](std::vector<double>& t) {
    const double s = norm2(t);
    if (s > 0.0) scale(t, 1.0 / s);
  };
  auto apply_scaled = [&](const std::vector<double>& in, std::vector<double>& out) {
    m_->multiply(in, out);
    for (std::size_t i = 0; i < n; ++i) out[i] *= inv_diag_[i];
  };

  for (std::size_t i = 0; i < n; ++i) v[i] = u(gen);
  normalize(v);
  double hi = 1.0;
  for (int it = 0; it < power_iters; ++it) {
    apply_scaled(v, w);
    hi = dot(v, w);
    v = w;
    normalize(v);
  }

  for (std::size_t i = 0; i < n; ++i) v[i] = u(gen);
  normalize(v);
  double shift_top = 0.0;
  for (int it = 0; it < power_iters; ++it) {
    apply_scaled(v, w);
    for (std::size_t i = 0; i < n; ++i) w[i] = hi * v[i] - w[i];
    shift_top = dot(v, w);
    v = w;
    normalize(v);
  }
  const double lo = hi - shift_top;

  if (hi - lo <= 1e-12 * hi) {
    // degenerate spectrum (scaled identity): no widening, exact Richardson
    lambda_max_ = lambda_min_ = hi;
  } else {
    lambda_max_ = hi * (1.0 + widen);
    lambda_min_ = std::max(lo, 0.0) / (1.0 + widen);
  }
}

void ChebyshevMassSolver::solve(const std::vector<double>& b, std::vector<double>& x) const {
  const std::size_t n = m_->rows();
  if (b.size() != n) throw DimensionError("ChebyshevMassSolver::solve: rhs size mismatch");
  x.assign(n, 0.0);

  const double theta = 0.5 * (lambda_max_ + lambda_min_);
  const double delta = 0.5 * (lambda_max_ - lambda_min_);

  std::vector<double> r = b;  // residual of M x = b at x = 0
  std::vector<double> z(n), d(n), t(n);

  if (delta <= 1e-14 * theta) {
    // degenerate interval: plain preconditioned Richardson
    for (int k = 0; k < steps_; ++k) {
      for (std::size_t i = 0; i < n; ++i) x[i] += inv_diag_[i] * r[i] / theta;
      m_->multiply(x, t);
      for (std::size_t i = 0; i < n; ++i) r[i] = b[i] - t[i];
    }
    return;
  }

  // Chebyshev acceleration of the Jacobi-preconditioned iteration
  const double sigma1 = theta / delta;
  double rho = 1.0 / sigma1;
  for (std::size_t i = 0; i < n; ++i) d[i] = inv_diag_[i] * r[i] / theta;
  for (int k = 0; k < steps_; ++k) {
    axpy(1.0, d, x);
    m_->multiply(d, t);
    for (std::size_t i = 0; i < n; ++i) r[i] -= t[i];
    const double rho_next = 1.0 / (2.0 * sigma1 - rho);
    for (std::size_t i = 0; i < n; ++i)
      d[i] = rho_next * rho * d[i] + 2.0 * rho_next / delta * inv_diag_[i] * r[i];
    rho = rho_next;
  }
}

}  // namespace rkpint
