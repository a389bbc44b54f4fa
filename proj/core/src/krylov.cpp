#include "rkpint/krylov.hpp"

#include <cmath>

#include "rkpint/dense.hpp"
#include "rkpint/errors.hpp"

namespace rkpint {

LinearOperator identity_operator() {
  return [](const std::vector<double>& x, std::vector<double>& y) { y = x; };
}

namespace {

KrylovResult arnoldi_driver(const LinearOperator& a, const LinearOperator& precond,
                            const std::vector<double>& b, std::vector<double>& x,
                            const KrylovOptions& opts, bool flexible) {
  const std::size_t n = b.size();
  if (x.size() != n) throw DimensionError("gmres: guess/rhs size mismatch");
  KrylovResult res;
  const double bnorm = norm2(b);
  if (bnorm == 0.0) {
    x.assign(n, 0.0);
    res.converged = true;
    return res;
  }
  const bool fixed_count = opts.rel_tol == 0.0;
  const double tol_abs = opts.rel_tol * bnorm;
  const std::size_t m = opts.restart;

  std::vector<std::vector<double>> v(m + 1), z;
  if (flexible) z.resize(m);
  std::vector<std::vector<double>> h(m + 1, std::vector<double>(m, 0.0));
  std::vector<double> cs(m), sn(m), g(m + 1);
  std::vector<double> r(n), w(n), zj(n);

  while (true) {
    // true residual at the start of every cycle
    a(x, r);
    for (std::size_t i = 0; i < n; ++i) r[i] = b[i] - r[i];
    const double beta = norm2(r);
    res.relative_residual = beta / bnorm;
    if (!fixed_count && beta <= tol_abs) {
      res.converged = true;
      return res;
    }
    if (res.iterations >= opts.max_iters) {
      res.converged = fixed_count;
      return res;
    }
    if (beta == 0.0) {  // fixed-count mode with nothing left to do
      res.converged = true;
      return res;
    }

    v[0] = r;
    scale(v[0], 1.0 / beta);
    g.assign(m + 1, 0.0);
    g[0] = beta;

    std::size_t j = 0;
    bool lucky = false;
    for (; j < m; ++j) {
      if (flexible) {
        precond(v[j], z[j]);
        a(z[j], w);
      } else {
        precond(v[j], zj);
        a(zj, w);
      }
      // modified Gram-Schmidt
      for (std::size_t i = 0; i <= j; ++i) {
        h[i][j] = dot(w, v[i]);
        axpy(-h[i][j], v[i], w);
      }
      h[j + 1][j] = norm2(w);

      // previously accumulated Givens rotations, then the new one
      for (std::size_t i = 0; i < j; ++i) {
        const double t = cs[i] * h[i][j] + sn[i] * h[i + 1][j];
        h[i + 1][j] = -sn[i] * h[i][j] + cs[i] * h[i + 1][j];
        h[i][j] = t;
      }
      const double denom = std::hypot(h[j][j], h[j + 1][j]);
      if (denom == 0.0) {
        cs[j] = 1.0;
        sn[j] = 0.0;
      } else {
        cs[j] = h[j][j] / denom;
        sn[j] = h[j + 1][j] / denom;
      }
      h[j][j] = denom;
      g[j + 1] = -sn[j] * g[j];
      g[j] = cs[j] * g[j];

      ++res.iterations;
      res.history.push_back(std::fabs(g[j + 1]));

      if (h[j + 1][j] <= 1e-14 * beta) {  // lucky breakdown: subspace is invariant
        lucky = true;
        ++j;
        break;
      }
      v[j + 1] = w;
      scale(v[j + 1], 1.0 / h[j + 1][j]);

      if (!fixed_count && std::fabs(g[j + 1]) <= tol_abs) {
        ++j;
        break;
      }
      if (res.iterations >= opts.max_iters) {
        ++j;
        break;
      }
    }

    // back substitution on the j x j triangle
    std::vector<double> y(j);
    for (std::size_t ii = j; ii-- > 0;) {
      double s = g[ii];
      for (std::size_t k = ii + 1; k < j; ++k) s -= h[ii][k] * y[k];
      y[ii] = s / h[ii][ii];
    }
    if (flexible) {
      for (std::size_t k = 0; k < j; ++k) axpy(y[k], z[k], x);
    } else {
      std::vector<double> u(n, 0.0);
      for (std::size_t k = 0; k < j; ++k) axpy(y[k], v[k], u);
      precond(u, w);
      axpy(1.0, w, x);
    }

    if (fixed_count && res.iterations >= opts.max_iters) {
      a(x, r);
      for (std::size_t i = 0; i < n; ++i) r[i] = b[i] - r[i];
      res.relative_residual = norm2(r) / bnorm;
      res.converged = true;
      return res;
    }
    if (lucky && fixed_count) {
      a(x, r);
      for (std::size_t i = 0; i < n; ++i) r[i] = b[i] - r[i];
      res.relative_residual = norm2(r) / bnorm;
      res.converged = true;
      return res;
    }
    // otherwise loop: the cycle head recomputes the true residual and decides
  }
}

}  // namespace

KrylovResult gmres(const LinearOperator& a, const LinearOperator& precond,
                   const std::vector<double>& b, std::vector<double>& x,
                   const KrylovOptions& opts) {
  return arnoldi_driver(a, precond, b, x, opts, false);
}

KrylovResult fgmres(const LinearOperator& a, const LinearOperator& precond,
                    const std::vector<double>& b, std::vector<double>& x,
                    const KrylovOptions& opts) {
  return arnoldi_driver(a, precond, b, x, opts, true);
}

}  // namespace rkpint
