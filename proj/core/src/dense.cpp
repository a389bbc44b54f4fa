#include "rkpint/dense.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace rkpint {

namespace {
constexpr double kEps = std::numeric_limits<double>::epsilon();

void require_square(const DenseMatrix& a, const char* who) {
  if (a.rows() != a.cols())
    throw DimensionError(std::string(who) + ": matrix must be square, got " +
                         std::to_string(a.rows()) + "x" + std::to_string(a.cols()));
}

void require_finite(const DenseMatrix& a, const char* who) {
  if (!a.all_finite())
    throw DomainError(std::string(who) + ": matrix has non-finite entries");
}
}  // namespace

double DenseMatrix::max_abs() const {
  double m = 0.0;
  for (double v : data_) m = std::max(m, std::fabs(v));
  return m;
}

bool DenseMatrix::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols() != b.rows()) throw DimensionError("matmul: inner dimensions disagree");
  DenseMatrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += aik * b(k, j);
    }
  return c;
}

DenseMatrix transpose(const DenseMatrix& a) {
  DenseMatrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

std::vector<double> matvec(const DenseMatrix& a, const std::vector<double>& x) {
  if (a.cols() != x.size()) throw DimensionError("matvec: size mismatch");
  std::vector<double> y(a.rows(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) s += a(i, j) * x[j];
    y[i] = s;
  }
  return y;
}

// ---------------------------------------------------------------- LU ----------

LuFactors lu_factor(const DenseMatrix& a) {
  require_square(a, "lu_factor");
  require_finite(a, "lu_factor");
  const std::size_t n = a.rows();
  LuFactors f;
  f.lu = a;
  f.perm.resize(n);
  for (std::size_t i = 0; i < n; ++i) f.perm[i] = static_cast<int>(i);
  const double pivot_floor = 1e-14 * a.max_abs();

  DenseMatrix& lu = f.lu;
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t piv = k;
    double best = std::fabs(lu(k, k));
    for (std::size_t i = k + 1; i < n; ++i) {
      const double v = std::fabs(lu(i, k));
      if (v > best) {
        best = v;
        piv = i;
      }
    }
    if (best <= pivot_floor)
      throw SingularMatrixError("lu_factor: pivot " + std::to_string(k) +
                                    " below threshold (matrix numerically singular)",
                                k);
    if (piv != k) {
      for (std::size_t j = 0; j < n; ++j) std::swap(lu(k, j), lu(piv, j));
      std::swap(f.perm[k], f.perm[piv]);
      f.sign = -f.sign;
    }
    const double inv = 1.0 / lu(k, k);
    for (std::size_t i = k + 1; i < n; ++i) {
      const double m = lu(i, k) * inv;
      lu(i, k) = m;
      if (m == 0.0) continue;
      for (std::size_t j = k + 1; j < n; ++j) lu(i, j) -= m * lu(k, j);
    }
  }
  return f;
}

void lu_solve_inplace(const LuFactors& f, std::vector<double>& x) {
  const std::size_t n = f.lu.rows();
  if (x.size() != n) throw DimensionError("lu_solve: rhs size mismatch");
  std::vector<double> b(n);
  for (std::size_t i = 0; i < n; ++i) b[i] = x[static_cast<std::size_t>(f.perm[i])];
  // forward (unit lower)
  for (std::size_t i = 0; i < n; ++i) {
    double s = b[i];
    for (std::size_t j = 0; j < i; ++j) s -= f.lu(i, j) * b[j];
    b[i] = s;
  }
  // backward
  for (std::size_t ii = n; ii-- > 0;) {
    double s = b[ii];
    for (std::size_t j = ii + 1; j < n; ++j) s -= f.lu(ii, j) * b[j];
    b[ii] = s / f.lu(ii, ii);
  }
  x = std::move(b);
}

double lu_determinant(const LuFactors& f) {
  double d = f.sign;
  for (std::size_t i = 0; i < f.lu.rows(); ++i) d *= f.lu(i, i);
  return d;
}

std::vector<double> solve_dense(const DenseMatrix& a, const std::vector<double>& b) {
  LuFactors f = lu_factor(a);
  std::vector<double> x = b;
  lu_solve_inplace(f, x);
  return x;
}

DenseMatrix solve_dense(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.rows() != b.rows()) throw DimensionError("solve_dense: rhs rows mismatch");
  LuFactors f = lu_factor(a);
  DenseMatrix x(b.rows(), b.cols());
  std::vector<double> col(b.rows());
  for (std::size_t j = 0; j < b.cols(); ++j) {
    for (std::size_t i = 0; i < b.rows(); ++i) col[i] = b(i, j);
    lu_solve_inplace(f, col);
    for (std::size_t i = 0; i < b.rows(); ++i) x(i, j) = col[i];
  }
  return x;
}

DenseMatrix dense_inverse(const DenseMatrix& a) {
  return solve_dense(a, DenseMatrix::identity(a.rows()));
}

// ---------------------------------------------------------------- SVD ---------

SvdResult svd_real(const DenseMatrix& a) {
  require_square(a, "svd_real");
  require_finite(a, "svd_real");
  const std::size_t n = a.rows();

  // Work on columns stored contiguously; rotations then touch adjacent memory.
  std::vector<std::vector<double>> w(n, std::vector<double>(n));
  std::vector<std::vector<double>> v(n, std::vector<double>(n, 0.0));
  for (std::size_t j = 0; j < n; ++j) {
    v[j][j] = 1.0;
    for (std::size_t i = 0; i < n; ++i) w[j][i] = a(i, j);
  }

  constexpr double tol = 1e-14;
  constexpr int max_sweeps = 60;
  // Columns whose norm collapses to roundoff (rank-deficient input) stay
  // parallel to the surviving ones forever; treat them as zero instead of
  // rotating against them.  The Frobenius norm is rotation invariant, so the
  // floor can be frozen up front.
  double fro2 = 0.0;
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t i = 0; i < n; ++i) fro2 += w[j][i] * w[j][i];
  const double dead2 = fro2 * kEps * kEps * static_cast<double>(n * n);
  bool converged = (n <= 1);
  for (int sweep = 0; sweep < max_sweeps && !converged; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double app = 0.0, aqq = 0.0, apq = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          app += w[p][i] * w[p][i];
          aqq += w[q][i] * w[q][i];
          apq += w[p][i] * w[q][i];
        }
        if (app <= dead2 || aqq <= dead2) continue;
        if (std::fabs(apq) <= tol * std::sqrt(app * aqq)) continue;
        rotated = true;
        const double zeta = (aqq - app) / (2.0 * apq);
        const double t =
            (zeta >= 0.0 ? 1.0 : -1.0) / (std::fabs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < n; ++i) {
          const double wp = w[p][i], wq = w[q][i];
          w[p][i] = c * wp - s * wq;
          w[q][i] = s * wp + c * wq;
          const double vp = v[p][i], vq = v[q][i];
          v[p][i] = c * vp - s * vq;
          v[q][i] = s * vp + c * vq;
        }
      }
    }
    if (!rotated) converged = true;
  }
  if (!converged)
    throw ConvergenceError("svd_real: Jacobi sweeps did not converge");

  SvdResult r;
  r.sigma.resize(n);
  std::vector<std::size_t> order(n);
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += w[j][i] * w[j][i];
    r.sigma[j] = std::sqrt(s);
    order[j] = j;
  }
  // stable sort keeps tied columns in sweep order -> deterministic output
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return r.sigma[x] > r.sigma[y]; });

  r.u = DenseMatrix(n, n);
  r.v = DenseMatrix(n, n);
  std::vector<double> sig(n);
  const double smax = n ? *std::max_element(r.sigma.begin(), r.sigma.end()) : 0.0;
  const double szero = smax * kEps * static_cast<double>(n);
  std::vector<std::size_t> empty_cols;
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t src = order[j];
    sig[j] = r.sigma[src];
    for (std::size_t i = 0; i < n; ++i) r.v(i, j) = v[src][i];
    if (sig[j] > szero) {
      const double inv = 1.0 / sig[j];
      for (std::size_t i = 0; i < n; ++i) r.u(i, j) = w[src][i] * inv;
    } else {
      empty_cols.push_back(j);
    }
  }
  r.sigma = std::move(sig);

  // Complete U on exactly-singular inputs: Gram-Schmidt unit vectors against
  // the columns already present.
  for (std::size_t j : empty_cols) {
    for (std::size_t k = 0; k < n; ++k) {
      std::vector<double> cand(n, 0.0);
      cand[k] = 1.0;
      for (std::size_t c = 0; c < n; ++c) {
        if (std::find(empty_cols.begin(), empty_cols.end(), c) != empty_cols.end() && c >= j)
          continue;  // not yet filled
        double d = 0.0;
        for (std::size_t i = 0; i < n; ++i) d += cand[i] * r.u(i, c);
        for (std::size_t i = 0; i < n; ++i) cand[i] -= d * r.u(i, c);
      }
      double nn = 0.0;
      for (double x : cand) nn += x * x;
      nn = std::sqrt(nn);
      if (nn > 0.5) {  // e_k had a healthy component outside span(U)
        for (std::size_t i = 0; i < n; ++i) r.u(i, j) = cand[i] / nn;
        break;
      }
    }
  }

  // Sign convention: make V's diagonal nonnegative where a paired flip suffices.
  for (std::size_t j = 0; j < n; ++j) {
    if (r.v(j, j) < 0.0) {
      for (std::size_t i = 0; i < n; ++i) {
        r.v(i, j) = -r.v(i, j);
        r.u(i, j) = -r.u(i, j);
      }
    }
  }
  return r;
}

// ---------------------------------------------------------- eigenvalues -------

namespace {

// Parlett-Reinsch balancing (radix 2): similarity scaling that roughly
// equalizes row and column norms; improves QR accuracy on badly scaled input.
void balance_in_place(DenseMatrix& a) {
  const std::size_t n = a.rows();
  const double radix = 2.0, sq = radix * radix;
  bool done = false;
  while (!done) {
    done = true;
    for (std::size_t i = 0; i < n; ++i) {
      double r = 0.0, c = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        c += std::fabs(a(j, i));
        r += std::fabs(a(i, j));
      }
      if (c == 0.0 || r == 0.0) continue;
      const double s = c + r;
      double f = 1.0, g = r / radix;
      while (c < g) {
        f *= radix;
        c *= sq;
      }
      g = r * radix;
      while (c > g) {
        f /= radix;
        c /= sq;
      }
      if ((c + r) / f < 0.95 * s) {
        done = false;
        const double ginv = 1.0 / f;
        for (std::size_t j = 0; j < n; ++j) a(i, j) *= ginv;
        for (std::size_t j = 0; j < n; ++j) a(j, i) *= f;
      }
    }
  }
}

// Householder reduction to upper Hessenberg form (eigenvalues only, so the
// transforms are not accumulated).
void hessenberg_in_place(DenseMatrix& a) {
  const std::size_t n = a.rows();
  if (n < 3) return;
  std::vector<double> v(n);
  for (std::size_t k = 0; k + 2 < n; ++k) {
    double xnorm = 0.0;
    for (std::size_t i = k + 1; i < n; ++i) xnorm += a(i, k) * a(i, k);
    xnorm = std::sqrt(xnorm);
    if (xnorm == 0.0) continue;
    const double alpha = (a(k + 1, k) >= 0.0) ? -xnorm : xnorm;
    double vnorm2 = 0.0;
    for (std::size_t i = k + 1; i < n; ++i) {
      v[i] = a(i, k);
      if (i == k + 1) v[i] -= alpha;
      vnorm2 += v[i] * v[i];
    }
    if (vnorm2 == 0.0) continue;
    const double beta = 2.0 / vnorm2;
    // A <- H A, H = I - beta v v^T (rows k+1..n-1)
    for (std::size_t j = k; j < n; ++j) {
      double s = 0.0;
      for (std::size_t i = k + 1; i < n; ++i) s += v[i] * a(i, j);
      s *= beta;
      for (std::size_t i = k + 1; i < n; ++i) a(i, j) -= s * v[i];
    }
    // A <- A H (columns k+1..n-1)
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = k + 1; j < n; ++j) s += a(i, j) * v[j];
      s *= beta;
      for (std::size_t j = k + 1; j < n; ++j) a(i, j) -= s * v[j];
    }
    a(k + 1, k) = alpha;
    for (std::size_t i = k + 2; i < n; ++i) a(i, k) = 0.0;
  }
}

// Francis double-shift QR on an upper Hessenberg matrix; returns unsorted
// eigenvalues.  Double shifts keep everything in real arithmetic and resolve
// deflated 2x2 blocks with one discriminant, so conjugate pairs are exact.
std::vector<std::complex<double>> hqr_eigenvalues(DenseMatrix& h, long iter_cap) {
  const long n = static_cast<long>(h.rows());
  std::vector<std::complex<double>> eig(static_cast<std::size_t>(n));
  double anorm = 0.0;
  for (long i = 0; i < n; ++i)
    for (long j = std::max(i - 1, 0L); j < n; ++j) anorm += std::fabs(h(i, j));
  if (anorm == 0.0) return eig;  // zero matrix

  long nn = n - 1;
  long total_its = 0;
  double t = 0.0;
  while (nn >= 0) {
    long its = 0;
    long l;
    for (;;) {
      for (l = nn; l >= 1; --l) {
        double s = std::fabs(h(l - 1, l - 1)) + std::fabs(h(l, l));
        if (s == 0.0) s = anorm;
        if (std::fabs(h(l, l - 1)) <= kEps * s) {
          h(l, l - 1) = 0.0;
          break;
        }
      }
      double x = h(nn, nn);
      if (l == nn) {  // single real eigenvalue deflates
        eig[static_cast<std::size_t>(nn)] = {x + t, 0.0};
        --nn;
        break;
      }
      double y = h(nn - 1, nn - 1);
      double w = h(nn, nn - 1) * h(nn - 1, nn);
      if (l == nn - 1) {  // 2x2 block deflates
        double p = 0.5 * (y - x);
        double q = p * p + w;
        double z = std::sqrt(std::fabs(q));
        x += t;
        if (q >= 0.0) {
          z = p + (p >= 0.0 ? z : -z);
          double e1 = x + z;
          double e2 = (z != 0.0) ? x - w / z : e1;
          eig[static_cast<std::size_t>(nn - 1)] = {e1, 0.0};
          eig[static_cast<std::size_t>(nn)] = {e2, 0.0};
        } else {
          eig[static_cast<std::size_t>(nn - 1)] = {x + p, z};
          eig[static_cast<std::size_t>(nn)] = {x + p, -z};
        }
        nn -= 2;
        break;
      }
      // no deflation: one double-shift QR sweep
      if (++total_its > iter_cap)
        throw ConvergenceError("eig_dense: QR iteration cap exceeded");
      if (its == 10 || its == 20) {  // exceptional shift to break cycles
        t += x;
        for (long i = 0; i <= nn; ++i) h(i, i) -= x;
        double s = std::fabs(h(nn, nn - 1)) + std::fabs(h(nn - 1, nn - 2));
        y = x = 0.75 * s;
        w = -0.4375 * s * s;
      }
      ++its;
      if (its > 60)
        throw ConvergenceError("eig_dense: eigenvalue failed to deflate in 60 sweeps");
      long m;
      double p = 0.0, q = 0.0, r = 0.0;
      for (m = nn - 2; m >= l; --m) {
        double z = h(m, m);
        double rr = x - z;
        double ss = y - z;
        p = (rr * ss - w) / h(m + 1, m) + h(m, m + 1);
        q = h(m + 1, m + 1) - z - rr - ss;
        r = h(m + 2, m + 1);
        double sc = std::fabs(p) + std::fabs(q) + std::fabs(r);
        p /= sc;
        q /= sc;
        r /= sc;
        if (m == l) break;
        const double u = std::fabs(h(m, m - 1)) * (std::fabs(q) + std::fabs(r));
        const double vv = std::fabs(p) * (std::fabs(h(m - 1, m - 1)) + std::fabs(z) +
                                          std::fabs(h(m + 1, m + 1)));
        if (u <= kEps * vv) break;
      }
      for (long i = m + 2; i <= nn; ++i) {
        h(i, i - 2) = 0.0;
        if (i != m + 2) h(i, i - 3) = 0.0;
      }
      for (long k = m; k <= nn - 1; ++k) {  // chase the bulge
        if (k != m) {
          p = h(k, k - 1);
          q = h(k + 1, k - 1);
          r = (k != nn - 1) ? h(k + 2, k - 1) : 0.0;
          x = std::fabs(p) + std::fabs(q) + std::fabs(r);
          if (x == 0.0) continue;
          p /= x;
          q /= x;
          r /= x;
        }
        double s = std::sqrt(p * p + q * q + r * r);
        if (p < 0.0) s = -s;
        if (s == 0.0) continue;
        if (k == m) {
          if (l != m) h(k, k - 1) = -h(k, k - 1);
        } else {
          h(k, k - 1) = -s * x;
        }
        p += s;
        x = p / s;
        y = q / s;
        double z = r / s;
        q /= p;
        r /= p;
        for (long j = k; j <= nn; ++j) {
          p = h(k, j) + q * h(k + 1, j);
          if (k != nn - 1) {
            p += r * h(k + 2, j);
            h(k + 2, j) -= p * z;
          }
          h(k + 1, j) -= p * y;
          h(k, j) -= p * x;
        }
        const long mmin = (nn < k + 3) ? nn : k + 3;
        for (long i = l; i <= mmin; ++i) {
          p = x * h(i, k) + y * h(i, k + 1);
          if (k != nn - 1) {
            p += z * h(i, k + 2);
            h(i, k + 2) -= p * r;
          }
          h(i, k + 1) -= p * q;
          h(i, k) -= p;
        }
      }
    }
  }
  return eig;
}

}  // namespace

std::vector<std::complex<double>> eig_dense(const DenseMatrix& a, std::size_t max_dim) {
  require_square(a, "eig_dense");
  if (a.rows() > max_dim)
    throw CapacityError("eig_dense: dimension " + std::to_string(a.rows()) +
                        " exceeds cap " + std::to_string(max_dim));
  require_finite(a, "eig_dense");
  const std::size_t n = a.rows();
  if (n == 0) return {};
  if (n == 1) return {{a(0, 0), 0.0}};

  DenseMatrix work = a;
  balance_in_place(work);
  hessenberg_in_place(work);
  auto eig = hqr_eigenvalues(work, 100L * static_cast<long>(n));
  std::sort(eig.begin(), eig.end(), [](const std::complex<double>& x,
                                       const std::complex<double>& y) {
    if (x.real() != y.real()) return x.real() < y.real();
    return x.imag() < y.imag();
  });
  return eig;
}

// -------------------------------------------------------------- helpers -------

double dot(const std::vector<double>& x, const std::vector<double>& y) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
  return s;
}

double norm2(const std::vector<double>& x) { return std::sqrt(dot(x, x)); }

void axpy(double alpha, const std::vector<double>& x, std::vector<double>& y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

void scale(std::vector<double>& x, double alpha) {
  for (double& v : x) v *= alpha;
}

}  // namespace rkpint
