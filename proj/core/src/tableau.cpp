#include "rkpint/tableau.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

namespace rkpint {

namespace {

constexpr std::size_t kMaxStages = 12;

// ---- long double polynomial helpers (node computation) -----------------------

// Coefficients (ascending degree) of d^m/dx^m [ x^a (x-1)^b ].
std::vector<long double> node_polynomial(unsigned a, unsigned b, unsigned m) {
  // x^a (x-1)^b = sum_k C(b,k) (-1)^(b-k) x^(a+k)
  std::vector<long double> binom(b + 1);
  binom[0] = 1.0L;
  for (unsigned k = 1; k <= b; ++k)
    binom[k] = binom[k - 1] * static_cast<long double>(b - k + 1) / static_cast<long double>(k);

  const unsigned deg = a + b;
  std::vector<long double> coeff(deg + 1, 0.0L);
  for (unsigned k = 0; k <= b; ++k) {
    const long double sign = ((b - k) % 2 == 0) ? 1.0L : -1.0L;
    coeff[a + k] = sign * binom[k];
  }
  // differentiate m times
  for (unsigned d = 0; d < m; ++d) {
    for (std::size_t p = 0; p + 1 < coeff.size(); ++p)
      coeff[p] = coeff[p + 1] * static_cast<long double>(p + 1);
    coeff.pop_back();
  }
  return coeff;
}

long double poly_eval(const std::vector<long double>& c, long double x) {
  long double r = 0.0L;
  for (std::size_t i = c.size(); i-- > 0;) r = r * x + c[i];
  return r;
}

long double poly_eval_deriv(const std::vector<long double>& c, long double x) {
  long double r = 0.0L;
  for (std::size_t i = c.size(); i-- > 1;) r = r * x + c[i] * static_cast<long double>(i);
  return r;
}

// Roots of the node polynomial: companion-matrix eigenvalues give estimates,
// three Newton steps in long double pin them down.
std::vector<double> polynomial_roots(const std::vector<long double>& coeff) {
  const std::size_t deg = coeff.size() - 1;
  const long double lead = coeff[deg];
  DenseMatrix comp(deg, deg);
  for (std::size_t i = 1; i < deg; ++i) comp(i, i - 1) = 1.0;
  for (std::size_t i = 0; i < deg; ++i)
    comp(i, deg - 1) = static_cast<double>(-coeff[i] / lead);
  auto eig = eig_dense(comp);

  std::vector<double> roots(deg);
  for (std::size_t i = 0; i < deg; ++i) {
    long double x = eig[i].real();  // all node-polynomial roots are real
    for (int it = 0; it < 3; ++it) {
      const long double d = poly_eval_deriv(coeff, x);
      if (d == 0.0L) break;
      x -= poly_eval(coeff, x) / d;
    }
    roots[i] = static_cast<double>(x);
  }
  std::sort(roots.begin(), roots.end());
  for (double& r : roots) {
    if (r < 0.0 && r > -1e-12) r = 0.0;
    if (r > 1.0 && r < 1.0 + 1e-12) r = 1.0;
    if (r < 0.0 || r > 1.0) throw DomainError("make_tableau: node outside [0,1]");
  }
  return roots;
}

// Dense long double solve (partial pivoting); the Vandermonde systems behind
// collocation coefficients are tiny but ill-conditioned, and the extra
// precision keeps order-condition residuals near 1e-13 up to s = 9.
std::vector<long double> solve_ld(std::vector<std::vector<long double>> m,
                                  std::vector<long double> rhs) {
  const std::size_t n = rhs.size();
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t piv = k;
    for (std::size_t i = k + 1; i < n; ++i)
      if (fabsl(m[i][k]) > fabsl(m[piv][k])) piv = i;
    if (m[piv][k] == 0.0L) throw SingularMatrixError("make_tableau: Vandermonde solve", k);
    std::swap(m[k], m[piv]);
    std::swap(rhs[k], rhs[piv]);
    for (std::size_t i = k + 1; i < n; ++i) {
      const long double f = m[i][k] / m[k][k];
      if (f == 0.0L) continue;
      for (std::size_t j = k; j < n; ++j) m[i][j] -= f * m[k][j];
      rhs[i] -= f * rhs[k];
    }
  }
  std::vector<long double> x(n);
  for (std::size_t ii = n; ii-- > 0;) {
    long double s = rhs[ii];
    for (std::size_t j = ii + 1; j < n; ++j) s -= m[ii][j] * x[j];
    x[ii] = s / m[ii][ii];
  }
  return x;
}

// Solve sum_j w_j nodes_j^(k-1) = rhs_k for k = 1..n.
std::vector<long double> solve_moment_system(const std::vector<long double>& nodes,
                                             const std::vector<long double>& rhs) {
  const std::size_t n = rhs.size();
  std::vector<std::vector<long double>> m(n, std::vector<long double>(n));
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t j = 0; j < n; ++j)
      m[k][j] = (k == 0) ? 1.0L : m[k - 1][j] * nodes[j];
  return solve_ld(std::move(m), rhs);
}

}  // namespace

std::string family_name(RkFamily f) {
  switch (f) {
    case RkFamily::Gauss: return "gauss";
    case RkFamily::RadauIIA: return "radauiia";
    case RkFamily::LobattoIIIC: return "lobattoiiic";
  }
  return "?";
}

RkFamily parse_family(const std::string& name) {
  std::string s;
  for (char ch : name) s.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
  if (s == "gauss") return RkFamily::Gauss;
  if (s == "radauiia" || s == "radau") return RkFamily::RadauIIA;
  if (s == "lobattoiiic" || s == "lobatto") return RkFamily::LobattoIIIC;
  throw DomainError("unknown Runge-Kutta family '" + name + "'");
}

ButcherTableau make_tableau(RkFamily family, std::size_t s) {
  if (s == 0) throw DomainError("make_tableau: stage count must be positive");
  if (s > kMaxStages)
    throw DomainError("make_tableau: stage counts above " + std::to_string(kMaxStages) +
                      " are not supported");
  if (family == RkFamily::LobattoIIIC && s < 2)
    throw DomainError("make_tableau: Lobatto IIIC needs at least 2 stages");

  // Node polynomial d^m/dx^m [x^a (x-1)^b] per family.
  unsigned a = 0, b = 0, m = 0;
  const unsigned su = static_cast<unsigned>(s);
  switch (family) {
    case RkFamily::Gauss:      a = su;     b = su;     m = su;     break;
    case RkFamily::RadauIIA:   a = su - 1; b = su;     m = su - 1; break;
    case RkFamily::LobattoIIIC:a = su - 1; b = su - 1; m = su - 2; break;
  }
  const std::vector<double> nodes = polynomial_roots(node_polynomial(a, b, m));

  std::vector<long double> c_ld(s);
  for (std::size_t i = 0; i < s; ++i) c_ld[i] = nodes[i];

  ButcherTableau t;
  t.family = family;
  t.stages = s;
  t.c = nodes;
  t.a = DenseMatrix(s, s);
  t.b.resize(s);

  // Weights from the full moment system B(s).
  {
    std::vector<long double> rhs(s);
    for (std::size_t k = 0; k < s; ++k) rhs[k] = 1.0L / static_cast<long double>(k + 1);
    auto w = solve_moment_system(c_ld, rhs);
    for (std::size_t j = 0; j < s; ++j) t.b[j] = static_cast<double>(w[j]);
  }

  if (family == RkFamily::LobattoIIIC) {
    // First column pinned to b_1; remaining entries from C(s-1) over c_2..c_s
    // (c_1 = 0 makes the pinned column drop out of the higher moments).
    std::vector<long double> sub(c_ld.begin() + 1, c_ld.end());
    for (std::size_t i = 0; i < s; ++i) {
      std::vector<long double> rhs(s - 1);
      rhs[0] = c_ld[i] - static_cast<long double>(t.b[0]);
      for (std::size_t k = 2; k <= s - 1; ++k)
        rhs[k - 1] = powl(c_ld[i], static_cast<long double>(k)) / static_cast<long double>(k);
      auto row = solve_moment_system(sub, rhs);
      t.a(i, 0) = t.b[0];
      for (std::size_t j = 1; j < s; ++j) t.a(i, j) = static_cast<double>(row[j - 1]);
    }
    t.order = static_cast<int>(2 * s - 2);
    t.stiffly_accurate = true;
  } else {
    // Collocation condition C(s), one Vandermonde solve per row.
    for (std::size_t i = 0; i < s; ++i) {
      std::vector<long double> rhs(s);
      for (std::size_t k = 1; k <= s; ++k)
        rhs[k - 1] = powl(c_ld[i], static_cast<long double>(k)) / static_cast<long double>(k);
      auto row = solve_moment_system(c_ld, rhs);
      for (std::size_t j = 0; j < s; ++j) t.a(i, j) = static_cast<double>(row[j]);
    }
    t.order = (family == RkFamily::Gauss) ? static_cast<int>(2 * s)
                                          : static_cast<int>(2 * s - 1);
    t.stiffly_accurate = (family == RkFamily::RadauIIA);
  }
  return t;
}

RkSvdFactors rk_factorization(const ButcherTableau& t) {
  RkSvdFactors f;
  SvdResult svd = svd_real(t.a);
  if (svd.sigma.back() <= 0.0)
    throw DomainError("rk_factorization: coefficient matrix is singular");
  f.u = std::move(svd.u);
  f.v = std::move(svd.v);
  f.sigma = std::move(svd.sigma);
  f.w = matmul(transpose(f.u), f.v);
  f.w_spectrum = eig_dense(f.w);
  f.min_real_w = f.w_spectrum.front().real();
  for (const auto& z : f.w_spectrum) f.min_real_w = std::min(f.min_real_w, z.real());
  return f;
}

PolarInvarianceResult polar_invariance_check(const ButcherTableau& t, std::size_t trials) {
  PolarInvarianceResult res;
  RkSvdFactors f = rk_factorization(t);
  const std::size_t s = t.stages;

  // Distinctness gate: with a repeated singular value the SVD ambiguity is a
  // whole rotation group, not just signs, and this check does not apply.
  for (std::size_t i = 0; i + 1 < s; ++i)
    if (std::fabs(f.sigma[i] - f.sigma[i + 1]) <= 1e-10 * f.sigma.front()) return res;

  res.applicable = true;
  const std::size_t max_patterns = (s >= 20) ? trials : std::min<std::size_t>(trials, 1u << s);
  const auto& base = f.w_spectrum;
  for (std::size_t pat = 0; pat < max_patterns; ++pat) {
    // W' = D W D for the sign matrix D of this pattern.
    DenseMatrix wp = f.w;
    for (std::size_t i = 0; i < s; ++i)
      for (std::size_t j = 0; j < s; ++j) {
        const double di = (pat >> i) & 1u ? -1.0 : 1.0;
        const double dj = (pat >> j) & 1u ? -1.0 : 1.0;
        wp(i, j) *= di * dj;
      }
    auto spec = eig_dense(wp);
    double disc = 0.0;
    for (std::size_t k = 0; k < s; ++k) disc = std::max(disc, std::abs(spec[k] - base[k]));
    res.max_discrepancy = std::max(res.max_discrepancy, disc);
    ++res.trials;
  }
  return res;
}

}  // namespace rkpint
