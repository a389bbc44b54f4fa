#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <complex>
#include <random>
#include <vector>

#include "rkpint/dense.hpp"
#include "rkpint/errors.hpp"
#include "rkpint/fem.hpp"
#include "rkpint/kron.hpp"
#include "rkpint/krylov.hpp"
#include "rkpint/stage_precond.hpp"
#include "rkpint/tableau.hpp"
#include "support.hpp"

using namespace rkpint;
using testsupport::materialize;
using testsupport::max_abs;
using testsupport::max_abs_diff;
using testsupport::random_vector;

namespace {

// dense matrix of the heat stage operator, assembled independently of the
// KronOperator plumbing: kron(I,M) + tau*kron(A,K) entry by entry
DenseMatrix dense_heat_stage(const HeatDiscretization& d, const ButcherTableau& tab, double tau) {
  const std::size_t n = d.n_dof(), s = tab.stages;
  DenseMatrix m = d.mass().to_dense();
  DenseMatrix k = d.stiffness().to_dense();
  DenseMatrix out(s * n, s * n);
  for (std::size_t i = 0; i < s; ++i)
    for (std::size_t j = 0; j < s; ++j)
      for (std::size_t p = 0; p < n; ++p)
        for (std::size_t q = 0; q < n; ++q)
          out(i * n + p, j * n + q) =
              (i == j ? m(p, q) : 0.0) + tau * tab.a(i, j) * k(p, q);
  return out;
}

std::vector<double> dense_apply(const DenseMatrix& a, const std::vector<double>& x) {
  return matvec(a, x);
}

}  // namespace

TEST_CASE("heat stage operator matches dense kron assembly") {
  auto d = assemble_heat(2, 1);
  auto tab = make_tableau(RkFamily::RadauIIA, 3);
  const double tau = 0.37;
  HeatStageSystem sys(d, tab, tau);
  REQUIRE(sys.size() == 3 * d.n_dof());
  DenseMatrix ref = dense_heat_stage(d, tab, tau);
  DenseMatrix got = materialize(sys.size(), sys.size(), [&](const auto& x, auto& y) {
    sys.apply(x, y);
  });
  CHECK(max_abs_diff(ref, got) <= 1e-12);
}

TEST_CASE("heat svd preconditioner is the exact inverse of its defining matrix") {
  // forward P_RK = (U (x) I) (I (x) M + tau Sigma (x) K) (V^T (x) I), applied
  // through the kron pieces; composing with the inverse must give the identity
  auto d = assemble_heat(2, 1);
  auto tab = make_tableau(RkFamily::Gauss, 2);
  const double tau = 0.21;
  HeatRkPreconditioner prk(d, tab, tau, BlockSolvePolicy::exact);
  const auto& f = prk.factors();
  const std::size_t n = d.n_dof(), s = tab.stages;

  DenseMatrix sig(s, s);
  for (std::size_t i = 0; i < s; ++i) sig(i, i) = f.sigma[i];
  KronOperator mid(s, s, n, n);
  mid.add_term(DenseMatrix::identity(s), d.mass(), 1.0);
  mid.add_term(sig, d.stiffness(), tau);

  std::mt19937 gen(41u);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<double> x(s * n);
    for (double& t : x) t = u(gen);
    std::vector<double> w1, w2, w3, back;
    coupling_transform(transpose(f.v), n, x, w1);
    mid.apply(w1, w2);
    coupling_transform(f.u, n, w2, w3);  // w3 = P_RK x
    prk.apply(w3, back);
    CHECK(max_abs_diff(back, x) <= 1e-11 * std::max(1.0, max_abs(x)));
  }
}

TEST_CASE("single-stage preconditioners collapse to one shifted solve") {
  auto d = assemble_heat(2, 1);
  auto tab = make_tableau(RkFamily::RadauIIA, 1);  // A = [1]
  const double tau = 0.5;
  HeatRkPreconditioner prk(d, tab, tau, BlockSolvePolicy::exact);
  HeatMnsPreconditioner pmns(d, tab, tau, BlockSolvePolicy::exact);
  // sign = U*V for the 1x1 SVD; A=[1] gives +1 and sigma = 1
  CHECK(prk.factors().u(0, 0) * prk.factors().v(0, 0) == doctest::Approx(1.0).epsilon(1e-14));

  auto shifted = d.mass().add_scaled(d.stiffness(), tau);
  auto lu = lu_factor(shifted.to_dense());
  auto r = random_vector(d.n_dof());
  std::vector<double> ref = r;
  lu_solve_inplace(lu, ref);
  std::vector<double> z1, z2;
  prk.apply(r, z1);
  pmns.apply(r, z2);
  CHECK(max_abs_diff(z1, ref) <= 1e-13);
  CHECK(max_abs_diff(z2, ref) <= 1e-13);
}

TEST_CASE("preconditioner applies are linear") {
  auto d = assemble_heat(2, 1);
  auto tab = make_tableau(RkFamily::LobattoIIIC, 3);
  HeatRkPreconditioner prk(d, tab, 0.13, BlockSolvePolicy::multigrid);
  const std::size_t dim = 3 * d.n_dof();
  auto x = random_vector(dim), y = random_vector(dim);
  std::vector<double> zx, zy, zsum, combo(dim);
  prk.apply(x, zx);
  prk.apply(y, zy);
  for (std::size_t i = 0; i < dim; ++i) combo[i] = 2.0 * x[i] - 3.0 * y[i];
  prk.apply(combo, zsum);
  for (std::size_t i = 0; i < dim; ++i) combo[i] = 2.0 * zx[i] - 3.0 * zy[i];
  CHECK(max_abs_diff(zsum, combo) <= 1e-11 * std::max(1.0, max_abs(combo)));
}

TEST_CASE("heat spectrum lands in the right half of the unit circle") {
  // 3-stage Gauss, Q2, l=3, tau=0.2: every eigenvalue of the preconditioned
  // stage matrix has |lambda| <= 1 and positive real part
  auto d = assemble_heat(3, 2);
  auto tab = make_tableau(RkFamily::Gauss, 3);
  const double tau = 0.2;
  HeatStageSystem sys(d, tab, tau);
  HeatRkPreconditioner prk(d, tab, tau, BlockSolvePolicy::exact);
  DenseMatrix pm = materialize(sys.size(), sys.size(), [&](const auto& x, auto& y) {
    std::vector<double> t;
    sys.apply(x, t);
    prk.apply(t, y);
  });
  auto eig = eig_dense(pm);
  for (const auto& l : eig) {
    CHECK(std::abs(l) <= 1.0 + 1e-8);
    CHECK(l.real() > 0.0);
  }
}

TEST_CASE("shared singular subspace pins unit eigenvalues of the preconditioned matrix") {
  // synthetic factors: U and V agree on their first k columns, so W = U^T V
  // has eigenvalue 1 with multiplicity k and the preconditioned stage matrix
  // picks up eigenvalue 1 with geometric multiplicity at least k*n.  Checked
  // as a rank bound on (P^-1 T - I).
  const std::size_t s = 4, k = 2, n = 20;
  std::mt19937 gen(2024u);
  std::uniform_real_distribution<double> u(-1.0, 1.0);

  // orthogonal Q (s x s) from the QR-like Gram-Schmidt of a random matrix,
  // and an independent orthogonal R on the trailing s-k coordinates
  auto orthogonalize = [&](DenseMatrix m) {
    for (std::size_t j = 0; j < m.cols(); ++j) {
      for (std::size_t p = 0; p < j; ++p) {
        double dotp = 0.0;
        for (std::size_t i = 0; i < m.rows(); ++i) dotp += m(i, j) * m(i, p);
        for (std::size_t i = 0; i < m.rows(); ++i) m(i, j) -= dotp * m(i, p);
      }
      double nrm = 0.0;
      for (std::size_t i = 0; i < m.rows(); ++i) nrm += m(i, j) * m(i, j);
      nrm = std::sqrt(nrm);
      for (std::size_t i = 0; i < m.rows(); ++i) m(i, j) /= nrm;
    }
    return m;
  };
  DenseMatrix q(s, s), r2(s - k, s - k);
  for (std::size_t i = 0; i < s; ++i)
    for (std::size_t j = 0; j < s; ++j) q(i, j) = u(gen);
  for (std::size_t i = 0; i < s - k; ++i)
    for (std::size_t j = 0; j < s - k; ++j) r2(i, j) = u(gen);
  q = orthogonalize(q);
  r2 = orthogonalize(r2);
  DenseMatrix v = q, uu = q;
  // rotate the trailing columns of U by R: U = [Q_1 | Q_2 R]
  for (std::size_t i = 0; i < s; ++i)
    for (std::size_t j = 0; j < s - k; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < s - k; ++p) acc += q(i, k + p) * r2(p, j);
      uu(i, k + j) = acc;
    }
  std::vector<double> sigma = {2.0, 1.4, 0.9, 0.5};

  // synthetic spd spatial pair: 1-d mass/stiffness on n interior nodes
  std::vector<Triplet> tm, tk;
  const double h = 1.0 / (n + 1);
  for (int i = 0; i < static_cast<int>(n); ++i) {
    tm.push_back({i, i, 4.0 * h / 6.0});
    tk.push_back({i, i, 2.0 / h});
    if (i + 1 < static_cast<int>(n)) {
      tm.push_back({i, i + 1, h / 6.0});
      tm.push_back({i + 1, i, h / 6.0});
      tk.push_back({i, i + 1, -1.0 / h});
      tk.push_back({i + 1, i, -1.0 / h});
    }
  }
  auto m = SparseMatrix::from_triplets(n, n, tm);
  auto kk = SparseMatrix::from_triplets(n, n, tk);

  const double tau = 0.3;
  // A_hat = U Sigma V^T
  DenseMatrix ahat(s, s);
  for (std::size_t i = 0; i < s; ++i)
    for (std::size_t j = 0; j < s; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < s; ++p) acc += uu(i, p) * sigma[p] * v(j, p);
      ahat(i, j) = acc;
    }
  KronOperator top(s, s, n, n);
  top.add_term(DenseMatrix::identity(s), m, 1.0);
  top.add_term(ahat, kk, tau);

  std::vector<LuFactors> blocks;
  for (std::size_t i = 0; i < s; ++i)
    blocks.push_back(lu_factor(m.add_scaled(kk, tau * sigma[i]).to_dense()));

  DenseMatrix pmt = materialize(s * n, s * n, [&](const auto& x, auto& y) {
    std::vector<double> t, w;
    top.apply(x, t);
    coupling_transform(transpose(uu), n, t, w);
    std::vector<double> blk(n);
    for (std::size_t i = 0; i < s; ++i) {
      std::copy(w.begin() + static_cast<long>(i * n), w.begin() + static_cast<long>((i + 1) * n),
                blk.begin());
      lu_solve_inplace(blocks[i], blk);
      std::copy(blk.begin(), blk.end(), w.begin() + static_cast<long>(i * n));
    }
    coupling_transform(v, n, w, y);
  });
  for (std::size_t i = 0; i < s * n; ++i) pmt(i, i) -= 1.0;
  auto svd = svd_real(pmt);
  std::size_t rank = 0;
  for (double sv : svd.sigma)
    if (sv > 1e-8 * svd.sigma.front()) ++rank;
  CHECK(rank <= (s - k) * n);
  CHECK(rank > 0);  // the trailing block does perturb the spectrum
}

TEST_CASE("gmres with stage preconditioners agrees with the dense solve") {
  auto d = assemble_heat(3, 1);
  auto tab = make_tableau(RkFamily::Gauss, 2);
  const double tau = 0.1;
  HeatStageSystem sys(d, tab, tau);
  DenseMatrix dense = dense_heat_stage(d, tab, tau);
  auto lu = lu_factor(dense);
  auto b = random_vector(sys.size());
  std::vector<double> ref = b;
  lu_solve_inplace(lu, ref);

  KrylovOptions opts;
  opts.rel_tol = 1e-12;
  for (auto policy : {BlockSolvePolicy::exact, BlockSolvePolicy::multigrid}) {
    HeatRkPreconditioner prk(d, tab, tau, policy);
    HeatMnsPreconditioner pmns(d, tab, tau, policy);
    std::vector<double> x1(sys.size(), 0.0), x2(sys.size(), 0.0);
    auto res1 = gmres(sys.as_operator(), prk.as_operator(), b, x1, opts);
    auto res2 = gmres(sys.as_operator(), pmns.as_operator(), b, x2, opts);
    CHECK(res1.converged);
    CHECK(res2.converged);
    CHECK(max_abs_diff(x1, ref) <= 1e-8 * std::max(1.0, max_abs(ref)));
    CHECK(max_abs_diff(x2, ref) <= 1e-8 * std::max(1.0, max_abs(ref)));
  }
}

TEST_CASE("stokes stage operator matches dense block assembly") {
  auto d = assemble_stokes(2);
  auto tab = make_tableau(RkFamily::Gauss, 2);
  const double tau = 0.25, gamma = 1e-4;
  StokesStageSystem sys(d, tab, tau, gamma);
  const std::size_t s = 2, nv = d.n_vel(), np = d.n_pres();
  REQUIRE(sys.size() == s * (nv + np));

  DenseMatrix mv = SparseMatrix::block_diag(d.velocity.finest().mass_int, 2).to_dense();
  DenseMatrix kv = SparseMatrix::block_diag(d.velocity.finest().stiffness_int, 2).to_dense();
  DenseMatrix bd = d.b_int.to_dense();
  DenseMatrix bt = d.bt_int.to_dense();
  DenseMatrix mp = d.mass_p().to_dense();
  DenseMatrix a2 = matmul(tab.a, tab.a);

  const std::size_t dim = sys.size();
  DenseMatrix ref(dim, dim);
  auto put = [&](std::size_t bi, std::size_t bj, std::size_t roff, std::size_t coff,
                 const DenseMatrix& blk, double w) {
    for (std::size_t p = 0; p < blk.rows(); ++p)
      for (std::size_t q = 0; q < blk.cols(); ++q) ref(roff + p, coff + q) += w * blk(p, q);
    (void)bi;
    (void)bj;
  };
  for (std::size_t i = 0; i < s; ++i)
    for (std::size_t j = 0; j < s; ++j) {
      if (i == j) put(i, j, i * nv, j * nv, mv, 1.0);
      put(i, j, i * nv, j * nv, kv, tau * tab.a(i, j));
      put(i, j, i * nv, s * nv + j * np, bt, tau * tab.a(i, j));
      put(i, j, s * nv + i * np, j * nv, bd, tau * tab.a(i, j));
      put(i, j, s * nv + i * np, s * nv + j * np, mp, -tau * tau * gamma * a2(i, j));
    }
  DenseMatrix got = materialize(dim, dim, [&](const auto& x, auto& y) { sys.apply(x, y); });
  CHECK(max_abs_diff(ref, got) <= 1e-12);
}

TEST_CASE("perturbation block structure and factorized form") {
  auto d = assemble_stokes(2);
  auto tab = make_tableau(RkFamily::Gauss, 2);
  const double tau = 0.25, gamma = 1e-4;
  StokesStageSystem plain(d, tab, tau, 0.0);
  StokesStageSystem pert(d, tab, tau, gamma);
  const std::size_t s = 2, nv = d.n_vel(), np = d.n_pres(), dim = pert.size();

  auto x = random_vector(dim);
  std::vector<double> y0, y1;
  plain.apply(x, y0);
  pert.apply(x, y1);
  // velocity rows identical; pressure rows differ by -tau^2 gamma (A^2 (x) M_p) x_p
  for (std::size_t i = 0; i < s * nv; ++i) CHECK(y0[i] == y1[i]);
  std::vector<double> xp(x.begin() + static_cast<long>(s * nv), x.end());
  KronOperator pblock(s, s, np, np);
  pblock.add_term(matmul(tab.a, tab.a), d.mass_p(), -tau * tau * gamma);
  std::vector<double> expectp;
  pblock.apply(xp, expectp);
  for (std::size_t i = 0; i < s * np; ++i)
    CHECK(y1[s * nv + i] - y0[s * nv + i] == doctest::Approx(expectp[i]).epsilon(1e-10));

  // factorized form -tau^2 (A (x) I)(gamma I (x) M_p)(A (x) I) agrees
  std::vector<double> t1, t2, t3(s * np);
  coupling_transform(tab.a, np, xp, t1);
  std::vector<double> mp_t(np);
  for (std::size_t i = 0; i < s; ++i) {
    std::vector<double> blk(t1.begin() + static_cast<long>(i * np),
                            t1.begin() + static_cast<long>((i + 1) * np));
    d.mass_p().multiply(blk, mp_t);
    for (std::size_t k2 = 0; k2 < np; ++k2) t3[i * np + k2] = gamma * mp_t[k2];
  }
  coupling_transform(tab.a, np, t3, t2);
  for (double& t : t2) t *= -tau * tau;
  CHECK(max_abs_diff(t2, expectp) <= 1e-12 * std::max(1.0, max_abs(expectp)));

  // unperturbed pressure-pressure block is exactly zero
  std::vector<double> xonly(dim, 0.0);
  std::copy(xp.begin(), xp.end(), xonly.begin() + static_cast<long>(s * nv));
  std::vector<double> yz;
  plain.apply(xonly, yz);
  for (std::size_t i = 0; i < s * np; ++i) CHECK(yz[s * nv + i] == 0.0);

  // perturbation scales exactly as tau^2 with a fixed coupling
  StokesStageSystem pert2(d, tab, 2.0 * tau, gamma);
  std::vector<double> ya, yb;
  pert.apply(xonly, ya);
  pert2.apply(xonly, yb);
  for (std::size_t i = 0; i < s * np; ++i)
    CHECK(yb[s * nv + i] == doctest::Approx(4.0 * ya[s * nv + i]).epsilon(1e-10));
}

TEST_CASE("perturbation makes the stage operator invertible") {
  auto d = assemble_stokes(2);
  auto tab = make_tableau(RkFamily::Gauss, 2);
  const double tau = 0.25;
  const std::size_t s = 2, nv = d.n_vel(), np = d.n_pres();

  // explicit null vector of the unperturbed operator: stage-constant pressures
  StokesStageSystem plain(d, tab, tau, 0.0);
  StokesStageSystem pert(d, tab, tau, 1e-4);
  std::vector<double> x0(plain.size(), 0.0);
  for (std::size_t i = 0; i < s; ++i)
    for (std::size_t k = 0; k < np; ++k) x0[s * nv + i * np + k] = (i == 0) ? 1.0 : -0.7;
  std::vector<double> y0, y1;
  plain.apply(x0, y0);
  pert.apply(x0, y1);
  CHECK(max_abs(y0) <= 1e-12);
  CHECK(max_abs(y1) > 1e-8);  // the perturbation removes the kernel
}

TEST_CASE("stokes preconditioner inverts its block-triangular definition") {
  // forward P = blkdiag(U (x) I) [[I(x)Mv + tau Sigma(x)Kv, 0],
  //                               [tau Sigma (x) B, S_blk]] blkdiag(V^T (x) I)
  // with S_blk = -tau^2 (Sigma V^T (x) I) S_int (U Sigma (x) I) and
  // S_int = (I (x) Kp_pinned) (I (x) Mp + tau A (x) Kp_pinned)^-1 (I (x) Mp);
  // the production apply must be its exact inverse under the exact policy
  auto d = assemble_stokes(2);
  auto tab = make_tableau(RkFamily::Gauss, 2);
  const double tau = 0.25;
  StokesRkPreconditioner prk(d, tab, tau, 1e-4, BlockSolvePolicy::exact);
  const auto& f = prk.factors();
  const std::size_t s = 2, ns = d.n_scalar(), nv = d.n_vel(), np = d.n_pres();
  const std::size_t dim = s * (nv + np);

  auto kp_pin = d.pressure.finest().stiffness_full.pinned(0);
  KronOperator midk(s, s, np, np);
  midk.add_term(DenseMatrix::identity(s), d.mass_p(), 1.0);
  midk.add_term(tab.a, kp_pin, tau);
  DenseMatrix middense = materialize(s * np, s * np, [&](const auto& x, auto& y) {
    midk.apply(x, y);
  });
  auto midlu = lu_factor(middense);

  DenseMatrix sig(s, s), sig_vt(s, s), u_sig(s, s);
  for (std::size_t i = 0; i < s; ++i) sig(i, i) = f.sigma[i];
  sig_vt = matmul(sig, transpose(f.v));
  u_sig = matmul(f.u, sig);

  auto s_int = [&](const std::vector<double>& x, std::vector<double>& y) {
    std::vector<double> t(s * np), mp_b(np);
    for (std::size_t i = 0; i < s; ++i) {
      std::vector<double> blk(x.begin() + static_cast<long>(i * np),
                              x.begin() + static_cast<long>((i + 1) * np));
      d.mass_p().multiply(blk, mp_b);
      std::copy(mp_b.begin(), mp_b.end(), t.begin() + static_cast<long>(i * np));
    }
    lu_solve_inplace(midlu, t);
    y.resize(s * np);
    std::vector<double> kp_b(np);
    for (std::size_t i = 0; i < s; ++i) {
      std::vector<double> blk(t.begin() + static_cast<long>(i * np),
                              t.begin() + static_cast<long>((i + 1) * np));
      kp_pin.multiply(blk, kp_b);
      std::copy(kp_b.begin(), kp_b.end(), y.begin() + static_cast<long>(i * np));
    }
  };

  // forward apply of the full preconditioner
  auto forward = [&](const std::vector<double>& x, std::vector<double>& y) {
    const std::vector<double> xv(x.begin(), x.begin() + static_cast<long>(s * nv));
    const std::vector<double> xp(x.begin() + static_cast<long>(s * nv), x.end());
    std::vector<double> wv, wp;
    coupling_transform(transpose(f.v), nv, xv, wv);
    coupling_transform(transpose(f.v), np, xp, wp);

    // velocity rows: (I (x) Mv2 + tau Sigma (x) Kv2) wv
    std::vector<double> tv(s * nv, 0.0), mw, kw;
    const auto& mvs = d.velocity.finest().mass_int;
    const auto& kvs = d.velocity.finest().stiffness_int;
    for (std::size_t i = 0; i < s; ++i)
      for (std::size_t half = 0; half < 2; ++half) {
        std::vector<double> blk(wv.begin() + static_cast<long>(i * nv + half * ns),
                                wv.begin() + static_cast<long>(i * nv + half * ns + ns));
        mvs.multiply(blk, mw);
        kvs.multiply(blk, kw);
        for (std::size_t k2 = 0; k2 < ns; ++k2)
          tv[i * nv + half * ns + k2] = mw[k2] + tau * f.sigma[i] * kw[k2];
      }

    // pressure rows: tau Sigma (x) B wv + S_blk wp
    std::vector<double> tp(s * np, 0.0), bv;
    for (std::size_t i = 0; i < s; ++i) {
      std::vector<double> blk(wv.begin() + static_cast<long>(i * nv),
                              wv.begin() + static_cast<long>((i + 1) * nv));
      d.b_int.multiply(blk, bv);
      for (std::size_t k2 = 0; k2 < np; ++k2) tp[i * np + k2] = tau * f.sigma[i] * bv[k2];
    }
    std::vector<double> q1, q2, q3;
    coupling_transform(u_sig, np, wp, q1);
    s_int(q1, q2);
    coupling_transform(sig_vt, np, q2, q3);
    for (std::size_t k2 = 0; k2 < s * np; ++k2) tp[k2] += -tau * tau * q3[k2];

    std::vector<double> yv, yp;
    coupling_transform(f.u, nv, tv, yv);
    coupling_transform(f.u, np, tp, yp);
    y.resize(dim);
    std::copy(yv.begin(), yv.end(), y.begin());
    std::copy(yp.begin(), yp.end(), y.begin() + static_cast<long>(s * nv));
  };

  std::mt19937 gen(99u);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<double> x(dim);
    for (double& t : x) t = u(gen);
    std::vector<double> fx, back;
    forward(x, fx);
    prk.apply(fx, back);
    CHECK(max_abs_diff(back, x) <= 1e-10 * std::max(1.0, max_abs(x)));
  }
}

TEST_CASE("schur approximation inverse composes to identity with its forward map") {
  // S_rk = -tau^2 (A (x) I) S_int (A (x) I) built densely (with the pinned
  // Laplacian), then inverted by the production apply
  auto d = assemble_stokes(2);
  auto tab = make_tableau(RkFamily::Gauss, 2);
  const double tau = 0.25;
  StokesRkPreconditioner prk(d, tab, tau, 1e-4, BlockSolvePolicy::exact);
  const std::size_t s = 2, np = d.n_pres(), dim = s * np;

  auto kp_pin = d.pressure.finest().stiffness_full.pinned(0);
  KronOperator midk(s, s, np, np);
  midk.add_term(DenseMatrix::identity(s), d.mass_p(), 1.0);
  midk.add_term(tab.a, kp_pin, tau);
  auto midlu = lu_factor(materialize(dim, dim, [&](const auto& x, auto& y) { midk.apply(x, y); }));

  auto forward = [&](const std::vector<double>& x, std::vector<double>& y) {
    std::vector<double> t1, t2(dim), mp_b(np), kp_b(np);
    coupling_transform(tab.a, np, x, t1);
    for (std::size_t i = 0; i < s; ++i) {
      std::vector<double> blk(t1.begin() + static_cast<long>(i * np),
                              t1.begin() + static_cast<long>((i + 1) * np));
      d.mass_p().multiply(blk, mp_b);
      std::copy(mp_b.begin(), mp_b.end(), t2.begin() + static_cast<long>(i * np));
    }
    lu_solve_inplace(midlu, t2);
    std::vector<double> t3(dim);
    for (std::size_t i = 0; i < s; ++i) {
      std::vector<double> blk(t2.begin() + static_cast<long>(i * np),
                              t2.begin() + static_cast<long>((i + 1) * np));
      kp_pin.multiply(blk, kp_b);
      std::copy(kp_b.begin(), kp_b.end(), t3.begin() + static_cast<long>(i * np));
    }
    coupling_transform(tab.a, np, t3, y);
    for (double& t : y) t *= -tau * tau;
  };

  for (int trial = 0; trial < 5; ++trial) {
    auto x = random_vector(dim);
    std::vector<double> fx, back;
    forward(x, fx);
    prk.apply_schur_inverse(fx, back);
    CHECK(max_abs_diff(back, x) <= 1e-10 * std::max(1.0, max_abs(x)));
  }
}

TEST_CASE("schur inverse carries the tau^2 prefactor and affine middle structure") {
  // -tau^2 S^-1(tau) = (A^-2 (x) Kp^-1) + tau (A^-1 (x) Mp^-1): affine in tau,
  // with the slope equal to the plain mass solve under the inverse coupling.
  // This pins both the tau^2 prefactor and the middle-operator structure.
  auto d = assemble_stokes(2);
  auto tab = make_tableau(RkFamily::RadauIIA, 2);
  const std::size_t s = 2, np = d.n_pres(), dim = s * np;
  const double tau = 0.2;

  StokesRkPreconditioner p1(d, tab, tau, 1e-4, BlockSolvePolicy::exact);
  StokesRkPreconditioner p2(d, tab, 2.0 * tau, 1e-4, BlockSolvePolicy::exact);
  StokesRkPreconditioner p3(d, tab, 3.0 * tau, 1e-4, BlockSolvePolicy::exact);

  auto x = random_vector(dim);
  std::vector<double> g1, g2, g3;
  p1.apply_schur_inverse(x, g1);
  p2.apply_schur_inverse(x, g2);
  p3.apply_schur_inverse(x, g3);
  for (std::size_t i = 0; i < dim; ++i) {
    g1[i] *= -tau * tau;
    g2[i] *= -4.0 * tau * tau;
    g3[i] *= -9.0 * tau * tau;
  }
  // second difference of an affine function vanishes
  double scale = std::max({max_abs(g1), max_abs(g2), max_abs(g3), 1.0});
  for (std::size_t i = 0; i < dim; ++i)
    CHECK(std::fabs(g3[i] - 2.0 * g2[i] + g1[i]) <= 1e-10 * scale);

  // slope check: g(2tau) - g(tau) = tau (A^-1 (x) Mp^-1) x
  DenseMatrix ainv = dense_inverse(tab.a);
  auto mplu = lu_factor(d.mass_p().to_dense());
  std::vector<double> t1, slope(dim);
  coupling_transform(ainv, np, x, t1);
  for (std::size_t i = 0; i < s; ++i) {
    std::vector<double> blk(t1.begin() + static_cast<long>(i * np),
                            t1.begin() + static_cast<long>((i + 1) * np));
    lu_solve_inplace(mplu, blk);
    std::copy(blk.begin(), blk.end(), slope.begin() + static_cast<long>(i * np));
  }
  for (std::size_t i = 0; i < dim; ++i)
    CHECK(g2[i] - g1[i] == doctest::Approx(tau * slope[i]).epsilon(1e-8));
}

TEST_CASE("schur approximation clusters the true schur complement") {
  // dense oracle at l=3, 3-stage Gauss, tau=0.2 (unperturbed Schur
  // complement): s structural zeros from the stage-constant pressures, and
  // the nonzero eigenvalues cluster with positive real part.  Measured
  // spectrum: moduli in [0.274, 0.980], ratio 3.57, min real part 0.274.
  auto d = assemble_stokes(3);
  auto tab = make_tableau(RkFamily::Gauss, 3);
  const double tau = 0.2;
  const std::size_t s = 3, ns = d.n_scalar(), np = d.n_pres(), dim = s * np;

  // true Schur complement through per-component dense velocity solves
  KronOperator tc(s, s, ns, ns);
  tc.add_term(DenseMatrix::identity(s), d.velocity.finest().mass_int, 1.0);
  tc.add_term(tab.a, d.velocity.finest().stiffness_int, tau);
  auto tlu = lu_factor(materialize(s * ns, s * ns, [&](const auto& x, auto& y) {
    tc.apply(x, y);
  }));
  KronOperator grad(s, s, 2 * ns, np), divo(s, s, np, 2 * ns);
  grad.add_term(tab.a, d.bt_int, 1.0);
  divo.add_term(tab.a, d.b_int, 1.0);

  StokesRkPreconditioner prk(d, tab, tau, 1e-4, BlockSolvePolicy::exact);
  DenseMatrix emat = materialize(dim, dim, [&](const auto& x, auto& y) {
    std::vector<double> w, zz(s * 2 * ns), zx(s * ns), zy(s * ns), sx;
    grad.apply(x, w);
    for (std::size_t i = 0; i < s; ++i)
      for (std::size_t k2 = 0; k2 < ns; ++k2) {
        zx[i * ns + k2] = w[i * 2 * ns + k2];
        zy[i * ns + k2] = w[i * 2 * ns + ns + k2];
      }
    lu_solve_inplace(tlu, zx);
    lu_solve_inplace(tlu, zy);
    for (std::size_t i = 0; i < s; ++i)
      for (std::size_t k2 = 0; k2 < ns; ++k2) {
        zz[i * 2 * ns + k2] = zx[i * ns + k2];
        zz[i * 2 * ns + ns + k2] = zy[i * ns + k2];
      }
    divo.apply(zz, sx);
    for (double& t : sx) t *= -tau * tau;
    prk.apply_schur_inverse(sx, y);
  });

  auto eig = eig_dense(emat);
  double maxmod = 0.0;
  for (const auto& l : eig) maxmod = std::max(maxmod, std::abs(l));
  std::size_t zeros = 0;
  double minmod = 1e300, minre = 1e300;
  for (const auto& l : eig) {
    if (std::abs(l) < 1e-8 * maxmod) {
      ++zeros;
      continue;
    }
    minmod = std::min(minmod, std::abs(l));
    minre = std::min(minre, l.real());
  }
  CHECK(zeros == s);
  CHECK(maxmod / minmod <= 5.0);
  CHECK(minre >= 0.2);
  CHECK(maxmod <= 1.05);
}

TEST_CASE("preconditioned gmres beats plain gmres on the stokes stage system") {
  auto d = assemble_stokes(2);
  auto tab = make_tableau(RkFamily::Gauss, 2);
  const double tau = 0.25, gamma = 1e-4;
  StokesStageSystem sys(d, tab, tau, gamma);
  auto b = random_vector(sys.size());

  KrylovOptions full;
  full.rel_tol = 1e-8;
  full.restart = sys.size();
  full.max_iters = sys.size();

  std::vector<double> xp(sys.size(), 0.0), xu(sys.size(), 0.0);
  StokesRkPreconditioner prk(d, tab, tau, gamma, BlockSolvePolicy::exact);
  auto rp = gmres(sys.as_operator(), prk.as_operator(), b, xp, full);
  auto ru = gmres(sys.as_operator(), identity_operator(), b, xu, full);
  CHECK(rp.converged);
  CHECK(rp.iterations <= sys.size());
  CHECK(rp.iterations < ru.iterations);

  // and the preconditioned solution solves the system
  std::vector<double> check;
  sys.apply(xp, check);
  for (std::size_t i = 0; i < check.size(); ++i) check[i] -= b[i];
  CHECK(norm2(check) / norm2(b) <= 1e-7);
}

TEST_CASE("stokes production policy stays close to the exact policy") {
  // the stage operator is deliberately near-singular along stage-constant
  // pressures (the gamma perturbation keeps those modes tiny rather than
  // removing them), so only consistent right-hand sides are meaningful:
  // pressure rows must have zero plain sum per stage, as every rhs produced by
  // the time steppers does.  Solutions are then compared on the velocity and
  // on the pressure with per-stage weighted means removed; the residual modes
  // live entirely in those means.  Measured with full-restart GMRES at 1e-8:
  // 58 iterations for both policies, agreement ~1e-10 relative.
  auto d = assemble_stokes(2);
  auto tab = make_tableau(RkFamily::Gauss, 2);
  const double tau = 0.25, gamma = 1e-4;
  StokesStageSystem sys(d, tab, tau, gamma);
  const std::size_t s = 2, nv = d.n_vel(), np = d.n_pres();
  auto b = random_vector(sys.size());
  for (std::size_t i = 0; i < s; ++i) {
    double mean = 0.0;
    for (std::size_t k = 0; k < np; ++k) mean += b[s * nv + i * np + k];
    mean /= static_cast<double>(np);
    for (std::size_t k = 0; k < np; ++k) b[s * nv + i * np + k] -= mean;
  }

  KrylovOptions opts;
  opts.rel_tol = 1e-8;
  opts.restart = 300;
  opts.max_iters = 300;
  std::vector<double> xe(sys.size(), 0.0), xm(sys.size(), 0.0);
  StokesRkPreconditioner pe(d, tab, tau, gamma, BlockSolvePolicy::exact);
  StokesRkPreconditioner pm(d, tab, tau, gamma, BlockSolvePolicy::multigrid);
  auto re = gmres(sys.as_operator(), pe.as_operator(), b, xe, opts);
  auto rm = gmres(sys.as_operator(), pm.as_operator(), b, xm, opts);
  CHECK(re.converged);
  CHECK(rm.converged);
  CHECK(re.iterations <= 120);
  CHECK(rm.iterations <= 120);

  double dv = 0.0, sv = 1.0;
  for (std::size_t i = 0; i < s * nv; ++i) {
    dv = std::max(dv, std::fabs(xe[i] - xm[i]));
    sv = std::max(sv, std::fabs(xe[i]));
  }
  CHECK(dv / sv <= 1e-7);

  std::vector<double> ones(np, 1.0), mp1;
  d.mass_p().multiply(ones, mp1);
  double vol = 0.0;
  for (double t : mp1) vol += t;
  auto demean = [&](std::vector<double>& x) {
    for (std::size_t i = 0; i < s; ++i) {
      double mean = 0.0;
      for (std::size_t k = 0; k < np; ++k) mean += mp1[k] * x[s * nv + i * np + k];
      mean /= vol;
      for (std::size_t k = 0; k < np; ++k) x[s * nv + i * np + k] -= mean;
    }
  };
  demean(xe);
  demean(xm);
  double dp = 0.0, sp = 1.0;
  for (std::size_t i = s * nv; i < sys.size(); ++i) {
    dp = std::max(dp, std::fabs(xe[i] - xm[i]));
    sp = std::max(sp, std::fabs(xe[i]));
  }
  CHECK(dp / sp <= 1e-7);
}

TEST_CASE("stage constructors validate their inputs") {
  auto d = assemble_heat(2, 1);
  auto ds = assemble_stokes(2);
  auto tab = make_tableau(RkFamily::Gauss, 2);
  CHECK_THROWS_AS(HeatStageSystem(d, tab, 0.0), DomainError);
  CHECK_THROWS_AS(HeatStageSystem(d, tab, -1.0), DomainError);
  CHECK_THROWS_AS(StokesStageSystem(ds, tab, 0.25, -1e-4), DomainError);
  CHECK_THROWS_AS(StokesStageSystem(ds, tab, -0.25, 1e-4), DomainError);

  HeatRkPreconditioner prk(d, tab, 0.1, BlockSolvePolicy::exact);
  std::vector<double> wrong(3), out;
  CHECK_THROWS_AS(prk.apply(wrong, out), DimensionError);
  StokesRkPreconditioner sprk(ds, tab, 0.1, 1e-4, BlockSolvePolicy::exact);
  CHECK_THROWS_AS(sprk.apply(wrong, out), DimensionError);
  CHECK_THROWS_AS(sprk.apply_schur_inverse(wrong, out), DimensionError);
}
