#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "rkpint/chebyshev.hpp"
#include "rkpint/dense.hpp"
#include "rkpint/fem.hpp"
#include "rkpint/krylov.hpp"
#include "rkpint/multigrid.hpp"
#include "rkpint/sparse.hpp"
#include "support.hpp"

using namespace rkpint;
using namespace testsupport;

namespace {

LinearOperator dense_op(const DenseMatrix& a) {
  return [&a](const std::vector<double>& x, std::vector<double>& y) { y = matvec(a, x); };
}

LinearOperator sparse_op(const SparseMatrix& a) {
  return [&a](const std::vector<double>& x, std::vector<double>& y) { a.multiply(x, y); };
}

double true_residual(const DenseMatrix& a, const std::vector<double>& b,
                     const std::vector<double>& x) {
  const auto ax = matvec(a, x);
  double acc = 0.0;
  for (std::size_t i = 0; i < b.size(); ++i) acc += (b[i] - ax[i]) * (b[i] - ax[i]);
  return std::sqrt(acc) / norm2(b);
}

DenseMatrix spd_matrix(std::size_t n) {
  const DenseMatrix r = random_matrix(n, n);
  DenseMatrix a = matmul(transpose(r), r);
  for (std::size_t i = 0; i < n; ++i) a(i, i) += static_cast<double>(n);
  return a;
}

}  // namespace

TEST_CASE("gmres solves dense systems and reports a faithful residual") {
  const std::size_t n = 40;
  const DenseMatrix a = spd_matrix(n);
  const auto b = random_vector(n);
  std::vector<double> x(n, 0.0);
  auto res = gmres(dense_op(a), identity_operator(), b, x, {1e-10, 10, 500});
  CHECK(res.converged);
  CHECK(res.iterations > 0);
  CHECK(res.history.size() == res.iterations);
  const double tr = true_residual(a, b, x);
  CHECK(tr <= 1e-10);
  CHECK(res.relative_residual == doctest::Approx(tr).epsilon(1e-6));
}

TEST_CASE("an exact right preconditioner converges in one iteration") {
  const std::size_t n = 30;
  const DenseMatrix a = spd_matrix(n);
  const auto lu = lu_factor(a);
  const LinearOperator minv = [&](const std::vector<double>& r, std::vector<double>& z) {
    z = r;
    lu_solve_inplace(lu, z);
  };
  const auto b = random_vector(n);
  for (auto* solver : {&gmres, &fgmres}) {
    std::vector<double> x(n, 0.0);
    auto res = (*solver)(dense_op(a), minv, b, x, {1e-12, 10, 100});
    CHECK(res.converged);
    CHECK(res.iterations == 1);
    CHECK(true_residual(a, b, x) <= 1e-12);
  }
}

TEST_CASE("fgmres matches gmres when the preconditioner is fixed") {
  const std::size_t n = 50;
  const DenseMatrix a = spd_matrix(n);
  DenseMatrix jac(n, n);
  for (std::size_t i = 0; i < n; ++i) jac(i, i) = 1.0 / a(i, i);
  const auto b = random_vector(n);
  std::vector<double> xg(n, 0.0), xf(n, 0.0);
  auto rg = gmres(dense_op(a), dense_op(jac), b, xg, {1e-9, 10, 300});
  auto rf = fgmres(dense_op(a), dense_op(jac), b, xf, {1e-9, 10, 300});
  CHECK(rg.converged);
  CHECK(rf.converged);
  CHECK(rg.iterations == rf.iterations);
  REQUIRE(rg.history.size() == rf.history.size());
  for (std::size_t i = 0; i < rg.history.size(); ++i)
    CHECK(rg.history[i] == doctest::Approx(rf.history[i]).epsilon(1e-10));
  CHECK(max_abs_diff(xg, xf) <= 1e-9);
}

TEST_CASE("restarting still converges and counts total arnoldi steps") {
  const std::size_t n = 60;
  const DenseMatrix a = spd_matrix(n);
  const auto b = random_vector(n);
  std::vector<double> x3(n, 0.0), xbig(n, 0.0);
  auto short_cycle = gmres(dense_op(a), identity_operator(), b, x3, {1e-10, 3, 500});
  auto long_cycle = gmres(dense_op(a), identity_operator(), b, xbig, {1e-10, 60, 500});
  CHECK(short_cycle.converged);
  CHECK(long_cycle.converged);
  CHECK(short_cycle.iterations >= long_cycle.iterations);  // restarts can't help
  CHECK(true_residual(a, b, x3) <= 1e-10);
}

TEST_CASE("fixed-count mode runs exactly the requested number of steps") {
  const std::size_t n = 25;
  const DenseMatrix a = spd_matrix(n);
  const auto b = random_vector(n);
  std::vector<double> x(n, 0.0);
  auto res = gmres(dense_op(a), identity_operator(), b, x, {0.0, 10, 5});
  CHECK(res.converged);
  CHECK(res.iterations == 5);
  // five steps make progress but do not solve the system
  const double tr = true_residual(a, b, x);
  CHECK(tr < 1.0);
  CHECK(tr > 1e-14);
  CHECK(res.relative_residual == doctest::Approx(tr).epsilon(1e-8));
}

TEST_CASE("zero right-hand side returns immediately") {
  const DenseMatrix a = spd_matrix(8);
  std::vector<double> b(8, 0.0), x = random_vector(8);
  auto res = gmres(dense_op(a), identity_operator(), b, x, {1e-10, 10, 100});
  CHECK(res.converged);
  CHECK(res.iterations == 0);
  CHECK(max_abs(x) == 0.0);
}

TEST_CASE("a rhs inside a small invariant subspace triggers lucky breakdown") {
  DenseMatrix a(6, 6);
  for (std::size_t i = 0; i < 6; ++i) a(i, i) = static_cast<double>(i + 2);
  std::vector<double> b(6, 0.0);
  b[3] = 5.0;  // eigenvector of the diagonal matrix
  std::vector<double> x(6, 0.0);
  auto res = gmres(dense_op(a), identity_operator(), b, x, {1e-12, 10, 100});
  CHECK(res.converged);
  CHECK(res.iterations == 1);
  CHECK(x[3] == doctest::Approx(1.0).epsilon(1e-13));
}

TEST_CASE("warm starts count zero iterations when already converged") {
  const std::size_t n = 20;
  const DenseMatrix a = spd_matrix(n);
  const auto xsol = random_vector(n);
  const auto b = matvec(a, xsol);
  std::vector<double> x = xsol;
  auto res = gmres(dense_op(a), identity_operator(), b, x, {1e-8, 10, 100});
  CHECK(res.converged);
  CHECK(res.iterations == 0);
}

TEST_CASE("chebyshev mass solves reach the frozen accuracy") {
  // twenty steps with power-iteration bounds; accuracy measured on this exact
  // configuration and frozen: 4.7e-6 (Q1 level 3), 1.1e-7 (Q2 level 3)
  struct Case {
    int degree;
    double tol;
  };
  for (const Case c : {Case{1, 1e-5}, Case{2, 1e-6}}) {
    auto d = assemble_heat(3, c.degree);
    const auto& m = d.mass();
    ChebyshevMassSolver ch(m);
    CHECK(ch.lambda_min() > 0.0);
    CHECK(ch.lambda_max() < 3.0);  // D^-1 M spectrum is O(1) for these elements
    const auto b = random_vector(m.rows());
    std::vector<double> x;
    ch.solve(b, x);
    const auto xd = solve_dense(m.to_dense(), b);
    double err = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      err = std::max(err, std::fabs(x[i] - xd[i]));
      scale = std::max(scale, std::fabs(xd[i]));
    }
    CHECK(err / scale <= c.tol);
  }
}

TEST_CASE("chebyshev degenerates to exact richardson on scaled identities") {
  std::vector<Triplet> t;
  for (int i = 0; i < 12; ++i) t.push_back({i, i, 2.5});
  const SparseMatrix m = SparseMatrix::from_triplets(12, 12, std::move(t));
  ChebyshevMassSolver ch(m, 3);
  const auto b = random_vector(12);
  std::vector<double> x;
  ch.solve(b, x);
  for (std::size_t i = 0; i < 12; ++i)
    CHECK(x[i] == doctest::Approx(b[i] / 2.5).epsilon(1e-14));
}

TEST_CASE("chebyshev is linear and bitwise deterministic") {
  auto d = assemble_heat(4, 1);
  ChebyshevMassSolver ch1(d.mass()), ch2(d.mass());
  CHECK(ch1.lambda_min() == ch2.lambda_min());
  CHECK(ch1.lambda_max() == ch2.lambda_max());
  const auto a = random_vector(d.n_dof()), b = random_vector(d.n_dof());
  std::vector<double> xa, xb, xc, xa2;
  ch1.solve(a, xa);
  ch2.solve(a, xa2);
  for (std::size_t i = 0; i < xa.size(); ++i) CHECK(xa[i] == xa2[i]);

  std::vector<double> combo(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) combo[i] = 0.3 * a[i] - 1.7 * b[i];
  ch1.solve(b, xb);
  ch1.solve(combo, xc);
  double worst = 0.0;
  for (std::size_t i = 0; i < xc.size(); ++i)
    worst = std::max(worst, std::fabs(xc[i] - (0.3 * xa[i] - 1.7 * xb[i])));
  CHECK(worst <= 1e-12);
}

TEST_CASE("v-cycles contract poisson residuals fast on interior grids") {
  // measured per-cycle rates are 0.003..0.017 for Q1/Q2 at levels 4..5
  for (int degree : {1, 2}) {
    auto h = build_scalar_hierarchy(5, degree);
    std::vector<const SparseMatrix*> ops, ps;
    for (const auto& g : h.levels) {
      ops.push_back(&g.stiffness_int);
      ps.push_back(g.prolong_int.rows() ? &g.prolong_int : nullptr);
    }
    GeometricMultigrid mg(ops, ps);
    const auto& a = h.finest().stiffness_int;
    const auto b = random_vector(a.rows());
    std::vector<double> x(a.rows(), 0.0), r;
    double prev = norm2(b);
    for (int cycle = 0; cycle < 2; ++cycle) {
      mg.vcycle(x, b);
      a.multiply(x, r);
      for (std::size_t i = 0; i < r.size(); ++i) r[i] = b[i] - r[i];
      const double rn = norm2(r);
      CHECK(rn / prev <= 0.05);  // comfortably below the 0.2 budget
      prev = rn;
    }
    CHECK(prev / norm2(b) <= 1e-3);  // >= 25x over two cycles, with margin
  }
}

TEST_CASE("single-level multigrid is a dense direct solve") {
  auto h = build_scalar_hierarchy(1, 2);
  std::vector<const SparseMatrix*> ops{&h.finest().stiffness_int};
  std::vector<const SparseMatrix*> ps{nullptr};
  GeometricMultigrid mg(ops, ps);
  const auto b = random_vector(ops[0]->rows());
  std::vector<double> x;
  mg.solve(b, x, 1);
  const auto xd = solve_dense(ops[0]->to_dense(), b);
  CHECK(max_abs_diff(x, xd) <= 1e-12);
}

TEST_CASE("pinned pressure stiffness is usable with pinned prolongations") {
  // two cycles on the pinned Neumann operator land between 6.7e-3 and 4.6e-2
  // relative depending on how much near-constant content the rhs carries; the
  // pin-aware transfer buys roughly a factor ten over the plain one
  auto d = assemble_stokes(4);
  std::vector<SparseMatrix> ops_own, ps_own;
  for (const auto& g : d.pressure.levels) {
    ops_own.push_back(g.stiffness_full.pinned(0));
    ps_own.push_back(g.prolong_full.rows() ? pinned_prolongation(g.prolong_full, 0)
                                           : SparseMatrix());
  }
  std::vector<const SparseMatrix*> ops, ps;
  for (std::size_t k = 0; k < ops_own.size(); ++k) {
    ops.push_back(&ops_own[k]);
    ps.push_back(k ? &ps_own[k] : nullptr);
  }
  GeometricMultigrid mg(ops, ps);
  // dedicated generator: the residual level depends on how much of the slow
  // near-constant mode the rhs carries, so keep the draw independent of other
  // test cases
  std::mt19937 gen(777);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> b(ops.back()->rows());
  for (double& t : b) t = u(gen);
  b[0] = 0.0;
  std::vector<double> x, r;
  mg.solve(b, x, 2);
  ops.back()->multiply(x, r);
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = b[i] - r[i];
  CHECK(norm2(r) / norm2(b) <= 0.1);
  CHECK(x[0] == 0.0);  // the pin never moves
}

TEST_CASE("multigrid on shifted operators keeps its rate") {
  // the stage blocks are M + tau*sigma*K; rediscretize the shift on every level
  auto h = build_scalar_hierarchy(5, 1);
  std::vector<SparseMatrix> shifted;
  for (const auto& g : h.levels)
    shifted.push_back(g.mass_int.add_scaled(g.stiffness_int, 0.05));
  std::vector<const SparseMatrix*> ops, ps;
  for (std::size_t k = 0; k < shifted.size(); ++k) {
    ops.push_back(&shifted[k]);
    ps.push_back(k ? &h.levels[k].prolong_int : nullptr);
  }
  GeometricMultigrid mg(ops, ps);
  const auto b = random_vector(ops.back()->rows());
  std::vector<double> x, r;
  mg.solve(b, x, 2);
  ops.back()->multiply(x, r);
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = b[i] - r[i];
  CHECK(norm2(r) / norm2(b) <= 1e-3);
}

TEST_CASE("solver input validation") {
  const DenseMatrix a = spd_matrix(5);
  std::vector<double> x(4, 0.0);
  CHECK_THROWS_AS(gmres(dense_op(a), identity_operator(), random_vector(5), x, {}),
                  DimensionError);

  auto h = build_scalar_hierarchy(2, 1);
  std::vector<const SparseMatrix*> ops{&h.levels[0].stiffness_int, &h.levels[1].stiffness_int};
  std::vector<const SparseMatrix*> bad_ps{nullptr, &h.levels[1].prolong_full};  // wrong shape
  CHECK_THROWS_AS(GeometricMultigrid(ops, bad_ps), DimensionError);

  std::vector<Triplet> t{{0, 0, 0.0}, {1, 1, 1.0}};
  const SparseMatrix zero_diag = SparseMatrix::from_triplets(2, 2, std::move(t));
  CHECK_THROWS_AS(ChebyshevMassSolver{zero_diag}, SingularMatrixError);
}
