#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <vector>

#include "rkpint/kron.hpp"
#include "support.hpp"

using namespace rkpint;
using namespace testsupport;

namespace {

SparseMatrix random_sparse(std::size_t rows, std::size_t cols, double density = 0.4) {
  auto& gen = rng();
  std::uniform_real_distribution<double> u(-1.0, 1.0), pick(0.0, 1.0);
  std::vector<Triplet> t;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      if (pick(gen) < density) t.push_back({static_cast<int>(r), static_cast<int>(c), u(gen)});
  // guarantee at least one entry so the matrix is not trivially zero
  if (t.empty()) t.push_back({0, 0, 1.0});
  return SparseMatrix::from_triplets(rows, cols, std::move(t));
}

}  // namespace

TEST_CASE("apply matches dense kronecker materialization") {
  for (int trial = 0; trial < 200; ++trial) {
    auto& gen = rng();
    std::uniform_int_distribution<std::size_t> small(1, 5), big(1, 9);
    const std::size_t sr = small(gen), sc = small(gen);
    const std::size_t br = big(gen), bc = big(gen);
    const DenseMatrix c1 = random_matrix(sr, sc), c2 = random_matrix(sr, sc);
    const SparseMatrix x1 = random_sparse(br, bc), x2 = random_sparse(br, bc);
    std::uniform_real_distribution<double> uw(-2.0, 2.0);
    const double w1 = uw(gen), w2 = uw(gen);

    KronOperator op(sr, sc, br, bc);
    op.add_term(c1, x1, w1);
    op.add_term(c2, x2, w2);

    DenseMatrix ref = kron_dense(c1, x1.to_dense());
    const DenseMatrix ref2 = kron_dense(c2, x2.to_dense());
    for (std::size_t r = 0; r < ref.rows(); ++r)
      for (std::size_t c = 0; c < ref.cols(); ++c)
        ref(r, c) = w1 * ref(r, c) + w2 * ref2(r, c);

    const auto x = random_vector(op.cols());
    std::vector<double> y, yref;
    op.apply(x, y);
    yref = matvec(ref, x);
    CHECK(max_abs_diff(y, yref) <= 1e-13);
  }
}

TEST_CASE("zero weight and single-stage degenerate cases") {
  const DenseMatrix c = random_matrix(3, 3);
  const SparseMatrix x = random_sparse(7, 7);
  KronOperator op(3, 3, 7, 7);
  op.add_term(c, x, 0.0);  // a tau = 0 coupling adds nothing
  const auto v = random_vector(21);
  std::vector<double> y;
  op.apply(v, y);
  CHECK(max_abs(y) == 0.0);

  KronOperator one(1, 1, 7, 7);
  DenseMatrix c11(1, 1);
  c11(0, 0) = -1.5;
  one.add_term(c11, x, 2.0);
  const auto v7 = random_vector(7);
  std::vector<double> y7, xref;
  one.apply(v7, y7);
  x.multiply(v7, xref);
  for (double& t : xref) t *= -3.0;
  CHECK(max_abs_diff(y7, xref) <= 1e-14);
}

TEST_CASE("apply is linear and apply_add accumulates") {
  const DenseMatrix c = random_matrix(4, 4);
  const SparseMatrix x = random_sparse(6, 6);
  KronOperator op(4, 4, 6, 6);
  op.add_term(DenseMatrix::identity(4), x, 0.7);
  op.add_term(c, x, -0.3);

  const auto a = random_vector(24), b = random_vector(24);
  std::vector<double> combo(24);
  for (std::size_t i = 0; i < 24; ++i) combo[i] = 2.0 * a[i] - 0.5 * b[i];
  std::vector<double> ya, yb, yc;
  op.apply(a, ya);
  op.apply(b, yb);
  op.apply(combo, yc);
  double worst = 0.0;
  for (std::size_t i = 0; i < 24; ++i)
    worst = std::max(worst, std::fabs(yc[i] - (2.0 * ya[i] - 0.5 * yb[i])));
  CHECK(worst <= 1e-12);

  std::vector<double> acc = yb;
  op.apply_add(a, acc, 3.0);
  for (std::size_t i = 0; i < 24; ++i)
    CHECK(acc[i] == doctest::Approx(yb[i] + 3.0 * ya[i]).epsilon(1e-12));
}

TEST_CASE("rectangular couplings and factors") {
  // a 1 x s row coupling with a rectangular factor, the shape used by the
  // quadrature-update and divergence blocks
  const std::size_t s = 3, br = 4, bc = 6;
  DenseMatrix row(1, s);
  row(0, 0) = 0.25;
  row(0, 1) = 0.5;
  row(0, 2) = 0.25;
  const SparseMatrix x = random_sparse(br, bc);
  KronOperator op(1, s, br, bc);
  op.add_term(row, x, 2.0);
  CHECK(op.rows() == br);
  CHECK(op.cols() == s * bc);

  const auto v = random_vector(op.cols());
  std::vector<double> y, yref;
  op.apply(v, y);
  yref = matvec(kron_dense(row, x.to_dense()), v);
  for (double& t : yref) t *= 2.0;
  CHECK(max_abs_diff(y, yref) <= 1e-13);
}

TEST_CASE("wide couplings agree with a long-double reference") {
  // couplings wider than 6 take the compensated path; check it against an
  // extended-precision accumulation
  const std::size_t s = 8, n = 5;
  const DenseMatrix c = random_matrix(s, s);
  const SparseMatrix x = random_sparse(n, n, 0.8);
  KronOperator op(s, s, n, n);
  op.add_term(c, x, 1.0);
  op.add_term(DenseMatrix::identity(s), x, -0.999);

  const auto v = random_vector(s * n);
  std::vector<double> y;
  op.apply(v, y);

  const DenseMatrix xd = x.to_dense();
  std::vector<long double> ref(s * n, 0.0L);
  for (std::size_t i = 0; i < s; ++i)
    for (std::size_t j = 0; j < s; ++j) {
      const long double cij = static_cast<long double>(c(i, j)) +
                              (i == j ? -0.999L : 0.0L);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t k = 0; k < n; ++k)
          ref[i * n + r] += cij * static_cast<long double>(xd(r, k)) *
                            static_cast<long double>(v[j * n + k]);
    }
  double worst = 0.0;
  for (std::size_t i = 0; i < s * n; ++i)
    worst = std::max(worst, std::fabs(y[i] - static_cast<double>(ref[i])));
  CHECK(worst <= 1e-13);
}

TEST_CASE("coupling transform equals kron with identity and preserves norms") {
  const std::size_t s = 4, n = 9;
  const DenseMatrix c = random_matrix(s, s);
  const auto v = random_vector(s * n);
  std::vector<double> y, yref;
  coupling_transform(c, n, v, y);
  yref = matvec(kron_dense(c, DenseMatrix::identity(n)), v);
  CHECK(max_abs_diff(y, yref) <= 1e-13);

  // orthogonal coupling: transform then transpose-transform round-trips and
  // keeps the norm
  const auto f = svd_real(c);
  std::vector<double> fwd, back;
  coupling_transform(f.u, n, v, fwd);
  CHECK(norm2(fwd) == doctest::Approx(norm2(v)).epsilon(1e-12));
  coupling_transform(transpose(f.u), n, fwd, back);
  CHECK(max_abs_diff(back, v) <= 1e-12);

  // rectangular transform: 2 x 4 coupling folds four blocks into two
  DenseMatrix rect(2, 4);
  for (std::size_t j = 0; j < 4; ++j) {
    rect(0, j) = static_cast<double>(j + 1);
    rect(1, j) = j == 0 ? 1.0 : 0.0;
  }
  coupling_transform(rect, n, v, y);
  REQUIRE(y.size() == 2 * n);
  for (std::size_t k = 0; k < n; ++k) {
    const double expect =
        v[k] + 2.0 * v[n + k] + 3.0 * v[2 * n + k] + 4.0 * v[3 * n + k];
    CHECK(y[k] == doctest::Approx(expect).epsilon(1e-13));
    CHECK(y[n + k] == doctest::Approx(v[k]).epsilon(1e-13));
  }
}

TEST_CASE("shape violations throw") {
  const SparseMatrix x = random_sparse(5, 5);
  KronOperator op(2, 2, 5, 5);
  CHECK_THROWS_AS(op.add_term(random_matrix(3, 2), x), DimensionError);
  CHECK_THROWS_AS(op.add_term(random_matrix(2, 2), random_sparse(4, 5)), DimensionError);
  op.add_term(random_matrix(2, 2), x);
  std::vector<double> y;
  CHECK_THROWS_AS(op.apply(random_vector(9), y), DimensionError);
  CHECK_THROWS_AS(KronOperator(0, 1, 1, 1), DimensionError);

  std::vector<double> out;
  CHECK_THROWS_AS(coupling_transform(random_matrix(2, 2), 5, random_vector(9), out),
                  DimensionError);
}
