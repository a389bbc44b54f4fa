#pragma once

// Matrix-free operators of the form  sum_k  w_k (C_k (x) X_k)  where each
// coupling C_k is a small dense matrix (Runge-Kutta sized) and each factor X_k
// is a large sparse matrix.  All terms of one operator share the same block
// shape; couplings may be rectangular (e.g. a 1 x s row of quadrature weights).

#include <cstddef>
#include <vector>

#include "rkpint/dense.hpp"
#include "rkpint/sparse.hpp"

namespace rkpint {

class KronOperator {
 public:
  KronOperator() = default;
  KronOperator(std::size_t coupling_rows, std::size_t coupling_cols, std::size_t block_rows,
               std::size_t block_cols);

  /// Add  weight * (coupling (x) factor).  The factor is referenced, not
  /// copied; it must outlive the operator.
  void add_term(DenseMatrix coupling, const SparseMatrix& factor, double weight = 1.0);

  std::size_t rows() const { return coupling_rows_ * block_rows_; }
  std::size_t cols() const { return coupling_cols_ * block_cols_; }
  std::size_t block_rows() const { return block_rows_; }
  std::size_t block_cols() const { return block_cols_; }

  /// y = A x.  Couplings wider than 6 accumulate with compensated summation.
  void apply(const std::vector<double>& x, std::vector<double>& y) const;
  /// y += alpha * A x
  void apply_add(const std::vector<double>& x, std::vector<double>& y, double alpha = 1.0) const;

 private:
  struct Term {
    DenseMatrix coupling;
    const SparseMatrix* factor = nullptr;
    double weight = 1.0;
  };
  std::size_t coupling_rows_ = 0, coupling_cols_ = 0;
  std::size_t block_rows_ = 0, block_cols_ = 0;
  std::vector<Term> terms_;
};

/// y = (C (x) I_block) x: recombine blocks of x by the rows of C.  Used for the
/// orthogonal stage transforms.  Accepts rectangular C; x holds C.cols() blocks.
void coupling_transform(const DenseMatrix& c, std::size_t block, const std::vector<double>& x,
                        std::vector<double>& y);

/// Dense materialization kron(C, X) for small cross-checks.
DenseMatrix kron_dense(const DenseMatrix& c, const DenseMatrix& x);

}  // namespace rkpint
