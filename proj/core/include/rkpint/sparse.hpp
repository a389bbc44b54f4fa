#pragma once

// Minimal CSR sparse matrix: enough for uniform-grid FEM operators, Kronecker
// block applies, Gauss-Seidel smoothing and grid-transfer operators.

#include <cstddef>
#include <vector>

#include "rkpint/dense.hpp"
#include "rkpint/errors.hpp"

namespace rkpint {

struct Triplet {
  int row;
  int col;
  double value;
};

class SparseMatrix {
 public:
  SparseMatrix() = default;

  static SparseMatrix from_triplets(std::size_t rows, std::size_t cols,
                                    std::vector<Triplet> entries);
  static SparseMatrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t nnz() const { return val_.size(); }

  /// y = A x
  void multiply(const std::vector<double>& x, std::vector<double>& y) const;
  /// y += alpha * A x
  void multiply_add(const std::vector<double>& x, std::vector<double>& y,
                    double alpha = 1.0) const;

  [[nodiscard]] SparseMatrix transposed() const;

  /// A restricted to given row/column id sets (ids must be strictly increasing).
  [[nodiscard]] SparseMatrix submatrix(const std::vector<int>& row_ids,
                         const std::vector<int>& col_ids) const;

  /// this + alpha * other; requires the identical sparsity pattern.
  [[nodiscard]] SparseMatrix add_scaled(const SparseMatrix& other, double alpha) const;

  std::vector<double> diagonal() const;

  /// Zero row/column `k` and put 1 on its diagonal (Dirichlet-style pin).
  [[nodiscard]] SparseMatrix pinned(std::size_t k) const;

  double symmetry_defect() const;  // max |a_ij - a_ji|
  DenseMatrix to_dense() const;

  /// Block-diagonal replication: `copies` copies of `a` along the diagonal.
  static SparseMatrix block_diag(const SparseMatrix& a, std::size_t copies);

  // Gauss-Seidel sweeps for A x = b (x updated in place).
  void gauss_seidel_forward(const std::vector<double>& b, std::vector<double>& x) const;
  void gauss_seidel_backward(const std::vector<double>& b, std::vector<double>& x) const;

  const std::vector<int>& row_ptr() const { return row_ptr_; }
  const std::vector<int>& col_idx() const { return col_idx_; }
  const std::vector<double>& values() const { return val_; }

 private:
  std::size_t rows_ = 0, cols_ = 0;
  std::vector<int> row_ptr_{0};
  std::vector<int> col_idx_;
  std::vector<double> val_;
};

}  // namespace rkpint
