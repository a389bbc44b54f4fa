#include "rkpint/sparse.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace rkpint {

SparseMatrix SparseMatrix::from_triplets(std::size_t rows, std::size_t cols,
                                         std::vector<Triplet> entries) {
  for (const auto& t : entries)
    if (t.row < 0 || t.col < 0 || static_cast<std::size_t>(t.row) >= rows ||
        static_cast<std::size_t>(t.col) >= cols)
      throw DimensionError("from_triplets: entry outside matrix bounds");
  std::sort(entries.begin(), entries.end(), [](const Triplet& a, const Triplet& b) {
    return a.row != b.row ? a.row < b.row : a.col < b.col;
  });
  SparseMatrix m;
  m.rows_ = rows;
  m.cols_ = cols;
  m.row_ptr_.assign(rows + 1, 0);
  std::size_t i = 0;
  while (i < entries.size()) {
    std::size_t j = i;
    double sum = 0.0;
    while (j < entries.size() && entries[j].row == entries[i].row &&
           entries[j].col == entries[i].col)
      sum += entries[j++].value;
    m.col_idx_.push_back(entries[i].col);
    m.val_.push_back(sum);
    ++m.row_ptr_[entries[i].row + 1];
    i = j;
  }
  for (std::size_t r = 0; r < rows; ++r) m.row_ptr_[r + 1] += m.row_ptr_[r];
  return m;
}

SparseMatrix SparseMatrix::identity(std::size_t n) {
  std::vector<Triplet> t(n);
  for (std::size_t i = 0; i < n; ++i)
    t[i] = {static_cast<int>(i), static_cast<int>(i), 1.0};
  return from_triplets(n, n, std::move(t));
}

void SparseMatrix::multiply(const std::vector<double>& x, std::vector<double>& y) const {
  if (x.size() != cols_) throw DimensionError("sparse multiply: size mismatch");
  y.assign(rows_, 0.0);
  for (std::size_t r = 0; r < rows_; ++r) {
    double s = 0.0;
    for (int k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k)
      s += val_[static_cast<std::size_t>(k)] * x[static_cast<std::size_t>(col_idx_[k])];
    y[r] = s;
  }
}

void SparseMatrix::multiply_add(const std::vector<double>& x, std::vector<double>& y,
                                double alpha) const {
  if (x.size() != cols_ || y.size() != rows_)
    throw DimensionError("sparse multiply_add: size mismatch");
  for (std::size_t r = 0; r < rows_; ++r) {
    double s = 0.0;
    for (int k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k)
      s += val_[static_cast<std::size_t>(k)] * x[static_cast<std::size_t>(col_idx_[k])];
    y[r] += alpha * s;
  }
}

SparseMatrix SparseMatrix::transposed() const {
  std::vector<Triplet> t;
  t.reserve(val_.size());
  for (std::size_t r = 0; r < rows_; ++r)
    for (int k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k)
      t.push_back({col_idx_[k], static_cast<int>(r), val_[static_cast<std::size_t>(k)]});
  return from_triplets(cols_, rows_, std::move(t));
}

SparseMatrix SparseMatrix::submatrix(const std::vector<int>& row_ids,
                                     const std::vector<int>& col_ids) const {
  std::vector<int> col_map(cols_, -1);
  for (std::size_t j = 0; j < col_ids.size(); ++j) col_map[col_ids[j]] = static_cast<int>(j);
  std::vector<Triplet> t;
  for (std::size_t ri = 0; ri < row_ids.size(); ++ri) {
    const int r = row_ids[ri];
    for (int k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) {
      const int cj = col_map[col_idx_[k]];
      if (cj >= 0)
        t.push_back({static_cast<int>(ri), cj, val_[static_cast<std::size_t>(k)]});
    }
  }
  return from_triplets(row_ids.size(), col_ids.size(), std::move(t));
}

SparseMatrix SparseMatrix::add_scaled(const SparseMatrix& other, double alpha) const {
  if (rows_ != other.rows_ || cols_ != other.cols_ || row_ptr_ != other.row_ptr_ ||
      col_idx_ != other.col_idx_)
    throw DimensionError("add_scaled: sparsity patterns differ");
  SparseMatrix m = *this;
  for (std::size_t k = 0; k < val_.size(); ++k) m.val_[k] += alpha * other.val_[k];
  return m;
}

std::vector<double> SparseMatrix::diagonal() const {
  std::vector<double> d(rows_, 0.0);
  for (std::size_t r = 0; r < rows_; ++r)
    for (int k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k)
      if (col_idx_[k] == static_cast<int>(r)) d[r] = val_[static_cast<std::size_t>(k)];
  return d;
}

SparseMatrix SparseMatrix::pinned(std::size_t pin) const {
  std::vector<Triplet> t;
  t.reserve(val_.size());
  for (std::size_t r = 0; r < rows_; ++r)
    for (int k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) {
      const std::size_t c = static_cast<std::size_t>(col_idx_[k]);
      if (r == pin || c == pin) continue;
      t.push_back({static_cast<int>(r), static_cast<int>(c), val_[static_cast<std::size_t>(k)]});
    }
  t.push_back({static_cast<int>(pin), static_cast<int>(pin), 1.0});
  return from_triplets(rows_, cols_, std::move(t));
}

SparseMatrix SparseMatrix::block_diag(const SparseMatrix& a, std::size_t copies) {
  std::vector<Triplet> t;
  t.reserve(copies * a.col_idx_.size());
  for (std::size_t c = 0; c < copies; ++c) {
    const int roff = static_cast<int>(c * a.rows());
    const int coff = static_cast<int>(c * a.cols());
    for (std::size_t r = 0; r < a.rows(); ++r)
      for (int idx = a.row_ptr_[r]; idx < a.row_ptr_[r + 1]; ++idx)
        t.push_back({static_cast<int>(r) + roff, a.col_idx_[idx] + coff, a.val_[idx]});
  }
  return from_triplets(copies * a.rows(), copies * a.cols(), std::move(t));
}

double SparseMatrix::symmetry_defect() const {
  SparseMatrix t = transposed();
  double worst = 0.0;
  // patterns of A and A^T may differ; walk both row by row
  for (std::size_t r = 0; r < rows_; ++r) {
    int ka = row_ptr_[r], kb = t.row_ptr_[r];
    const int ea = row_ptr_[r + 1], eb = t.row_ptr_[r + 1];
    while (ka < ea || kb < eb) {
      const int ca = ka < ea ? col_idx_[ka] : static_cast<int>(cols_);
      const int cb = kb < eb ? t.col_idx_[kb] : static_cast<int>(cols_);
      if (ca == cb) {
        worst = std::max(worst, std::fabs(val_[static_cast<std::size_t>(ka)] -
                                          t.val_[static_cast<std::size_t>(kb)]));
        ++ka;
        ++kb;
      } else if (ca < cb) {
        worst = std::max(worst, std::fabs(val_[static_cast<std::size_t>(ka++)]));
      } else {
        worst = std::max(worst, std::fabs(t.val_[static_cast<std::size_t>(kb++)]));
      }
    }
  }
  return worst;
}

DenseMatrix SparseMatrix::to_dense() const {
  DenseMatrix d(rows_, cols_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (int k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k)
      d(r, static_cast<std::size_t>(col_idx_[k])) = val_[static_cast<std::size_t>(k)];
  return d;
}

void SparseMatrix::gauss_seidel_forward(const std::vector<double>& b,
                                        std::vector<double>& x) const {
  for (std::size_t r = 0; r < rows_; ++r) {
    double s = b[r];
    double diag = 0.0;
    for (int k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) {
      const std::size_t c = static_cast<std::size_t>(col_idx_[k]);
      if (c == r)
        diag = val_[static_cast<std::size_t>(k)];
      else
        s -= val_[static_cast<std::size_t>(k)] * x[c];
    }
    x[r] = s / diag;
  }
}

void SparseMatrix::gauss_seidel_backward(const std::vector<double>& b,
                                         std::vector<double>& x) const {
  for (std::size_t rr = rows_; rr-- > 0;) {
    double s = b[rr];
    double diag = 0.0;
    for (int k = row_ptr_[rr]; k < row_ptr_[rr + 1]; ++k) {
      const std::size_t c = static_cast<std::size_t>(col_idx_[k]);
      if (c == rr)
        diag = val_[static_cast<std::size_t>(k)];
      else
        s -= val_[static_cast<std::size_t>(k)] * x[c];
    }
    x[rr] = s / diag;
  }
}

}  // namespace rkpint
