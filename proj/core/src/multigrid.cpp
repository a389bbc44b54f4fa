#include "rkpint/multigrid.hpp"

#include "rkpint/errors.hpp"

namespace rkpint {

GeometricMultigrid::GeometricMultigrid(std::vector<const SparseMatrix*> ops,
                                       std::vector<const SparseMatrix*> prolongs, int pre,
                                       int post)
    : ops_(std::move(ops)), prolongs_(std::move(prolongs)), pre_(pre), post_(post) {
  if (ops_.empty() || ops_.size() != prolongs_.size())
    throw DimensionError("GeometricMultigrid: level lists are inconsistent");
  for (std::size_t k = 0; k < ops_.size(); ++k) {
    if (ops_[k] == nullptr || ops_[k]->rows() != ops_[k]->cols())
      throw DimensionError("GeometricMultigrid: bad operator on a level");
    if (k > 0) {
      if (prolongs_[k] == nullptr || prolongs_[k]->rows() != ops_[k]->rows() ||
          prolongs_[k]->cols() != ops_[k - 1]->rows())
        throw DimensionError("GeometricMultigrid: prolongation shape mismatch");
    }
  }
  restricts_.resize(ops_.size());
  for (std::size_t k = 1; k < ops_.size(); ++k) restricts_[k] = prolongs_[k]->transposed();
  coarse_lu_ = lu_factor(ops_[0]->to_dense());
}

void GeometricMultigrid::cycle_level(std::size_t k, std::vector<double>& x,
                                     const std::vector<double>& b) const {
  const SparseMatrix& a = *ops_[k];
  if (k == 0) {
    x = b;
    lu_solve_inplace(coarse_lu_, x);
    return;
  }
  for (int s = 0; s < pre_; ++s) {
    a.gauss_seidel_forward(b, x);
    a.gauss_seidel_backward(b, x);
  }

  std::vector<double> r;
  a.multiply(x, r);
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = b[i] - r[i];
  std::vector<double> rc;
  restricts_[k].multiply(r, rc);

  std::vector<double> ec(rc.size(), 0.0);
  cycle_level(k - 1, ec, rc);

  prolongs_[k]->multiply(ec, r);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += r[i];

  for (int s = 0; s < post_; ++s) {
    a.gauss_seidel_forward(b, x);
    a.gauss_seidel_backward(b, x);
  }
}

void GeometricMultigrid::vcycle(std::vector<double>& x, const std::vector<double>& b) const {
  if (x.size() != ops_.back()->rows() || b.size() != x.size())
    throw DimensionError("GeometricMultigrid::vcycle: vector size mismatch");
  cycle_level(ops_.size() - 1, x, b);
}

void GeometricMultigrid::solve(const std::vector<double>& b, std::vector<double>& x,
                               int cycles) const {
  x.assign(ops_.back()->rows(), 0.0);
  for (int c = 0; c < cycles; ++c) vcycle(x, b);
}

SparseMatrix pinned_prolongation(const SparseMatrix& p, int k) {
  std::vector<Triplet> t;
  for (std::size_t r = 0; r < p.rows(); ++r)
    for (int idx = p.row_ptr()[r]; idx < p.row_ptr()[r + 1]; ++idx) {
      const int c = p.col_idx()[static_cast<std::size_t>(idx)];
      if (static_cast<int>(r) == k || c == k) continue;
      t.push_back({static_cast<int>(r), c, p.values()[idx]});
    }
  t.push_back({k, k, 1.0});
  return SparseMatrix::from_triplets(p.rows(), p.cols(), std::move(t));
}

}  // namespace rkpint
