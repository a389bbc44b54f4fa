#include "rkpint/kron.hpp"

#include <cmath>

#include "rkpint/errors.hpp"

namespace rkpint {

KronOperator::KronOperator(std::size_t coupling_rows, std::size_t coupling_cols,
                           std::size_t block_rows, std::size_t block_cols)
    : coupling_rows_(coupling_rows),
      coupling_cols_(coupling_cols),
      block_rows_(block_rows),
      block_cols_(block_cols) {
  if (coupling_rows == 0 || coupling_cols == 0 || block_rows == 0 || block_cols == 0)
    throw DimensionError("KronOperator: zero-sized shape");
}

void KronOperator::add_term(DenseMatrix coupling, const SparseMatrix& factor, double weight) {
  if (coupling.rows() != coupling_rows_ || coupling.cols() != coupling_cols_)
    throw DimensionError("KronOperator::add_term: coupling shape mismatch");
  if (factor.rows() != block_rows_ || factor.cols() != block_cols_)
    throw DimensionError("KronOperator::add_term: factor shape mismatch");
  terms_.push_back({std::move(coupling), &factor, weight});
}

void KronOperator::apply(const std::vector<double>& x, std::vector<double>& y) const {
  y.assign(rows(), 0.0);
  apply_add(x, y, 1.0);
}

void KronOperator::apply_add(const std::vector<double>& x, std::vector<double>& y,
                             double alpha) const {
  if (x.size() != cols() || y.size() != rows())
    throw DimensionError("KronOperator::apply: vector size mismatch");
  // wide couplings pile many contributions onto each output entry; compensate
  // the accumulation there
  const bool compensate = coupling_cols_ > 6;
  std::vector<double> comp;
  if (compensate) comp.assign(y.size(), 0.0);
  std::vector<double> scratch(block_rows_);
  std::vector<double> xj(block_cols_);
  // per coupling column j: one factor multiply, then scatter into the output
  // blocks weighted by the coupling column
  for (const Term& term : terms_) {
    for (std::size_t j = 0; j < coupling_cols_; ++j) {
      for (std::size_t k = 0; k < block_cols_; ++k) xj[k] = x[j * block_cols_ + k];
      term.factor->multiply(xj, scratch);
      for (std::size_t i = 0; i < coupling_rows_; ++i) {
        const double w = alpha * term.weight * term.coupling(i, j);
        if (w == 0.0) continue;
        double* out = y.data() + i * block_rows_;
        if (compensate) {
          double* c = comp.data() + i * block_rows_;
          for (std::size_t k = 0; k < block_rows_; ++k) {
            const double contrib = w * scratch[k] - c[k];
            const double t = out[k] + contrib;
            c[k] = (t - out[k]) - contrib;
            out[k] = t;
          }
        } else {
          for (std::size_t k = 0; k < block_rows_; ++k) out[k] += w * scratch[k];
        }
      }
    }
  }
}

void coupling_transform(const DenseMatrix& c, std::size_t block, const std::vector<double>& x,
                        std::vector<double>& y) {
  if (x.size() != c.cols() * block)
    throw DimensionError("coupling_transform: vector size mismatch");
  y.assign(c.rows() * block, 0.0);
  for (std::size_t i = 0; i < c.rows(); ++i) {
    double* out = y.data() + i * block;
    for (std::size_t j = 0; j < c.cols(); ++j) {
      const double w = c(i, j);
      if (w == 0.0) continue;
      const double* in = x.data() + j * block;
      for (std::size_t k = 0; k < block; ++k) out[k] += w * in[k];
    }
  }
}

DenseMatrix kron_dense(const DenseMatrix& c, const DenseMatrix& x) {
  DenseMatrix out(c.rows() * x.rows(), c.cols() * x.cols());
  for (std::size_t cr = 0; cr < c.rows(); ++cr)
    for (std::size_t cc = 0; cc < c.cols(); ++cc) {
      const double w = c(cr, cc);
      if (w == 0.0) continue;
      for (std::size_t xr = 0; xr < x.rows(); ++xr)
        for (std::size_t xc = 0; xc < x.cols(); ++xc)
          out(cr * x.rows() + xr, cc * x.cols() + xc) = w * x(xr, xc);
    }
  return out;
}

}  // namespace rkpint
