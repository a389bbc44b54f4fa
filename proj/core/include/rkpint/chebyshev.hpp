#pragma once

// Fixed-step Chebyshev semi-iteration for mass-matrix solves, Jacobi
// splitting.  The eigenvalue interval of D^-1 M is estimated once with power
// iterations (deterministic start vector) and widened by a safety margin, so
// every solve afterwards is a fixed short recurrence: no inner products, no
// data-dependent branching, bitwise reproducible.

#include <cstddef>
#include <vector>

#include "rkpint/sparse.hpp"

namespace rkpint {

class ChebyshevMassSolver {
 public:
  /// `steps` applications of the recurrence per solve; the spectral interval
  /// comes from `power_iters` power iterations widened by `widen` on each end.
  explicit ChebyshevMassSolver(const SparseMatrix& m, int steps = 20, int power_iters = 30,
                               double widen = 0.05);

  /// x <- approximate M^-1 b (zero initial guess).
  void solve(const std::vector<double>& b, std::vector<double>& x) const;

  double lambda_min() const { return lambda_min_; }
  double lambda_max() const { return lambda_max_; }
  int steps() const { return steps_; }

 private:
  const SparseMatrix* m_;
  std::vector<double> inv_diag_;
  int steps_;
  double lambda_min_ = 0.0, lambda_max_ = 0.0;
};

}  // namespace rkpint
