#pragma once

// Geometric multigrid V-cycles over a caller-supplied operator hierarchy.
// Operators are rediscretized on every level (assembled there, not Galerkin
// projected); restriction is the transpose of the nodal interpolation.  The
// coarsest level is factorized densely once.

#include <cstddef>
#include <vector>

#include "rkpint/dense.hpp"
#include "rkpint/sparse.hpp"

namespace rkpint {

class GeometricMultigrid {
 public:
  /// `ops[k]` is the system matrix on level k (0 = coarsest); `prolongs[k]`
  /// interpolates level k-1 vectors to level k, so prolongs[0] is unused and
  /// may be null.  Matrices are referenced, not copied; they must outlive the
  /// solver.  `pre`/`post` count symmetric Gauss-Seidel sweeps.
  GeometricMultigrid(std::vector<const SparseMatrix*> ops,
                     std::vector<const SparseMatrix*> prolongs, int pre = 2, int post = 2);

  /// One V-cycle refining `x` in place toward A x = b on the finest level.
  void vcycle(std::vector<double>& x, const std::vector<double>& b) const;

  /// x <- result of `cycles` V-cycles from a zero initial guess.
  void solve(const std::vector<double>& b, std::vector<double>& x, int cycles) const;

  std::size_t levels() const { return ops_.size(); }

 private:
  void cycle_level(std::size_t k, std::vector<double>& x, const std::vector<double>& b) const;

  std::vector<const SparseMatrix*> ops_;
  std::vector<const SparseMatrix*> prolongs_;
  std::vector<SparseMatrix> restricts_;  // transposed prolongations
  int pre_, post_;
  LuFactors coarse_lu_;
};

/// Prolongation adapted to a pinned dof: row k and column k are cleared except
/// for a unit diagonal entry, so corrections never leak through the pin.  Use
/// together with SparseMatrix::pinned level operators.
SparseMatrix pinned_prolongation(const SparseMatrix& p, int k);

}  // namespace rkpint
