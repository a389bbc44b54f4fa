#pragma once

// Runge-Kutta stage systems and their preconditioners.
//
// Heat: the stage matrix is  I_s (x) M + tau A (x) K.  Its SVD preconditioner
// factorizes A = U S V^T and applies  (V (x) I) blkdiag(M + tau s_i K)^-1
// (U^T (x) I); the block-diagonal alternative uses the tableau diagonal a_ii
// instead.  Stokes carries the saddle structure along: the perturbed stage
// operator regularizes the pressure-pressure block, and the preconditioner
// inverts a triangular factorization whose Schur complement is applied through
// mass and pressure-Poisson solves only.
//
// Block solves run under a policy: `exact` uses dense LU throughout (small
// grids, spectral studies, reference paths), `multigrid` is the production
// path (2 rediscretized V-cycles per block, Chebyshev mass solves).

#include <cstddef>
#include <memory>
#include <vector>

#include "rkpint/chebyshev.hpp"
#include "rkpint/dense.hpp"
#include "rkpint/fem.hpp"
#include "rkpint/kron.hpp"
#include "rkpint/krylov.hpp"
#include "rkpint/multigrid.hpp"
#include "rkpint/tableau.hpp"

namespace rkpint {

enum class BlockSolvePolicy { exact, multigrid };

/// Solver for the scalar shifted operator  M + weight K  on the interior of a
/// grid hierarchy: dense LU or a fixed number of rediscretized V-cycles.
class ShiftedBlockSolver {
 public:
  ShiftedBlockSolver(const ScalarHierarchy& h, double weight, BlockSolvePolicy policy,
                     int cycles = 2);
  void solve(const std::vector<double>& b, std::vector<double>& x) const;
  std::size_t size() const { return n_; }

 private:
  std::size_t n_;
  BlockSolvePolicy policy_;
  int cycles_;
  std::vector<SparseMatrix> shifted_;
  std::unique_ptr<GeometricMultigrid> mg_;
  LuFactors lu_;
};

/// Pressure-Poisson solver on the full grid with one pinned node: dense LU of
/// the pinned matrix or pin-aware V-cycles.  The pinned matrix carries a unit
/// diagonal at the pin, so the solve is a true inverse and x[pin] = b[pin].
class PinnedPoissonSolver {
 public:
  PinnedPoissonSolver(const ScalarHierarchy& h, int pin, BlockSolvePolicy policy, int cycles = 2);
  void solve(const std::vector<double>& b, std::vector<double>& x) const;
  const SparseMatrix& pinned_matrix() const { return pinned_.back(); }

 private:
  int pin_;
  BlockSolvePolicy policy_;
  int cycles_;
  std::vector<SparseMatrix> pinned_;
  std::vector<SparseMatrix> transfers_;
  std::unique_ptr<GeometricMultigrid> mg_;
  LuFactors lu_;
};

/// Mass solve under a policy: dense LU or the 20-step Chebyshev semi-iteration.
class MassSolver {
 public:
  MassSolver(const SparseMatrix& m, BlockSolvePolicy policy, int chebyshev_steps = 20);
  void solve(const std::vector<double>& b, std::vector<double>& x) const;

 private:
  BlockSolvePolicy policy_;
  std::unique_ptr<ChebyshevMassSolver> cheb_;
  LuFactors lu_;
};

// ---- heat ----------------------------------------------------------------------

class HeatStageSystem {
 public:
  HeatStageSystem(const HeatDiscretization& disc, const ButcherTableau& tab, double tau);

  std::size_t size() const { return tab_.stages * n_; }
  std::size_t block_size() const { return n_; }
  double tau() const { return tau_; }
  const ButcherTableau& tableau() const { return tab_; }

  void apply(const std::vector<double>& x, std::vector<double>& y) const;
  LinearOperator as_operator() const;

 private:
  const HeatDiscretization* disc_;
  ButcherTableau tab_;  // copied: the coefficients are small and callers pass temporaries
  double tau_;
  std::size_t n_;
  KronOperator op_;
};

/// SVD stage preconditioner for the heat stage system.
class HeatRkPreconditioner {
 public:
  HeatRkPreconditioner(const HeatDiscretization& disc, const ButcherTableau& tab, double tau,
                       BlockSolvePolicy policy, int cycles = 2);
  void apply(const std::vector<double>& r, std::vector<double>& z) const;
  LinearOperator as_operator() const;
  const RkSvdFactors& factors() const { return svd_; }

 private:
  std::size_t n_;
  RkSvdFactors svd_;
  std::vector<ShiftedBlockSolver> blocks_;
};

/// Block-diagonal (tableau diagonal) stage preconditioner.
class HeatMnsPreconditioner {
 public:
  HeatMnsPreconditioner(const HeatDiscretization& disc, const ButcherTableau& tab, double tau,
                        BlockSolvePolicy policy, int cycles = 2);
  void apply(const std::vector<double>& r, std::vector<double>& z) const;
  LinearOperator as_operator() const;

 private:
  std::size_t n_;
  std::vector<ShiftedBlockSolver> blocks_;
};

// ---- Stokes --------------------------------------------------------------------

/// Stage operator for Stokes.  Layout: all velocity stages first (each is the
/// two-component interior vector), then all pressure stages.  `gamma` = 0 gives
/// the true operator with its zero pressure-pressure block; `gamma` > 0 adds
/// the stabilizing perturbation  -tau^2 gamma (A^2 (x) M_p).
class StokesStageSystem {
 public:
  StokesStageSystem(const StokesDiscretization& disc, const ButcherTableau& tab, double tau,
                    double gamma);

  std::size_t size() const { return tab_.stages * (nv_ + np_); }
  std::size_t velocity_size() const { return tab_.stages * nv_; }
  std::size_t pressure_size() const { return tab_.stages * np_; }
  double tau() const { return tau_; }
  double gamma() const { return gamma_; }
  const ButcherTableau& tableau() const { return tab_; }

  void apply(const std::vector<double>& x, std::vector<double>& y) const;
  LinearOperator as_operator() const;

 private:
  const StokesDiscretization* disc_;
  ButcherTableau tab_;  // copied, same reason as the heat case
  double tau_, gamma_;
  std::size_t nv_, np_;
  SparseMatrix mass_v2_, stiff_v2_;  // two-component blocks
  KronOperator vel_op_, div_op_, grad_op_, pres_op_;
};

/// SVD preconditioner for the (perturbed) Stokes stage operator.
class StokesRkPreconditioner {
 public:
  StokesRkPreconditioner(const StokesDiscretization& disc, const ButcherTableau& tab, double tau,
                         double gamma, BlockSolvePolicy policy, int cycles = 2);
  void apply(const std::vector<double>& r, std::vector<double>& z) const;
  LinearOperator as_operator() const;
  const RkSvdFactors& factors() const { return svd_; }

  /// Inverse of the Schur-complement approximation on the stage-pressure space
  /// (dimension s*n_p), in the untransformed basis:
  ///   -tau^-2 (A^-1 (x) I) (I (x) M_p)^-1 (I (x) M_p + tau A (x) K_p) (I (x) K_p)^-1 (A^-1 (x) I)
  /// with the pressure Laplacian pinned wherever it appears.
  void apply_schur_inverse(const std::vector<double>& r, std::vector<double>& z) const;

 private:
  // core of the Schur solve, operating on residuals already hit by U^T and
  // leaving the final V transform to the caller
  void schur_core(const std::vector<double>& cp, std::vector<double>& zp) const;

  const StokesDiscretization* disc_;
  double tau_;
  std::size_t ns_, nv_, np_;
  RkSvdFactors svd_;
  std::vector<ShiftedBlockSolver> vel_blocks_;   // one per singular value
  PinnedPoissonSolver poisson_;
  MassSolver pressure_mass_;
  KronOperator middle_;                          // I (x) M_p + tau A (x) K_p
  DenseMatrix v_sinv_, sinv_ut_;                 // V S^-1 and S^-1 U^T
};

}  // namespace rkpint
