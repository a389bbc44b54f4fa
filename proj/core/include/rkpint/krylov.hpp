#pragma once

// Restarted GMRES and flexible GMRES, right-preconditioned.  Convergence is
// always certified on the true residual of the unpreconditioned system, so a
// drifting Arnoldi estimate cannot declare victory early.

#include <cstddef>
#include <functional>
#include <vector>

namespace rkpint {

using LinearOperator = std::function<void(const std::vector<double>&, std::vector<double>&)>;

/// y = x pass-through, the "no preconditioner" operator.
LinearOperator identity_operator();

struct KrylovOptions {
  double rel_tol = 1e-8;     // on ||b - A x|| / ||b||; 0 switches to fixed-count mode
  std::size_t restart = 10;
  std::size_t max_iters = 500;  // total Arnoldi steps across restarts
};

struct KrylovResult {
  bool converged = false;
  std::size_t iterations = 0;        // total Arnoldi steps taken
  double relative_residual = 0.0;    // true residual at exit
  std::vector<double> history;       // estimated absolute residual after each step
};

/// Right-preconditioned restarted GMRES: solves A (M^-1 u) = b, x <- x0 + M^-1 V y.
/// `x` carries the initial guess and receives the solution.
KrylovResult gmres(const LinearOperator& a, const LinearOperator& precond,
                   const std::vector<double>& b, std::vector<double>& x,
                   const KrylovOptions& opts = {});

/// Flexible GMRES: the preconditioner may change between iterations; the
/// preconditioned directions are stored explicitly.
KrylovResult fgmres(const LinearOperator& a, const LinearOperator& precond,
                    const std::vector<double>& b, std::vector<double>& x,
                    const KrylovOptions& opts = {});

}  // namespace rkpint
