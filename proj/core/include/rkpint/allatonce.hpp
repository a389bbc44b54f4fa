#pragma once

// All-at-once form of the Runge-Kutta time discretization: a single linear
// system coupling every time node and every stage unknown,
//
//   [ Phi   Psi1 ] [ v ]   [ r_nodes  ]
//   [ Psi2  Th   ] [ k ] = [ r_stages ]
//
// Phi is block lower bidiagonal in the mass matrix (the time-update rows plus
// one initial-condition row), Psi1 contracts the stages of each step with
// -tau b^T (x) M, Psi2 couples each stage block to its step start value with
// e (x) D, and Th is block diagonal with one stage system per step.  The
// preconditioner eliminates the stage block and keeps its Schur complement:
//
//   P = [ S  Psi1 ]          S = -blkdiag(M) * S^,
//       [ 0  Th~  ]
//
// where S^ is unit block lower bidiagonal with subdiagonal -(I - X^) and
// X^ = tau (b^T (x) I) Th~^-1 (e (x) D).  Applying P^-1 costs one inexact
// stage solve per step (independent across steps, so that phase runs as a
// parallel map), a mass solve per time node, and a strictly sequential block
// forward substitution whose X^ applications are again inexact stage solves.
// For Stokes the per-node unknown is (v, p) stacked, the mass block is
// blkdiag(M_v, M_p), and the stage solves run on the gamma-perturbed operator
// while the system itself keeps the true singular one.

#include <cstddef>
#include <memory>
#include <vector>

#include "rkpint/fem.hpp"
#include "rkpint/krylov.hpp"
#include "rkpint/stage_precond.hpp"
#include "rkpint/tableau.hpp"

namespace rkpint {

// ---- right-hand side pieces ------------------------------------------------------

// Shared between the sequential driver and the all-at-once assembly.  Stage
// blocks exclude the coupling to the step start value: in the all-at-once
// operator that term lives in Psi2, sequential callers subtract it themselves.

/// Heat stage rhs for the step starting at t_n: per stage the load at
/// t_n + c_i tau plus every eliminated-boundary contribution (stiffness lift
/// of the boundary data at t_n, mass lift of the boundary time derivative,
/// and the tableau-weighted stiffness lifts of the stage derivatives).
std::vector<double> heat_stage_rhs(const HeatDiscretization& d, const ButcherTableau& tab,
                                   const ManufacturedProblem& p, double t_n, double tau);

/// Heat update-row rhs for the step t_prev -> t_prev + tau: mass lift of the
/// boundary difference plus the weighted mass lifts of the stage derivatives.
std::vector<double> heat_update_rhs(const HeatDiscretization& d, const ButcherTableau& tab,
                                    const ManufacturedProblem& p, double t_prev, double tau);

/// Stokes stage rhs: velocity stages as in the heat case with the vector
/// boundary data; pressure stages carry the divergence lift of the boundary
/// data and of the stage derivatives.
std::vector<double> stokes_stage_rhs(const StokesDiscretization& d, const ButcherTableau& tab,
                                     const ManufacturedProblem& p, double t_n, double tau);

/// Stokes update-row rhs: velocity part as in the heat case, pressure part
/// zero (the pressure carries no boundary condition).
std::vector<double> stokes_update_rhs(const StokesDiscretization& d, const ButcherTableau& tab,
                                      const ManufacturedProblem& p, double t_prev, double tau);

// ---- the operator ----------------------------------------------------------------

class AllAtOnceSystem {
 public:
  AllAtOnceSystem(const HeatDiscretization& d, const ButcherTableau& tab, double t_start,
                  double t_final, std::size_t n_t);
  AllAtOnceSystem(const StokesDiscretization& d, const ButcherTableau& tab, double t_start,
                  double t_final, std::size_t n_t);

  bool is_stokes() const { return stokes_ != nullptr; }
  std::size_t n_t() const { return n_t_; }
  double tau() const { return tau_; }
  double t_start() const { return t_start_; }
  const ButcherTableau& tableau() const { return tab_; }

  /// Per-node unknown size (heat: interior dofs; Stokes: velocity + pressure).
  std::size_t node_size() const { return node_; }
  /// Stage unknowns of one step.
  std::size_t stage_size() const { return stage_; }
  /// Total dimension: (n_t + 1) nodes plus n_t stage blocks.
  std::size_t size() const { return (n_t_ + 1) * node_ + n_t_ * stage_; }

  // layout: all node values first, then one stage block per step
  std::size_t node_offset(std::size_t n) const { return n * node_; }
  std::size_t stage_offset(std::size_t n) const { return (n_t_ + 1) * node_ + n * stage_; }

  void apply(const std::vector<double>& x, std::vector<double>& y) const;
  LinearOperator as_operator() const;

  /// Right-hand side from problem data and the state at t_start (heat form:
  /// interior nodal values).
  std::vector<double> assemble_rhs(const ManufacturedProblem& p,
                                   const std::vector<double>& v0) const;
  /// Stokes form: velocity and pressure at t_start (normally produced by the
  /// backward Euler initialization).
  std::vector<double> assemble_rhs(const ManufacturedProblem& p, const std::vector<double>& v0,
                                   const std::vector<double>& p0) const;

  const HeatDiscretization* heat() const { return heat_; }
  const StokesDiscretization* stokes() const { return stokes_; }

 private:
  void check_common(double t_final) const;

  const HeatDiscretization* heat_ = nullptr;
  const StokesDiscretization* stokes_ = nullptr;
  ButcherTableau tab_;  // copied so a temporary tableau argument stays valid
  std::size_t n_t_;
  double t_start_, tau_;
  std::size_t node_, stage_;
  std::size_t nv_ = 0, np_ = 0;  // Stokes split of a node
  std::unique_ptr<HeatStageSystem> heat_stage_;
  std::unique_ptr<StokesStageSystem> stokes_stage_;  // true operator, gamma = 0
  SparseMatrix mass_v2_, stiff_v2_;                  // Stokes blocks for both components
};

// ---- the preconditioner ----------------------------------------------------------

enum class AaoInnerPolicy {
  production,  // fixed-count GMRES stage solves, Chebyshev mass solves, V-cycle blocks
  exact        // dense LU stage and mass solves (small oracle runs)
};

struct AaoPrecondOptions {
  AaoInnerPolicy policy = AaoInnerPolicy::production;
  int stage_iterations = 5;  // GMRES steps per inexact stage solve
  int chebyshev_steps = 20;  // mass solves in the Schur phase
  int mg_cycles = 2;         // V-cycles per block inside the stage preconditioner
  double gamma = 1e-4;       // Stokes stage perturbation (preconditioner side only)
  int threads = 1;           // width of the parallel stage-solve phase
};

class AllAtOncePrecond {
 public:
  AllAtOncePrecond(const AllAtOnceSystem& sys, AaoPrecondOptions opts = {});

  /// z = P^-1 r.  Phase timings accumulate across calls until reset_timers().
  void apply(const std::vector<double>& r, std::vector<double>& z) const;
  LinearOperator as_operator() const;

  /// Inexact stage solve of one step (rhs and out point at stage_size()
  /// entries).  Public so tests can replay the stage phase in any order; the
  /// step index only labels errors, the operator is the same for every step.
  void stage_block_solve(std::size_t step, const double* rhs, double* out) const;

  const AaoPrecondOptions& options() const { return opts_; }
  double theta_seconds() const { return theta_s_; }
  double schur_seconds() const { return schur_s_; }
  void reset_timers() const { theta_s_ = schur_s_ = 0.0; }

 private:
  void stage_phase(const std::vector<double>& r, std::vector<double>& z) const;
  void schur_phase(const std::vector<double>& r, std::vector<double>& z) const;
  // u = X^ w: one inexact stage solve of (e (x) D) w, then the tau b^T
  // contraction
  void apply_xhat(const std::vector<double>& w, std::vector<double>& u,
                  std::vector<double>& stage_rhs, std::vector<double>& stage_sol,
                  std::size_t step) const;
  void mass_solve(const std::vector<double>& w, std::vector<double>& z) const;

  const AllAtOnceSystem* sys_;
  AaoPrecondOptions opts_;

  // production stage solve: system operator and preconditioner (Stokes side
  // works on the perturbed operator)
  std::unique_ptr<HeatStageSystem> heat_tilde_;
  std::unique_ptr<HeatRkPreconditioner> heat_pc_;
  std::unique_ptr<StokesStageSystem> stokes_tilde_;
  std::unique_ptr<StokesRkPreconditioner> stokes_pc_;
  LinearOperator stage_op_, stage_pc_;

  // Stokes block matrices for the Psi1 contraction and the X^ coupling
  SparseMatrix mass_v2_, stiff_v2_;

  // exact stage solve
  LuFactors stage_lu_;

  // Schur-phase mass solves (heat: one block; Stokes: scalar velocity + pressure)
  std::unique_ptr<MassSolver> mass_a_, mass_b_;

  mutable double theta_s_ = 0.0, schur_s_ = 0.0;
};

// ---- solve and assembly ----------------------------------------------------------

struct AaoSolveOptions {
  double rel_tol = 1e-8;
  std::size_t restart = 10;
  std::size_t max_iters = 400;
};

struct AaoSolveResult {
  bool converged = false;
  std::size_t iterations = 0;
  double relative_residual = 0.0;
  double t_total_s = 0.0, t_theta_s = 0.0, t_schur_s = 0.0;
  std::vector<std::vector<double>> nodes;   // per time node: v (heat) or v then p
  std::vector<std::vector<double>> stages;  // per step: the stage block
};

/// Outer flexible GMRES on the all-at-once system (the inner stage solves are
/// fixed-count, so the effective preconditioner varies between iterations).
AaoSolveResult solve_allatonce(const AllAtOnceSystem& sys, const AllAtOncePrecond& pc,
                               const std::vector<double>& rhs, const AaoSolveOptions& opts = {});

/// State produced by one backward Euler step on (0, eps_be), eps_be = h^2.5:
/// the pressure approximation the Runge-Kutta trajectory needs at its start.
struct StokesInitialState {
  std::vector<double> velocity;  // interior, both components
  std::vector<double> pressure;  // full pressure grid
  double eps_be = 0.0;
  std::size_t iterations = 0;  // GMRES steps spent on the single stage solve
};

StokesInitialState stokes_backward_euler_init(const StokesDiscretization& d,
                                              const ManufacturedProblem& p,
                                              BlockSolvePolicy policy, int mg_cycles = 2,
                                              double gamma = 1e-4);

/// Everything needed to run one all-at-once experiment: the discretization
/// (owned here so the system's references stay valid), the operator, the
/// assembled rhs, and the initial state the rhs was built from.
struct AllAtOnceProblem {
  std::unique_ptr<HeatDiscretization> heat;
  std::unique_ptr<StokesDiscretization> stokes;
  std::unique_ptr<AllAtOnceSystem> system;
  std::vector<double> rhs;
  std::vector<double> v0, p0;
  double t_start = 0.0;
  std::size_t init_iterations = 0;  // backward Euler stage solve (Stokes only)
};

/// `degree` selects the heat element order (1 or 2) and is ignored for Stokes
/// (Taylor-Hood is fixed at Q2-Q1).
AllAtOnceProblem assemble_allatonce(const ManufacturedProblem& p, const ButcherTableau& tab,
                                    int level, int degree, double t_f, std::size_t n_t,
                                    const AaoPrecondOptions& inner = {});

}  // namespace rkpint
