#pragma once

// Experiment orchestration: the sequential time-stepping driver, the
// all-at-once driver, time-step selection, plain-text configuration parsing,
// and CSV report emission.  The drivers own the glue that the library
// deliberately keeps out of the operators: choosing n_t from the mesh, running
// the Stokes initialization, accumulating iteration counts, and computing the
// trajectory error norms.

#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

#include "rkpint/allatonce.hpp"
#include "rkpint/fem.hpp"
#include "rkpint/stage_precond.hpp"
#include "rkpint/tableau.hpp"

namespace rkpint {

/// Smallest n_t with t_f/n_t <= h^(q_fe/q_rk).  `h` is the spatial mesh
/// parameter the caller wants the time step tied to; the drivers pass the
/// element size.  A tiny slack keeps exact integer boundaries from rounding up
/// on floating-point noise.
std::size_t choose_nt(double t_f, double h, int q_fe, int q_rk);

enum class StagePrecondKind { rk, mns };

// ---- low-level drivers (problem supplied by the caller) --------------------------

struct SequentialOptions {
  double tolerance = 1e-8;
  int restart = 10;
  std::size_t max_stage_iters = 400;  // per-step GMRES budget
  StagePrecondKind precond = StagePrecondKind::rk;
  BlockSolvePolicy blocks = BlockSolvePolicy::multigrid;
  // One V-cycle per block solve.  A second cycle makes the stage
  // preconditioners nearly exact on these nested grids, which erases the
  // iteration-count differences the preconditioner comparison is about.
  int mg_cycles = 1;
  int chebyshev_steps = 20;  // update-row mass solves
  double gamma = 1e-4;       // Stokes preconditioner perturbation
};

struct SequentialResult {
  TrajectoryRecord trajectory;
  std::size_t steps = 0;
  std::size_t total_stage_iterations = 0;
  std::size_t avg_stage_iterations = 0;  // rounded half-up
  std::size_t init_iterations = 0;       // Stokes backward Euler start, not averaged
  double t_total_s = 0.0;
};

/// March n_t steps from the interpolated initial state: per step one GMRES
/// solve of the stage system (restart/tolerance from the options), then the
/// weighted-stage update with a Chebyshev mass solve for the boundary data.
/// Throws ConvergenceError naming the step if a stage solve stalls.
SequentialResult heat_sequential(const HeatDiscretization& d, const ButcherTableau& tab,
                                 const ManufacturedProblem& p, std::size_t n_t,
                                 const SequentialOptions& opts = {});

/// Stokes analogue.  Runs the backward Euler initialization first (its
/// iterations are reported separately, not averaged), then solves the true
/// stage system (zero pressure-pressure block) preconditioned with the
/// gamma-perturbed factorization.  Node pressures advance by the weighted
/// stage-pressure sum.
SequentialResult stokes_sequential(const StokesDiscretization& d, const ButcherTableau& tab,
                                   const ManufacturedProblem& p, std::size_t n_t,
                                   const SequentialOptions& opts = {});

// ---- configuration ----------------------------------------------------------------

struct ExperimentConfig {
  std::string problem;  // heat-seq | heat-aao | stokes-seq | stokes-aao | lid-cavity-aao
  RkFamily family = RkFamily::Gauss;
  std::size_t s = 0;
  int degree = 1;  // heat element order; Stokes is fixed at Q2-Q1
  int level = 0;
  double t_f = 0.0;
  double tolerance = 1e-8;
  int restart = 10;
  StagePrecondKind precond = StagePrecondKind::rk;       // sequential stage solves
  BlockSolvePolicy inner = BlockSolvePolicy::multigrid;  // block solves everywhere
  int threads = 1;
  std::string out;  // CSV destination; empty = caller decides
};

/// Parse `key=value` lines ('#' starts a comment, blank lines ignored).
/// Unknown keys, duplicates, malformed values, and out-of-range fields raise
/// ConfigError with the 1-based line; a missing required key reports line 0.
/// Required: problem, family, s, l, tf.  Defaults: degree=1, tolerance=1e-8,
/// restart=10, precond=rk, inner=multigrid, threads=1.
ExperimentConfig parse_config(const std::string& text);

// ---- reports ----------------------------------------------------------------------

/// One CSV row.  Optional fields use NaN (doubles) and are emitted empty.
struct SolveReport {
  std::string problem;
  std::string family;
  std::size_t s = 0;
  int degree = 0;
  int level = 0;
  std::size_t n_t = 0;
  std::size_t dof = 0;
  double outer_iters = 0.0;      // all-at-once only
  double avg_stage_iters = 0.0;  // sequential only
  double v_error = 0.0;
  double p_error = 0.0;
  double t_total_s = 0.0;
  double t_theta_s = 0.0;  // all-at-once phase timings
  double t_schur_s = 0.0;
  bool converged = false;
};

/// Header + one line per report; floats with 6 significant digits, NaN fields
/// empty.  The path overload surfaces I/O failures as errors.
void emit_report(const std::vector<SolveReport>& reports, std::ostream& os);
void emit_report(const std::vector<SolveReport>& reports, const std::string& path);

// ---- config-level drivers ---------------------------------------------------------

struct ExperimentResult {
  TrajectoryRecord trajectory;
  SolveReport report;
};

/// Dispatch a heat-seq or stokes-seq run: build the discretization and the
/// manufactured problem, pick n_t from the element size, march, and fill the
/// report (including the error norms where an exact solution exists).
ExperimentResult run_sequential(const ExperimentConfig& cfg);

/// Dispatch heat-aao, stokes-aao, or lid-cavity-aao through the all-at-once
/// solver.  The lid-driven cavity is restricted to desk scale (l <= 4,
/// t_f <= 8) and reports no error norms.
ExperimentResult run_allatonce(const ExperimentConfig& cfg);

}  // namespace rkpint
