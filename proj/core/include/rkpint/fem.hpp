#pragma once

// Uniform-grid finite elements on the square (-1,1)^2: Q1/Q2 scalar
// discretizations with Dirichlet elimination for the heat equation, and
// Taylor-Hood Q2-Q1 for Stokes.  A grid "level" l means 2^l elements per side.
// Each discretization carries its full coarse-level ancestry so multigrid can
// rediscretize operators on every level down to l = 1.

#include <array>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "rkpint/sparse.hpp"

namespace rkpint {

using ScalarField = std::function<double(double, double, double)>;          // (x, y, t)
using VectorField = std::function<std::array<double, 2>(double, double, double)>;

struct GridLevel {
  int level = 0;   // l, so 2^l elements per side
  int degree = 1;  // 1 (Q1) or 2 (Q2)
  std::size_t elems_per_side = 0;
  std::size_t nodes_per_side = 0;   // degree * 2^l + 1
  double elem_size = 0.0;           // 2^(1-l)
  std::vector<double> coord;        // 1-D node coordinates, shared by both axes

  std::vector<int> interior;           // interior node ids, lexicographic
  std::vector<int> boundary;           // boundary node ids
  std::vector<int> full_to_interior;   // -1 on boundary nodes

  SparseMatrix mass_full, stiffness_full;   // all nodes
  SparseMatrix mass_int, stiffness_int;     // interior block

  // interpolation from the next coarser level (empty on the coarsest)
  SparseMatrix prolong_full;
  SparseMatrix prolong_int;

  std::size_t n_interior() const { return interior.size(); }
  std::size_t n_full() const { return nodes_per_side * nodes_per_side; }
  double node_x(int id) const { return coord[static_cast<std::size_t>(id) % nodes_per_side]; }
  double node_y(int id) const { return coord[static_cast<std::size_t>(id) / nodes_per_side]; }
};

struct ScalarHierarchy {
  int degree = 1;
  std::vector<GridLevel> levels;  // levels[0] is l = 1 (coarsest), back() is finest
  const GridLevel& finest() const { return levels.back(); }
};

/// Build grid levels 1..level with assembled mass/stiffness and interlevel
/// interpolation.  Quadrature is exact for these operators: tensor Gauss with
/// (degree+1)^2 points per element.
ScalarHierarchy build_scalar_hierarchy(int level, int degree);

// ---- heat --------------------------------------------------------------------

struct HeatDiscretization {
  int level = 0;
  int degree = 1;
  ScalarHierarchy hierarchy;
  const GridLevel& grid() const { return hierarchy.finest(); }
  std::size_t n_dof() const { return grid().n_interior(); }
  const SparseMatrix& mass() const { return grid().mass_int; }
  const SparseMatrix& stiffness() const { return grid().stiffness_int; }
};

HeatDiscretization assemble_heat(int level, int degree);

// ---- Stokes (Taylor-Hood Q2-Q1) ------------------------------------------------

struct StokesDiscretization {
  int level = 0;
  ScalarHierarchy velocity;  // Q2, velocity components use the interior block
  ScalarHierarchy pressure;  // Q1, full grid: pressure carries no boundary condition

  // Divergence operator: rows = pressure dofs, columns = both velocity
  // components, interior columns for `b_int` and full columns for the lift.
  SparseMatrix b_int;    // n_p x n_v
  SparseMatrix bt_int;   // n_v x n_p
  SparseMatrix b_full;   // n_p x 2*(full scalar velocity nodes)

  std::size_t n_scalar() const { return velocity.finest().n_interior(); }
  std::size_t n_vel() const { return 2 * n_scalar(); }
  std::size_t n_pres() const { return pressure.finest().n_full(); }
  const SparseMatrix& mass_p() const { return pressure.finest().mass_full; }
  const SparseMatrix& stiffness_p() const { return pressure.finest().stiffness_full; }
};

StokesDiscretization assemble_stokes(int level);

// ---- manufactured problems -----------------------------------------------------

struct ManufacturedProblem {
  std::string name;
  double t_final = 2.0;
  bool is_stokes = false;
  bool has_exact = true;

  // heat fields
  ScalarField exact_v;   // also supplies Dirichlet data on the boundary
  ScalarField exact_dvdt;
  ScalarField forcing;

  // Stokes fields
  VectorField exact_vel;      // Dirichlet data on the boundary
  VectorField exact_dvel_dt;
  ScalarField exact_pres;
  VectorField forcing_vel;
};

/// Heat test problem: v = e^(tf-t) cos(pi x/2) cos(pi y/2) + 1 on (-1,1)^2,
/// constant-in-time boundary values.
ManufacturedProblem make_heat_problem();
/// Colliding-flow Stokes problem with time factor e^(tf-t); forcing is -v.
ManufacturedProblem make_colliding_flow_problem();
/// Lid-driven cavity: zero forcing, lid velocity ramps along [t,0] until t=1.
ManufacturedProblem make_lid_cavity_problem(double t_final);

// ---- evaluation helpers ---------------------------------------------------------

/// Nodal interpolant over all grid nodes.
std::vector<double> interpolate_full(const GridLevel& g, const ScalarField& f, double t);
/// Nodal interpolant restricted to interior nodes.
std::vector<double> interpolate_interior(const GridLevel& g, const ScalarField& f, double t);
std::vector<double> restrict_interior(const GridLevel& g, const std::vector<double>& full);
/// Full-size vector carrying boundary values only (zero at interior nodes).
std::vector<double> boundary_only(const GridLevel& g, const ScalarField& f, double t);

/// Load vector: integral of f(.,t) against interior basis functions, with the
/// same tensor Gauss rule as the matrix assembly.
std::vector<double> assemble_load(const GridLevel& g, const ScalarField& f, double t);

/// (A_full * w) restricted to interior nodes; `w` is full-size.  This is how
/// eliminated boundary data re-enters stage right-hand sides.
std::vector<double> apply_full_to_interior(const SparseMatrix& a_full, const GridLevel& g,
                                           const std::vector<double>& w);

// ---- trajectories and error norms ----------------------------------------------

struct TrajectoryRecord {
  std::vector<double> times;                     // strictly increasing
  std::vector<std::vector<double>> values;       // heat: interior v; Stokes: velocity
  std::vector<std::vector<double>> pressures;    // Stokes only
};

/// Scaled max-norm error: per time step pick the node with the largest
/// absolute error and divide by the exact value there; report the max over
/// steps.  Falls back to the absolute error where the exact value vanishes.
double heat_error(const HeatDiscretization& d, const ManufacturedProblem& p,
                  const TrajectoryRecord& traj);

struct StokesErrorPair {
  double v_error = 0.0;  // max_n || e_v ||_{K_v}  (velocity gradient seminorm)
  double p_error = 0.0;  // max_n || e_p ||_{M_p} after matching weighted means
};
StokesErrorPair stokes_error(const StokesDiscretization& d, const ManufacturedProblem& p,
                             const TrajectoryRecord& traj);

}  // namespace rkpint
