#include "rkpint/fem.hpp"

#include <cmath>
#include <string>

#include "rkpint/dense.hpp"

namespace rkpint {

namespace {

struct QuadRule {
  std::vector<double> pts, wts;
};

QuadRule gauss_rule(int npts) {
  QuadRule q;
  if (npts == 2) {
    const double a = 1.0 / std::sqrt(3.0);
    q.pts = {-a, a};
    q.wts = {1.0, 1.0};
  } else {
    const double a = std::sqrt(3.0 / 5.0);
    q.pts = {-a, 0.0, a};
    q.wts = {5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0};
  }
  return q;
}

// 1-D Lagrange shapes on [-1,1]: linear (2 nodes) or quadratic (3 nodes).
void shape_1d(int degree, double xi, double* n, double* dn) {
  if (degree == 1) {
    n[0] = 0.5 * (1.0 - xi);
    n[1] = 0.5 * (1.0 + xi);
    dn[0] = -0.5;
    dn[1] = 0.5;
  } else {
    n[0] = 0.5 * xi * (xi - 1.0);
    n[1] = 1.0 - xi * xi;
    n[2] = 0.5 * xi * (xi + 1.0);
    dn[0] = xi - 0.5;
    dn[1] = -2.0 * xi;
    dn[2] = xi + 0.5;
  }
}

struct LocalOps {
  int degree;
  std::size_t nloc_1d;   // degree+1
  std::size_t nloc;      // (degree+1)^2
  // reference-element matrices; mass carries the (h/2)^2 jacobian separately
  std::vector<double> mass_ref;    // nloc x nloc
  std::vector<double> stiff_ref;   // h-independent in 2-D
};

LocalOps local_ops(int degree) {
  LocalOps ops;
  ops.degree = degree;
  ops.nloc_1d = static_cast<std::size_t>(degree + 1);
  ops.nloc = ops.nloc_1d * ops.nloc_1d;
  ops.mass_ref.assign(ops.nloc * ops.nloc, 0.0);
  ops.stiff_ref.assign(ops.nloc * ops.nloc, 0.0);
  const QuadRule q = gauss_rule(degree + 1);
  double nx[3] = {}, dnx[3] = {}, ny[3] = {}, dny[3] = {};
  for (std::size_t qy = 0; qy < q.pts.size(); ++qy)
    for (std::size_t qx = 0; qx < q.pts.size(); ++qx) {
      shape_1d(degree, q.pts[qx], nx, dnx);
      shape_1d(degree, q.pts[qy], ny, dny);
      const double w = q.wts[qx] * q.wts[qy];
      for (std::size_t j = 0; j < ops.nloc_1d; ++j)
        for (std::size_t i = 0; i < ops.nloc_1d; ++i) {
          const std::size_t k = j * ops.nloc_1d + i;
          for (std::size_t j2 = 0; j2 < ops.nloc_1d; ++j2)
            for (std::size_t i2 = 0; i2 < ops.nloc_1d; ++i2) {
              const std::size_t k2 = j2 * ops.nloc_1d + i2;
              ops.mass_ref[k * ops.nloc + k2] += w * nx[i] * nx[i2] * ny[j] * ny[j2];
              ops.stiff_ref[k * ops.nloc + k2] +=
                  w * (dnx[i] * dnx[i2] * ny[j] * ny[j2] + nx[i] * nx[i2] * dny[j] * dny[j2]);
            }
        }
    }
  return ops;
}

GridLevel build_grid_level(int level, int degree) {
  GridLevel g;
  g.level = level;
  g.degree = degree;
  g.elems_per_side = std::size_t{1} << level;
  g.nodes_per_side = static_cast<std::size_t>(degree) * g.elems_per_side + 1;
  g.elem_size = 2.0 / static_cast<double>(g.elems_per_side);

  const std::size_t nps = g.nodes_per_side;
  g.coord.resize(nps);
  const double spacing = 2.0 / static_cast<double>(nps - 1);
  for (std::size_t i = 0; i < nps; ++i) g.coord[i] = -1.0 + spacing * static_cast<double>(i);
  g.coord.front() = -1.0;
  g.coord.back() = 1.0;

  g.full_to_interior.assign(nps * nps, -1);
  for (std::size_t iy = 0; iy < nps; ++iy)
    for (std::size_t ix = 0; ix < nps; ++ix) {
      const int id = static_cast<int>(iy * nps + ix);
      const bool on_boundary = ix == 0 || iy == 0 || ix == nps - 1 || iy == nps - 1;
      if (on_boundary) {
        g.boundary.push_back(id);
      } else {
        g.full_to_interior[static_cast<std::size_t>(id)] = static_cast<int>(g.interior.size());
        g.interior.push_back(id);
      }
    }

  const LocalOps ops = local_ops(degree);
  const double jac = g.elem_size * g.elem_size / 4.0;
  std::vector<Triplet> mt, kt;
  mt.reserve(g.elems_per_side * g.elems_per_side * ops.nloc * ops.nloc);
  kt.reserve(mt.capacity());
  std::vector<int> loc2glob(ops.nloc);
  for (std::size_t ey = 0; ey < g.elems_per_side; ++ey)
    for (std::size_t ex = 0; ex < g.elems_per_side; ++ex) {
      for (std::size_t j = 0; j < ops.nloc_1d; ++j)
        for (std::size_t i = 0; i < ops.nloc_1d; ++i)
          loc2glob[j * ops.nloc_1d + i] = static_cast<int>(
              (static_cast<std::size_t>(degree) * ey + j) * nps +
              static_cast<std::size_t>(degree) * ex + i);
      for (std::size_t k = 0; k < ops.nloc; ++k)
        for (std::size_t k2 = 0; k2 < ops.nloc; ++k2) {
          mt.push_back({loc2glob[k], loc2glob[k2], jac * ops.mass_ref[k * ops.nloc + k2]});
          kt.push_back({loc2glob[k], loc2glob[k2], ops.stiff_ref[k * ops.nloc + k2]});
        }
    }
  g.mass_full = SparseMatrix::from_triplets(nps * nps, nps * nps, std::move(mt));
  g.stiffness_full = SparseMatrix::from_triplets(nps * nps, nps * nps, std::move(kt));
  g.mass_int = g.mass_full.submatrix(g.interior, g.interior);
  g.stiffness_int = g.stiffness_full.submatrix(g.interior, g.interior);
  return g;
}

// Nodal interpolation matrix from a coarser grid of the same degree: evaluate
// the coarse basis at every fine node.
SparseMatrix build_prolongation(const GridLevel& coarse, const GridLevel& fine) {
  const std::size_t npsf = fine.nodes_per_side;
  const std::size_t npsc = coarse.nodes_per_side;
  const int d = coarse.degree;
  const std::size_t nl = static_cast<std::size_t>(d + 1);
  std::vector<Triplet> t;
  double nx[3] = {}, dnx[3] = {}, ny[3] = {}, dny[3] = {};
  for (std::size_t fy = 0; fy < npsf; ++fy)
    for (std::size_t fx = 0; fx < npsf; ++fx) {
      const double x = fine.coord[fx], y = fine.coord[fy];
      const auto elem_of = [&](double v) {
        auto e = static_cast<long>(std::floor((v + 1.0) / coarse.elem_size));
        if (e < 0) e = 0;
        if (e >= static_cast<long>(coarse.elems_per_side))
          e = static_cast<long>(coarse.elems_per_side) - 1;
        return static_cast<std::size_t>(e);
      };
      const std::size_t ex = elem_of(x), ey = elem_of(y);
      const double xl = -1.0 + static_cast<double>(ex) * coarse.elem_size;
      const double yl = -1.0 + static_cast<double>(ey) * coarse.elem_size;
      shape_1d(d, 2.0 * (x - xl) / coarse.elem_size - 1.0, nx, dnx);
      shape_1d(d, 2.0 * (y - yl) / coarse.elem_size - 1.0, ny, dny);
      const int frow = static_cast<int>(fy * npsf + fx);
      for (std::size_t j = 0; j < nl; ++j)
        for (std::size_t i = 0; i < nl; ++i) {
          const double w = nx[i] * ny[j];
          if (std::fabs(w) < 1e-14) continue;
          const int ccol = static_cast<int>(
              (static_cast<std::size_t>(d) * ey + j) * npsc + static_cast<std::size_t>(d) * ex + i);
          t.push_back({frow, ccol, w});
        }
    }
  return SparseMatrix::from_triplets(npsf * npsf, npsc * npsc, std::move(t));
}

void validate_level_degree(int level, int degree, int min_level, const char* who) {
  if (degree != 1 && degree != 2)
    throw DomainError(std::string(who) + ": degree must be 1 or 2");
  if (level < min_level || level > 9)
    throw DomainError(std::string(who) + ": level " + std::to_string(level) +
                      " outside supported range [" + std::to_string(min_level) + ", 9]");
}

}  // namespace

ScalarHierarchy build_scalar_hierarchy(int level, int degree) {
  validate_level_degree(level, degree, 1, "build_scalar_hierarchy");
  ScalarHierarchy h;
  h.degree = degree;
  h.levels.reserve(static_cast<std::size_t>(level));
  for (int l = 1; l <= level; ++l) {
    GridLevel g = build_grid_level(l, degree);
    if (!h.levels.empty()) {
      const GridLevel& coarse = h.levels.back();
      g.prolong_full = build_prolongation(coarse, g);
      g.prolong_int = g.prolong_full.submatrix(g.interior, coarse.interior);
    }
    h.levels.push_back(std::move(g));
  }
  return h;
}

HeatDiscretization assemble_heat(int level, int degree) {
  validate_level_degree(level, degree, 1, "assemble_heat");
  HeatDiscretization d;
  d.level = level;
  d.degree = degree;
  d.hierarchy = build_scalar_hierarchy(level, degree);
  return d;
}

StokesDiscretization assemble_stokes(int level) {
  validate_level_degree(level, 2, 2, "assemble_stokes");
  StokesDiscretization d;
  d.level = level;
  d.velocity = build_scalar_hierarchy(level, 2);
  d.pressure = build_scalar_hierarchy(level, 1);

  const GridLevel& gv = d.velocity.finest();
  const GridLevel& gp = d.pressure.finest();
  const std::size_t nfull = gv.n_full();

  // divergence blocks: B = -(q, div phi); columns component-major over the
  // full velocity grid, then restricted to interior columns.
  const QuadRule q = gauss_rule(3);
  std::vector<Triplet> bt;
  double nvx[3] = {}, dnvx[3] = {}, nvy[3] = {}, dnvy[3] = {};
  double npx[2] = {}, dnpx[2] = {}, npy[2] = {}, dnpy[2] = {};
  const double h = gv.elem_size;
  for (std::size_t ey = 0; ey < gv.elems_per_side; ++ey)
    for (std::size_t ex = 0; ex < gv.elems_per_side; ++ex) {
      int vglob[9], pglob[4];
      for (std::size_t j = 0; j < 3; ++j)
        for (std::size_t i = 0; i < 3; ++i)
          vglob[j * 3 + i] =
              static_cast<int>((2 * ey + j) * gv.nodes_per_side + 2 * ex + i);
      for (std::size_t j = 0; j < 2; ++j)
        for (std::size_t i = 0; i < 2; ++i)
          pglob[j * 2 + i] = static_cast<int>((ey + j) * gp.nodes_per_side + ex + i);

      double bx[4][9] = {}, by[4][9] = {};
      for (std::size_t qy = 0; qy < 3; ++qy)
        for (std::size_t qx = 0; qx < 3; ++qx) {
          shape_1d(2, q.pts[qx], nvx, dnvx);
          shape_1d(2, q.pts[qy], nvy, dnvy);
          shape_1d(1, q.pts[qx], npx, dnpx);
          shape_1d(1, q.pts[qy], npy, dnpy);
          const double w = q.wts[qx] * q.wts[qy] * (h / 2.0);  // one jacobian
          for (std::size_t pj = 0; pj < 2; ++pj)               // cancels the 2/h
            for (std::size_t pi = 0; pi < 2; ++pi) {
              const double qm = npx[pi] * npy[pj];
              for (std::size_t vj = 0; vj < 3; ++vj)
                for (std::size_t vi = 0; vi < 3; ++vi) {
                  bx[pj * 2 + pi][vj * 3 + vi] -= w * qm * dnvx[vi] * nvy[vj];
                  by[pj * 2 + pi][vj * 3 + vi] -= w * qm * nvx[vi] * dnvy[vj];
                }
            }
        }
      for (int m = 0; m < 4; ++m)
        for (int k = 0; k < 9; ++k) {
          bt.push_back({pglob[m], vglob[k], bx[m][k]});
          bt.push_back({pglob[m], vglob[k] + static_cast<int>(nfull), by[m][k]});
        }
    }
  d.b_full = SparseMatrix::from_triplets(gp.n_full(), 2 * nfull, std::move(bt));

  std::vector<int> prows(gp.n_full());
  for (std::size_t i = 0; i < prows.size(); ++i) prows[i] = static_cast<int>(i);
  std::vector<int> vcols;
  vcols.reserve(2 * gv.n_interior());
  for (int id : gv.interior) vcols.push_back(id);
  for (int id : gv.interior) vcols.push_back(id + static_cast<int>(nfull));
  d.b_int = d.b_full.submatrix(prows, vcols);
  d.bt_int = d.b_int.transposed();
  return d;
}

// ---- manufactured problems ------------------------------------------------------

ManufacturedProblem make_heat_problem() {
  ManufacturedProblem p;
  p.name = "heat";
  p.t_final = 2.0;
  const double tf = p.t_final;
  const double pi = std::acos(-1.0);
  auto cc = [pi](double x, double y) {
    return std::cos(pi * x / 2.0) * std::cos(pi * y / 2.0);
  };
  p.exact_v = [tf, cc](double x, double y, double t) {
    return std::exp(tf - t) * cc(x, y) + 1.0;
  };
  p.exact_dvdt = [tf, cc](double x, double y, double t) {
    return -std::exp(tf - t) * cc(x, y);
  };
  p.forcing = [tf, cc, pi](double x, double y, double t) {
    return std::exp(tf - t) * (pi * pi / 2.0 - 1.0) * cc(x, y);
  };
  return p;
}

ManufacturedProblem make_colliding_flow_problem() {
  ManufacturedProblem p;
  p.name = "stokes";
  p.t_final = 2.0;
  p.is_stokes = true;
  const double tf = p.t_final;
  auto vel = [](double x, double y) {
    return std::array<double, 2>{20.0 * x * y * y * y, 5.0 * x * x * x * x - 5.0 * y * y * y * y};
  };
  p.exact_vel = [tf, vel](double x, double y, double t) {
    auto v = vel(x, y);
    const double f = std::exp(tf - t);
    return std::array<double, 2>{f * v[0], f * v[1]};
  };
  p.exact_dvel_dt = [tf, vel](double x, double y, double t) {
    auto v = vel(x, y);
    const double f = -std::exp(tf - t);
    return std::array<double, 2>{f * v[0], f * v[1]};
  };
  p.exact_pres = [tf](double x, double y, double t) {
    return std::exp(10.0 * tf - t) * (60.0 * x * x * y - 20.0 * y * y * y);
  };
  // grad p and the vector Laplacian of v share the spatial profile [120xy, 60x^2-60y^2]
  // but the pressure carries the much larger exp(10 tf - t) amplitude, so they no longer
  // cancel: f = v_t - lap v + grad p = -v + (e^{10 tf - t} - e^{tf - t}) [120xy, 60x^2-60y^2]
  p.forcing_vel = [tf, vel](double x, double y, double t) {
    auto v = vel(x, y);
    const double f = -std::exp(tf - t);
    const double g = std::exp(10.0 * tf - t) - std::exp(tf - t);
    return std::array<double, 2>{f * v[0] + g * 120.0 * x * y,
                                 f * v[1] + g * (60.0 * x * x - 60.0 * y * y)};
  };
  return p;
}

ManufacturedProblem make_lid_cavity_problem(double t_final) {
  if (!(t_final > 0.0)) throw DomainError("lid cavity: t_final must be positive");
  ManufacturedProblem p;
  p.name = "lid-cavity";
  p.t_final = t_final;
  p.is_stokes = true;
  p.has_exact = false;
  // the lid is the open top edge; corners stay watertight
  p.exact_vel = [](double x, double y, double t) {
    if (y == 1.0 && std::fabs(x) < 1.0)
      return std::array<double, 2>{std::min(t, 1.0), 0.0};
    return std::array<double, 2>{0.0, 0.0};
  };
  p.exact_dvel_dt = [](double x, double y, double t) {
    if (y == 1.0 && std::fabs(x) < 1.0 && t < 1.0)
      return std::array<double, 2>{1.0, 0.0};
    return std::array<double, 2>{0.0, 0.0};
  };
  p.exact_pres = nullptr;
  p.forcing_vel = [](double, double, double) { return std::array<double, 2>{0.0, 0.0}; };
  return p;
}

// ---- evaluation helpers ----------------------------------------------------------

std::vector<double> interpolate_full(const GridLevel& g, const ScalarField& f, double t) {
  std::vector<double> v(g.n_full());
  for (std::size_t iy = 0; iy < g.nodes_per_side; ++iy)
    for (std::size_t ix = 0; ix < g.nodes_per_side; ++ix)
      v[iy * g.nodes_per_side + ix] = f(g.coord[ix], g.coord[iy], t);
  return v;
}

std::vector<double> interpolate_interior(const GridLevel& g, const ScalarField& f, double t) {
  std::vector<double> v(g.n_interior());
  for (std::size_t k = 0; k < g.interior.size(); ++k) {
    const int id = g.interior[k];
    v[k] = f(g.node_x(id), g.node_y(id), t);
  }
  return v;
}

std::vector<double> restrict_interior(const GridLevel& g, const std::vector<double>& full) {
  if (full.size() != g.n_full()) throw DimensionError("restrict_interior: size mismatch");
  std::vector<double> v(g.n_interior());
  for (std::size_t k = 0; k < g.interior.size(); ++k)
    v[k] = full[static_cast<std::size_t>(g.interior[k])];
  return v;
}

std::vector<double> boundary_only(const GridLevel& g, const ScalarField& f, double t) {
  std::vector<double> v(g.n_full(), 0.0);
  for (int id : g.boundary) v[static_cast<std::size_t>(id)] = f(g.node_x(id), g.node_y(id), t);
  return v;
}

std::vector<double> assemble_load(const GridLevel& g, const ScalarField& f, double t) {
  const QuadRule q = gauss_rule(g.degree + 1);
  const std::size_t nl = static_cast<std::size_t>(g.degree + 1);
  const double jac = g.elem_size * g.elem_size / 4.0;
  std::vector<double> full(g.n_full(), 0.0);
  double nx[3] = {}, dnx[3] = {}, ny[3] = {}, dny[3] = {};
  for (std::size_t ey = 0; ey < g.elems_per_side; ++ey)
    for (std::size_t ex = 0; ex < g.elems_per_side; ++ex) {
      const double xl = -1.0 + static_cast<double>(ex) * g.elem_size;
      const double yl = -1.0 + static_cast<double>(ey) * g.elem_size;
      for (std::size_t qy = 0; qy < q.pts.size(); ++qy)
        for (std::size_t qx = 0; qx < q.pts.size(); ++qx) {
          const double x = xl + (q.pts[qx] + 1.0) * g.elem_size / 2.0;
          const double y = yl + (q.pts[qy] + 1.0) * g.elem_size / 2.0;
          const double wf = q.wts[qx] * q.wts[qy] * jac * f(x, y, t);
          if (wf == 0.0) continue;
          shape_1d(g.degree, q.pts[qx], nx, dnx);
          shape_1d(g.degree, q.pts[qy], ny, dny);
          for (std::size_t j = 0; j < nl; ++j)
            for (std::size_t i = 0; i < nl; ++i) {
              const std::size_t id =
                  (static_cast<std::size_t>(g.degree) * ey + j) * g.nodes_per_side +
                  static_cast<std::size_t>(g.degree) * ex + i;
              full[id] += wf * nx[i] * ny[j];
            }
        }
    }
  return restrict_interior(g, full);
}

std::vector<double> apply_full_to_interior(const SparseMatrix& a_full, const GridLevel& g,
                                           const std::vector<double>& w) {
  std::vector<double> y;
  a_full.multiply(w, y);
  return restrict_interior(g, y);
}

// ---- error norms ------------------------------------------------------------------

double heat_error(const HeatDiscretization& d, const ManufacturedProblem& p,
                  const TrajectoryRecord& traj) {
  if (!p.has_exact) throw DomainError("heat_error: problem has no exact solution");
  const GridLevel& g = d.grid();
  double worst = 0.0;
  for (std::size_t n = 0; n < traj.times.size(); ++n) {
    const auto sol = interpolate_interior(g, p.exact_v, traj.times[n]);
    const auto& v = traj.values[n];
    double big = -1.0;
    std::size_t at = 0;
    for (std::size_t j = 0; j < sol.size(); ++j) {
      const double e = std::fabs(v[j] - sol[j]);
      if (e > big) {
        big = e;
        at = j;
      }
    }
    const double denom = std::fabs(sol[at]);
    worst = std::max(worst, denom > 0.0 ? big / denom : big);
  }
  return worst;
}

StokesErrorPair stokes_error(const StokesDiscretization& d, const ManufacturedProblem& p,
                             const TrajectoryRecord& traj) {
  if (!p.has_exact) throw DomainError("stokes_error: problem has no exact solution");
  const GridLevel& gv = d.velocity.finest();
  const GridLevel& gp = d.pressure.finest();
  const std::size_t ns = gv.n_interior();
  const SparseMatrix& ks = gv.stiffness_int;
  const SparseMatrix& mp = gp.mass_full;

  std::vector<double> ones(gp.n_full(), 1.0), mp_ones;
  mp.multiply(ones, mp_ones);
  const double vol = dot(ones, mp_ones);

  StokesErrorPair err;
  std::vector<double> tmp;
  for (std::size_t n = 0; n < traj.times.size(); ++n) {
    const double t = traj.times[n];
    // velocity: gradient seminorm through the component stiffness
    std::vector<double> ex(ns), ey(ns);
    for (std::size_t k = 0; k < ns; ++k) {
      const int id = gv.interior[k];
      const auto v = p.exact_vel(gv.node_x(id), gv.node_y(id), t);
      ex[k] = traj.values[n][k] - v[0];
      ey[k] = traj.values[n][ns + k] - v[1];
    }
    ks.multiply(ex, tmp);
    double acc = dot(ex, tmp);
    ks.multiply(ey, tmp);
    acc += dot(ey, tmp);
    err.v_error = std::max(err.v_error, std::sqrt(std::max(acc, 0.0)));

    // pressure: mass-weighted norm after removing the weighted mean from both
    auto psol = interpolate_full(gp, p.exact_pres, t);
    std::vector<double> e(gp.n_full());
    const auto& ph = traj.pressures[n];
    const double mean_h = dot(mp_ones, ph) / vol;
    const double mean_s = dot(mp_ones, psol) / vol;
    for (std::size_t k = 0; k < e.size(); ++k)
      e[k] = (ph[k] - mean_h) - (psol[k] - mean_s);
    mp.multiply(e, tmp);
    err.p_error = std::max(err.p_error, std::sqrt(std::max(dot(e, tmp), 0.0)));
  }
  return err;
}

}  // namespace rkpint
