#include "rkpint/allatonce.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <mutex>
#include <string>
#include <thread>

#include "rkpint/errors.hpp"

namespace rkpint {

namespace {

ScalarField component(const VectorField& f, std::size_t c) {
  return [f, c](double x, double y, double t) { return f(x, y, t)[c]; };
}

// hard cap on the all-at-once dimension; the outer Krylov basis alone costs
// (restart + 1) copies of a vector this long
constexpr std::size_t kMaxAaoDim = 5'000'000;

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// parallel map over [0, count) with contiguous chunks; the first exception
// wins and is rethrown on the calling thread
void run_parallel(std::size_t count, int threads, const std::function<void(std::size_t)>& body) {
  const std::size_t width =
      threads <= 1 ? 1 : std::min<std::size_t>(static_cast<std::size_t>(threads), count);
  if (width <= 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::mutex gate;
  std::exception_ptr first;
  std::vector<std::thread> pool;
  pool.reserve(width);
  for (std::size_t w = 0; w < width; ++w) {
    const std::size_t begin = count * w / width;
    const std::size_t end = count * (w + 1) / width;
    pool.emplace_back([&, begin, end] {
      try {
        for (std::size_t i = begin; i < end; ++i) body(i);
      } catch (...) {
        std::lock_guard<std::mutex> lk(gate);
        if (!first) first = std::current_exception();
      }
    });
  }
  for (std::thread& t : pool) t.join();
  if (first) std::rethrow_exception(first);
}

}  // namespace

// ---- right-hand side pieces ------------------------------------------------------

std::vector<double> heat_stage_rhs(const HeatDiscretization& d, const ButcherTableau& tab,
                                   const ManufacturedProblem& p, double t_n, double tau) {
  if (!(tau > 0.0)) throw DomainError("heat_stage_rhs: tau must be positive");
  const GridLevel& g = d.grid();
  const std::size_t s = tab.stages, n = g.n_interior();

  // boundary lifts: once for the step start data, once per stage derivative
  const std::vector<double> gb = boundary_only(g, p.exact_v, t_n);
  const std::vector<double> k_lift_start = apply_full_to_interior(g.stiffness_full, g, gb);
  std::vector<std::vector<double>> m_lift(s), k_lift(s);
  for (std::size_t j = 0; j < s; ++j) {
    const std::vector<double> gd = boundary_only(g, p.exact_dvdt, t_n + tab.c[j] * tau);
    m_lift[j] = apply_full_to_interior(g.mass_full, g, gd);
    k_lift[j] = apply_full_to_interior(g.stiffness_full, g, gd);
  }

  std::vector<double> rhs(s * n);
  for (std::size_t i = 0; i < s; ++i) {
    std::vector<double> row = assemble_load(g, p.forcing, t_n + tab.c[i] * tau);
    for (std::size_t r = 0; r < n; ++r) {
      double v = row[r] - k_lift_start[r] - m_lift[i][r];
      for (std::size_t j = 0; j < s; ++j) v -= tau * tab.a(i, j) * k_lift[j][r];
      rhs[i * n + r] = v;
    }
  }
  return rhs;
}

std::vector<double> heat_update_rhs(const HeatDiscretization& d, const ButcherTableau& tab,
                                    const ManufacturedProblem& p, double t_prev, double tau) {
  if (!(tau > 0.0)) throw DomainError("heat_update_rhs: tau must be positive");
  const GridLevel& g = d.grid();
  const std::size_t n = g.n_interior();

  std::vector<double> diff = boundary_only(g, p.exact_v, t_prev);
  {
    const std::vector<double> next = boundary_only(g, p.exact_v, t_prev + tau);
    for (std::size_t r = 0; r < diff.size(); ++r) diff[r] -= next[r];
  }
  std::vector<double> rhs = apply_full_to_interior(g.mass_full, g, diff);
  for (std::size_t i = 0; i < tab.stages; ++i) {
    const std::vector<double> gd = boundary_only(g, p.exact_dvdt, t_prev + tab.c[i] * tau);
    const std::vector<double> lift = apply_full_to_interior(g.mass_full, g, gd);
    for (std::size_t r = 0; r < n; ++r) rhs[r] += tau * tab.b[i] * lift[r];
  }
  return rhs;
}

std::vector<double> stokes_stage_rhs(const StokesDiscretization& d, const ButcherTableau& tab,
                                     const ManufacturedProblem& p, double t_n, double tau) {
  if (!(tau > 0.0)) throw DomainError("stokes_stage_rhs: tau must be positive");
  const GridLevel& g = d.velocity.finest();
  const std::size_t s = tab.stages, ns = g.n_interior(), nv = 2 * ns, np = d.n_pres();
  const std::size_t nf = g.n_full();

  // step start boundary data, per component, plus its divergence image
  std::vector<double> gb_stack(2 * nf);
  std::vector<std::vector<double>> k_lift_start(2);
  for (std::size_t c = 0; c < 2; ++c) {
    const std::vector<double> gb = boundary_only(g, component(p.exact_vel, c), t_n);
    k_lift_start[c] = apply_full_to_interior(g.stiffness_full, g, gb);
    std::copy(gb.begin(), gb.end(), gb_stack.begin() + c * nf);
  }
  std::vector<double> div_start;
  d.b_full.multiply(gb_stack, div_start);

  // stage boundary derivatives: mass and stiffness lifts per component plus
  // the divergence image of the stacked pair
  std::vector<std::array<std::vector<double>, 2>> m_lift(s), k_lift(s);
  std::vector<std::vector<double>> div_dot(s);
  for (std::size_t j = 0; j < s; ++j) {
    std::vector<double> stack(2 * nf);
    for (std::size_t c = 0; c < 2; ++c) {
      const std::vector<double> gd =
          boundary_only(g, component(p.exact_dvel_dt, c), t_n + tab.c[j] * tau);
      m_lift[j][c] = apply_full_to_interior(g.mass_full, g, gd);
      k_lift[j][c] = apply_full_to_interior(g.stiffness_full, g, gd);
      std::copy(gd.begin(), gd.end(), stack.begin() + c * nf);
    }
    d.b_full.multiply(stack, div_dot[j]);
  }

  std::vector<double> rhs(s * (nv + np));
  for (std::size_t i = 0; i < s; ++i) {
    for (std::size_t c = 0; c < 2; ++c) {
      std::vector<double> row = assemble_load(g, component(p.forcing_vel, c), t_n + tab.c[i] * tau);
      for (std::size_t r = 0; r < ns; ++r) {
        double v = row[r] - k_lift_start[c][r] - m_lift[i][c][r];
        for (std::size_t j = 0; j < s; ++j) v -= tau * tab.a(i, j) * k_lift[j][c][r];
        rhs[i * nv + c * ns + r] = v;
      }
    }
    for (std::size_t r = 0; r < np; ++r) {
      double v = -div_start[r];
      for (std::size_t j = 0; j < s; ++j) v -= tau * tab.a(i, j) * div_dot[j][r];
      rhs[s * nv + i * np + r] = v;
    }
  }
  return rhs;
}

std::vector<double> stokes_update_rhs(const StokesDiscretization& d, const ButcherTableau& tab,
                                      const ManufacturedProblem& p, double t_prev, double tau) {
  if (!(tau > 0.0)) throw DomainError("stokes_update_rhs: tau must be positive");
  const GridLevel& g = d.velocity.finest();
  const std::size_t ns = g.n_interior(), nv = 2 * ns, np = d.n_pres();

  std::vector<double> rhs(nv + np, 0.0);
  for (std::size_t c = 0; c < 2; ++c) {
    std::vector<double> diff = boundary_only(g, component(p.exact_vel, c), t_prev);
    const std::vector<double> next = boundary_only(g, component(p.exact_vel, c), t_prev + tau);
    for (std::size_t r = 0; r < diff.size(); ++r) diff[r] -= next[r];
    std::vector<double> lift = apply_full_to_interior(g.mass_full, g, diff);
    for (std::size_t i = 0; i < tab.stages; ++i) {
      const std::vector<double> gd =
          boundary_only(g, component(p.exact_dvel_dt, c), t_prev + tab.c[i] * tau);
      const std::vector<double> ml = apply_full_to_interior(g.mass_full, g, gd);
      for (std::size_t r = 0; r < ns; ++r) lift[r] += tau * tab.b[i] * ml[r];
    }
    std::copy(lift.begin(), lift.end(), rhs.begin() + c * ns);
  }
  return rhs;  // pressure rows stay zero
}

// ---- AllAtOnceSystem -------------------------------------------------------------

void AllAtOnceSystem::check_common(double t_final) const {
  if (n_t_ < 1) throw DomainError("all-at-once system needs at least one time step");
  if (!(t_final > t_start_)) throw DomainError("all-at-once system: empty time interval");
}

AllAtOnceSystem::AllAtOnceSystem(const HeatDiscretization& d, const ButcherTableau& tab,
                                 double t_start, double t_final, std::size_t n_t)
    : heat_(&d), tab_(tab), n_t_(n_t), t_start_(t_start) {
  check_common(t_final);
  tau_ = (t_final - t_start) / static_cast<double>(n_t);
  node_ = d.n_dof();
  stage_ = tab.stages * node_;
  if (size() > kMaxAaoDim) throw CapacityError("all-at-once system exceeds the memory budget");
  heat_stage_ = std::make_unique<HeatStageSystem>(d, tab, tau_);
}

AllAtOnceSystem::AllAtOnceSystem(const StokesDiscretization& d, const ButcherTableau& tab,
                                 double t_start, double t_final, std::size_t n_t)
    : stokes_(&d), tab_(tab), n_t_(n_t), t_start_(t_start) {
  check_common(t_final);
  tau_ = (t_final - t_start) / static_cast<double>(n_t);
  nv_ = d.n_vel();
  np_ = d.n_pres();
  node_ = nv_ + np_;
  stage_ = tab.stages * node_;
  if (size() > kMaxAaoDim) throw CapacityError("all-at-once system exceeds the memory budget");
  // the system keeps the true singular stage operator; the perturbation is a
  // preconditioner-side device
  stokes_stage_ = std::make_unique<StokesStageSystem>(d, tab, tau_, 0.0);
  mass_v2_ = SparseMatrix::block_diag(d.velocity.finest().mass_int, 2);
  stiff_v2_ = SparseMatrix::block_diag(d.velocity.finest().stiffness_int, 2);
}

void AllAtOnceSystem::apply(const std::vector<double>& x, std::vector<double>& y) const {
  if (x.size() != size()) throw DimensionError("AllAtOnceSystem::apply: vector size mismatch");
  y.assign(size(), 0.0);
  const std::size_t s = tab_.stages;

  if (!is_stokes()) {
    const SparseMatrix& m = heat_->mass();
    const SparseMatrix& k = heat_->stiffness();
    std::vector<double> combo(node_), out(node_);

    // update rows: one mass multiply per node on the assembled combination
    for (std::size_t n = 0; n <= n_t_; ++n) {
      const double* xn = x.data() + node_offset(n);
      if (n == 0) {
        combo.assign(xn, xn + node_);
      } else {
        const double* xp = x.data() + node_offset(n - 1);
        const double* ks = x.data() + stage_offset(n - 1);
        for (std::size_t r = 0; r < node_; ++r) {
          double v = xn[r] - xp[r];
          for (std::size_t i = 0; i < s; ++i) v -= tau_ * tab_.b[i] * ks[i * node_ + r];
          combo[r] = v;
        }
      }
      m.multiply(combo, out);
      std::copy(out.begin(), out.end(), y.begin() + node_offset(n));
    }

    // stage rows: the stage operator plus the e (x) K coupling to the step start
    std::vector<double> sblk(stage_), sout(stage_), cv(node_);
    for (std::size_t mstep = 0; mstep < n_t_; ++mstep) {
      const double* ks = x.data() + stage_offset(mstep);
      sblk.assign(ks, ks + stage_);
      heat_stage_->apply(sblk, sout);
      combo.assign(x.data() + node_offset(mstep), x.data() + node_offset(mstep) + node_);
      k.multiply(combo, cv);
      for (std::size_t i = 0; i < s; ++i)
        for (std::size_t r = 0; r < node_; ++r) sout[i * node_ + r] += cv[r];
      std::copy(sout.begin(), sout.end(), y.begin() + stage_offset(mstep));
    }
    return;
  }

  const SparseMatrix& mp = stokes_->mass_p();
  std::vector<double> cv(nv_), cp(np_), ov(nv_), op(np_);

  for (std::size_t n = 0; n <= n_t_; ++n) {
    const double* xn = x.data() + node_offset(n);
    if (n == 0) {
      cv.assign(xn, xn + nv_);
      cp.assign(xn + nv_, xn + node_);
    } else {
      const double* xp = x.data() + node_offset(n - 1);
      const double* ks = x.data() + stage_offset(n - 1);
      for (std::size_t r = 0; r < nv_; ++r) {
        double v = xn[r] - xp[r];
        for (std::size_t i = 0; i < s; ++i) v -= tau_ * tab_.b[i] * ks[i * nv_ + r];
        cv[r] = v;
      }
      const double* kp = ks + s * nv_;
      for (std::size_t r = 0; r < np_; ++r) {
        double v = xn[nv_ + r] - xp[nv_ + r];
        for (std::size_t i = 0; i < s; ++i) v -= tau_ * tab_.b[i] * kp[i * np_ + r];
        cp[r] = v;
      }
    }
    mass_v2_.multiply(cv, ov);
    mp.multiply(cp, op);
    std::copy(ov.begin(), ov.end(), y.begin() + node_offset(n));
    std::copy(op.begin(), op.end(), y.begin() + node_offset(n) + nv_);
  }

  std::vector<double> sblk(stage_), sout(stage_);
  for (std::size_t mstep = 0; mstep < n_t_; ++mstep) {
    const double* ks = x.data() + stage_offset(mstep);
    sblk.assign(ks, ks + stage_);
    stokes_stage_->apply(sblk, sout);
    const double* xn = x.data() + node_offset(mstep);
    cv.assign(xn, xn + nv_);
    cp.assign(xn + nv_, xn + node_);
    // coupling of the step start value into the stage rows: velocity rows get
    // K_v v + B^T p, pressure rows get B v
    stiff_v2_.multiply(cv, ov);
    stokes_->bt_int.multiply_add(cp, ov);
    stokes_->b_int.multiply(cv, op);
    for (std::size_t i = 0; i < s; ++i)
      for (std::size_t r = 0; r < nv_; ++r) sout[i * nv_ + r] += ov[r];
    for (std::size_t i = 0; i < s; ++i)
      for (std::size_t r = 0; r < np_; ++r) sout[s * nv_ + i * np_ + r] += op[r];
    std::copy(sout.begin(), sout.end(), y.begin() + stage_offset(mstep));
  }
}

LinearOperator AllAtOnceSystem::as_operator() const {
  return [this](const std::vector<double>& x, std::vector<double>& y) { apply(x, y); };
}

std::vector<double> AllAtOnceSystem::assemble_rhs(const ManufacturedProblem& p,
                                                  const std::vector<double>& v0) const {
  if (is_stokes())
    throw DomainError("assemble_rhs: Stokes system needs velocity and pressure initial data");
  if (p.is_stokes) throw DomainError("assemble_rhs: problem/system kind mismatch");
  if (v0.size() != node_) throw DimensionError("assemble_rhs: initial state size mismatch");

  std::vector<double> rhs(size(), 0.0);
  std::vector<double> out(node_);
  heat_->mass().multiply(v0, out);
  std::copy(out.begin(), out.end(), rhs.begin());
  for (std::size_t n = 1; n <= n_t_; ++n) {
    const std::vector<double> ur =
        heat_update_rhs(*heat_, tab_, p, t_start_ + static_cast<double>(n - 1) * tau_, tau_);
    std::copy(ur.begin(), ur.end(), rhs.begin() + node_offset(n));
  }
  for (std::size_t mstep = 0; mstep < n_t_; ++mstep) {
    const std::vector<double> sr =
        heat_stage_rhs(*heat_, tab_, p, t_start_ + static_cast<double>(mstep) * tau_, tau_);
    std::copy(sr.begin(), sr.end(), rhs.begin() + stage_offset(mstep));
  }
  return rhs;
}

std::vector<double> AllAtOnceSystem::assemble_rhs(const ManufacturedProblem& p,
                                                  const std::vector<double>& v0,
                                                  const std::vector<double>& p0) const {
  if (!is_stokes()) throw DomainError("assemble_rhs: heat system takes only the scalar state");
  if (!p.is_stokes) throw DomainError("assemble_rhs: problem/system kind mismatch");
  if (v0.size() != nv_ || p0.size() != np_)
    throw DimensionError("assemble_rhs: initial state size mismatch");

  std::vector<double> rhs(size(), 0.0);
  std::vector<double> ov(nv_), op(np_);
  mass_v2_.multiply(v0, ov);
  stokes_->mass_p().multiply(p0, op);
  std::copy(ov.begin(), ov.end(), rhs.begin());
  std::copy(op.begin(), op.end(), rhs.begin() + nv_);
  for (std::size_t n = 1; n <= n_t_; ++n) {
    const std::vector<double> ur =
        stokes_update_rhs(*stokes_, tab_, p, t_start_ + static_cast<double>(n - 1) * tau_, tau_);
    std::copy(ur.begin(), ur.end(), rhs.begin() + node_offset(n));
  }
  for (std::size_t mstep = 0; mstep < n_t_; ++mstep) {
    const std::vector<double> sr =
        stokes_stage_rhs(*stokes_, tab_, p, t_start_ + static_cast<double>(mstep) * tau_, tau_);
    std::copy(sr.begin(), sr.end(), rhs.begin() + stage_offset(mstep));
  }
  return rhs;
}

// ---- AllAtOncePrecond ------------------------------------------------------------

namespace {

// dense stage matrices for the exact inner policy (small oracle runs only)

DenseMatrix dense_heat_stage(const HeatDiscretization& d, const ButcherTableau& tab, double tau) {
  const DenseMatrix m = d.mass().to_dense();
  const DenseMatrix k = d.stiffness().to_dense();
  const std::size_t s = tab.stages, n = d.n_dof();
  DenseMatrix out(s * n, s * n);
  for (std::size_t i = 0; i < s; ++i)
    for (std::size_t j = 0; j < s; ++j) {
      const double w = tau * tab.a(i, j);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < n; ++c)
          out(i * n + r, j * n + c) = (i == j ? m(r, c) : 0.0) + w * k(r, c);
    }
  return out;
}

DenseMatrix dense_stokes_stage(const StokesDiscretization& d, const ButcherTableau& tab,
                               double tau, double gamma) {
  const DenseMatrix mv = SparseMatrix::block_diag(d.velocity.finest().mass_int, 2).to_dense();
  const DenseMatrix kv = SparseMatrix::block_diag(d.velocity.finest().stiffness_int, 2).to_dense();
  const DenseMatrix bt = d.bt_int.to_dense();
  const DenseMatrix b = d.b_int.to_dense();
  const DenseMatrix mp = d.mass_p().to_dense();
  const DenseMatrix a2 = matmul(tab.a, tab.a);
  const std::size_t s = tab.stages, nv = d.n_vel(), np = d.n_pres();
  const std::size_t voff = 0, poff = s * nv;
  DenseMatrix out(s * (nv + np), s * (nv + np));
  for (std::size_t i = 0; i < s; ++i)
    for (std::size_t j = 0; j < s; ++j) {
      const double w = tau * tab.a(i, j);
      for (std::size_t r = 0; r < nv; ++r)
        for (std::size_t c = 0; c < nv; ++c)
          out(voff + i * nv + r, voff + j * nv + c) = (i == j ? mv(r, c) : 0.0) + w * kv(r, c);
      for (std::size_t r = 0; r < nv; ++r)
        for (std::size_t c = 0; c < np; ++c) out(voff + i * nv + r, poff + j * np + c) = w * bt(r, c);
      for (std::size_t r = 0; r < np; ++r)
        for (std::size_t c = 0; c < nv; ++c) out(poff + i * np + r, voff + j * nv + c) = w * b(r, c);
      const double wp = -tau * tau * gamma * a2(i, j);
      for (std::size_t r = 0; r < np; ++r)
        for (std::size_t c = 0; c < np; ++c) out(poff + i * np + r, poff + j * np + c) = wp * mp(r, c);
    }
  return out;
}

}  // namespace

AllAtOncePrecond::AllAtOncePrecond(const AllAtOnceSystem& sys, AaoPrecondOptions opts)
    : sys_(&sys), opts_(opts) {
  if (opts_.stage_iterations < 1)
    throw DomainError("all-at-once preconditioner: stage iteration count must be positive");
  if (opts_.gamma < 0.0) throw DomainError("all-at-once preconditioner: gamma must be >= 0");
  if (opts_.threads < 1) opts_.threads = 1;
  const ButcherTableau& tab = sys.tableau();
  const double tau = sys.tau();
  const BlockSolvePolicy mass_policy =
      opts_.policy == AaoInnerPolicy::exact ? BlockSolvePolicy::exact : BlockSolvePolicy::multigrid;

  if (!sys.is_stokes()) {
    const HeatDiscretization& d = *sys.heat();
    mass_a_ = std::make_unique<MassSolver>(d.mass(), mass_policy, opts_.chebyshev_steps);
    if (opts_.policy == AaoInnerPolicy::production) {
      heat_tilde_ = std::make_unique<HeatStageSystem>(d, tab, tau);
      heat_pc_ = std::make_unique<HeatRkPreconditioner>(d, tab, tau, BlockSolvePolicy::multigrid,
                                                        opts_.mg_cycles);
      stage_op_ = heat_tilde_->as_operator();
      stage_pc_ = heat_pc_->as_operator();
    } else {
      stage_lu_ = lu_factor(dense_heat_stage(d, tab, tau));
    }
    return;
  }

  const StokesDiscretization& d = *sys.stokes();
  mass_v2_ = SparseMatrix::block_diag(d.velocity.finest().mass_int, 2);
  stiff_v2_ = SparseMatrix::block_diag(d.velocity.finest().stiffness_int, 2);
  mass_a_ = std::make_unique<MassSolver>(d.velocity.finest().mass_int, mass_policy,
                                         opts_.chebyshev_steps);
  mass_b_ = std::make_unique<MassSolver>(d.mass_p(), mass_policy, opts_.chebyshev_steps);
  if (opts_.policy == AaoInnerPolicy::production) {
    stokes_tilde_ = std::make_unique<StokesStageSystem>(d, tab, tau, opts_.gamma);
    stokes_pc_ = std::make_unique<StokesRkPreconditioner>(d, tab, tau, opts_.gamma,
                                                          BlockSolvePolicy::multigrid,
                                                          opts_.mg_cycles);
    stage_op_ = stokes_tilde_->as_operator();
    stage_pc_ = stokes_pc_->as_operator();
  } else {
    stage_lu_ = lu_factor(dense_stokes_stage(d, tab, tau, opts_.gamma));
  }
}

void AllAtOncePrecond::stage_block_solve(std::size_t step, const double* rhs, double* out) const {
  const std::size_t m = sys_->stage_size();
  if (opts_.policy == AaoInnerPolicy::exact) {
    std::vector<double> x(rhs, rhs + m);
    lu_solve_inplace(stage_lu_, x);
    std::copy(x.begin(), x.end(), out);
    return;
  }
  const std::vector<double> b(rhs, rhs + m);
  std::vector<double> x(m, 0.0);  // zero guess every call, for reproducibility
  KrylovOptions ko;
  ko.rel_tol = 0.0;  // fixed-count mode: exactly stage_iterations Arnoldi steps
  ko.restart = static_cast<std::size_t>(opts_.stage_iterations);
  ko.max_iters = static_cast<std::size_t>(opts_.stage_iterations);
  try {
    gmres(stage_op_, stage_pc_, b, x, ko);
  } catch (const Error& e) {
    throw ConvergenceError("all-at-once preconditioner: stage solve at step " +
                           std::to_string(step) + ": " + e.what());
  }
  std::copy(x.begin(), x.end(), out);
}

void AllAtOncePrecond::stage_phase(const std::vector<double>& r, std::vector<double>& z) const {
  const std::size_t steps = sys_->n_t();
  // disjoint slices per step, so any processing order and any thread count
  // produce identical bits
  run_parallel(steps, opts_.threads, [&](std::size_t mstep) {
    stage_block_solve(mstep, r.data() + sys_->stage_offset(mstep),
                      z.data() + sys_->stage_offset(mstep));
  });
}

void AllAtOncePrecond::mass_solve(const std::vector<double>& w, std::vector<double>& z) const {
  if (!sys_->is_stokes()) {
    mass_a_->solve(w, z);
    return;
  }
  const std::size_t ns = sys_->stokes()->n_scalar(), np = sys_->stokes()->n_pres();
  z.resize(w.size());
  std::vector<double> part(ns), sol(ns);
  for (std::size_t c = 0; c < 2; ++c) {
    part.assign(w.begin() + c * ns, w.begin() + (c + 1) * ns);
    mass_a_->solve(part, sol);
    std::copy(sol.begin(), sol.end(), z.begin() + c * ns);
  }
  std::vector<double> pp(w.begin() + 2 * ns, w.end()), ps(np);
  mass_b_->solve(pp, ps);
  std::copy(ps.begin(), ps.end(), z.begin() + 2 * ns);
}

void AllAtOncePrecond::apply_xhat(const std::vector<double>& w, std::vector<double>& u,
                                  std::vector<double>& stage_rhs, std::vector<double>& stage_sol,
                                  std::size_t step) const {
  const std::size_t s = sys_->tableau().stages, node = sys_->node_size();
  const std::vector<double>& bw = sys_->tableau().b;
  const double tau = sys_->tau();
  u.assign(node, 0.0);

  if (!sys_->is_stokes()) {
    std::vector<double> cv(node);
    sys_->heat()->stiffness().multiply(w, cv);
    for (std::size_t i = 0; i < s; ++i)
      std::copy(cv.begin(), cv.end(), stage_rhs.begin() + i * node);
    stage_block_solve(step, stage_rhs.data(), stage_sol.data());
    for (std::size_t r = 0; r < node; ++r) {
      double v = 0.0;
      for (std::size_t i = 0; i < s; ++i) v += bw[i] * stage_sol[i * node + r];
      u[r] = tau * v;
    }
    return;
  }

  const std::size_t nv = 2 * sys_->stokes()->n_scalar(), np = sys_->stokes()->n_pres();
  std::vector<double> wv(w.begin(), w.begin() + nv), wp(w.begin() + nv, w.end());
  std::vector<double> cv(nv), cp(np);
  stiff_v2_.multiply(wv, cv);
  sys_->stokes()->bt_int.multiply_add(wp, cv);
  sys_->stokes()->b_int.multiply(wv, cp);
  for (std::size_t i = 0; i < s; ++i)
    std::copy(cv.begin(), cv.end(), stage_rhs.begin() + i * nv);
  for (std::size_t i = 0; i < s; ++i)
    std::copy(cp.begin(), cp.end(), stage_rhs.begin() + s * nv + i * np);
  stage_block_solve(step, stage_rhs.data(), stage_sol.data());
  for (std::size_t r = 0; r < nv; ++r) {
    double v = 0.0;
    for (std::size_t i = 0; i < s; ++i) v += bw[i] * stage_sol[i * nv + r];
    u[r] = tau * v;
  }
  for (std::size_t r = 0; r < np; ++r) {
    double v = 0.0;
    for (std::size_t i = 0; i < s; ++i) v += bw[i] * stage_sol[s * nv + i * np + r];
    u[nv + r] = tau * v;
  }
}

void AllAtOncePrecond::schur_phase(const std::vector<double>& r, std::vector<double>& z) const {
  const std::size_t node = sys_->node_size(), steps = sys_->n_t(), s = sys_->tableau().stages;
  const std::vector<double>& bw = sys_->tableau().b;
  const double tau = sys_->tau();

  std::vector<double> w(node), msol(node), u(node), wprev(node);
  std::vector<double> stage_rhs(sys_->stage_size()), stage_sol(sys_->stage_size());
  std::vector<double> combo, tmp;

  for (std::size_t n = 0; n <= steps; ++n) {
    const double* rn = r.data() + sys_->node_offset(n);
    w.assign(rn, rn + node);
    if (n > 0) {
      // w = r_n - (Psi1 k~)_n = r_n + tau sum_i b_i M k~_{i,n-1}
      const double* ks = z.data() + sys_->stage_offset(n - 1);
      if (!sys_->is_stokes()) {
        combo.assign(node, 0.0);
        for (std::size_t r2 = 0; r2 < node; ++r2) {
          double v = 0.0;
          for (std::size_t i = 0; i < s; ++i) v += bw[i] * ks[i * node + r2];
          combo[r2] = tau * v;
        }
        sys_->heat()->mass().multiply_add(combo, w);
      } else {
        const std::size_t nv = 2 * sys_->stokes()->n_scalar(), np = sys_->stokes()->n_pres();
        combo.assign(nv, 0.0);
        for (std::size_t r2 = 0; r2 < nv; ++r2) {
          double v = 0.0;
          for (std::size_t i = 0; i < s; ++i) v += bw[i] * ks[i * nv + r2];
          combo[r2] = tau * v;
        }
        mass_v2_.multiply(combo, tmp);
        for (std::size_t r2 = 0; r2 < nv; ++r2) w[r2] += tmp[r2];
        combo.assign(np, 0.0);
        for (std::size_t r2 = 0; r2 < np; ++r2) {
          double v = 0.0;
          for (std::size_t i = 0; i < s; ++i) v += bw[i] * ks[s * nv + i * np + r2];
          combo[r2] = tau * v;
        }
        sys_->stokes()->mass_p().multiply(combo, tmp);
        for (std::size_t r2 = 0; r2 < np; ++r2) w[nv + r2] += tmp[r2];
      }
    }
    try {
      mass_solve(w, msol);
    } catch (const Error& e) {
      throw ConvergenceError("all-at-once preconditioner: mass solve at node " +
                             std::to_string(n) + ": " + e.what());
    }
    double* vn = z.data() + sys_->node_offset(n);
    if (n == 0) {
      for (std::size_t r2 = 0; r2 < node; ++r2) vn[r2] = -msol[r2];
    } else {
      const double* vp = z.data() + sys_->node_offset(n - 1);
      wprev.assign(vp, vp + node);
      try {
        apply_xhat(wprev, u, stage_rhs, stage_sol, n - 1);
      } catch (const Error& e) {
        throw ConvergenceError("all-at-once preconditioner: Schur phase at step " +
                               std::to_string(n - 1) + ": " + e.what());
      }
      for (std::size_t r2 = 0; r2 < node; ++r2) vn[r2] = -msol[r2] + vp[r2] - u[r2];
    }
  }
}

void AllAtOncePrecond::apply(const std::vector<double>& r, std::vector<double>& z) const {
  if (r.size() != sys_->size())
    throw DimensionError("AllAtOncePrecond::apply: vector size mismatch");
  z.assign(r.size(), 0.0);
  const auto t0 = std::chrono::steady_clock::now();
  stage_phase(r, z);
  theta_s_ += seconds_since(t0);
  const auto t1 = std::chrono::steady_clock::now();
  schur_phase(r, z);
  schur_s_ += seconds_since(t1);
}

LinearOperator AllAtOncePrecond::as_operator() const {
  return [this](const std::vector<double>& r, std::vector<double>& z) { apply(r, z); };
}

// ---- solve and assembly ----------------------------------------------------------

AaoSolveResult solve_allatonce(const AllAtOnceSystem& sys, const AllAtOncePrecond& pc,
                               const std::vector<double>& rhs, const AaoSolveOptions& opts) {
  if (rhs.size() != sys.size()) throw DimensionError("solve_allatonce: rhs size mismatch");
  const auto t0 = std::chrono::steady_clock::now();
  pc.reset_timers();

  KrylovOptions ko;
  ko.rel_tol = opts.rel_tol;
  ko.restart = opts.restart;
  ko.max_iters = opts.max_iters;
  std::vector<double> x(sys.size(), 0.0);
  // fixed inner iteration counts make the preconditioner vary between outer
  // iterations, hence the flexible variant
  const KrylovResult kr = fgmres(sys.as_operator(), pc.as_operator(), rhs, x, ko);

  AaoSolveResult out;
  out.converged = kr.converged;
  out.iterations = kr.iterations;
  out.relative_residual = kr.relative_residual;
  out.t_total_s = seconds_since(t0);
  out.t_theta_s = pc.theta_seconds();
  out.t_schur_s = pc.schur_seconds();
  out.nodes.resize(sys.n_t() + 1);
  for (std::size_t n = 0; n <= sys.n_t(); ++n) {
    const double* p = x.data() + sys.node_offset(n);
    out.nodes[n].assign(p, p + sys.node_size());
  }
  out.stages.resize(sys.n_t());
  for (std::size_t m = 0; m < sys.n_t(); ++m) {
    const double* p = x.data() + sys.stage_offset(m);
    out.stages[m].assign(p, p + sys.stage_size());
  }
  return out;
}

StokesInitialState stokes_backward_euler_init(const StokesDiscretization& d,
                                              const ManufacturedProblem& p,
                                              BlockSolvePolicy policy, int mg_cycles,
                                              double gamma) {
  if (!p.is_stokes) throw DomainError("backward Euler initialization expects a Stokes problem");
  const GridLevel& g = d.velocity.finest();
  const std::size_t ns = g.n_interior(), nv = 2 * ns, np = d.n_pres();

  StokesInitialState out;
  out.eps_be = std::pow(g.elem_size, 2.5);
  const double eps = out.eps_be;

  // state at t = 0: interpolated velocity, pressure treated as zero (only the
  // combination p0 + eps k_p is determined; the choice fixes the split)
  std::vector<double> v0(nv);
  for (std::size_t c = 0; c < 2; ++c) {
    const std::vector<double> vc = interpolate_interior(g, component(p.exact_vel, c), 0.0);
    std::copy(vc.begin(), vc.end(), v0.begin() + c * ns);
  }

  const ButcherTableau be = make_tableau(RkFamily::RadauIIA, 1);
  std::vector<double> rhs = stokes_stage_rhs(d, be, p, 0.0, eps);
  {
    // subtract the step start coupling (B^T p0 vanishes with p0 = 0)
    const SparseMatrix stiff_v2 = SparseMatrix::block_diag(g.stiffness_int, 2);
    std::vector<double> cv(nv), cp(np);
    stiff_v2.multiply(v0, cv);
    d.b_int.multiply(v0, cp);
    for (std::size_t r = 0; r < nv; ++r) rhs[r] -= cv[r];
    for (std::size_t r = 0; r < np; ++r) rhs[nv + r] -= cp[r];
  }

  const StokesStageSystem sys(d, be, eps, gamma);
  const StokesRkPreconditioner pc(d, be, eps, gamma, policy, mg_cycles);
  KrylovOptions ko;
  ko.rel_tol = 1e-10;
  ko.restart = 50;
  ko.max_iters = 600;
  std::vector<double> k(sys.size(), 0.0);
  const KrylovResult kr = gmres(sys.as_operator(), pc.as_operator(), rhs, k, ko);
  if (!kr.converged)
    throw ConvergenceError("backward Euler initialization did not converge (residual " +
                           std::to_string(kr.relative_residual) + ")");
  out.iterations = kr.iterations;

  out.velocity = v0;
  for (std::size_t r = 0; r < nv; ++r) out.velocity[r] += eps * k[r];
  out.pressure.assign(np, 0.0);
  for (std::size_t r = 0; r < np; ++r) out.pressure[r] = eps * k[nv + r];
  return out;
}

AllAtOnceProblem assemble_allatonce(const ManufacturedProblem& p, const ButcherTableau& tab,
                                    int level, int degree, double t_f, std::size_t n_t,
                                    const AaoPrecondOptions& inner) {
  if (n_t < 1) throw DomainError("assemble_allatonce: n_t must be at least 1");
  if (!(t_f > 0.0)) throw DomainError("assemble_allatonce: final time must be positive");
  const BlockSolvePolicy pol = inner.policy == AaoInnerPolicy::exact ? BlockSolvePolicy::exact
                                                                     : BlockSolvePolicy::multigrid;
  AllAtOnceProblem out;
  if (!p.is_stokes) {
    out.heat = std::make_unique<HeatDiscretization>(assemble_heat(level, degree));
    out.t_start = 0.0;
    out.v0 = interpolate_interior(out.heat->grid(), p.exact_v, 0.0);
    out.system = std::make_unique<AllAtOnceSystem>(*out.heat, tab, 0.0, t_f, n_t);
    out.rhs = out.system->assemble_rhs(p, out.v0);
    return out;
  }
  out.stokes = std::make_unique<StokesDiscretization>(assemble_stokes(level));
  StokesInitialState init =
      stokes_backward_euler_init(*out.stokes, p, pol, inner.mg_cycles, inner.gamma);
  if (!(t_f > init.eps_be))
    throw DomainError("assemble_allatonce: final time inside the initialization interval");
  out.t_start = init.eps_be;
  out.v0 = std::move(init.velocity);
  out.p0 = std::move(init.pressure);
  out.init_iterations = init.iterations;
  out.system = std::make_unique<AllAtOnceSystem>(*out.stokes, tab, out.t_start, t_f, n_t);
  out.rhs = out.system->assemble_rhs(p, out.v0, out.p0);
  return out;
}

}  // namespace rkpint
