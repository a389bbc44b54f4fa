#include "rkpint/stage_precond.hpp"

#include <cmath>

#include "rkpint/errors.hpp"

namespace rkpint {

namespace {

void check_tau(double tau) {
  if (!(tau > 0.0)) throw DomainError("stage system: tau must be positive");
}

}  // namespace

// ---- block solvers --------------------------------------------------------------

ShiftedBlockSolver::ShiftedBlockSolver(const ScalarHierarchy& h, double weight,
                                       BlockSolvePolicy policy, int cycles)
    : n_(h.finest().n_interior()), policy_(policy), cycles_(cycles) {
  if (!(weight >= 0.0)) throw DomainError("ShiftedBlockSolver: negative shift weight");
  if (policy_ == BlockSolvePolicy::exact) {
    lu_ = lu_factor(h.finest().mass_int.add_scaled(h.finest().stiffness_int, weight).to_dense());
    return;
  }
  shifted_.reserve(h.levels.size());
  for (const auto& g : h.levels) shifted_.push_back(g.mass_int.add_scaled(g.stiffness_int, weight));
  std::vector<const SparseMatrix*> ops, ps;
  for (std::size_t k = 0; k < shifted_.size(); ++k) {
    ops.push_back(&shifted_[k]);
    ps.push_back(k ? &h.levels[k].prolong_int : nullptr);
  }
  mg_ = std::make_unique<GeometricMultigrid>(ops, ps);
}

void ShiftedBlockSolver::solve(const std::vector<double>& b, std::vector<double>& x) const {
  if (policy_ == BlockSolvePolicy::exact) {
    x = b;
    lu_solve_inplace(lu_, x);
  } else {
    mg_->solve(b, x, cycles_);
  }
}

PinnedPoissonSolver::PinnedPoissonSolver(const ScalarHierarchy& h, int pin,
                                         BlockSolvePolicy policy, int cycles)
    : pin_(pin), policy_(policy), cycles_(cycles) {
  pinned_.reserve(h.levels.size());
  for (const auto& g : h.levels)
    pinned_.push_back(g.stiffness_full.pinned(static_cast<std::size_t>(pin)));
  if (policy_ == BlockSolvePolicy::exact) {
    lu_ = lu_factor(pinned_.back().to_dense());
    return;
  }
  transfers_.resize(h.levels.size());
  for (std::size_t k = 1; k < h.levels.size(); ++k)
    transfers_[k] = pinned_prolongation(h.levels[k].prolong_full, pin);
  std::vector<const SparseMatrix*> ops, ps;
  for (std::size_t k = 0; k < pinned_.size(); ++k) {
    ops.push_back(&pinned_[k]);
    ps.push_back(k ? &transfers_[k] : nullptr);
  }
  mg_ = std::make_unique<GeometricMultigrid>(ops, ps);
}

void PinnedPoissonSolver::solve(const std::vector<double>& b, std::vector<double>& x) const {
  // the pinned matrix decouples the pin dof (unit diagonal), so x[pin] = b[pin]
  // under either policy and the map is a true inverse of the pinned operator
  if (policy_ == BlockSolvePolicy::exact) {
    x = b;
    lu_solve_inplace(lu_, x);
  } else {
    mg_->solve(b, x, cycles_);
  }
}

MassSolver::MassSolver(const SparseMatrix& m, BlockSolvePolicy policy, int chebyshev_steps)
    : policy_(policy) {
  if (policy_ == BlockSolvePolicy::exact)
    lu_ = lu_factor(m.to_dense());
  else
    cheb_ = std::make_unique<ChebyshevMassSolver>(m, chebyshev_steps);
}

void MassSolver::solve(const std::vector<double>& b, std::vector<double>& x) const {
  if (policy_ == BlockSolvePolicy::exact) {
    x = b;
    lu_solve_inplace(lu_, x);
  } else {
    cheb_->solve(b, x);
  }
}

// ---- heat ----------------------------------------------------------------------

HeatStageSystem::HeatStageSystem(const HeatDiscretization& disc, const ButcherTableau& tab,
                                 double tau)
    : disc_(&disc),
      tab_(tab),
      tau_(tau),
      n_(disc.n_dof()),
      op_(tab.stages, tab.stages, n_, n_) {
  check_tau(tau);
  op_.add_term(DenseMatrix::identity(tab.stages), disc_->mass(), 1.0);
  op_.add_term(tab.a, disc_->stiffness(), tau_);
}

void HeatStageSystem::apply(const std::vector<double>& x, std::vector<double>& y) const {
  op_.apply(x, y);
}

LinearOperator HeatStageSystem::as_operator() const {
  return [this](const std::vector<double>& x, std::vector<double>& y) { apply(x, y); };
}

HeatRkPreconditioner::HeatRkPreconditioner(const HeatDiscretization& disc,
                                           const ButcherTableau& tab, double tau,
                                           BlockSolvePolicy policy, int cycles)
    : n_(disc.n_dof()), svd_(rk_factorization(tab)) {
  check_tau(tau);
  blocks_.reserve(tab.stages);
  for (std::size_t i = 0; i < tab.stages; ++i)
    blocks_.emplace_back(disc.hierarchy, tau * svd_.sigma[i], policy, cycles);
}

void HeatRkPreconditioner::apply(const std::vector<double>& r, std::vector<double>& z) const {
  const std::size_t s = blocks_.size();
  if (r.size() != s * n_) throw DimensionError("HeatRkPreconditioner: size mismatch");
  std::vector<double> t;
  coupling_transform(transpose(svd_.u), n_, r, t);
  std::vector<double> block(n_), sol(n_), mid(s * n_);
  for (std::size_t i = 0; i < s; ++i) {
    std::copy(t.begin() + static_cast<long>(i * n_), t.begin() + static_cast<long>((i + 1) * n_),
              block.begin());
    blocks_[i].solve(block, sol);
    std::copy(sol.begin(), sol.end(), mid.begin() + static_cast<long>(i * n_));
  }
  coupling_transform(svd_.v, n_, mid, z);
}

LinearOperator HeatRkPreconditioner::as_operator() const {
  return [this](const std::vector<double>& r, std::vector<double>& z) { apply(r, z); };
}

HeatMnsPreconditioner::HeatMnsPreconditioner(const HeatDiscretization& disc,
                                             const ButcherTableau& tab, double tau,
                                             BlockSolvePolicy policy, int cycles)
    : n_(disc.n_dof()) {
  check_tau(tau);
  blocks_.reserve(tab.stages);
  for (std::size_t i = 0; i < tab.stages; ++i)
    blocks_.emplace_back(disc.hierarchy, tau * tab.a(i, i), policy, cycles);
}

void HeatMnsPreconditioner::apply(const std::vector<double>& r, std::vector<double>& z) const {
  const std::size_t s = blocks_.size();
  if (r.size() != s * n_) throw DimensionError("HeatMnsPreconditioner: size mismatch");
  z.resize(s * n_);
  std::vector<double> block(n_), sol(n_);
  for (std::size_t i = 0; i < s; ++i) {
    std::copy(r.begin() + static_cast<long>(i * n_), r.begin() + static_cast<long>((i + 1) * n_),
              block.begin());
    blocks_[i].solve(block, sol);
    std::copy(sol.begin(), sol.end(), z.begin() + static_cast<long>(i * n_));
  }
}

LinearOperator HeatMnsPreconditioner::as_operator() const {
  return [this](const std::vector<double>& r, std::vector<double>& z) { apply(r, z); };
}

// ---- Stokes --------------------------------------------------------------------

StokesStageSystem::StokesStageSystem(const StokesDiscretization& disc, const ButcherTableau& tab,
                                     double tau, double gamma)
    : disc_(&disc),
      tab_(tab),
      tau_(tau),
      gamma_(gamma),
      nv_(disc.n_vel()),
      np_(disc.n_pres()),
      mass_v2_(SparseMatrix::block_diag(disc.velocity.finest().mass_int, 2)),
      stiff_v2_(SparseMatrix::block_diag(disc.velocity.finest().stiffness_int, 2)),
      vel_op_(tab.stages, tab.stages, nv_, nv_),
      div_op_(tab.stages, tab.stages, np_, nv_),
      grad_op_(tab.stages, tab.stages, nv_, np_),
      pres_op_(tab.stages, tab.stages, np_, np_) {
  check_tau(tau);
  if (gamma < 0.0) throw DomainError("StokesStageSystem: gamma must be nonnegative");
  vel_op_.add_term(DenseMatrix::identity(tab.stages), mass_v2_, 1.0);
  vel_op_.add_term(tab.a, stiff_v2_, tau_);
  div_op_.add_term(tab.a, disc.b_int, tau_);
  grad_op_.add_term(tab.a, disc.bt_int, tau_);
  if (gamma_ > 0.0)
    pres_op_.add_term(matmul(tab.a, tab.a), disc.mass_p(), -tau_ * tau_ * gamma_);
}

void StokesStageSystem::apply(const std::vector<double>& x, std::vector<double>& y) const {
  if (x.size() != size()) throw DimensionError("StokesStageSystem: size mismatch");
  const std::size_t s = tab_.stages;
  const std::vector<double> xv(x.begin(), x.begin() + static_cast<long>(s * nv_));
  const std::vector<double> xp(x.begin() + static_cast<long>(s * nv_), x.end());
  std::vector<double> yv, yp;
  vel_op_.apply(xv, yv);
  grad_op_.apply_add(xp, yv, 1.0);
  div_op_.apply(xv, yp);
  if (gamma_ > 0.0) pres_op_.apply_add(xp, yp, 1.0);
  y.resize(size());
  std::copy(yv.begin(), yv.end(), y.begin());
  std::copy(yp.begin(), yp.end(), y.begin() + static_cast<long>(s * nv_));
}

LinearOperator StokesStageSystem::as_operator() const {
  return [this](const std::vector<double>& x, std::vector<double>& y) { apply(x, y); };
}

StokesRkPreconditioner::StokesRkPreconditioner(const StokesDiscretization& disc,
                                               const ButcherTableau& tab, double tau, double gamma,
                                               BlockSolvePolicy policy, int cycles)
    : disc_(&disc),
      tau_(tau),
      ns_(disc.n_scalar()),
      nv_(disc.n_vel()),
      np_(disc.n_pres()),
      svd_(rk_factorization(tab)),
      poisson_(disc.pressure, 0, policy, cycles),
      pressure_mass_(disc.mass_p(), policy),
      middle_(tab.stages, tab.stages, np_, np_) {
  check_tau(tau);
  (void)gamma;  // the preconditioner shape does not depend on gamma
  const std::size_t s = tab.stages;
  vel_blocks_.reserve(s);
  for (std::size_t i = 0; i < s; ++i)
    vel_blocks_.emplace_back(disc.velocity, tau * svd_.sigma[i], policy, cycles);

  // the pressure Laplacian is pinned everywhere it appears in the Schur
  // approximation, including inside the middle operator, so that the whole
  // chain is an exact inverse of a nonsingular map
  middle_.add_term(DenseMatrix::identity(s), disc.mass_p(), 1.0);
  middle_.add_term(tab.a, poisson_.pinned_matrix(), tau_);

  v_sinv_ = svd_.v;
  sinv_ut_ = transpose(svd_.u);
  for (std::size_t i = 0; i < s; ++i)
    for (std::size_t j = 0; j < s; ++j) {
      v_sinv_(i, j) /= svd_.sigma[j];
      sinv_ut_(i, j) /= svd_.sigma[i];
    }
}

void StokesRkPreconditioner::apply(const std::vector<double>& r, std::vector<double>& z) const {
  const std::size_t s = svd_.sigma.size();
  if (r.size() != s * (nv_ + np_)) throw DimensionError("StokesRkPreconditioner: size mismatch");
  const std::vector<double> rv(r.begin(), r.begin() + static_cast<long>(s * nv_));
  const std::vector<double> rp(r.begin() + static_cast<long>(s * nv_), r.end());

  // transformed residuals
  std::vector<double> av, ap;
  const DenseMatrix ut = transpose(svd_.u);
  coupling_transform(ut, nv_, rv, av);
  coupling_transform(ut, np_, rp, ap);

  // velocity stage solves, one scalar solve per component
  std::vector<double> zv(s * nv_), comp(ns_), sol(ns_);
  for (std::size_t i = 0; i < s; ++i)
    for (std::size_t half = 0; half < 2; ++half) {
      const std::size_t off = i * nv_ + half * ns_;
      std::copy(av.begin() + static_cast<long>(off), av.begin() + static_cast<long>(off + ns_),
                comp.begin());
      vel_blocks_[i].solve(comp, sol);
      std::copy(sol.begin(), sol.end(), zv.begin() + static_cast<long>(off));
    }

  // pressure rhs: c_i = ap_i - tau sigma_i B zv_i
  std::vector<double> cp(s * np_), vi(nv_), bz;
  for (std::size_t i = 0; i < s; ++i) {
    std::copy(zv.begin() + static_cast<long>(i * nv_),
              zv.begin() + static_cast<long>((i + 1) * nv_), vi.begin());
    disc_->b_int.multiply(vi, bz);
    for (std::size_t k = 0; k < np_; ++k)
      cp[i * np_ + k] = ap[i * np_ + k] - tau_ * svd_.sigma[i] * bz[k];
  }

  // Schur solve in the transformed basis
  std::vector<double> zp;
  schur_core(cp, zp);

  // back transforms
  std::vector<double> out_v, out_p;
  coupling_transform(svd_.v, nv_, zv, out_v);
  coupling_transform(svd_.v, np_, zp, out_p);
  z.resize(r.size());
  std::copy(out_v.begin(), out_v.end(), z.begin());
  std::copy(out_p.begin(), out_p.end(), z.begin() + static_cast<long>(s * nv_));
}

void StokesRkPreconditioner::schur_core(const std::vector<double>& cp,
                                        std::vector<double>& zp) const {
  const std::size_t s = svd_.sigma.size();
  std::vector<double> w, w1(s * np_), blockp(np_), solp(np_);
  coupling_transform(v_sinv_, np_, cp, w);
  for (std::size_t i = 0; i < s; ++i) {
    std::copy(w.begin() + static_cast<long>(i * np_), w.begin() + static_cast<long>((i + 1) * np_),
              blockp.begin());
    poisson_.solve(blockp, solp);
    std::copy(solp.begin(), solp.end(), w1.begin() + static_cast<long>(i * np_));
  }
  std::vector<double> w2;
  middle_.apply(w1, w2);
  std::vector<double> w3(s * np_);
  for (std::size_t i = 0; i < s; ++i) {
    std::copy(w2.begin() + static_cast<long>(i * np_),
              w2.begin() + static_cast<long>((i + 1) * np_), blockp.begin());
    pressure_mass_.solve(blockp, solp);
    std::copy(solp.begin(), solp.end(), w3.begin() + static_cast<long>(i * np_));
  }
  coupling_transform(sinv_ut_, np_, w3, zp);
  const double scal = -1.0 / (tau_ * tau_);
  for (double& t : zp) t *= scal;
}

void StokesRkPreconditioner::apply_schur_inverse(const std::vector<double>& r,
                                                 std::vector<double>& z) const {
  const std::size_t s = svd_.sigma.size();
  if (r.size() != s * np_) throw DimensionError("apply_schur_inverse: size mismatch");
  std::vector<double> cp, zp;
  coupling_transform(transpose(svd_.u), np_, r, cp);
  schur_core(cp, zp);
  coupling_transform(svd_.v, np_, zp, z);
}

LinearOperator StokesRkPreconditioner::as_operator() const {
  return [this](const std::vector<double>& r, std::vector<double>& z) { apply(r, z); };
}

}  // namespace rkpint
