#include "rkpint/experiment.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>

#include "rkpint/errors.hpp"

namespace rkpint {

namespace {

constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

double seconds_since(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// half-up rounding of total/steps, the convention the published tables use
std::size_t rounded_average(std::size_t total, std::size_t steps) {
  if (steps == 0) return 0;
  return static_cast<std::size_t>(
      std::llround(static_cast<double>(total) / static_cast<double>(steps)));
}

double max_abs_of(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

// Initial-residual check for the per-step stage solve: with a zero stage guess
// the residual is the rhs itself, and for an already-stationary state that rhs
// is pure cancellation noise from the coupling term.  Relative-tolerance GMRES
// would still grind on the noise, so such steps are accepted with zero
// iterations.
bool stage_rhs_negligible(const std::vector<double>& rhs, double coupling_scale) {
  return max_abs_of(rhs) <= 1e-12 * std::max(1.0, coupling_scale);
}

}  // namespace

std::size_t choose_nt(double t_f, double h, int q_fe, int q_rk) {
  if (!(t_f > 0.0)) throw DomainError("choose_nt: final time must be positive");
  if (!(h > 0.0)) throw DomainError("choose_nt: mesh size must be positive");
  if (q_fe < 1 || q_rk < 1) throw DomainError("choose_nt: orders must be positive");
  const double raw = t_f * std::pow(h, -static_cast<double>(q_fe) / static_cast<double>(q_rk));
  // ceil with a little slack so exact integer boundaries (e.g. 2*16^(1/2) = 8)
  // don't round up on floating-point noise
  const double up = std::ceil(raw - 1e-9);
  return std::max<std::size_t>(1, static_cast<std::size_t>(up));
}

// ---- sequential drivers -----------------------------------------------------------

SequentialResult heat_sequential(const HeatDiscretization& d, const ButcherTableau& tab,
                                 const ManufacturedProblem& p, std::size_t n_t,
                                 const SequentialOptions& opts) {
  if (p.is_stokes) throw DomainError("heat_sequential: expected a scalar problem");
  if (n_t < 1) throw DomainError("heat_sequential: need at least one time step");
  if (!(p.t_final > 0.0)) throw DomainError("heat_sequential: final time must be positive");
  const auto wall0 = std::chrono::steady_clock::now();

  const GridLevel& g = d.grid();
  const std::size_t n = d.n_dof(), s = tab.stages;
  const double tau = p.t_final / static_cast<double>(n_t);

  // one stage operator and preconditioner serve every step: tau is uniform
  HeatStageSystem sys(d, tab, tau);
  std::optional<HeatRkPreconditioner> rk;
  std::optional<HeatMnsPreconditioner> mns;
  LinearOperator pc;
  if (opts.precond == StagePrecondKind::rk) {
    rk.emplace(d, tab, tau, opts.blocks, opts.mg_cycles);
    pc = rk->as_operator();
  } else {
    mns.emplace(d, tab, tau, opts.blocks, opts.mg_cycles);
    pc = mns->as_operator();
  }
  MassSolver mass(d.mass(), opts.blocks, opts.chebyshev_steps);

  KrylovOptions kopts;
  kopts.rel_tol = opts.tolerance;
  kopts.restart = static_cast<std::size_t>(opts.restart);
  kopts.max_iters = opts.max_stage_iters;

  SequentialResult res;
  std::vector<double> v = interpolate_interior(g, p.exact_v, 0.0);
  res.trajectory.times.push_back(0.0);
  res.trajectory.values.push_back(v);

  std::vector<double> k(s * n), kv(n), sol(n);
  for (std::size_t m = 0; m < n_t; ++m) {
    const double t_n = static_cast<double>(m) * tau;

    // stage right-hand side: problem data minus the coupling to the step start
    std::vector<double> rhs = heat_stage_rhs(d, tab, p, t_n, tau);
    d.stiffness().multiply(v, kv);
    for (std::size_t i = 0; i < s; ++i)
      for (std::size_t r = 0; r < n; ++r) rhs[i * n + r] -= kv[r];

    std::fill(k.begin(), k.end(), 0.0);
    if (!stage_rhs_negligible(rhs, max_abs_of(kv))) {
      const KrylovResult kr = gmres(sys.as_operator(), pc, rhs, k, kopts);
      if (!kr.converged)
        throw ConvergenceError("heat_sequential: stage solve stalled at step " +
                               std::to_string(m + 1) + " of " + std::to_string(n_t));
      res.total_stage_iterations += kr.iterations;
    }

    // weighted-stage update; the boundary contribution needs one mass solve
    const std::vector<double> ur = heat_update_rhs(d, tab, p, t_n, tau);
    mass.solve(ur, sol);
    for (std::size_t r = 0; r < n; ++r) {
      double acc = v[r] + sol[r];
      for (std::size_t i = 0; i < s; ++i) acc += tau * tab.b[i] * k[i * n + r];
      v[r] = acc;
    }
    res.trajectory.times.push_back(static_cast<double>(m + 1) * tau);
    res.trajectory.values.push_back(v);
  }

  res.steps = n_t;
  res.avg_stage_iterations = rounded_average(res.total_stage_iterations, n_t);
  res.t_total_s = seconds_since(wall0);
  return res;
}

SequentialResult stokes_sequential(const StokesDiscretization& d, const ButcherTableau& tab,
                                   const ManufacturedProblem& p, std::size_t n_t,
                                   const SequentialOptions& opts) {
  if (!p.is_stokes) throw DomainError("stokes_sequential: expected a Stokes problem");
  if (n_t < 1) throw DomainError("stokes_sequential: need at least one time step");
  const auto wall0 = std::chrono::steady_clock::now();

  const StokesInitialState init =
      stokes_backward_euler_init(d, p, opts.blocks, opts.mg_cycles, opts.gamma);
  const double t0 = init.eps_be;
  if (!(p.t_final > t0))
    throw DomainError("stokes_sequential: horizon shorter than the initialization step");
  const double tau = (p.t_final - t0) / static_cast<double>(n_t);

  const std::size_t s = tab.stages, nv = d.n_vel(), np = d.n_pres();

  // the marched operator is the true singular stage system (consistent right-
  // hand sides keep GMRES honest); the preconditioner is its gamma-perturbed
  // factorization
  StokesStageSystem sys(d, tab, tau, 0.0);
  StokesRkPreconditioner pc(d, tab, tau, opts.gamma, opts.blocks, opts.mg_cycles);
  const SparseMatrix mass_v2 = SparseMatrix::block_diag(d.velocity.finest().mass_int, 2);
  const SparseMatrix stiff_v2 = SparseMatrix::block_diag(d.velocity.finest().stiffness_int, 2);
  MassSolver mass(mass_v2, opts.blocks, opts.chebyshev_steps);

  KrylovOptions kopts;
  kopts.rel_tol = opts.tolerance;
  kopts.restart = static_cast<std::size_t>(opts.restart);
  kopts.max_iters = opts.max_stage_iters;

  SequentialResult res;
  res.init_iterations = init.iterations;
  std::vector<double> v = init.velocity, pr = init.pressure;
  res.trajectory.times.push_back(t0);
  res.trajectory.values.push_back(v);
  res.trajectory.pressures.push_back(pr);

  std::vector<double> k(s * (nv + np)), cv(nv), cp(np), sol(nv);
  for (std::size_t m = 0; m < n_t; ++m) {
    const double t_n = t0 + static_cast<double>(m) * tau;

    std::vector<double> rhs = stokes_stage_rhs(d, tab, p, t_n, tau);
    // coupling to the step start: velocity rows see K v + B^T p, pressure rows B v
    stiff_v2.multiply(v, cv);
    d.bt_int.multiply_add(pr, cv);
    d.b_int.multiply(v, cp);
    for (std::size_t i = 0; i < s; ++i)
      for (std::size_t r = 0; r < nv; ++r) rhs[i * nv + r] -= cv[r];
    for (std::size_t i = 0; i < s; ++i)
      for (std::size_t r = 0; r < np; ++r) rhs[s * nv + i * np + r] -= cp[r];

    std::fill(k.begin(), k.end(), 0.0);
    if (!stage_rhs_negligible(rhs, std::max(max_abs_of(cv), max_abs_of(cp)))) {
      const KrylovResult kr = gmres(sys.as_operator(), pc.as_operator(), rhs, k, kopts);
      if (!kr.converged)
        throw ConvergenceError("stokes_sequential: stage solve stalled at step " +
                               std::to_string(m + 1) + " of " + std::to_string(n_t));
      res.total_stage_iterations += kr.iterations;
    }

    const std::vector<double> ur = stokes_update_rhs(d, tab, p, t_n, tau);
    const std::vector<double> urv(ur.begin(), ur.begin() + static_cast<long>(nv));
    mass.solve(urv, sol);
    for (std::size_t r = 0; r < nv; ++r) {
      double acc = v[r] + sol[r];
      for (std::size_t i = 0; i < s; ++i) acc += tau * tab.b[i] * k[i * nv + r];
      v[r] = acc;
    }
    // the pressure update row has no boundary term, so the mass matrix cancels
    for (std::size_t r = 0; r < np; ++r) {
      double acc = pr[r];
      for (std::size_t i = 0; i < s; ++i) acc += tau * tab.b[i] * k[s * nv + i * np + r];
      pr[r] = acc;
    }
    res.trajectory.times.push_back(t0 + static_cast<double>(m + 1) * tau);
    res.trajectory.values.push_back(v);
    res.trajectory.pressures.push_back(pr);
  }

  res.steps = n_t;
  res.avg_stage_iterations = rounded_average(res.total_stage_iterations, n_t);
  res.t_total_s = seconds_since(wall0);
  return res;
}

// ---- configuration ----------------------------------------------------------------

namespace {

std::string trim(const std::string& s) {
  const auto notspace = [](unsigned char c) { return std::isspace(c) == 0; };
  const auto first = std::find_if(s.begin(), s.end(), notspace);
  const auto last = std::find_if(s.rbegin(), s.rend(), notspace).base();
  return first < last ? std::string(first, last) : std::string();
}

std::string lowered(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

long long parse_int_value(const std::string& key, const std::string& value, std::size_t line) {
  std::size_t consumed = 0;
  long long v = 0;
  try {
    v = std::stoll(value, &consumed);
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected an integer, got '" + value + "'", line);
  }
  if (consumed != value.size())
    throw ConfigError(key + ": expected an integer, got '" + value + "'", line);
  return v;
}

double parse_real_value(const std::string& key, const std::string& value, std::size_t line) {
  std::size_t consumed = 0;
  double v = 0.0;
  try {
    v = std::stod(value, &consumed);
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + value + "'", line);
  }
  if (consumed != value.size() || !std::isfinite(v))
    throw ConfigError(key + ": expected a number, got '" + value + "'", line);
  return v;
}

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig cfg;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string raw;
  std::size_t line = 0;

  while (std::getline(in, raw)) {
    ++line;
    if (const std::size_t hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
    const std::string entry = trim(raw);
    if (entry.empty()) continue;

    const std::size_t eq = entry.find('=');
    if (eq == std::string::npos)
      throw ConfigError("expected key=value, got '" + entry + "'", line);
    const std::string key = trim(entry.substr(0, eq));
    const std::string value = trim(entry.substr(eq + 1));
    if (key.empty()) throw ConfigError("missing key before '='", line);
    if (value.empty()) throw ConfigError(key + ": empty value", line);
    if (!seen.insert(key).second) throw ConfigError("duplicate key '" + key + "'", line);

    if (key == "problem") {
      static const char* const known[] = {"heat-seq", "heat-aao", "stokes-seq", "stokes-aao",
                                          "lid-cavity-aao"};
      if (std::find(std::begin(known), std::end(known), value) == std::end(known))
        throw ConfigError("problem: unknown value '" + value + "'", line);
      cfg.problem = value;
    } else if (key == "family") {
      try {
        cfg.family = parse_family(value);
      } catch (const Error&) {
        throw ConfigError("family: unknown value '" + value + "'", line);
      }
    } else if (key == "s") {
      const long long v = parse_int_value(key, value, line);
      if (v < 1 || v > 12) throw ConfigError("s: stage count outside 1..12", line);
      cfg.s = static_cast<std::size_t>(v);
    } else if (key == "degree") {
      const long long v = parse_int_value(key, value, line);
      if (v != 1 && v != 2) throw ConfigError("degree: expected 1 or 2", line);
      cfg.degree = static_cast<int>(v);
    } else if (key == "l") {
      const long long v = parse_int_value(key, value, line);
      if (v < 1 || v > 10) throw ConfigError("l: refinement level outside 1..10", line);
      cfg.level = static_cast<int>(v);
    } else if (key == "tf") {
      const double v = parse_real_value(key, value, line);
      if (!(v > 0.0)) throw ConfigError("tf: final time must be positive", line);
      cfg.t_f = v;
    } else if (key == "tolerance") {
      const double v = parse_real_value(key, value, line);
      if (!(v > 0.0) || v >= 1.0)
        throw ConfigError("tolerance: expected a value in (0, 1)", line);
      cfg.tolerance = v;
    } else if (key == "restart") {
      const long long v = parse_int_value(key, value, line);
      if (v < 1 || v > 1000) throw ConfigError("restart: outside 1..1000", line);
      cfg.restart = static_cast<int>(v);
    } else if (key == "precond") {
      const std::string v = lowered(value);
      if (v == "rk")
        cfg.precond = StagePrecondKind::rk;
      else if (v == "mns")
        cfg.precond = StagePrecondKind::mns;
      else
        throw ConfigError("precond: expected 'rk' or 'mns'", line);
    } else if (key == "inner") {
      const std::string v = lowered(value);
      if (v == "multigrid")
        cfg.inner = BlockSolvePolicy::multigrid;
      else if (v == "exact")
        cfg.inner = BlockSolvePolicy::exact;
      else
        throw ConfigError("inner: expected 'multigrid' or 'exact'", line);
    } else if (key == "threads") {
      const long long v = parse_int_value(key, value, line);
      if (v < 1 || v > 64) throw ConfigError("threads: outside 1..64", line);
      cfg.threads = static_cast<int>(v);
    } else if (key == "out") {
      cfg.out = value;
    } else {
      throw ConfigError("unknown key '" + key + "'", line);
    }
  }

  for (const char* required : {"problem", "family", "s", "l", "tf"})
    if (seen.count(required) == 0)
      throw ConfigError(std::string("missing required key '") + required + "'", 0);
  return cfg;
}

// ---- reports ----------------------------------------------------------------------

namespace {

const char kReportHeader[] =
    "problem,family,s,degree,l,n_t,dof,outer_iters,avg_stage_iters,"
    "v_error,p_error,t_total_s,t_theta_s,t_schur_s";

std::string format_field(double x) {
  if (std::isnan(x)) return {};
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6g", x);
  return buf;
}

}  // namespace

void emit_report(const std::vector<SolveReport>& reports, std::ostream& os) {
  os << kReportHeader << '\n';
  for (const SolveReport& r : reports) {
    os << r.problem << ',' << r.family << ',' << r.s << ',' << r.degree << ',' << r.level << ','
       << r.n_t << ',' << r.dof << ',' << format_field(r.outer_iters) << ','
       << format_field(r.avg_stage_iters) << ',' << format_field(r.v_error) << ','
       << format_field(r.p_error) << ',' << format_field(r.t_total_s) << ','
       << format_field(r.t_theta_s) << ',' << format_field(r.t_schur_s) << '\n';
  }
}

void emit_report(const std::vector<SolveReport>& reports, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw Error("emit_report: cannot open '" + path + "' for writing");
  emit_report(reports, f);
  f.flush();
  if (!f) throw Error("emit_report: write to '" + path + "' failed");
}

// ---- config-level drivers ---------------------------------------------------------

namespace {

ManufacturedProblem problem_for(const ExperimentConfig& cfg) {
  if (cfg.problem == "heat-seq" || cfg.problem == "heat-aao") {
    ManufacturedProblem p = make_heat_problem();
    p.t_final = cfg.t_f;  // the manufactured fields solve the equation on any horizon
    return p;
  }
  if (cfg.problem == "stokes-seq" || cfg.problem == "stokes-aao") {
    ManufacturedProblem p = make_colliding_flow_problem();
    p.t_final = cfg.t_f;
    return p;
  }
  if (cfg.problem == "lid-cavity-aao") {
    if (cfg.level > 4) throw DomainError("lid-cavity-aao: levels above 4 are not supported");
    if (cfg.t_f > 8.0) throw DomainError("lid-cavity-aao: final times above 8 are not supported");
    return make_lid_cavity_problem(cfg.t_f);
  }
  throw DomainError("unknown problem '" + cfg.problem + "'");
}

void check_run_config(const ExperimentConfig& cfg) {
  if (cfg.s < 1) throw DomainError("run: stage count not set");
  if (cfg.level < 1) throw DomainError("run: refinement level not set");
  if (!(cfg.t_f > 0.0)) throw DomainError("run: final time not set");
}

}  // namespace

ExperimentResult run_sequential(const ExperimentConfig& cfg) {
  if (cfg.problem != "heat-seq" && cfg.problem != "stokes-seq")
    throw DomainError("run_sequential: problem '" + cfg.problem + "' is not a sequential run");
  check_run_config(cfg);
  const ButcherTableau tab = make_tableau(cfg.family, cfg.s);
  const ManufacturedProblem prob = problem_for(cfg);

  SequentialOptions opts;
  opts.tolerance = cfg.tolerance;
  opts.restart = cfg.restart;
  opts.precond = cfg.precond;
  opts.blocks = cfg.inner;

  ExperimentResult out;
  SolveReport& rep = out.report;
  rep.problem = cfg.problem;
  rep.family = family_name(cfg.family);
  rep.s = cfg.s;
  rep.level = cfg.level;
  rep.outer_iters = kMissing;
  rep.t_theta_s = kMissing;
  rep.t_schur_s = kMissing;

  if (cfg.problem == "heat-seq") {
    const HeatDiscretization d = assemble_heat(cfg.level, cfg.degree);
    const std::size_t n_t = choose_nt(cfg.t_f, d.grid().elem_size, cfg.degree + 1, tab.order);
    SequentialResult sr = heat_sequential(d, tab, prob, n_t, opts);
    rep.degree = cfg.degree;
    rep.n_t = n_t;
    rep.dof = tab.stages * d.n_dof();  // the per-step linear system dimension
    rep.avg_stage_iters = static_cast<double>(sr.avg_stage_iterations);
    rep.v_error = heat_error(d, prob, sr.trajectory);
    rep.p_error = kMissing;
    rep.t_total_s = sr.t_total_s;
    out.trajectory = std::move(sr.trajectory);
  } else {
    if (cfg.precond == StagePrecondKind::mns)
      throw DomainError("run_sequential: the block-diagonal stage preconditioner is heat-only");
    const StokesDiscretization d = assemble_stokes(cfg.level);
    const std::size_t n_t = choose_nt(cfg.t_f, d.velocity.finest().elem_size, 2, tab.order);
    SequentialResult sr = stokes_sequential(d, tab, prob, n_t, opts);
    rep.degree = 2;  // Taylor-Hood velocity order
    rep.n_t = n_t;
    rep.dof = tab.stages * (d.n_vel() + d.n_pres());
    rep.avg_stage_iters = static_cast<double>(sr.avg_stage_iterations);
    const StokesErrorPair ep = stokes_error(d, prob, sr.trajectory);
    rep.v_error = ep.v_error;
    rep.p_error = ep.p_error;
    rep.t_total_s = sr.t_total_s;
    out.trajectory = std::move(sr.trajectory);
  }
  rep.converged = true;  // a stalled stage solve would have thrown
  return out;
}

ExperimentResult run_allatonce(const ExperimentConfig& cfg) {
  if (cfg.problem != "heat-aao" && cfg.problem != "stokes-aao" &&
      cfg.problem != "lid-cavity-aao")
    throw DomainError("run_allatonce: problem '" + cfg.problem + "' is not an all-at-once run");
  check_run_config(cfg);
  const ButcherTableau tab = make_tableau(cfg.family, cfg.s);
  const ManufacturedProblem prob = problem_for(cfg);

  const double h = std::ldexp(1.0, 1 - cfg.level);  // element size 2^(1-l)
  const int q_fe = prob.is_stokes ? 2 : cfg.degree + 1;
  const std::size_t n_t = choose_nt(cfg.t_f, h, q_fe, tab.order);

  AaoPrecondOptions inner;
  inner.policy = cfg.inner == BlockSolvePolicy::exact ? AaoInnerPolicy::exact
                                                      : AaoInnerPolicy::production;
  inner.threads = cfg.threads;

  AllAtOnceProblem prb = assemble_allatonce(prob, tab, cfg.level, cfg.degree, cfg.t_f, n_t, inner);
  AllAtOncePrecond pc(*prb.system, inner);
  AaoSolveOptions sopts;
  sopts.rel_tol = cfg.tolerance;
  sopts.restart = static_cast<std::size_t>(cfg.restart);
  AaoSolveResult sr = solve_allatonce(*prb.system, pc, prb.rhs, sopts);

  ExperimentResult out;
  const double tau = prb.system->tau();
  out.trajectory.times.resize(n_t + 1);
  for (std::size_t n = 0; n <= n_t; ++n)
    out.trajectory.times[n] = prb.t_start + static_cast<double>(n) * tau;
  if (!prob.is_stokes) {
    out.trajectory.values = std::move(sr.nodes);
  } else {
    const std::size_t nv = prb.stokes->n_vel();
    out.trajectory.values.reserve(n_t + 1);
    out.trajectory.pressures.reserve(n_t + 1);
    for (const std::vector<double>& node : sr.nodes) {
      out.trajectory.values.emplace_back(node.begin(), node.begin() + static_cast<long>(nv));
      out.trajectory.pressures.emplace_back(node.begin() + static_cast<long>(nv), node.end());
    }
  }

  SolveReport& rep = out.report;
  rep.problem = cfg.problem;
  rep.family = family_name(cfg.family);
  rep.s = cfg.s;
  rep.degree = prob.is_stokes ? 2 : cfg.degree;
  rep.level = cfg.level;
  rep.n_t = n_t;
  rep.dof = prb.system->size();
  rep.outer_iters = static_cast<double>(sr.iterations);
  rep.avg_stage_iters = kMissing;
  if (!prob.has_exact) {
    rep.v_error = kMissing;
    rep.p_error = kMissing;
  } else if (!prob.is_stokes) {
    rep.v_error = heat_error(*prb.heat, prob, out.trajectory);
    rep.p_error = kMissing;
  } else {
    const StokesErrorPair ep = stokes_error(*prb.stokes, prob, out.trajectory);
    rep.v_error = ep.v_error;
    rep.p_error = ep.p_error;
  }
  rep.t_total_s = sr.t_total_s;
  rep.t_theta_s = sr.t_theta_s;
  rep.t_schur_s = sr.t_schur_s;
  rep.converged = sr.converged;
  return out;
}

}  // namespace rkpint
