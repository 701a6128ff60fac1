#pragma once

// End-to-end orchestration: kinetic data generation, closure learning (weak form + constraints +
// group MSTLS with audit refinement), forward simulation from data, and the planted-model oracle.

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "trtc/closure.hpp"
#include "trtc/constraints.hpp"
#include "trtc/dataset.hpp"
#include "trtc/hash.hpp"
#include "trtc/kinetic.hpp"
#include "trtc/metrics.hpp"
#include "trtc/mstls.hpp"
#include "trtc/solver.hpp"
#include "trtc/termlib.hpp"
#include "trtc/weakform.hpp"

namespace trtc {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Worker count from TRTC_WORKERS (default 1).
inline int env_workers() {
  if (const char* s = std::getenv("TRTC_WORKERS")) {
    try {
      const int n = std::stoi(s);
      if (n >= 1) return n;
    } catch (...) {
    }
    throw ConfigError(std::string("TRTC_WORKERS must be a positive integer, got '") + s + "'");
  }
  return 1;
}

inline std::string config_hash(const nlohmann::json& j) { return sha256_hex(j.dump()); }

// Learning.

struct LearnConfig {
  double x0 = 0.0, x1 = 2.0, t0 = 0.0, t1 = 1e-10;  // training window
  LibraryCaps caps_F{4, 3}, caps_S{4, 3};
  double tau = 1e-4, tau_hat = 6.0;
  double lambda_lo = 1e-4, lambda_hi = 1.0;
  int lambda_n = 100;
  bool hat_scaling = true;
  int n_boundary = 20;
  std::size_t min_K_per_term = 4;
  int refine_rounds = 6;
  std::size_t refine_rows = 60;  // per constraint kind and round
  int workers = 1;

  nlohmann::json to_json() const {
    return {{"window", {x0, x1, t0, t1}},
            {"caps_F", {caps_F.p_tot, caps_F.p_max}},
            {"caps_S", {caps_S.p_tot, caps_S.p_max}},
            {"tau", tau},
            {"tau_hat", tau_hat},
            {"lambda", {lambda_lo, lambda_hi, lambda_n}},
            {"hat_scaling", hat_scaling},
            {"n_boundary", n_boundary},
            {"min_K_per_term", min_K_per_term},
            {"refine_rounds", refine_rounds},
            {"refine_rows", refine_rows}};
  }
  static LearnConfig from_json(const nlohmann::json& j) {
    LearnConfig c;
    if (j.contains("window")) {
      const auto w = j.at("window").get<std::vector<double>>();
      if (w.size() != 4) throw ConfigError("learn.window must have 4 entries");
      c.x0 = w[0], c.x1 = w[1], c.t0 = w[2], c.t1 = w[3];
    }
    auto caps = [&](const char* k, LibraryCaps& out) {
      if (!j.contains(k)) return;
      const auto v = j.at(k).get<std::vector<int>>();
      if (v.size() != 2) throw ConfigError(std::string("learn.") + k + " must be [p_tot, p_max]");
      out = {v[0], v[1]};
    };
    caps("caps_F", c.caps_F);
    caps("caps_S", c.caps_S);
    c.tau = j.value("tau", c.tau);
    c.tau_hat = j.value("tau_hat", c.tau_hat);
    if (j.contains("lambda")) {
      const auto& l = j.at("lambda");
      c.lambda_lo = l.at(0), c.lambda_hi = l.at(1), c.lambda_n = l.at(2);
    }
    c.hat_scaling = j.value("hat_scaling", c.hat_scaling);
    c.n_boundary = j.value("n_boundary", c.n_boundary);
    c.min_K_per_term = j.value("min_K_per_term", c.min_K_per_term);
    c.refine_rounds = j.value("refine_rounds", c.refine_rounds);
    c.refine_rows = j.value("refine_rows", c.refine_rows);
    c.validate();
    return c;
  }
  void validate() const {
    if (!(x1 > x0) || !(t1 > t0)) throw ConfigError("learn: empty training window");
    if (!(tau > 0 && tau < 1) || !(tau_hat > 0)) throw ConfigError("learn: need 0 < tau < 1 and tau_hat > 0");
    if (!(lambda_lo > 0) || !(lambda_hi >= lambda_lo) || lambda_n < 1) throw ConfigError("learn: bad lambda grid");
    if (n_boundary < 1) throw ConfigError("learn: n_boundary must be >= 1");
  }
};

/// Dataset with u_v / s_v, x / s_x, t / s_t.
inline MomentDataset to_hat(const MomentDataset& d, const Scaling& sc) {
  MomentDataset h = d;
  for (auto& x : h.x) x /= sc.sx;
  for (auto& t : h.t) t /= sc.st;
  for (int v = 0; v < kNumVars; ++v)
    for (auto& u : h.fields[v]) u /= sc.s[v];
  return h;
}

/// Per-dataset regression state for one learned equation.
struct EquationSystem {
  Var slot;
  WeakSystem ws;
  RegressionProblem prob;
};

struct DatasetSystems {
  MomentDataset train;  // physical training slice
  Scaling sc;
  EquilibriumParams ep;
  TestParams tp;
  ModelConstraints mc;
  std::array<std::optional<EquationSystem>, kNumVars> sys;  // F and S
};

inline Eigen::VectorXd multipliers(const TermLibrary& lib, const Scaling& sc) {
  Eigen::VectorXd m(static_cast<Eigen::Index>(lib.size()));
  for (std::size_t k = 0; k < lib.size(); ++k) m[static_cast<Eigen::Index>(k)] = sc.multiplier(lib.terms[k]);
  return m;
}

inline DatasetSystems prepare_dataset(const MomentDataset& d, const ModelLibrary& lib, const LearnConfig& cfg) {
  DatasetSystems ds;
  ds.train = slice(d, slice_for(d, cfg.x0, cfg.x1, cfg.t0, cfg.t1));
  validate(ds.train);
  ds.sc = cfg.hat_scaling ? Scaling::from_data(ds.train) : Scaling{};
  ds.ep = EquilibriumParams::from(d.params);
  const MomentDataset hat = to_hat(ds.train, ds.sc);
  ds.tp = select_test_params(hat, cfg.tau, cfg.tau_hat);
  const TestFunction1D fx = build_test_function(ds.tp.x.p, ds.tp.x.a, hat.dx());
  const TestFunction1D ft = build_test_function(ds.tp.t.p, ds.tp.t.a, hat.dt());
  std::size_t J = std::max(lib[Var::F].size(), lib[Var::S].size());
  const QueryGrid q = choose_queries(static_cast<int>(hat.nx()), static_cast<int>(hat.nt()), fx, ft, cfg.min_K_per_term * J);
  const ConstraintGrids grids = ConstraintGrids::from_data(ds.train, lib[Var::F].caps.p_max, cfg.n_boundary);
  ds.mc = build_constraints(lib, grids, ds.ep, ds.sc);
  for (Var v : {Var::F, Var::S}) {
    EquationSystem es{v, assemble_weak_system(hat, lib[v], fx, ft, q, ConvMethod::fft), {}};
    es.prob.G = es.ws.G;
    es.prob.b = es.ws.b;
    es.prob.A = ds.mc[v].A;
    es.prob.C = ds.mc[v].C;
    es.prob.D = ds.mc[v].D;
    for (auto k : lib[v].forced_indices()) es.prob.forced.push_back(static_cast<Eigen::Index>(k));
    ds.sys[static_cast<int>(v)] = std::move(es);
  }
  return ds;
}

/// Audit-driven constraint refinement: violating data states become additional constraint rows.
inline std::size_t add_refinement_rows(DatasetSystems& ds, const ModelLibrary& lib, const AuditReport& rep,
                                       std::size_t per_kind) {
  std::map<std::string, std::vector<const AuditViolation*>> by_kind;
  for (const auto& v : rep.violations) by_kind[v.kind].push_back(&v);
  std::size_t added = 0;
  for (auto& [kind, vs] : by_kind) {
    std::sort(vs.begin(), vs.end(), [](auto* a, auto* b) { return (a->value - a->bound) / std::max(a->tol, 1e-300) > (b->value - b->bound) / std::max(b->tol, 1e-300); });
    std::vector<State> states;
    for (std::size_t k = 0; k < vs.size() && states.size() < per_kind; ++k) {
      const std::size_t p = vs[k]->point;
      states.push_back({ds.train.fields[0][p], ds.train.fields[1][p], ds.train.fields[2][p], ds.train.fields[3][p]});
    }
    const auto before_F = ds.mc[Var::F].C.rows(), before_S = ds.mc[Var::S].C.rows();
    if (kind == "hyperbolicity") build_hyperbolicity(lib[Var::F], states, ds.sc, ds.mc[Var::F], "refine hyperbolicity");
    else if (kind == "dF qF") build_F_source_stability(lib[Var::F], states, ds.sc, ds.mc[Var::F], "refine dF qF");
    else build_S_source_stability(lib[Var::S], states, ds.sc, ds.ep, ds.mc[Var::S], "refine qS");
    added += static_cast<std::size_t>(ds.mc[Var::F].C.rows() - before_F + ds.mc[Var::S].C.rows() - before_S);
  }
  for (Var v : {Var::F, Var::S}) {
    auto& p = ds.sys[static_cast<int>(v)]->prob;
    p.C = ds.mc[v].C;
    p.D = ds.mc[v].D;
  }
  return added;
}

struct LearnResult {
  ModelLibrary lib;
  std::vector<ClosureModel> models;                               // one per dataset
  std::vector<std::array<Eigen::VectorXd, kNumVars>> W;           // physical coefficients, library order
  std::vector<std::array<Eigen::VectorXd, kNumVars>> W_hat;       // scaled coefficients
  std::vector<DatasetSystems> systems;
  std::vector<AuditReport> audits;
  std::array<std::optional<SelectionResult>, kNumVars> selection;
  nlohmann::json report;
};

/// Constraint residuals of a learned block in the scaled problem (the rows the regression saw).
struct ConstraintCheck {
  double eq_inf = 0.0;     // ||A w||_inf
  double w_inf = 0.0;      // ||w||_inf
  double ineq_excess = 0.0;  // max(C w - D)
};

inline ConstraintCheck check_constraints(const RegressionProblem& p, const Eigen::VectorXd& w) {
  ConstraintCheck c;
  c.w_inf = w.lpNorm<Eigen::Infinity>();
  if (p.A.rows()) c.eq_inf = (p.A * w).lpNorm<Eigen::Infinity>();
  if (p.C.rows()) c.ineq_excess = (p.C * w - p.D).maxCoeff();
  return c;
}

/// Learn one closure per dataset with a shared support per equation (group sparsity when
/// several datasets are given).
inline LearnResult learn(const std::vector<MomentDataset>& data, const LearnConfig& cfg) {
  cfg.validate();
  if (data.empty()) throw ConfigError("learn: no datasets");
  LearnResult res;
  res.lib = build_model_library(cfg.caps_F, cfg.caps_S);
  for (const auto& d : data) res.systems.push_back(prepare_dataset(d, res.lib, cfg));
  const std::size_t P = data.size();
  const auto grid = log_lambda_grid(cfg.lambda_lo, cfg.lambda_hi, cfg.lambda_n);
  res.W.assign(P, {});
  res.W_hat.assign(P, {});
  res.audits.assign(P, {});
  nlohmann::json rounds = nlohmann::json::array();

  for (int round = 0;; ++round) {
    for (Var v : {Var::F, Var::S}) {
      std::vector<const RegressionProblem*> probs;
      for (auto& ds : res.systems) probs.push_back(&ds.sys[static_cast<int>(v)]->prob);
      res.selection[static_cast<int>(v)] = group_select_lambda(probs, grid, QPOptions{}, cfg.workers);
      const auto& sel = *res.selection[static_cast<int>(v)];
      for (std::size_t p = 0; p < P; ++p) {
        res.W_hat[p][static_cast<int>(v)] = sel.w[p].w;
        res.W[p][static_cast<int>(v)] = sel.w[p].w.cwiseProduct(multipliers(res.lib[v], res.systems[p].sc));
      }
    }
    // Base blocks (analytic).
    for (std::size_t p = 0; p < P; ++p) {
      const auto& ep = res.systems[p].ep;
      res.W[p][0] = Eigen::VectorXd::Constant(1, -1.0);
      res.W[p][2] = Eigen::Vector2d(-ep.alpha() / ep.rho_cv, ep.c / ep.rho_cv);
    }
    std::size_t violations = 0, added = 0;
    for (std::size_t p = 0; p < P; ++p) {
      res.audits[p] = audit(res.lib, res.W[p], res.systems[p].train, res.systems[p].ep);
      violations += res.audits[p].violations.size();
    }
    nlohmann::json rj = {{"round", round}, {"violations", violations}};
    if (violations == 0 || round >= cfg.refine_rounds) {
      rounds.push_back(rj);
      break;
    }
    for (std::size_t p = 0; p < P; ++p)
      if (!res.audits[p].ok()) added += add_refinement_rows(res.systems[p], res.lib, res.audits[p], cfg.refine_rows);
    rj["rows_added"] = added;
    rounds.push_back(rj);
    if (added == 0) break;
  }

  for (std::size_t p = 0; p < P; ++p) {
    ClosureModel m = ClosureModel::from_library(res.lib, res.W[p]);
    m.has_params = true;
    m.gamma = data[p].params.gamma;
    m.T_in3 = std::pow(data[p].params.T_in, 3);
    m.provenance = {{"generator", "trtc.learn"}, {"dataset_hash", data[p].content_hash()}, {"learn_config", cfg.to_json()}};
    res.models.push_back(std::move(m));
  }

  // Report.
  nlohmann::json rep;
  rep["learn_config"] = cfg.to_json();
  rep["refinement"] = rounds;
  for (Var v : {Var::F, Var::S}) rep["selection"][kVarNames[static_cast<int>(v)]] = res.selection[static_cast<int>(v)]->to_json();
  nlohmann::json per = nlohmann::json::array();
  for (std::size_t p = 0; p < P; ++p) {
    const auto& ds = res.systems[p];
    nlohmann::json e;
    e["dataset_hash"] = data[p].content_hash();
    e["scaling"] = ds.sc.to_json();
    e["test_functions"] = {{"x", {{"p", ds.tp.x.p}, {"a", ds.tp.x.a}, {"changepoint", ds.tp.x.changepoint}}},
                           {"t", {{"p", ds.tp.t.p}, {"a", ds.tp.t.a}, {"changepoint", ds.tp.t.changepoint}}}};
    e["constraints"] = ds.mc.report();
    for (Var v : {Var::F, Var::S}) {
      const auto& sys = *ds.sys[static_cast<int>(v)];
      const auto cc = check_constraints(sys.prob, res.W_hat[p][static_cast<int>(v)]);
      e["equations"][kVarNames[static_cast<int>(v)]] = {
          {"K", sys.ws.K()}, {"J", sys.ws.J()},
          {"weak_residual", weak_residual(sys.ws, res.W_hat[p][static_cast<int>(v)])},
          {"eq_inf", cc.eq_inf}, {"w_inf", cc.w_inf}, {"ineq_excess", cc.ineq_excess}};
    }
    e["audit"] = {{"points", res.audits[p].points}, {"violations", res.audits[p].violations.size()}};
    e["model"] = res.models[p].describe();
    per.push_back(e);
  }
  rep["datasets"] = per;
  res.report = rep;
  return res;
}

// Forward simulation driven by data.

struct SimulateOptions {
  std::size_t N_cells = 0;  // 0: half the data resolution
  double t_final = 0.0;     // 0: last data time
  std::size_t bc_window = 0;  // 0: one quadratic over all boundary samples
  bool bc_skip_initial = true;  // the t0 edge value is initial data, not a boundary response
  double rtol = 1e-6, atol = 1e-8, cfl = 0.8;
  bool dirichlet_right = false;  // default: copy (outflow) on the right, data only at the inflow

  nlohmann::json to_json() const {
    return {{"N_cells", N_cells}, {"t_final", t_final}, {"bc_window", bc_window}, {"bc_skip_initial", bc_skip_initial}, {"rtol", rtol},
            {"atol", atol}, {"cfl", cfl}, {"dirichlet_right", dirichlet_right}};
  }
};

/// Run a closure from the data's initial slice with Dirichlet boundary data from the data's edge
/// cells, reporting at the data's output times up to t_final.
inline SimulationResult simulate_from_data(const ClosureModel& m, const MomentDataset& d, const SimulateOptions& o = {}) {
  SolverConfig cfg;
  cfg.N_cells = o.N_cells ? o.N_cells : d.nx() / 2;
  const double h = d.dx();
  cfg.x0 = d.x.front() - 0.5 * h;
  cfg.x1 = d.x.back() + 0.5 * h;
  cfg.rtol = o.rtol;
  cfg.atol = o.atol;
  cfg.cfl = o.cfl;
  const double tf = o.t_final > 0 ? o.t_final : d.t.back();
  for (double t : d.t)
    if (t <= tf * (1 + 1e-12)) cfg.output_times.push_back(t);
  const std::size_t j0 = o.bc_skip_initial && d.nt() > 3 ? 1 : 0;
  cfg.bc[0] = BoundarySpec::dirichlet(boundary_trace_from(d, Side::left, o.bc_window, j0));
  cfg.bc[1] = o.dirichlet_right ? BoundarySpec::dirichlet(boundary_trace_from(d, Side::right, o.bc_window, j0))
                                : BoundarySpec::all(BCKind::copy);
  const Fields u0 = initial_state_from(d, 0, cfg);
  SimulationResult r = simulate(m, cfg, u0, d.t.front(), tf);
  r.data.params = d.params;
  r.data.provenance.parent_hash = d.content_hash();
  r.data.provenance.notes["simulate_options"] = o.to_json();
  return r;
}

/// Reference data on a candidate's grid (linear interpolation in x, time slices matched).
inline MomentDataset reference_on(const MomentDataset& ref, const MomentDataset& cand) {
  return resample_linear(ref, cand.x, cand.t);
}

// Planted-model oracle.

struct PlantedSpec {
  double gamma = 1e9;
  double rho_cv = 4e22;
  double sigma = 0.5;
  double s_flux = -0.2;
  double a_e = -3e-17, a_S = -1.2e-16;
  std::size_t N_x = 256, N_t = 200;
  double L = 4.0;
  double dt = 1e-12;
  double T0 = 300.0;
  double T_amp = 2.0;   // temperature bump heights, relative
  double e_amp = 0.5;   // extra energy bump, relative
  double F_amp = 0.1;   // initial flux, relative to c e
  double delta = 4.0;   // mean initial S / (beta T) - 1; large enough that S >= beta T throughout

  EquilibriumParams ep() const { return {gamma, rho_cv, units::a, units::c}; }
  P1Reference reference() const {
    P1Reference r;
    r.sigma = sigma;
    r.s_flux = s_flux;
    r.a_e = a_e;
    r.a_S = a_S;
    return r;
  }
  ClosureModel model() const { return p1_reference(ep(), reference()); }
};

/// Smooth data from the planted P1-type system with reflecting walls.
inline MomentDataset generate_planted(const PlantedSpec& s) {
  const EquilibriumParams ep = s.ep();
  SolverConfig cfg;
  cfg.N_cells = s.N_x;
  cfg.x0 = 0.0;
  cfg.x1 = s.L;
  cfg.rtol = 1e-10;
  cfg.atol = 1e-12;
  cfg.bc = {BoundarySpec::all(BCKind::mirror), BoundarySpec::all(BCKind::mirror)};
  cfg.output_times = uniform_times(s.dt, s.N_t);
  const auto x = cfg.centers();
  Fields u;
  for (auto& f : u) f.resize(s.N_x);
  auto g = [&](double xi, double c, double w) { return std::exp(-std::pow((xi - c * s.L) / (w * s.L), 2)); };
  const double e0 = ep.rho_cv * s.T0 + ep.a * std::pow(s.T0, 4);
  for (std::size_t i = 0; i < s.N_x; ++i) {
    const double xi = x[i], th = 2 * M_PI * xi / s.L;
    const double T = s.T0 * (1.0 + s.T_amp * g(xi, 0.3, 0.12) + 0.5 * s.T_amp * g(xi, 0.75, 0.08));
    u[0][i] = e0 * (1.0 + s.e_amp * g(xi, 0.55, 0.1)) + ep.rho_cv * (T - s.T0);
    u[1][i] = s.F_amp * units::c * e0 * std::sin(th) * std::sin(0.5 * th);
    u[2][i] = T;
    u[3][i] = ep.beta() * T * (1.0 + s.delta * (1.0 + 0.8 * std::cos(1.5 * th + 0.3)));
  }
  const ClosureModel m = s.model();
  SimulationResult r = simulate(m, cfg, u, 0.0, cfg.output_times.back());
  r.data.params.gamma = s.gamma;
  r.data.params.rho_cv = s.rho_cv;
  r.data.params.L = s.L;
  r.data.params.T_in = s.T0;
  r.data.provenance.generator = "trtc.planted";
  r.data.provenance.notes["planted_model"] = m.to_json();
  return r.data;
}

// Kinetic generation.

struct GenerateConfig {
  ProblemParams problem;
  int N_cells = 1024;
  double dt = 1e-12;
  int N_steps = 200;

  TransportConfig transport() const {
    TransportConfig t;
    t.L = problem.L;
    t.N_cells = N_cells;
    t.M_omega = problem.M_omega;
    t.G = problem.G;
    t.dt = dt;
    t.N_steps = N_steps;
    t.T_in = problem.T_in;
    t.T_o = problem.T_o;
    t.rho_cv = problem.rho_cv;
    t.gamma = problem.gamma;
    return t;
  }
  nlohmann::json to_json() const {
    return {{"problem", params_to_json(problem)}, {"N_cells", N_cells}, {"dt", dt}, {"N_steps", N_steps}};
  }
  static GenerateConfig from_json(const nlohmann::json& j) {
    GenerateConfig g;
    if (j.contains("problem")) g.problem = params_from_json(j.at("problem"));
    g.N_cells = j.value("N_cells", g.N_cells);
    g.dt = j.value("dt", g.dt);
    g.N_steps = j.value("N_steps", g.N_steps);
    g.validate();
    return g;
  }
  void validate() const {
    const auto& p = problem;
    if (!(p.L > 0) || !(p.T_in > 0) || !(p.T_o > 0) || !(p.rho_cv > 0) || !(p.gamma >= 0))
      throw ConfigError("generate: physical parameters must be positive (gamma >= 0)");
    if (N_cells < 16 || N_steps < 1 || !(dt > 0)) throw ConfigError("generate: bad grid");
    if (p.M_omega < 2 || p.M_omega % 2 || p.G < 1) throw ConfigError("generate: M_omega must be even >= 2 and G >= 1");
  }
};

inline MomentDataset generate(const GenerateConfig& g) {
  g.validate();
  MomentDataset d = run_transport(g.transport());
  d.provenance.config_hash = config_hash(g.to_json());
  return d;
}

// Pipeline configuration.

struct KineticBlock {
  int N_cells = 1024;
  double dt = 1e-12;
  int N_steps = 200;
  int M_omega = 8;
  int G = 32;
};

struct SweepBlock {
  double t_min = 2e-11;     // metric window t > t_min
  bool training_only = false;
  std::string interpolation = "loglinear";  // or "bilinear"
};

struct PipelineConfig {
  static constexpr int kSchemaVersion = 1;
  ProblemParams problem;
  KineticBlock kinetic;
  LearnConfig learning;
  SimulateOptions solver;
  SweepBlock sweep;

  GenerateConfig generate_config() const {
    GenerateConfig g;
    g.problem = problem;
    g.problem.M_omega = kinetic.M_omega;
    g.problem.G = kinetic.G;
    g.N_cells = kinetic.N_cells;
    g.dt = kinetic.dt;
    g.N_steps = kinetic.N_steps;
    return g;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["schema_version"] = kSchemaVersion;
    j["problem"] = {{"gamma", problem.gamma}, {"T_in", problem.T_in}, {"T_o", problem.T_o},
                    {"rho_cv", problem.rho_cv}, {"L", problem.L}};
    j["kinetic"] = {{"N_cells", kinetic.N_cells}, {"dt", kinetic.dt}, {"N_steps", kinetic.N_steps},
                    {"M_omega", kinetic.M_omega}, {"G", kinetic.G}};
    j["learning"] = learning.to_json();
    j["solver"] = solver.to_json();
    j["sweep"] = {{"t_min", sweep.t_min}, {"training_only", sweep.training_only}, {"interpolation", sweep.interpolation}};
    return j;
  }

  std::string hash() const { return config_hash(to_json()); }

  /// Strict parse: unknown blocks or keys are rejected so typos do not silently fall back to defaults.
  static PipelineConfig from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("config: top level must be an object");
    const int ver = j.value("schema_version", kSchemaVersion);
    if (ver != kSchemaVersion) throw ConfigError("config: unsupported schema_version " + std::to_string(ver));
    const PipelineConfig def;
    const nlohmann::json ref = def.to_json();
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (!ref.contains(it.key())) throw ConfigError("config: unknown block '" + it.key() + "'");
      if (it.key() == "schema_version") continue;
      if (!it->is_object()) throw ConfigError("config: block '" + it.key() + "' must be an object");
      for (auto k = it->begin(); k != it->end(); ++k)
        if (!ref[it.key()].contains(k.key())) throw ConfigError("config: unknown key '" + it.key() + "." + k.key() + "'");
    }
    PipelineConfig c;
    try {
      if (j.contains("problem")) {
        const auto& p = j["problem"];
        c.problem.gamma = p.value("gamma", c.problem.gamma);
        c.problem.T_in = p.value("T_in", c.problem.T_in);
        c.problem.T_o = p.value("T_o", c.problem.T_o);
        c.problem.rho_cv = p.value("rho_cv", c.problem.rho_cv);
        c.problem.L = p.value("L", c.problem.L);
      }
      if (j.contains("kinetic")) {
        const auto& k = j["kinetic"];
        c.kinetic.N_cells = k.value("N_cells", c.kinetic.N_cells);
        c.kinetic.dt = k.value("dt", c.kinetic.dt);
        c.kinetic.N_steps = k.value("N_steps", c.kinetic.N_steps);
        c.kinetic.M_omega = k.value("M_omega", c.kinetic.M_omega);
        c.kinetic.G = k.value("G", c.kinetic.G);
      }
      if (j.contains("learning")) c.learning = LearnConfig::from_json(j["learning"]);
      if (j.contains("solver")) {
        const auto& s = j["solver"];
        c.solver.N_cells = s.value("N_cells", c.solver.N_cells);
        c.solver.t_final = s.value("t_final", c.solver.t_final);
        c.solver.bc_window = s.value("bc_window", c.solver.bc_window);
        c.solver.bc_skip_initial = s.value("bc_skip_initial", c.solver.bc_skip_initial);
        c.solver.rtol = s.value("rtol", c.solver.rtol);
        c.solver.atol = s.value("atol", c.solver.atol);
        c.solver.cfl = s.value("cfl", c.solver.cfl);
        c.solver.dirichlet_right = s.value("dirichlet_right", c.solver.dirichlet_right);
      }
      if (j.contains("sweep")) {
        const auto& s = j["sweep"];
        c.sweep.t_min = s.value("t_min", c.sweep.t_min);
        c.sweep.training_only = s.value("training_only", c.sweep.training_only);
        c.sweep.interpolation = s.value("interpolation", c.sweep.interpolation);
      }
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
    c.validate();
    return c;
  }

  void validate() const {
    generate_config().validate();
    learning.validate();
    if (!(solver.rtol > 0) || !(solver.atol > 0) || !(solver.cfl > 0 && solver.cfl <= 1))
      throw ConfigError("config: solver tolerances must be positive and cfl in (0, 1]");
    if (solver.bc_window != 0 && solver.bc_window < 3) throw ConfigError("config: solver.bc_window must be 0 or >= 3");
    if (sweep.interpolation != "loglinear" && sweep.interpolation != "bilinear")
      throw ConfigError("config: sweep.interpolation must be 'loglinear' or 'bilinear'");
  }
};

/// Apply "block.key=value" overrides; the value is parsed as JSON, falling back to a string.
inline nlohmann::json apply_overrides(nlohmann::json j, const std::vector<std::string>& sets) {
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + s + "' is not key=value");
    std::string key = s.substr(0, eq), val = s.substr(eq + 1);
    std::string ptr = "/" + key;
    std::replace(ptr.begin(), ptr.end(), '.', '/');
    nlohmann::json v;
    try {
      v = nlohmann::json::parse(val);
    } catch (...) {
      v = val;
    }
    j[nlohmann::json::json_pointer(ptr)] = v;
  }
  return j;
}

inline PipelineConfig load_config(const std::filesystem::path& p, const std::vector<std::string>& sets = {}) {
  nlohmann::json j = nlohmann::json::object();
  if (!p.empty()) {
    std::ifstream in(p);
    if (!in) throw ConfigError("cannot read config " + p.string());
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config " + p.string() + ": " + e.what());
    }
  }
  return PipelineConfig::from_json(apply_overrides(j, sets));
}

// Run directories.

/// manifest.json in a run directory: producer command, config and hash, inputs and outputs.
inline void write_manifest(const std::filesystem::path& dir, const std::string& command, const nlohmann::json& config,
                           const nlohmann::json& inputs, const nlohmann::json& outputs) {
  std::filesystem::create_directories(dir);
  nlohmann::json m = {{"command", command}, {"config", config}, {"config_hash", config_hash(config)},
                      {"inputs", inputs}, {"outputs", outputs}, {"created", utc_now_iso()}};
  std::ofstream(dir / "manifest.json") << m.dump(2) << '\n';
}

inline nlohmann::json read_json(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw ConfigError("cannot read " + p.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(p.string() + ": " + e.what());
  }
}

inline void write_json(const std::filesystem::path& p, const nlohmann::json& j) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p);
  if (!out) throw ConfigError("cannot write " + p.string());
  out << j.dump(2) << '\n';
}

/// Exit code and machine-readable description of a failure: 2 for invalid input or
/// configuration, 3 for numerical failure (blow-up, QP or kinetic non-convergence), 1 otherwise.
struct ErrorInfo {
  int code = 1;
  nlohmann::json json;
};

inline ErrorInfo classify_error(std::exception_ptr ep) {
  auto make = [](int code, const char* kind, const std::exception& e) {
    return ErrorInfo{code, {{"error", kind}, {"message", e.what()}, {"exit_code", code}}};
  };
  try {
    std::rethrow_exception(ep);
  } catch (const SolverError& e) {
    nlohmann::json j = e.to_json();
    j["exit_code"] = 3;
    return {3, j};
  } catch (const QPError& e) {
    return make(3, "qp", e);
  } catch (const KineticError& e) {
    return make(3, "kinetic", e);
  } catch (const ConfigError& e) {
    return make(2, "config", e);
  } catch (const DatasetError& e) {
    return make(2, "dataset", e);
  } catch (const MetricsError& e) {
    return make(2, "metrics", e);
  } catch (const ClosureError& e) {
    return make(2, "closure", e);
  } catch (const WeakFormError& e) {
    return make(2, "weak_form", e);
  } catch (const std::invalid_argument& e) {
    return make(2, "invalid_argument", e);
  } catch (const std::exception& e) {
    return make(1, "internal", e);
  } catch (...) {
    return {1, {{"error", "internal"}, {"message", "unknown exception"}, {"exit_code", 1}}};
  }
}

/// Directory name of a parameter point inside a sweep reference tree.
inline std::string point_dir_name(const ParamPoint& p) {
  std::ostringstream os;
  os << std::setprecision(4) << "g" << std::log10(p.gamma) << "_T" << std::log10(p.T_in3);
  return os.str();
}

}  // namespace trtc
