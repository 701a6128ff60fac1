// Acceptance run: one PASS/FAIL line per criterion. Kinetic datasets are cached under --workdir.
//
//   trtc_acceptance [--workdir DIR] [--only 1,4,8]
//
// Exit status is 0 only when every selected criterion passes.

#include <CLI11.hpp>

#include <chrono>
#include <functional>
#include <iostream>
#include <random>
#include <set>

#include "trtc/pipeline.hpp"

namespace fs = std::filesystem;
using namespace trtc;

namespace {

using Clock = std::chrono::steady_clock;

double rel(double a, double b) { return std::abs(a - b) / std::abs(b); }

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double x) {
  std::ostringstream os;
  os << std::setprecision(4) << x;
  return os.str();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

// Shared state between criteria, built lazily.
class Context {
 public:
  explicit Context(fs::path dir) : dir_(std::move(dir)) { fs::create_directories(dir_ / "data"); }

  const fs::path& dir() const { return dir_; }

  /// Desk-scale kinetic data: N_cells 256, G 16, 200 steps of 1e-12 s.
  const MomentDataset& kinetic(const ParamPoint& p, int M) {
    const std::string name = point_dir_name(p) + "_M" + std::to_string(M);
    if (auto it = data_.find(name); it != data_.end()) return it->second;
    GenerateConfig g;
    g.N_cells = 256;
    g.problem.gamma = p.gamma;
    g.problem.T_in = std::cbrt(p.T_in3);
    g.problem.M_omega = M;
    g.problem.G = 16;
    const fs::path at = dir_ / "data" / name;
    const std::string want = config_hash(g.to_json());
    MomentDataset d;
    bool cached = false;
    if (fs::exists(at / "meta.json")) {
      try {
        d = read_dataset(at);
        cached = d.provenance.config_hash == want;
      } catch (const std::exception&) {
      }
    }
    if (!cached) {
      const auto t0 = Clock::now();
      std::cerr << "  generating " << name << " ..." << std::flush;
      d = generate(g);
      write_dataset(d, at);
      generate_seconds[name] = seconds_since(t0);
      std::cerr << " " << fmt(seconds_since(t0)) << " s\n";
    }
    return data_.emplace(name, std::move(d)).first->second;
  }

  const MomentDataset& nominal() { return kinetic({1e9, 1e9}, 8); }

  /// Single-dataset learn on the nominal training point (default learning window).
  const LearnResult& nominal_learn() {
    if (!nominal_) {
      const MomentDataset& d = nominal();
      const auto t0 = Clock::now();
      nominal_ = learn({d}, LearnConfig{});
      learn_seconds = seconds_since(t0);
    }
    return *nominal_;
  }

  const SimulationResult& nominal_sim() {
    if (!nominal_sim_) {
      const ClosureModel& m = nominal_learn().models[0];
      const auto t0 = Clock::now();
      nominal_sim_ = simulate_from_data(m, nominal());
      sim_seconds = seconds_since(t0);
    }
    return *nominal_sim_;
  }

  const LearnResult& planted_learn() {
    if (!planted_) {
      const MomentDataset d = generate_planted(PlantedSpec{});
      planted_data_ = d;
      planted_ = learn({d}, planted_window(d));
    }
    return *planted_;
  }
  const MomentDataset& planted_data() {
    planted_learn();
    return *planted_data_;
  }

  /// Group learn over the nine training points.
  const LearnResult& group_learn() {
    if (!group_) {
      std::vector<MomentDataset> ds;
      for (const auto& p : training_points()) ds.push_back(kinetic(p, 8));
      group_ = learn(ds, LearnConfig{});
    }
    return *group_;
  }

  static LearnConfig planted_window(const MomentDataset& d) {
    LearnConfig c;
    c.x0 = 0.0;
    c.x1 = d.x.back() + d.dx();
    c.t0 = 0.0;
    c.t1 = d.t.back();
    return c;
  }

  nlohmann::json record = nlohmann::json::object();
  double learn_seconds = 0.0, sim_seconds = 0.0;  // nominal point
  std::map<std::string, double> generate_seconds;   // datasets generated in this run

 private:
  fs::path dir_;
  std::map<std::string, MomentDataset> data_;
  std::optional<LearnResult> nominal_, planted_, group_;
  std::optional<MomentDataset> planted_data_;
  std::optional<SimulationResult> nominal_sim_;
};

// 1. Library sizes.
Outcome library_counts(Context&) {
  const auto t0 = Clock::now();
  const auto nF = build_F_library(4, 3).size(), nS = build_sigma_library(4, 3).size();
  const double s = seconds_since(t0);
  return {nF == 38 && nS == 62 && s < 1.0,
          "F " + std::to_string(nF) + " (38), sigma " + std::to_string(nS) + " (62), " + fmt(s) + " s"};
}

// 2. Opacity closed forms.
Outcome opacity_forms(Context&) {
  double eP = 0.0, eB = 0.0;
  for (double T : {10.0, 100.0, 1000.0}) {
    eP = std::max(eP, rel(sigma_P_quadrature(T, 1e9), sigma_P(T, 1e9)));
    eB = std::max(eB, rel(planck_integral_quadrature(T), units::ac / (4.0 * std::numbers::pi) * std::pow(T, 4)));
  }
  const double eR = rel(rosseland_integral(), 5.1047e3);
  return {eP < 1e-4 && eR < 1e-4 && eB < 1e-8,
          "sigma_P " + fmt(eP) + " (<1e-4), Rosseland " + fmt(eR) + " (<1e-4), int B " + fmt(eB) + " (<1e-8)"};
}

// 3. kappa_L approximation against quadrature on the 5 x 5 grid.
Outcome kappa_consistency(Context&) {
  double worst = 0.0;
  bool monotone = true;
  for (int b = 0; b < 5; ++b) {
    const double T_in = std::cbrt(std::pow(10.0, 8.0 + 0.5 * b));
    double prev = std::numeric_limits<double>::infinity();
    for (int a = 0; a < 5; ++a) {
      const auto k = kappa_L(1.0, T_in, std::pow(10.0, 8.0 + 0.5 * a), 4.0);
      worst = std::max(worst, rel(k.approx, k.exact));
      monotone &= k.exact < prev;
      prev = k.exact;
    }
  }
  return {worst < 0.05 && monotone,
          "max rel gap " + fmt(worst) + " (<0.05), decreasing in gamma: " + (monotone ? "yes" : "no")};
}

// 4. Planted-model recovery.
Outcome planted_recovery(Context& ctx) {
  const auto t0 = Clock::now();
  const LearnResult& r = ctx.planted_learn();
  const double s = seconds_since(t0);
  const ClosureModel truth = PlantedSpec{}.model();
  bool support = true;
  double worst = 0.0;
  for (Var v : {Var::F, Var::S}) {
    const auto w = r.W[0][static_cast<int>(v)];
    const auto w0 = truth.coefficients(r.lib[v]);
    for (Eigen::Index k = 0; k < w.size(); ++k) {
      support &= (w[k] != 0.0) == (w0[k] != 0.0);
      if (w0[k] != 0.0) worst = std::max(worst, rel(w[k], w0[k]));
    }
  }
  return {support && worst < 1e-3 && s < 300.0,
          std::string("support ") + (support ? "exact" : "wrong") + ", max coefficient rel error " + fmt(worst) +
              " (<1e-3), " + fmt(s) + " s"};
}

// 5. Constraint residuals and the audit on the training datasets.
Outcome constraint_satisfaction(Context& ctx) {
  double eq = 0.0, ineq = -std::numeric_limits<double>::infinity();
  std::size_t violations = 0, systems = 0, datasets = 0;
  auto scan = [&](const LearnResult& r) {
    for (std::size_t p = 0; p < r.systems.size(); ++p) {
      ++datasets;
      violations += r.audits[p].violations.size();
      for (Var v : {Var::F, Var::S}) {
        const int q = static_cast<int>(v);
        const auto cc = check_constraints(r.systems[p].sys[q]->prob, r.W_hat[p][q]);
        eq = std::max(eq, cc.eq_inf / (1.0 + cc.w_inf));
        ineq = std::max(ineq, cc.ineq_excess);
        ++systems;
      }
    }
  };
  const auto t0 = Clock::now();
  scan(ctx.group_learn());
  scan(ctx.nominal_learn());
  scan(ctx.planted_learn());
  ctx.record["group_learn_seconds"] = seconds_since(t0);
  ctx.record["group_selection"] = ctx.group_learn().report["refinement"];
  return {eq < 1e-8 && ineq <= 1e-8 && violations == 0,
          std::to_string(datasets) + " datasets: max |AW|/(1+|W|) " + fmt(eq) + " (<1e-8), max CW-D " + fmt(ineq) +
              " (<=1e-8), audit violations " + std::to_string(violations)};
}

// 6. Uniform black-body states stay put under learned models. Graded in a closed box (reflecting
// walls) at temperatures spanning each model's training data. The same states held by Dirichlet
// walls are also run: there boundary rounding seeds any linear instability of the model, which
// is reported alongside but not graded.
namespace detail {

double blackbody_drift(const ClosureModel& m, const EquilibriumParams& ep, double T, bool dirichlet, std::size_t& steps) {
  const State s0 = equilibrium_state(T, ep);
  SolverConfig cfg;
  cfg.N_cells = 64;
  if (dirichlet) {
    BoundaryTrace tr;
    for (int k = 0; k < 3; ++k) {
      tr.t.push_back(k * 1e-9);
      for (int v = 0; v < kNumVars; ++v) tr.v[v].push_back(s0[v]);
    }
    cfg.bc = {BoundarySpec::dirichlet(tr), BoundarySpec::dirichlet(tr)};
  } else {
    cfg.bc = {BoundarySpec::all(BCKind::mirror), BoundarySpec::all(BCKind::mirror)};
  }
  Fields u;
  for (int v = 0; v < kNumVars; ++v) u[v].assign(cfg.N_cells, s0[v]);
  const double dt = cfg.cfl * cfg.dx() / m.max_wave_speed(s0);
  const auto r = simulate(m, cfg, u, 0.0, 200 * dt);
  steps = r.stats.accepted;
  double worst = 0.0;
  for (std::size_t i = 0; i < cfg.N_cells; ++i) {
    for (int v : {0, 2, 3}) worst = std::max(worst, std::abs(r.data.at(Var(v), i, 1) / s0[v] - 1.0));
    worst = std::max(worst, std::abs(r.data.at(Var::F, i, 1)) / (units::c * s0[0]));
  }
  return worst;
}

}  // namespace detail

Outcome blackbody_preservation(Context& ctx) {
  struct Item {
    std::string name;
    const ClosureModel* m;
    const DatasetSystems* ds;
  };
  std::vector<Item> items = {{"planted", &ctx.planted_learn().models[0], &ctx.planted_learn().systems[0]},
                             {"nominal", &ctx.nominal_learn().models[0], &ctx.nominal_learn().systems[0]}};
  const auto& g = ctx.group_learn();
  const auto pts = training_points();
  for (std::size_t p = 0; p < g.models.size(); ++p) items.push_back({"group " + point_dir_name(pts[p]), &g.models[p], &g.systems[p]});
  double worst = 0.0;
  std::size_t min_steps = std::numeric_limits<std::size_t>::max(), probes_ok = 0, probes = 0;
  nlohmann::json rec = nlohmann::json::array();
  for (const auto& it : items) {
    const auto& Tf = it.ds->train.fields[2];
    const double lo = *std::min_element(Tf.begin(), Tf.end()), hi = *std::max_element(Tf.begin(), Tf.end());
    for (double T : {lo, std::sqrt(lo * hi), 0.5 * hi, hi}) {
      nlohmann::json e = {{"model", it.name}, {"T", T}};
      std::size_t steps = 0;
      try {
        const double w = detail::blackbody_drift(*it.m, it.ds->ep, T, false, steps);
        worst = std::max(worst, w);
        min_steps = std::min(min_steps, steps);
        e["closed_box_drift"] = w;
      } catch (const SolverError& x) {
        return {false, it.name + " at T = " + fmt(T) + ": " + x.what()};
      }
      ++probes;
      try {
        const double w = detail::blackbody_drift(*it.m, it.ds->ep, T, true, steps);
        e["dirichlet_drift"] = w;
        probes_ok += w < 1e-6;
      } catch (const SolverError& x) {
        e["dirichlet_error"] = x.what();
      }
      rec.push_back(e);
    }
  }
  ctx.record["blackbody"] = rec;
  return {worst < 1e-6 && min_steps >= 200,
          std::to_string(items.size()) + " models x 4 temperatures, closed box: max relative drift " + fmt(worst) +
              " (<1e-6), at least " + std::to_string(min_steps) + " steps; Dirichlet walls: " +
              std::to_string(probes_ok) + "/" + std::to_string(probes) + " within 1e-6 (not graded)"};
}

// 7. Discrete energy balance and mirror equivalence of the forward solver under a learned model.
Outcome conservation_symmetry(Context& ctx) {
  const double cons = ctx.nominal_sim().stats.max_conservation_defect;
  const ClosureModel& m = ctx.nominal_learn().models[0];
  const MomentDataset& d = ctx.nominal();
  SolverConfig cfg;
  cfg.N_cells = d.nx() / 2;
  cfg.x0 = d.x.front() - 0.5 * d.dx();
  cfg.x1 = d.x.back() + 0.5 * d.dx();
  cfg.bc[0] = BoundarySpec::dirichlet(boundary_trace_from(d, Side::left, 0, 1));
  cfg.bc[1] = BoundarySpec::all(BCKind::copy);
  const std::size_t j0 = 40;
  const double t0 = d.t[j0], t1 = d.t[j0 + 40];
  cfg.output_times = {t0 + 1e-11, t1};
  const Fields u = initial_state_from(d, j0, cfg);
  const auto a = simulate(m, cfg, u, t0, t1);
  SolverConfig cm = cfg;
  std::swap(cm.bc[0], cm.bc[1]);
  for (auto& f : cm.bc[1].trace.v[1]) f = -f;
  const auto b = simulate(m, cm, mirror_fields(u), t0, t1);
  const MomentDataset bm = mirror_dataset(b.data);
  double worst = 0.0;
  for (int v = 0; v < kNumVars; ++v) {
    double scale = 0.0, diff = 0.0;
    for (std::size_t k = 0; k < a.data.fields[v].size(); ++k) {
      scale = std::max(scale, std::abs(a.data.fields[v][k]));
      diff = std::max(diff, std::abs(a.data.fields[v][k] - bm.fields[v][k]));
    }
    worst = std::max(worst, diff / scale);
  }
  const double cons_mirror = std::max(a.stats.max_conservation_defect, b.stats.max_conservation_defect);
  return {std::max(cons, cons_mirror) < 1e-8 && worst < 1e-10,
          "energy balance per step " + fmt(std::max(cons, cons_mirror)) + " (<1e-8), mirrored run " + fmt(worst) +
              " (<1e-10)"};
}

// 8. Learn on [0,2] x [0,1e-10], simulate on [0,4] x [0,2e-10].
Outcome end_to_end(Context& ctx) {
  const auto& d = ctx.nominal();
  const auto& sim = ctx.nominal_sim();
  // Kinetic generation (when not cached) plus learning and the forward run.
  const auto g = ctx.generate_seconds.find(point_dir_name({1e9, 1e9}) + "_M8");
  const double s = (g == ctx.generate_seconds.end() ? 0.0 : g->second) + ctx.learn_seconds + ctx.sim_seconds;
  MetricOptions o;
  o.t_min = 2e-11;
  const MetricReport m = metrics(sim.data, reference_on(d, sim.data), o);
  ctx.record["end_to_end"] = m.to_json();
  ctx.record["end_to_end"]["model"] = ctx.nominal_learn().models[0].describe();
  std::ofstream(ctx.dir() / "end_to_end_errors.csv") << m.to_csv();
  const double eT = m[Var::T].err_L1, eI = m[Var::e].max_Int_j;
  return {eT <= 0.15 && eI <= 0.05 && s < 1800.0,
          "err_L1(T) " + fmt(eT) + " (<=0.15), max err_Int_j(e) " + fmt(eI) + " (<=0.05), learn " + fmt(ctx.learn_seconds) + " s + simulate " + fmt(ctx.sim_seconds) + " s"};
}

// 9. The M = 8 closure against M = 48 data, relative to the M = 8 data's own discrepancy.
Outcome ray_effects(Context& ctx) {
  const auto& sim = ctx.nominal_sim();
  const MomentDataset r48 = reference_on(ctx.kinetic({1e9, 1e9}, 48), sim.data);
  const MomentDataset r8 = reference_on(ctx.nominal(), sim.data);
  MetricOptions o;
  o.t_min = 2e-11;
  const MetricReport mc = metrics(sim.data, r48, o), md = metrics(r8, r48, o);
  double worst = 0.0;
  for (std::size_t j = 0; j < sim.data.nt(); ++j)
    if (sim.data.t[j] > o.t_min && mc[Var::e].defined[j] && md[Var::e].defined[j])
      worst = std::max(worst, mc[Var::e].err_L1_j[j] / md[Var::e].err_L1_j[j]);
  ctx.record["ray_effects"] = {{"closure_vs_48", mc.to_json()}, {"data8_vs_48", md.to_json()}, {"worst_ratio", worst}};
  return {worst <= 1.5, "worst per-slice ratio err_L1_j(e) closure/data " + fmt(worst) + " (<=1.5); aggregate " +
                            fmt(mc[Var::e].err_L1) + " vs " + fmt(md[Var::e].err_L1)};
}

// 10. Published coefficient laws: refit round trip and a forward smoke run.
Outcome published_round_trip(Context& ctx) {
  const ParametrizedClosure pc = published_closure(true);
  std::vector<std::pair<ParamPoint, ClosureModel>> ens;
  const EquilibriumParams ep;
  for (const auto& p : training_points()) ens.push_back({p, instantiate_at(pc, p.gamma, p.T_in3, ep)});
  const ParametrizedClosure fit = fit_loglinear(ens);
  double worst = 0.0;
  for (const auto& t : pc.terms) {
    const auto it = std::find_if(fit.terms.begin(), fit.terms.end(), [&](const LogLinearTerm& f) { return f.term == t.term; });
    if (it == fit.terms.end()) return {false, "term " + t.term.name() + " lost in the refit"};
    worst = std::max({worst, rel(it->w0, t.w0), rel(it->eta_T, t.eta_T), rel(it->eta_g, t.eta_g)});
  }
  const MomentDataset& d = ctx.nominal();
  const ClosureModel m = instantiate_at(published_closure(), 1e9, 1e9, EquilibriumParams::from(d.params));
  std::string smoke;
  bool ran = false;
  try {
    const auto s = simulate_from_data(m, d);
    ran = s.data.t.back() >= 2e-10 * (1 - 1e-12);
    MetricOptions o;
    o.t_min = 2e-11;
    const auto mt = metrics(s.data, reference_on(d, s.data), o);
    smoke = "ran to " + fmt(s.data.t.back()) + " s (err_L1(T) " + fmt(mt[Var::T].err_L1) + ")";
  } catch (const SolverError& e) {
    smoke = std::string("blew up: ") + e.what();
  }
  return {worst < 1e-6 && ran, "refit max rel " + fmt(worst) + " (<1e-6); smoke " + smoke};
}

// 11. Degenerate MSTLS behaviour on constructed problems.
Outcome mstls_degenerate(Context&) {
  std::mt19937 rng(7);
  std::normal_distribution<double> N(0.0, 1.0);
  RegressionProblem p;
  p.G.resize(200, 20);
  for (Eigen::Index j = 0; j < 20; ++j)
    for (Eigen::Index i = 0; i < 200; ++i) p.G(i, j) = N(rng);
  Eigen::VectorXd w = Eigen::VectorXd::Zero(20);
  w[2] = 1.5, w[7] = -0.8, w[13] = 2.2;
  p.b = p.G * w;
  for (Eigen::Index i = 0; i < 200; ++i) p.b[i] += 1e-2 * N(rng);
  p.A.resize(0, 20);
  p.C.resize(0, 20);
  // With every column at |b|, lambda >= 1 forces L >= U: only forced terms survive.
  for (Eigen::Index k = 0; k < 20; ++k) p.G.col(k) *= p.b.norm() / p.G.col(k).norm();
  p.forced = {4, 9};
  const auto big = mstls_step(p, 3.0);
  const bool forced_only = support_size(big.support) == 2 && big.support[4] && big.support[9];
  const auto tiny = mstls_step(p, 1e-12);
  const bool full = support_size(tiny.support) == 20;
  // Two exact minima at indices 1 and 3: the smaller lambda wins.
  const bool tie = smallest_minimizer({3.0, 1.0, 2.0, 1.0, 4.0}) == 1 && smallest_minimizer({2.0, 1.0 + 1e-14, 1.0}) == 1;
  RegressionProblem q;
  q.G = p.G.leftCols(1);
  q.b = 2.0 * q.G.col(0);
  q.A.resize(0, 1);
  q.C.resize(0, 1);
  const auto s = select_lambda(q, {0.01, 0.1, 0.3});
  const bool tie_path = s.index == 0 && s.path[0].loss == s.path[2].loss;
  return {forced_only && full && tie && tie_path,
          std::string("large lambda forced-only: ") + (forced_only ? "yes" : "no") + ", tiny lambda full support: " +
              (full ? "yes" : "no") + ", tie-break to smallest lambda: " + (tie && tie_path ? "yes" : "no")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::string workdir = "acceptance_run";
  std::vector<int> only;
  app.add_option("--workdir", workdir, "cache and report directory");
  app.add_option("--only", only, "run only these criteria")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<std::string, std::function<Outcome(Context&)>>> criteria = {
      {"library counts", library_counts},
      {"opacity closed forms", opacity_forms},
      {"kappa_L consistency", kappa_consistency},
      {"planted-model recovery", planted_recovery},
      {"constraint satisfaction", constraint_satisfaction},
      {"black-body preservation", blackbody_preservation},
      {"conservation and symmetry", conservation_symmetry},
      {"end-to-end at desk scale", end_to_end},
      {"ray-effect robustness", ray_effects},
      {"coefficient table round trip", published_round_trip},
      {"MSTLS degenerate behaviour", mstls_degenerate},
  };
  const std::set<int> sel(only.begin(), only.end());
  Context ctx(workdir);
  nlohmann::json summary = nlohmann::json::array();
  bool all = true;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int id = static_cast<int>(k) + 1;
    if (!sel.empty() && !sel.count(id)) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = criteria[k].second(ctx);
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double s = seconds_since(t0);
    all &= o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << std::setw(2) << id << "  " << criteria[k].first << ": " << o.detail
              << "  [" << fmt(s) << " s]" << std::endl;
    summary.push_back({{"criterion", id}, {"name", criteria[k].first}, {"pass", o.pass}, {"detail", o.detail}, {"seconds", s}});
  }
  ctx.record["criteria"] = summary;
  write_json(fs::path(workdir) / "acceptance.json", ctx.record);
  return all ? 0 : 1;
}
