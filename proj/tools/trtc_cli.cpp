// trtc: generate kinetic data, learn closures, run and evaluate them.
//
//   trtc generate    --config c.json [--set k=v]... --out DIR [--planted]
//   trtc learn       --config c.json --data DIR... --out DIR
//   trtc simulate    --config c.json --model M.json --data DIR --out DIR
//   trtc evaluate    --candidate DIR --reference DIR --out DIR [--resample]
//   trtc sweep       --config c.json --closure P.json --references ROOT --out DIR
//   trtc extrapolate --config c.json --models M.json|DIR... --out DIR [--at gamma,T_in3]
//
// Exit codes: 0 success, 2 invalid input, 3 numerical failure; errors go to stderr as JSON.

#include <CLI11.hpp>

#include <chrono>
#include <iostream>

#include "trtc/pipeline.hpp"

namespace fs = std::filesystem;
using namespace trtc;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::string out;

  PipelineConfig load() const { return load_config(config, sets); }
};

void add_common(CLI::App* app, Common& c, bool needs_config = true) {
  if (needs_config) {
    app->add_option("--config", c.config, "JSON config file (defaults apply when omitted)");
    app->add_option("--set", c.sets, "override a config key, e.g. --set problem.gamma=1e8");
  }
  app->add_option("--out", c.out, "run directory")->required();
}

void log(const std::string& s) { std::cerr << "[trtc] " << s << '\n'; }

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

ClosureModel read_model(const fs::path& p) { return ClosureModel::from_json(read_json(p)); }

// Model files named on the command line; directories contribute their model*.json files.
std::vector<fs::path> expand_models(const std::vector<std::string>& args) {
  std::vector<fs::path> r;
  for (const auto& a : args) {
    if (fs::is_directory(a)) {
      std::vector<fs::path> in;
      for (const auto& e : fs::directory_iterator(a)) {
        const auto n = e.path().filename().string();
        if (n.rfind("model", 0) == 0 && e.path().extension() == ".json") in.push_back(e.path());
      }
      std::sort(in.begin(), in.end());
      r.insert(r.end(), in.begin(), in.end());
    } else {
      r.emplace_back(a);
    }
  }
  if (r.empty()) throw ConfigError("no model files given");
  return r;
}

ParamPoint parse_point(const std::string& s) {
  const auto k = s.find(',');
  if (k == std::string::npos) throw ConfigError("--at expects gamma,T_in3");
  try {
    return {std::stod(s.substr(0, k)), std::stod(s.substr(k + 1))};
  } catch (const std::exception&) {
    throw ConfigError("--at: cannot parse '" + s + "'");
  }
}

int cmd_generate(const Common& c, bool planted) {
  const auto t0 = std::chrono::steady_clock::now();
  const PipelineConfig cfg = c.load();
  MomentDataset d;
  if (planted) {
    d = generate_planted(PlantedSpec{});
    d.provenance.config_hash = cfg.hash();
  } else {
    d = generate(cfg.generate_config());
  }
  write_dataset(d, fs::path(c.out) / "data");
  write_manifest(c.out, planted ? "generate --planted" : "generate", cfg.to_json(), nlohmann::json::object(),
                 {{"dataset", "data"}, {"content_hash", d.content_hash()}, {"seconds", seconds_since(t0)}});
  log("wrote " + (fs::path(c.out) / "data").string());
  return 0;
}

int cmd_learn(const Common& c, const std::vector<std::string>& data_dirs) {
  const auto t0 = std::chrono::steady_clock::now();
  PipelineConfig cfg = c.load();
  cfg.learning.workers = env_workers();
  std::vector<MomentDataset> data;
  nlohmann::json inputs = nlohmann::json::array();
  for (const auto& p : data_dirs) {
    data.push_back(read_dataset(p));
    inputs.push_back({{"path", p}, {"content_hash", data.back().content_hash()}});
  }
  LearnResult r = learn(data, cfg.learning);
  const fs::path out = c.out;
  nlohmann::json outputs = {{"report", "report.json"}, {"models", nlohmann::json::array()}};
  for (std::size_t k = 0; k < r.models.size(); ++k) {
    ClosureModel& m = r.models[k];
    m.provenance["config_hash"] = cfg.hash();
    m.provenance["dataset"] = data_dirs[k];
    const std::string name = "model_" + std::to_string(k) + ".json";
    write_json(out / name, m.to_json());
    outputs["models"].push_back(name);
    std::cout << "# " << data_dirs[k] << '\n' << m.describe() << '\n';
  }
  r.report["seconds"] = seconds_since(t0);
  write_json(out / "report.json", r.report);
  write_manifest(out, "learn", cfg.to_json(), inputs, outputs);
  for (std::size_t k = 0; k < r.audits.size(); ++k)
    if (!r.audits[k].ok()) log("warning: audit reports violations for dataset " + std::to_string(k));
  return 0;
}

int cmd_simulate(const Common& c, const std::string& model_path, const std::string& data_dir) {
  const auto t0 = std::chrono::steady_clock::now();
  const PipelineConfig cfg = c.load();
  const ClosureModel m = read_model(model_path);
  const MomentDataset d = read_dataset(data_dir);
  SimulationResult s = simulate_from_data(m, d, cfg.solver);
  s.data.provenance.generator = "trtc.simulate";
  s.data.provenance.config_hash = cfg.hash();
  write_dataset(s.data, fs::path(c.out) / "data");
  write_json(fs::path(c.out) / "stats.json", s.stats.to_json());
  write_manifest(c.out, "simulate", cfg.to_json(),
                 {{"model", model_path}, {"data", data_dir}, {"data_hash", d.content_hash()}},
                 {{"dataset", "data"}, {"stats", "stats.json"}, {"seconds", seconds_since(t0)}});
  return 0;
}

int cmd_evaluate(const Common& c, const std::string& cand_dir, const std::string& ref_dir, bool resample,
                 double t_min) {
  const MomentDataset cand = read_dataset(cand_dir);
  MomentDataset ref = read_dataset(ref_dir);
  const bool same = same_grid(cand.x, ref.x) && same_grid(cand.t, ref.t);
  if (!same) {
    if (!resample) throw MetricsError("evaluate: grids differ; pass --resample to interpolate the reference");
    ref = reference_on(ref, cand);
  }
  MetricOptions o;
  if (std::isfinite(t_min)) o.t_min = t_min;
  MetricReport r = metrics(cand, ref, o);
  r.tag = {{"candidate", cand_dir}, {"reference", ref_dir}, {"resampled", !same}};
  const fs::path out = c.out;
  write_json(out / "metrics.json", r.to_json());
  fs::create_directories(out);
  std::ofstream(out / "metrics.csv") << r.to_csv();
  const nlohmann::json conf = {{"t_min", std::isfinite(t_min) ? nlohmann::json(t_min) : nlohmann::json(nullptr)},
                               {"resample", resample}};
  write_manifest(out, "evaluate", conf, {{"candidate", cand_dir}, {"reference", ref_dir}},
                 {{"metrics", "metrics.json"}, {"series", "metrics.csv"}});
  for (int v = 0; v < kNumVars; ++v)
    std::cout << kVarNames[v] << ": err_L1 " << r.var[v].err_L1 << "  max err_Int_j " << r.var[v].max_Int_j << '\n';
  return 0;
}

int cmd_sweep(const Common& c, const std::string& closure_path, const std::vector<std::string>& ensemble,
              const std::string& refs_root) {
  const PipelineConfig cfg = c.load();
  const bool bilinear = cfg.sweep.interpolation == "bilinear";
  std::optional<ParametrizedClosure> pc;
  std::vector<std::pair<ParamPoint, ClosureModel>> ens;
  if (bilinear) {
    for (const auto& p : expand_models(ensemble)) {
      ClosureModel m = read_model(p);
      if (!m.has_params) throw ConfigError(p.string() + ": model has no (gamma, T_in3) tag");
      ens.push_back({{m.gamma, m.T_in3}, m});
    }
  } else {
    if (closure_path.empty()) throw ConfigError("sweep: --closure is required for log-linear interpolation");
    pc = ParametrizedClosure::from_json(read_json(closure_path));
  }
  auto dir_of = [&](const ParamPoint& p) { return fs::path(refs_root) / point_dir_name(p) / "data"; };
  const ReferenceLookup refs = [&](const ParamPoint& p) -> std::optional<MomentDataset> {
    const fs::path dir = dir_of(p);
    if (!fs::exists(dir / "meta.json")) return std::nullopt;
    const MomentDataset d = read_dataset(dir);
    // Compare on the grid the forward solver produces.
    const std::size_t N = cfg.solver.N_cells ? cfg.solver.N_cells : d.nx() / 2;
    const double h = d.dx(), a = d.x.front() - 0.5 * h, b = d.x.back() + 0.5 * h;
    std::vector<double> x(N);
    for (std::size_t i = 0; i < N; ++i) x[i] = a + (b - a) * (i + 0.5) / N;
    return resample_linear(d, x, d.t);
  };
  const SweepRunner run = [&](const ParamPoint& p, const MomentDataset&) {
    const MomentDataset d = read_dataset(dir_of(p));
    const EquilibriumParams ep = EquilibriumParams::from(d.params);
    const ClosureModel m = bilinear ? interpolate_log_bilinear(ens, p.gamma, p.T_in3) : instantiate_at(*pc, p.gamma, p.T_in3, ep);
    return simulate_from_data(m, d, cfg.solver).data;
  };
  std::vector<ParamPoint> grid = parameter_grid();
  if (cfg.sweep.training_only) grid = training_points();
  MetricOptions o;
  o.t_min = cfg.sweep.t_min;
  const SweepReport rep = sweep_report(grid, refs, run, cfg.problem.T_o, cfg.problem.L, o, env_workers());
  const fs::path out = c.out;
  write_json(out / "sweep.json", rep.to_json());
  std::ofstream(out / "sweep.csv") << rep.to_csv();
  write_manifest(out, "sweep", cfg.to_json(), {{"closure", closure_path}, {"ensemble", ensemble}, {"references", refs_root}},
                 {{"table", "sweep.csv"}, {"json", "sweep.json"}});
  std::cout << rep.to_csv();
  return 0;
}

int cmd_extrapolate(const Common& c, const std::vector<std::string>& models, bool published, const std::string& at) {
  const PipelineConfig cfg = c.load();
  ParametrizedClosure pc;
  nlohmann::json inputs = nlohmann::json::array();
  if (published) {
    pc = published_closure();
    inputs.push_back("published");
  } else {
    std::vector<std::pair<ParamPoint, ClosureModel>> ens;
    for (const auto& p : expand_models(models)) {
      ClosureModel m = read_model(p);
      if (!m.has_params) throw ConfigError(p.string() + ": model has no (gamma, T_in3) tag");
      ens.push_back({{m.gamma, m.T_in3}, m});
      inputs.push_back(p.string());
    }
    pc = fit_loglinear(ens);
  }
  pc.provenance["config_hash"] = cfg.hash();
  const fs::path out = c.out;
  write_json(out / "parametrized.json", pc.to_json());
  nlohmann::json outputs = {{"parametrized", "parametrized.json"}};
  if (!at.empty()) {
    const ParamPoint p = parse_point(at);
    ProblemParams pp = cfg.problem;
    pp.gamma = p.gamma;
    InstantiateInfo info;
    ClosureModel m = instantiate_at(pc, p.gamma, p.T_in3, EquilibriumParams::from(pp), &info, cfg.problem.T_o, cfg.problem.L);
    m.provenance["config_hash"] = cfg.hash();
    m.provenance["kappa_L"] = info.kappa_L;
    write_json(out / "model.json", m.to_json());
    outputs["model"] = "model.json";
    outputs["kappa_L"] = info.kappa_L;
    if (info.kappa_warning) log("warning: " + info.message);
  }
  write_manifest(out, "extrapolate", cfg.to_json(), inputs, outputs);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learned moment closures for thermal radiative transfer"};
  app.require_subcommand(1);

  Common c;
  bool planted = false, resample = false, published = false;
  std::vector<std::string> data, models;
  std::string model, cand, ref, closure, refs_root, at;
  double t_min = std::numeric_limits<double>::quiet_NaN();

  auto* gen = app.add_subcommand("generate", "run the kinetic reference at one parameter point");
  add_common(gen, c);
  gen->add_flag("--planted", planted, "write data from the planted P1-type model instead");

  auto* lrn = app.add_subcommand("learn", "learn closure models from one or more datasets");
  add_common(lrn, c);
  lrn->add_option("--data", data, "dataset directories (several: group sparsity)")->required();

  auto* sim = app.add_subcommand("simulate", "run a closure from a dataset's initial and boundary data");
  add_common(sim, c);
  sim->add_option("--model", model, "closure model JSON")->required();
  sim->add_option("--data", data, "dataset supplying the initial and boundary data")->required()->expected(1);

  auto* ev = app.add_subcommand("evaluate", "relative L1 and integral errors of a candidate dataset");
  add_common(ev, c, false);
  ev->add_option("--candidate", cand)->required();
  ev->add_option("--reference", ref)->required();
  ev->add_flag("--resample", resample, "interpolate the reference onto the candidate grid");
  ev->add_option("--t-min", t_min, "aggregate over t > t_min");

  auto* sw = app.add_subcommand("sweep", "errors of a parametrized closure over the parameter grid");
  add_common(sw, c);
  sw->add_option("--closure", closure, "parametrized closure JSON (log-linear)");
  sw->add_option("--models", models, "ensemble models for bilinear interpolation");
  sw->add_option("--references", refs_root, "directory holding <point>/data reference datasets")->required();

  auto* ex = app.add_subcommand("extrapolate", "fit log-linear coefficient laws over an ensemble");
  add_common(ex, c);
  ex->add_option("--models", models, "model JSON files or learn run directories");
  ex->add_flag("--published", published, "use the published coefficient table");
  ex->add_option("--at", at, "also instantiate at gamma,T_in3");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int r = app.exit(e);
    return r == 0 ? 0 : 2;
  }

  try {
    if (*gen) return cmd_generate(c, planted);
    if (*lrn) return cmd_learn(c, data);
    if (*sim) return cmd_simulate(c, model, data.front());
    if (*ev) return cmd_evaluate(c, cand, ref, resample, t_min);
    if (*sw) return cmd_sweep(c, closure, models, refs_root);
    if (*ex) {
      if (!published && models.empty()) throw ConfigError("extrapolate: give --models or --published");
      return cmd_extrapolate(c, models, published, at);
    }
  } catch (...) {
    const ErrorInfo e = classify_error(std::current_exception());
    std::cerr << e.json.dump() << '\n';
    return e.code;
  }
  return 0;
}
