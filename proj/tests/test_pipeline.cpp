#include <gtest/gtest.h>

#include "trtc/pipeline.hpp"

using namespace trtc;

namespace {

struct Recovery {
  bool support = true;
  double max_rel = 0.0;
};

Recovery compare(const TermLibrary& lib, const Eigen::VectorXd& truth, const Eigen::VectorXd& w) {
  Recovery r;
  for (std::size_t k = 0; k < lib.size(); ++k) {
    const auto i = static_cast<Eigen::Index>(k);
    r.support &= (truth[i] != 0.0) == (w[i] != 0.0);
    if (truth[i] != 0.0) r.max_rel = std::max(r.max_rel, std::abs(w[i] - truth[i]) / std::abs(truth[i]));
  }
  return r;
}

double min_excess_over_equilibrium(const MomentDataset& d, const EquilibriumParams& ep) {
  double m = 1e300;
  for (std::size_t p = 0; p < d.fields[0].size(); ++p) m = std::min(m, d.fields[3][p] / (ep.beta() * d.fields[2][p]) - 1.0);
  return m;
}

LearnConfig full_window(const MomentDataset& d) {
  LearnConfig c;
  c.x0 = 0.0;
  c.x1 = d.x.back() + d.dx();
  c.t0 = 0.0;
  c.t1 = d.t.back();
  return c;
}

}  // namespace

TEST(Config, DefaultsRoundTripAndHash) {
  const PipelineConfig c;
  EXPECT_EQ(c.kinetic.N_cells, 1024);
  EXPECT_EQ(c.kinetic.G, 32);
  EXPECT_EQ(c.learning.tau, 1e-4);
  EXPECT_EQ(c.learning.tau_hat, 6.0);
  const auto c2 = PipelineConfig::from_json(c.to_json());
  EXPECT_EQ(c2.hash(), c.hash());
  const auto c3 = PipelineConfig::from_json(apply_overrides(c.to_json(), {"problem.gamma=1e8", "kinetic.M_omega=48"}));
  EXPECT_EQ(c3.problem.gamma, 1e8);
  EXPECT_EQ(c3.kinetic.M_omega, 48);
  EXPECT_NE(c3.hash(), c.hash());
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(PipelineConfig::from_json({{"problme", nlohmann::json::object()}}), ConfigError);
  EXPECT_THROW(PipelineConfig::from_json({{"problem", {{"gama", 1e9}}}}), ConfigError);
  EXPECT_THROW(PipelineConfig::from_json({{"problem", {{"T_in", -1.0}}}}), ConfigError);
  EXPECT_THROW(PipelineConfig::from_json({{"kinetic", {{"M_omega", 7}}}}), ConfigError);
  EXPECT_THROW(PipelineConfig::from_json({{"learning", {{"tau", 2.0}}}}), ConfigError);
  EXPECT_THROW(PipelineConfig::from_json({{"schema_version", 99}}), ConfigError);
  EXPECT_THROW(PipelineConfig::from_json({{"problem", {{"gamma", "big"}}}}), ConfigError);
  EXPECT_THROW(apply_overrides({}, {"no_equals_sign"}), ConfigError);
}

TEST(Config, LearnConfigRoundTrip) {
  LearnConfig c;
  c.caps_S = {3, 2};
  c.lambda_n = 7;
  const auto c2 = LearnConfig::from_json(c.to_json());
  EXPECT_EQ(c2.to_json(), c.to_json());
}

TEST(Planted, DataStaysAboveEquilibrium) {
  const PlantedSpec s;
  const MomentDataset d = generate_planted(s);
  EXPECT_EQ(d.nx(), s.N_x);
  EXPECT_EQ(d.nt(), s.N_t);
  EXPECT_GT(min_excess_over_equilibrium(d, s.ep()), 0.0);
  // Reflecting walls conserve the total energy.
  double e0 = 0.0, e1 = 0.0;
  for (std::size_t i = 0; i < d.nx(); ++i) e0 += d.at(Var::e, i, 0), e1 += d.at(Var::e, i, d.nt() - 1);
  EXPECT_NEAR(e1 / e0, 1.0, 1e-10);
}

TEST(Planted, ExactSupportAndCoefficients) {
  const PlantedSpec s;
  const MomentDataset d = generate_planted(s);
  const LearnResult r = learn({d}, full_window(d));
  const ClosureModel truth = s.model();
  for (Var v : {Var::F, Var::S}) {
    const auto rec = compare(r.lib[v], truth.coefficients(r.lib[v]), r.W[0][static_cast<int>(v)]);
    EXPECT_TRUE(rec.support) << kVarNames[static_cast<int>(v)];
    EXPECT_LT(rec.max_rel, 1e-3) << kVarNames[static_cast<int>(v)];
  }
  EXPECT_TRUE(r.audits[0].ok());
  for (Var v : {Var::F, Var::S}) EXPECT_TRUE(r.selection[static_cast<int>(v)]->w[0].kkt.ok);
  // The base blocks are analytic.
  EXPECT_EQ(r.models[0][Var::e].size(), 1u);
  EXPECT_EQ(r.models[0][Var::T].size(), 2u);
}

TEST(Planted, GroupLearningSharesSupportWithOwnCoefficients) {
  PlantedSpec a, b;
  b.sigma = 0.8;
  b.s_flux = -0.3;
  const MomentDataset da = generate_planted(a), db = generate_planted(b);
  const LearnResult r = learn({da, db}, full_window(da));
  ASSERT_EQ(r.models.size(), 2u);
  for (Var v : {Var::F, Var::S}) {
    const int q = static_cast<int>(v);
    for (Eigen::Index k = 0; k < r.W[0][q].size(); ++k) EXPECT_EQ(r.W[0][q][k] != 0.0, r.W[1][q][k] != 0.0);
    const auto ra = compare(r.lib[v], a.model().coefficients(r.lib[v]), r.W[0][q]);
    const auto rb = compare(r.lib[v], b.model().coefficients(r.lib[v]), r.W[1][q]);
    EXPECT_TRUE(ra.support && rb.support);
    EXPECT_LT(ra.max_rel, 1e-3);
    EXPECT_LT(rb.max_rel, 1e-3);
  }
}

TEST(Refinement, AuditViolationsBecomeConstraintRows) {
  // Here the data dips below S = beta T, where the planted source itself breaks the S-stability
  // inequality; refinement must still return a model that passes the audit.
  PlantedSpec s;
  s.delta = 0.5;
  const MomentDataset d = generate_planted(s);
  ASSERT_LT(min_excess_over_equilibrium(d, s.ep()), 0.0);
  const LearnResult r = learn({d}, full_window(d));
  const auto& rounds = r.report["refinement"];
  ASSERT_GE(rounds.size(), 2u);
  EXPECT_GT(rounds[0]["violations"].get<int>(), 0);
  EXPECT_GT(rounds[0]["rows_added"].get<int>(), 0);
  EXPECT_EQ(rounds.back()["violations"].get<int>(), 0);
  EXPECT_TRUE(r.audits[0].ok());
  const auto& ds = r.systems[0];
  for (Var v : {Var::F, Var::S}) {
    const auto& p = ds.sys[static_cast<int>(v)]->prob;
    const auto cc = check_constraints(p, r.W_hat[0][static_cast<int>(v)]);
    EXPECT_LT(cc.eq_inf, 1e-8 * (1.0 + cc.w_inf));
    EXPECT_LE(cc.ineq_excess, 1e-8);
  }
}

TEST(Learn, RejectsEmptyInputAndBadWindow) {
  EXPECT_THROW(learn({}, LearnConfig{}), ConfigError);
  LearnConfig c;
  c.t1 = c.t0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Learn, HatDatasetIsUnitScaled) {
  const PlantedSpec s;
  const MomentDataset d = generate_planted(s);
  const MomentDataset h = to_hat(d, Scaling::from_data(d));
  for (int v = 0; v < kNumVars; ++v) {
    double m = 0.0;
    for (double x : h.fields[v]) m = std::max(m, std::abs(x));
    EXPECT_NEAR(m, 1.0, 1e-15);
  }
  EXPECT_NEAR(h.x.back() - h.x.front(), 1.0, 1e-12);
  EXPECT_NEAR(h.t.back() - h.t.front(), 1.0, 1e-12);
}

TEST(Simulate, FromDataUsesHalfResolutionAndDataTimes) {
  PlantedSpec s;
  s.N_x = 64;
  s.N_t = 21;
  const MomentDataset d = generate_planted(s);
  SimulateOptions o;
  o.dirichlet_right = true;
  const auto r = simulate_from_data(s.model(), d, o);
  EXPECT_EQ(r.data.nx(), 32u);
  EXPECT_EQ(r.data.t, d.t);
  EXPECT_EQ(r.data.provenance.parent_hash, d.content_hash());
  EXPECT_NEAR(r.data.x.front() - 0.5 * r.data.dx(), 0.0, 1e-12);
  EXPECT_NEAR(r.data.x.back() + 0.5 * r.data.dx(), s.L, 1e-12);
  const MomentDataset ref = reference_on(d, r.data);
  const auto m = metrics(r.data, ref);
  // Same model, coarser grid, data-driven boundaries: close but not identical.
  EXPECT_LT(m[Var::e].err_L1, 0.02);
  EXPECT_LT(m[Var::T].err_L1, 0.02);
}

TEST(RunDir, ManifestAndPointNames) {
  const auto dir = std::filesystem::temp_directory_path() / "trtc_test_manifest";
  std::filesystem::remove_all(dir);
  const PipelineConfig c;
  write_manifest(dir, "learn", c.to_json(), {{"data", "x"}}, {{"model", "model.json"}});
  const auto m = read_json(dir / "manifest.json");
  EXPECT_EQ(m["command"], "learn");
  EXPECT_EQ(m["config_hash"], c.hash());
  EXPECT_THROW(read_json(dir / "missing.json"), ConfigError);
  std::filesystem::remove_all(dir);
  EXPECT_EQ(point_dir_name({1e9, 1e9}), "g9_T9");
  EXPECT_EQ(point_dir_name({std::pow(10.0, 8.5), 1e10}), "g8.5_T10");
}

TEST(Workers, EnvironmentVariable) {
  unsetenv("TRTC_WORKERS");
  EXPECT_EQ(env_workers(), 1);
  setenv("TRTC_WORKERS", "3", 1);
  EXPECT_EQ(env_workers(), 3);
  setenv("TRTC_WORKERS", "zero", 1);
  EXPECT_THROW(env_workers(), ConfigError);
  unsetenv("TRTC_WORKERS");
}

TEST(Errors, ExitCodesByFailureKind) {
  auto code = [](auto e) { return classify_error(std::make_exception_ptr(e)).code; };
  EXPECT_EQ(code(ConfigError("x")), 2);
  EXPECT_EQ(code(DatasetError("x")), 2);
  EXPECT_EQ(code(MetricsError("x")), 2);
  EXPECT_EQ(code(std::invalid_argument("x")), 2);
  EXPECT_EQ(code(QPError("x")), 3);
  EXPECT_EQ(code(KineticError("x")), 3);
  const auto s = classify_error(std::make_exception_ptr(SolverError("closure blow-up", "negative S", 7, 1e-11)));
  EXPECT_EQ(s.code, 3);
  EXPECT_EQ(s.json["error"], "closure blow-up");
  EXPECT_EQ(s.json["cell"], 7);
  EXPECT_EQ(code(std::runtime_error("x")), 1);
}
