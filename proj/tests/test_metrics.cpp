#include <gtest/gtest.h>

#include <random>

#include "trtc/metrics.hpp"

using namespace trtc;

namespace {

MomentDataset random_dataset(std::uint64_t seed, bool F_zero_at_start = true) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(0.5, 2.0);
  MomentDataset d;
  d.x = cell_centers(4.0, 24);
  d.t = uniform_times(1e-12, 10);
  d.allocate(24, 10);
  for (int v = 0; v < kNumVars; ++v)
    for (auto& x : d.fields[v]) x = U(rng) * (v == 1 ? 1e30 : 1.0);
  if (F_zero_at_start)
    for (std::size_t i = 0; i < 24; ++i) d.at(Var::F, i, 0) = 0.0;
  return d;
}

}  // namespace

TEST(Metrics, IdenticalDatasetsGiveZero) {
  const auto d = random_dataset(1);
  const auto r = metrics(d, d);
  for (int v = 0; v < kNumVars; ++v) {
    EXPECT_EQ(r.var[v].err_L1, 0.0);
    for (std::size_t j = 0; j < d.nt(); ++j)
      if (r.var[v].defined[j]) {
        EXPECT_EQ(r.var[v].err_L1_j[j], 0.0);
        EXPECT_EQ(r.var[v].err_Int_j[j], 0.0);
      }
  }
}

TEST(Metrics, HomogeneousScalingGivesTenPercent) {
  const auto d = random_dataset(2);
  MomentDataset c = d;
  for (auto& f : c.fields)
    for (auto& x : f) x *= 1.1;
  const auto r = metrics(c, d);
  for (int v = 0; v < kNumVars; ++v) {
    EXPECT_NEAR(r.var[v].err_L1, 0.1, 1e-12);
    for (std::size_t j = 0; j < d.nt(); ++j)
      if (r.var[v].defined[j]) {
        EXPECT_NEAR(r.var[v].err_Int_j[j], 0.1, 1e-12);
        EXPECT_NEAR(r.var[v].err_L1_j[j], 0.1, 1e-12);
      }
  }
}

TEST(Metrics, IntegralErrorOfSignDefiniteDataIsNormDifference) {
  const auto d = random_dataset(3);
  auto c = random_dataset(4);
  const auto r = metrics(c, d);
  for (int v : {0, 2, 3})
    for (std::size_t j = 0; j < d.nt(); ++j) {
      double nc = 0, nr = 0;
      for (std::size_t i = 0; i < d.nx(); ++i) {
        nc += std::abs(c.at(Var(v), i, j));
        nr += std::abs(d.at(Var(v), i, j));
      }
      EXPECT_NEAR(r.var[v].err_Int_j[j], std::abs(nc - nr) / nr, 1e-13);
    }
}

TEST(Metrics, ZeroDenominatorSliceIsUndefinedAndExcluded) {
  const auto d = random_dataset(5);
  auto c = random_dataset(6);
  for (std::size_t i = 0; i < d.nx(); ++i) c.at(Var::F, i, 0) = 1e40;  // would dominate if included
  const auto r = metrics(c, d);
  EXPECT_FALSE(r[Var::F].defined[0]);
  EXPECT_TRUE(r[Var::F].defined[1]);
  EXPECT_TRUE(std::isfinite(r[Var::F].err_L1));
  EXPECT_LT(r[Var::F].err_L1, 10.0);
  const auto j = r.to_json();
  EXPECT_EQ(j["vars"]["F"]["undefined_slices"].size(), 1u);
  EXPECT_NE(r.to_csv().find(",,"), std::string::npos);
}

TEST(Metrics, TriangleInequalityAndScaleInvariance) {
  const auto d = random_dataset(7, false);
  const auto c = random_dataset(8, false);
  const auto r = metrics(c, d);
  MomentDataset d2 = d, c2 = c;
  for (auto* x : {&d2, &c2})
    for (auto& f : x->fields)
      for (auto& y : f) y *= 3.7e5;
  const auto r2 = metrics(c2, d2);
  for (int v = 0; v < kNumVars; ++v) {
    for (std::size_t j = 0; j < d.nt(); ++j) {
      EXPECT_LE(r.var[v].err_Int_j[j], r.var[v].err_L1_j[j] + 1e-15);
      EXPECT_NEAR(r2.var[v].err_L1_j[j], r.var[v].err_L1_j[j], 1e-12);
    }
    EXPECT_NEAR(r2.var[v].err_L1, r.var[v].err_L1, 1e-12);
  }
}

TEST(Metrics, WindowRestrictsAggregates) {
  const auto d = random_dataset(9, false);
  auto c = d;
  for (std::size_t i = 0; i < d.nx(); ++i) c.at(Var::T, i, 0) *= 2.0;  // error only at t = 0
  MetricOptions o;
  o.t_min = 0.0;
  const auto r = metrics(c, d, o);
  EXPECT_EQ(r[Var::T].err_L1, 0.0);
  EXPECT_EQ(r[Var::T].max_L1_j, 0.0);
  EXPECT_NEAR(r[Var::T].err_L1_j[0], 1.0, 1e-12);
}

TEST(Metrics, GridMismatchIsRejected) {
  const auto d = random_dataset(10);
  auto c = resample_stride(d, 2, 1);
  EXPECT_THROW(metrics(c, d), MetricsError);
}

TEST(Sweep, GridFlagsKappaAndStatuses) {
  const auto grid = parameter_grid();
  ASSERT_EQ(grid.size(), 25u);
  const auto d = random_dataset(11);
  const ReferenceLookup refs = [&](const ParamPoint& p) -> std::optional<MomentDataset> {
    if (p.gamma > 2e9 && p.T_in3 > 2e9) return std::nullopt;
    return d;
  };
  const SweepRunner run = [&](const ParamPoint& p, const MomentDataset& ref) {
    if (p.gamma < 2e8 && p.T_in3 < 2e8) throw SolverError("closure blow-up", "negative S", 3, 1e-11);
    MomentDataset c = ref;
    for (auto& x : c.fields[2]) x *= 1.05;
    return c;
  };
  for (int workers : {1, 3}) {
    const auto rep = sweep_report(grid, refs, run, 1.0, 4.0, {}, workers);
    int training = 0, blow = 0, absent = 0, ok = 0;
    for (const auto& r : rep.rows) {
      training += r.training;
      blow += r.status == PointStatus::blowup;
      absent += r.status == PointStatus::absent;
      ok += r.status == PointStatus::ok;
      EXPECT_DOUBLE_EQ(r.kappa_L, kappa_L(1.0, std::cbrt(r.p.T_in3), r.p.gamma, 4.0).exact);
      if (r.status == PointStatus::ok) {
        EXPECT_NEAR(r.err_L1[2], 0.05, 1e-12);
      }
    }
    EXPECT_EQ(training, 9);
    EXPECT_EQ(blow, 1);
    EXPECT_EQ(absent, 4);
    EXPECT_EQ(ok, 20);
    const std::string csv = rep.to_csv();
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 26);
    EXPECT_NE(csv.find("blowup"), std::string::npos);
    EXPECT_EQ(rep.to_json()["rows"].size(), 25u);
  }
}
