#include "trtc/weakform.hpp"

#include <random>

#include <gtest/gtest.h>

#include "trtc/kinetic.hpp"

using namespace trtc;

namespace {

MomentDataset grid_ds(int Nx, int Nt, double Lx, double Lt) {
  MomentDataset d;
  d.x.resize(Nx);
  d.t.resize(Nt);
  for (int i = 0; i < Nx; ++i) d.x[i] = Lx * i / (Nx - 1);
  for (int j = 0; j < Nt; ++j) d.t[j] = Lt * j / (Nt - 1);
  d.allocate(Nx, Nt);
  for (auto& f : d.fields) std::fill(f.begin(), f.end(), 1.0);
  return d;
}

TermLibrary single(Var slot, TermKind kind, Monomial m) {
  TermLibrary lib;
  lib.slot = slot;
  lib.terms.push_back({slot, kind, m, false});
  return lib;
}

}  // namespace

TEST(WeakForm, TestFunctionShape) {
  const auto tf = build_test_function(4.0, 10.5, 0.1);
  EXPECT_EQ(tf.width(), 21);
  int nz = 0;
  for (double v : tf.phi) nz += v != 0.0;
  EXPECT_EQ(nz, 2 * 10 + 1);
  EXPECT_DOUBLE_EQ(tf.phi[tf.n] / tf.delta, 1.0);
  EXPECT_EQ(tf.dphi[tf.n], 0.0);
  for (int i = 0; i < tf.width(); ++i) {
    EXPECT_EQ(tf.phi[i], tf.phi[tf.width() - 1 - i]);
    EXPECT_EQ(tf.dphi[i], -tf.dphi[tf.width() - 1 - i]);
  }
  EXPECT_THROW(build_test_function(1.0, 10.0, 0.1, 1), WeakFormError);
}

TEST(WeakForm, TrapezoidMatchesBetaIntegral) {
  const double delta = 1.0 / 64.0;
  const auto tf = build_test_function(4.0, 64.0, delta);  // 129 samples on [-1, 1]
  EXPECT_EQ(tf.width(), 129);
  double s = 0.0;
  for (double v : tf.phi) s += v;
  EXPECT_LT(std::abs(s / phi_integral(4.0, 1.0) - 1.0), 1e-6);
}

TEST(WeakForm, EndpointValueIsTau) {
  for (int m : {5, 12, 40}) {
    const double tau = 1e-4;
    const double p = power_for_tau(tau, m);
    const double v = double(m - 1) / m;
    EXPECT_NEAR(std::pow(1.0 - v * v, p) / tau, 1.0, 1e-10);
  }
}

TEST(WeakForm, ConstantInTimeGivesZeroB) {
  auto d = grid_ds(60, 50, 1.0, 1.0);
  for (int j = 0; j < 50; ++j)
    for (int i = 0; i < 60; ++i) d.at(Var::e, i, j) = std::sin(3.0 * d.x[i]) + 2.0;
  const auto fx = build_test_function(4.0, 8.0, d.dx()), ft = build_test_function(4.0, 8.0, d.dt());
  const auto q = choose_queries(60, 50, fx, ft, 20);
  const auto ws = assemble_weak_system(d, single(Var::e, TermKind::flux, mono(0, 1, 0, 0)), fx, ft, q);
  EXPECT_LT(ws.b.lpNorm<Eigen::Infinity>(), 1e-15);
}

TEST(WeakForm, ManufacturedQuadraticTimesLinear) {
  // u = x^2 t. <d_t psi, u> = -(x_q^2 I0x + I2x) I0t with I0 = a B(1/2, p+1), I2 = a^3 B(3/2, p+1).
  const int N = 801;
  auto d = grid_ds(N, N, 2.0, 2.0);
  for (int j = 0; j < N; ++j)
    for (int i = 0; i < N; ++i) d.at(Var::e, i, j) = d.x[i] * d.x[i] * d.t[j];
  const double p = 4.5, ag = 100.0;
  const auto fx = build_test_function(p, ag, d.dx()), ft = build_test_function(p, ag, d.dt());
  const auto q = choose_queries(N, N, fx, ft, 4);
  const auto ws = assemble_weak_system(d, single(Var::e, TermKind::source, mono(1, 0, 0, 0)), fx, ft, q);
  const double a = ag * d.dx();
  const double I0 = phi_integral(p, a), I2 = a * a * a * boost::math::beta(1.5, p + 1.0);
  std::size_t r = 0;
  for (std::size_t c = 0; c < q.it.size(); ++c)
    for (int iq : q.ix) {
      const double xq = d.x[iq];
      const double inner = -(xq * xq * I0 + I2) * I0;  // <d_t psi, u>
      EXPECT_NEAR(ws.b[r] / (-inner), 1.0, 1e-6);
      ++r;
    }
}

TEST(WeakForm, AdvectionRecoversMinusOne) {
  const int Nx = 256, Nt = 200;
  auto d = grid_ds(Nx, Nt, 4.0, 1.0);
  for (int j = 0; j < Nt; ++j)
    for (int i = 0; i < Nx; ++i) d.at(Var::e, i, j) = std::exp(-std::pow((d.x[i] - d.t[j] - 1.5) / 0.4, 2));
  const auto fx = build_test_function(5.0, 20.0, d.dx()), ft = build_test_function(5.0, 20.0, d.dt());
  const auto q = choose_queries(Nx, Nt, fx, ft, 40);
  const auto ws = assemble_weak_system(d, single(Var::e, TermKind::flux, mono(1, 0, 0, 0)), fx, ft, q);
  const double w = ws.G.col(0).dot(ws.b) / ws.G.col(0).squaredNorm();
  EXPECT_NEAR(w, -1.0, 1e-4);
}

TEST(WeakForm, FftPathMatchesDirect) {
  std::mt19937 rng(11);
  std::normal_distribution<double> nd;
  const int Nx = 97, Nt = 64;
  auto d = grid_ds(Nx, Nt, 1.0, 1.0);
  for (auto& f : d.fields)
    for (double& v : f) v = 1.5 + 0.3 * nd(rng);
  const auto fx = build_test_function(3.3, 9.0, d.dx()), ft = build_test_function(4.1, 7.5, d.dt());
  const auto q = choose_queries(Nx, Nt, fx, ft, 100);
  const auto lib = build_sigma_library(2, 2);
  const auto a = assemble_weak_system(d, lib, fx, ft, q, ConvMethod::direct);
  const auto b = assemble_weak_system(d, lib, fx, ft, q, ConvMethod::fft);
  EXPECT_LT((a.G - b.G).norm() / a.G.norm(), 1e-12);
  EXPECT_LT((a.b - b.b).norm() / a.b.norm(), 1e-12);
}

TEST(WeakForm, QueryGridCoversEnoughRows) {
  const auto fx = build_test_function(4.0, 10.0, 1.0), ft = build_test_function(4.0, 12.0, 1.0);
  const auto q = choose_queries(128, 101, fx, ft, 4 * 62);
  EXPECT_GE(q.size(), 4u * 62u);
  for (int i : q.ix) {
    EXPECT_GE(i - fx.n, 0);
    EXPECT_LT(i + fx.n, 128);
  }
  EXPECT_THROW(choose_queries(15, 101, fx, ft, 4), WeakFormError);
}

TEST(WeakForm, ParameterSelectionOnSyntheticSpectra) {
  // Pure low mode: support grows to the cap.
  auto d = grid_ds(128, 64, 1.0, 1.0);
  for (int j = 0; j < 64; ++j)
    for (int i = 0; i < 128; ++i)
      for (int v = 0; v < kNumVars; ++v) d.at(Var(v), i, j) = 2.0 + std::sin(2.0 * std::numbers::pi * d.x[i]) * (1.0 + d.t[j]);
  const auto tp = select_test_params(d);
  EXPECT_TRUE(tp.x.capped);
  EXPECT_EQ(tp.x.a, 128 / 3);
  // All energy at DC: documented fallback.
  auto c = grid_ds(50, 40, 1.0, 1.0);
  const auto tc = select_test_params(c);
  EXPECT_TRUE(tc.x.fallback);
  EXPECT_EQ(tc.x.p, 4.0);
  EXPECT_EQ(tc.x.a, 5.0);
}

TEST(WeakForm, ChangepointOfBrokenLine) {
  std::vector<double> y(40);
  for (int k = 0; k < 40; ++k) y[k] = k < 12 ? 0.08 * k : 0.96 + 0.001 * (k - 12);
  EXPECT_NEAR(two_segment_changepoint(y), 12, 1);
}

TEST(WeakForm, KineticDataEnergyEquationResidual) {
  TransportConfig c;
  c.N_cells = 128;
  c.G = 8;
  c.N_steps = 100;
  const auto full = run_transport(c);
  const auto d = slice(full, slice_for(full, 0.0, 2.0, 0.0, 1e-10));
  const auto tp = select_test_params(d);
  EXPECT_GE(tp.x.p, 2.0);
  EXPECT_LE(tp.x.p, 6.0);
  EXPECT_GE(tp.t.p, 2.0);
  EXPECT_LE(tp.t.p, 6.0);
  // Order-of-magnitude check on the supports.
  EXPECT_GT(tp.x.a, d.nx() / 60.0);
  EXPECT_LT(tp.x.a, d.nx() / 3.0 + 1);
  EXPECT_GT(tp.t.a, d.nt() / 40.0);
  const auto fx = build_test_function(tp.x.p, tp.x.a, d.dx()), ft = build_test_function(tp.t.p, tp.t.a, d.dt());
  const auto q = choose_queries(static_cast<int>(d.nx()), static_cast<int>(d.nt()), fx, ft, 4);
  const auto ws = assemble_weak_system(d, base_e_library(), fx, ft, q);
  Eigen::VectorXd w(1);
  w << -1.0;
  EXPECT_LT(weak_residual(ws, w), 0.05);
}
