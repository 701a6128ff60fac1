#include "trtc/mstls.hpp"
#include "trtc/qp.hpp"

#include <random>

#include <gtest/gtest.h>

using namespace trtc;

namespace {

Eigen::MatrixXd randn(Eigen::Index r, Eigen::Index c, unsigned seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<double> N(0.0, 1.0);
  Eigen::MatrixXd M(r, c);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < r; ++i) M(i, j) = N(rng);
  return M;
}

double obj(const Eigen::MatrixXd& G, const Eigen::VectorXd& b, const Eigen::VectorXd& w) {
  return 0.5 * (G * w - b).squaredNorm();
}

// Enumerate active sets: solve each equality-constrained KKT system, keep feasible points with
// nonnegative multipliers, return the best objective.
Eigen::VectorXd brute_force_qp(const Eigen::MatrixXd& G, const Eigen::VectorXd& b, const Eigen::MatrixXd& C,
                               const Eigen::VectorXd& D) {
  const Eigen::Index n = G.cols(), m = C.rows();
  Eigen::VectorXd best;
  double bo = std::numeric_limits<double>::infinity();
  for (unsigned mask = 0; mask < (1u << m); ++mask) {
    std::vector<Eigen::Index> S;
    for (Eigen::Index i = 0; i < m; ++i)
      if (mask & (1u << i)) S.push_back(i);
    const Eigen::Index k = static_cast<Eigen::Index>(S.size());
    if (k > n) continue;
    Eigen::MatrixXd K = Eigen::MatrixXd::Zero(n + k, n + k);
    Eigen::VectorXd r(n + k);
    K.topLeftCorner(n, n) = G.transpose() * G;
    r.head(n) = G.transpose() * b;
    for (Eigen::Index j = 0; j < k; ++j) {
      K.block(0, n + j, n, 1) = C.row(S[j]).transpose();
      K.block(n + j, 0, 1, n) = C.row(S[j]);
      r[n + j] = D[S[j]];
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(K);
    if (lu.rank() < n + k) continue;
    const Eigen::VectorXd s = lu.solve(r);
    const Eigen::VectorXd w = s.head(n);
    if (((C * w - D).array() > 1e-10).any() || (s.tail(k).array() < -1e-10).any()) continue;
    if (obj(G, b, w) < bo) {
      bo = obj(G, b, w);
      best = w;
    }
  }
  return best;
}

RegressionProblem planted(unsigned seed, const Eigen::VectorXd& w_true, double noise = 0.0, Eigen::Index rows = 200) {
  RegressionProblem p;
  p.G = randn(rows, w_true.size(), seed);
  p.b = p.G * w_true;
  if (noise > 0) p.b += noise * p.b.norm() / std::sqrt(double(rows)) * randn(rows, 1, seed + 100).col(0);
  p.A.resize(0, w_true.size());
  p.C.resize(0, w_true.size());
  return p;
}

Eigen::VectorXd sparse3(Eigen::Index J = 20) {
  Eigen::VectorXd w = Eigen::VectorXd::Zero(J);
  w[2] = 1.5;
  w[7] = -0.8;
  w[13] = 2.2;
  return w;
}

}  // namespace

TEST(QP, UnconstrainedMatchesNormalEquations) {
  const auto G = randn(50, 6, 1);
  const Eigen::VectorXd b = randn(50, 1, 2).col(0);
  QPProblem p{G, b, Eigen::MatrixXd(0, 6), Eigen::MatrixXd(0, 6), Eigen::VectorXd(0)};
  const auto r = qp_solve(p);
  const Eigen::VectorXd ne = (G.transpose() * G).ldlt().solve(G.transpose() * b);
  EXPECT_LT((r.w - ne).norm() / ne.norm(), 1e-8);
  EXPECT_TRUE(r.kkt.ok);
}

TEST(QP, EqualityProjectionOracle) {
  const auto G = randn(30, 2, 3);
  const Eigen::VectorXd b = randn(30, 1, 4).col(0);
  QPProblem p{G, b, (Eigen::MatrixXd(1, 2) << 1.0, 1.0).finished(), Eigen::MatrixXd(0, 2), Eigen::VectorXd(0)};
  const auto r = qp_solve(p);
  // w = t (1, -1) with t = g.b / g.g, g = G1 - G2.
  const Eigen::VectorXd g = G.col(0) - G.col(1);
  const double t = g.dot(b) / g.squaredNorm();
  EXPECT_NEAR(r.w[0], t, 1e-8 * std::abs(t));
  EXPECT_NEAR(r.w[1], -t, 1e-8 * std::abs(t));
  EXPECT_LT(r.kkt.primal_eq, 1e-12);
}

TEST(QP, ActiveInequalityComplementarySlackness) {
  // Unconstrained optimum w = (1, 2); cap w0 <= 0.5.
  const auto G = randn(40, 2, 5);
  const Eigen::VectorXd b = G * Eigen::Vector2d(1.0, 2.0);
  QPProblem p{G, b, Eigen::MatrixXd(0, 2), (Eigen::MatrixXd(2, 2) << 1, 0, 0, 1).finished(), Eigen::Vector2d(0.5, 10.0)};
  const auto r = qp_solve(p);
  EXPECT_NEAR(r.w[0], 0.5, 1e-12);
  ASSERT_EQ(r.active.size(), 1u);
  EXPECT_EQ(r.active[0], 0);
  EXPECT_GT(r.lambda[0], 0.0);
  EXPECT_EQ(r.lambda[1], 0.0);
  EXPECT_TRUE(r.kkt.ok) << r.kkt.to_json().dump();
  // Reduced problem oracle: w1 = argmin |G1 * 0.5 + G2 w1 - b|.
  const double w1 = G.col(1).dot(b - 0.5 * G.col(0)) / G.col(1).squaredNorm();
  EXPECT_NEAR(r.w[1], w1, 1e-10);
}

TEST(QP, RandomProblemsMatchActiveSetEnumeration) {
  for (unsigned s = 0; s < 30; ++s) {
    const auto G = randn(25, 4, 10 + s);
    const Eigen::VectorXd b = randn(25, 1, 50 + s).col(0);
    const auto C = randn(6, 4, 90 + s);
    Eigen::VectorXd D = randn(6, 1, 130 + s).col(0).cwiseAbs() * 0.1;
    D[0] = 0.0;
    QPProblem p{G, b, Eigen::MatrixXd(0, 4), C, D};
    const auto r = qp_solve(p);
    const auto o = brute_force_qp(G, b, C, D);
    ASSERT_EQ(o.size(), 4) << s;
    EXPECT_LT((r.w - o).norm(), 1e-8 * (1.0 + o.norm())) << "seed " << s;
    EXPECT_TRUE(r.kkt.ok) << s << " " << r.kkt.to_json().dump();
  }
}

TEST(QP, ErrorsAreReported) {
  const auto G = randn(10, 3, 7);
  const Eigen::VectorXd b = randn(10, 1, 8).col(0);
  QPProblem bad{G, b, Eigen::MatrixXd(0, 3), Eigen::MatrixXd::Identity(1, 3), Eigen::VectorXd::Constant(1, -1.0)};
  EXPECT_THROW(qp_solve(bad), QPError);
  QPProblem ok{G, b, Eigen::MatrixXd(0, 3), Eigen::MatrixXd(0, 3), Eigen::VectorXd(0)};
  QPOptions o;
  o.max_iter = 0;
  try {
    qp_solve(ok, o);
    FAIL();
  } catch (const QPError& e) {
    EXPECT_NE(std::string(e.what()).find("iteration cap"), std::string::npos);
  }
}

TEST(QP, FullRankEqualityLeavesOnlyZero) {
  const auto G = randn(10, 2, 9);
  const Eigen::VectorXd b = randn(10, 1, 10).col(0);
  QPProblem p{G, b, Eigen::MatrixXd::Identity(2, 2), Eigen::MatrixXd(0, 2), Eigen::VectorXd(0)};
  EXPECT_EQ(qp_solve(p).w.norm(), 0.0);
}

TEST(Mstls, LargeLambdaKeepsForcedOnly) {
  // All |G_k| = |b|: L = lam >= U = 1/lam for lam >= 1.
  auto p = planted(1, sparse3(), 0.01);
  for (Eigen::Index k = 0; k < p.J(); ++k) p.G.col(k) *= p.b.norm() / p.G.col(k).norm();
  p.forced = {4, 9};
  for (double lam : {1.0, 3.0}) {
    const auto r = mstls_step(p, lam);
    EXPECT_EQ(support_size(r.support), 2);
    EXPECT_TRUE(r.support[4] && r.support[9]);
  }
  const auto s = select_lambda(p, {10.0, 100.0});
  EXPECT_EQ(support_size(s.w[0].support), 2);
}

TEST(Mstls, TinyLambdaKeepsFullSupport) {
  const auto p = planted(2, sparse3(), 0.01);
  const auto r = mstls_step(p, 1e-12);
  EXPECT_EQ(support_size(r.support), p.J());
}

TEST(Mstls, PlantedSparseRecoveryWindow) {
  const Eigen::VectorXd wt = sparse3();
  const auto p = planted(3, wt, 1e-3);
  const auto grid = log_lambda_grid();
  // Brute-force window: lambdas whose support is exactly the planted one.
  std::vector<char> in(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const auto r = mstls_step(p, grid[i]);
    bool exact = true;
    for (Eigen::Index k = 0; k < p.J(); ++k) exact &= (r.support[static_cast<std::size_t>(k)] != 0) == (wt[k] != 0.0);
    in[i] = exact;
  }
  const auto s = select_lambda(p, grid);
  EXPECT_TRUE(in[s.index]) << "lambda_hat " << s.lambda_hat;
  // Noise-free data: coefficients recovered to 1e-6 for any lambda in the window.
  const auto q = planted(3, wt, 0.0);
  const auto sq = select_lambda(q, grid);
  EXPECT_LT((sq.w[0].w - wt).norm() / wt.norm(), 1e-6);
  for (Eigen::Index k = 0; k < q.J(); ++k) EXPECT_EQ(sq.w[0].support[static_cast<std::size_t>(k)] != 0, wt[k] != 0.0);
}

TEST(Mstls, SmallestMinimizerTieBreak) {
  EXPECT_EQ(smallest_minimizer({3.0, 1.0, 2.0, 1.0, 4.0}), 1);
  EXPECT_EQ(smallest_minimizer({2.0, 1.0 + 1e-14, 1.0}), 1);
  EXPECT_EQ(smallest_minimizer({5.0, 1.0 + 1e-6, 1.0}), 2);
  EXPECT_EQ(smallest_minimizer({std::numeric_limits<double>::infinity()}), -1);
  // Single exact column: every lambda below 1 keeps it with the same loss, so the first is chosen.
  RegressionProblem p;
  p.G = randn(20, 1, 4);
  p.b = 2.0 * p.G.col(0);
  p.A.resize(0, 1);
  p.C.resize(0, 1);
  const auto s = select_lambda(p, {0.01, 0.1, 0.3});
  EXPECT_EQ(s.index, 0u);
  EXPECT_EQ(s.path[0].loss, s.path[2].loss);
}

TEST(Mstls, ConstrainedSolutionsRespectConstraints) {
  // Planted model violates an inequality; every path solution must still satisfy it.
  Eigen::VectorXd wt = sparse3();
  auto p = planted(5, wt, 1e-3);
  p.C = Eigen::MatrixXd::Zero(2, p.J());
  p.C(0, 13) = 1.0;  // w13 <= 1
  p.C(1, 2) = -1.0;  // w2 >= 0
  p.D = Eigen::Vector2d(1.0, 0.0);
  p.A = Eigen::MatrixXd::Zero(1, p.J());
  p.A(0, 7) = 1.0;
  p.A(0, 2) = 1.0;  // w7 = -w2
  const auto s = select_lambda(p, log_lambda_grid(1e-4, 1.0, 30));
  const auto& w = s.w[0].w;
  EXPECT_LE((p.C * w - p.D).maxCoeff(), 1e-8);
  EXPECT_LT((p.A * w).cwiseAbs().maxCoeff(), 1e-8 * (1.0 + w.lpNorm<Eigen::Infinity>()));
  EXPECT_TRUE(s.w[0].kkt.ok);
}

TEST(Mstls, GroupDegenerateCases) {
  const auto p = planted(6, sparse3(), 1e-3);
  const auto grid = log_lambda_grid(1e-4, 1.0, 40);
  const auto single = select_lambda(p, grid);
  const auto g1 = group_select_lambda({&p}, grid);
  EXPECT_EQ(single.index, g1.index);
  EXPECT_EQ(single.w[0].w, g1.w[0].w);
  const auto g2 = group_select_lambda({&p, &p}, grid);
  EXPECT_EQ(g2.w[0].w, g2.w[1].w);
  EXPECT_EQ(g2.w[0].support, single.w[0].support);
}

TEST(Mstls, GroupSharedSupportRecovery) {
  std::vector<RegressionProblem> ps;
  std::vector<Eigen::VectorXd> wts;
  for (unsigned s = 0; s < 4; ++s) {
    Eigen::VectorXd w = sparse3();
    w *= 1.0 + 0.3 * s;
    w[7] *= -1.0 + 0.1 * s;  // sign and size vary per system
    wts.push_back(w);
    ps.push_back(planted(20 + s, w, 0.0));
  }
  std::vector<const RegressionProblem*> pp;
  for (auto& p : ps) pp.push_back(&p);
  const auto g = group_select_lambda(pp, log_lambda_grid());
  for (std::size_t s = 0; s < 4; ++s) {
    for (Eigen::Index k = 0; k < 20; ++k) EXPECT_EQ(g.w[s].support[static_cast<std::size_t>(k)] != 0, wts[s][k] != 0.0);
    EXPECT_LT((g.w[s].w - wts[s]).norm() / wts[s].norm(), 1e-5);
  }
  RegressionProblem other = ps[0];
  other.G = other.G.leftCols(19);
  EXPECT_THROW(group_select_lambda({&ps[0], &other}, {0.1}), std::invalid_argument);
}

TEST(Mstls, DeterministicAcrossWorkers) {
  const auto p = planted(7, sparse3(), 1e-2);
  const auto grid = log_lambda_grid(1e-4, 1.0, 25);
  const auto a = select_lambda(p, grid, {}, 1);
  const auto b = select_lambda(p, grid, {}, 3);
  EXPECT_EQ(a.index, b.index);
  EXPECT_EQ(0, std::memcmp(a.w[0].w.data(), b.w[0].w.data(), sizeof(double) * a.w[0].w.size()));
  for (std::size_t i = 0; i < grid.size(); ++i) EXPECT_EQ(a.path[i].loss, b.path[i].loss);
}
