#pragma once

// Convex QP  min 1/2 ||G w - b||^2  s.t.  A w = 0,  C w <= D.
//
// Columns of G (and of A, C with them) are normalized and b is scaled to unit norm before
// solving. Equalities are eliminated through an SVD null-space basis; inequalities are handled
// by a primal active-set method started from the feasible point w = 0 (requires D >= 0).
// Ties in the blocking and dropping choices go to the smallest constraint index.

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

namespace trtc {

class QPError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct QPProblem {
  Eigen::MatrixXd G;
  Eigen::VectorXd b;
  Eigen::MatrixXd A;  // may have zero rows
  Eigen::MatrixXd C;  // may have zero rows
  Eigen::VectorXd D;
};

struct QPOptions {
  int max_iter = 1000;
  double opt_tol = 1e-10;
  double feas_tol = 1e-10;
  double kkt_tol = 1e-8;  // stationarity relative to ||G^T b||_inf of the normalized problem
};

/// KKT residuals of the normalized problem (unit columns, unit-norm b, unit-norm constraint rows).
/// Stationarity is relative to ||G^T b||_inf.
struct KKTReport {
  double stationarity = 0.0;
  double primal_eq = 0.0;
  double primal_ineq = 0.0;
  double dual_min = 0.0;
  double complementarity = 0.0;
  bool ok = true;

  nlohmann::json to_json() const {
    return {{"stationarity", stationarity}, {"primal_eq", primal_eq},     {"primal_ineq", primal_ineq},
            {"dual_min", dual_min},         {"complementarity", complementarity}, {"ok", ok}};
  }
};

struct QPResult {
  Eigen::VectorXd w;
  Eigen::VectorXd lambda;  // inequality multipliers (normalized rows), >= 0
  Eigen::VectorXd mu;      // equality multipliers (normalized rows)
  std::vector<Eigen::Index> active;
  int iterations = 0;
  KKTReport kkt;
};

namespace detail {

// Orthonormal basis of the null space of M (n columns). Rank threshold relative to the largest singular value.
inline Eigen::MatrixXd null_space(const Eigen::MatrixXd& M, Eigen::Index n) {
  if (M.rows() == 0) return Eigen::MatrixXd::Identity(n, n);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(M, Eigen::ComputeFullV);
  const auto& s = svd.singularValues();
  const double thr = (s.size() ? s[0] : 0.0) * 1e-12 * double(std::max(M.rows(), n));
  Eigen::Index r = 0;
  while (r < s.size() && s[r] > thr) ++r;
  return svd.matrixV().rightCols(n - r);
}

inline Eigen::VectorXd lstsq(const Eigen::MatrixXd& M, const Eigen::VectorXd& r) {
  if (M.cols() == 0) return Eigen::VectorXd(0);
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(M);
  cod.setThreshold(1e-13);
  return cod.solve(r);
}

inline Eigen::MatrixXd rows_of(const Eigen::MatrixXd& M, const std::vector<Eigen::Index>& idx) {
  Eigen::MatrixXd r(static_cast<Eigen::Index>(idx.size()), M.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) r.row(static_cast<Eigen::Index>(i)) = M.row(idx[i]);
  return r;
}

}  // namespace detail

inline QPResult qp_solve(const QPProblem& P, const QPOptions& opt = {}) {
  const Eigen::Index n = P.G.cols();
  if (P.b.size() != P.G.rows()) throw std::invalid_argument("qp_solve: b size mismatch");
  if (P.A.rows() && P.A.cols() != n) throw std::invalid_argument("qp_solve: A column mismatch");
  if (P.C.rows() && P.C.cols() != n) throw std::invalid_argument("qp_solve: C column mismatch");
  if (P.C.rows() != P.D.size()) throw std::invalid_argument("qp_solve: C/D size mismatch");

  QPResult res;
  res.lambda = Eigen::VectorXd::Zero(P.C.rows());
  res.mu = Eigen::VectorXd::Zero(P.A.rows());
  if (n == 0) {
    res.w.resize(0);
    return res;
  }

  // Normalization.
  Eigen::VectorXd cn = P.G.colwise().norm().transpose();
  for (auto& v : cn)
    if (v == 0.0) v = 1.0;
  const double bn = P.b.norm() > 0.0 ? P.b.norm() : 1.0;
  const Eigen::MatrixXd Gn = P.G * cn.cwiseInverse().asDiagonal();
  const Eigen::VectorXd b = P.b / bn;
  Eigen::MatrixXd An = P.A.rows() ? Eigen::MatrixXd(P.A * cn.cwiseInverse().asDiagonal()) : Eigen::MatrixXd(0, n);
  for (Eigen::Index i = 0; i < An.rows(); ++i)
    if (double r = An.row(i).norm(); r > 0.0) An.row(i) /= r;
  Eigen::MatrixXd Cn = P.C.rows() ? Eigen::MatrixXd(P.C * cn.cwiseInverse().asDiagonal()) : Eigen::MatrixXd(0, n);
  Eigen::VectorXd Dn = P.D / bn;
  for (Eigen::Index i = 0; i < Cn.rows(); ++i) {
    const double r = Cn.row(i).norm();
    if (r > 0.0) {
      Cn.row(i) /= r;
      Dn[i] /= r;
    } else if (Dn[i] < -opt.feas_tol) {
      throw QPError("qp_solve: zero inequality row with negative bound (row " + std::to_string(i) + ")");
    }
  }
  for (Eigen::Index i = 0; i < Dn.size(); ++i)
    if (Dn[i] < -opt.feas_tol) throw QPError("qp_solve: w = 0 infeasible (D[" + std::to_string(i) + "] < 0)");

  // Equality elimination: v = Z y.
  const Eigen::MatrixXd Z = detail::null_space(An, n);
  const Eigen::MatrixXd H = Gn * Z;
  const Eigen::MatrixXd Cy = Cn * Z;
  const Eigen::Index q = Z.cols();
  Eigen::VectorXd y = Eigen::VectorXd::Zero(q);

  std::vector<Eigen::Index> W;  // working set, kept sorted
  std::vector<char> inW(static_cast<std::size_t>(Cy.rows()), 0);
  Eigen::VectorXd lam_w;
  int it = 0, zero_steps = 0;
  std::vector<char> pinned(static_cast<std::size_t>(Cy.rows()), 0);
  Eigen::Index last_drop = -1;
  bool done = q == 0;
  for (; !done && it < opt.max_iter; ++it) {
    const Eigen::MatrixXd CW = detail::rows_of(Cy, W);
    const Eigen::MatrixXd Z2 = detail::null_space(CW, q);
    const Eigen::VectorXd r = b - H * y;
    const Eigen::MatrixXd HZ = H * Z2;
    const Eigen::VectorXd z = detail::lstsq(HZ, r);
    const Eigen::VectorXd p = Z2 * z;
    // On an ill-conditioned subspace the minimizing step is roundoff-sized but not tiny; a vanishing
    // projected gradient is the reliable stationarity test there.
    const bool stationary = (HZ.transpose() * r).lpNorm<Eigen::Infinity>() <= 1e-12;
    if (stationary || p.norm() <= 1e-13 * (1.0 + y.norm())) {
      const Eigen::VectorXd g = H.transpose() * (H * y - b);
      lam_w = W.empty() ? Eigen::VectorXd(0) : detail::lstsq(CW.transpose(), -g);
      // Most negative multiplier, or Bland's rule (lowest index) once zero steps repeat.
      Eigen::Index drop = -1;
      double worst = -opt.opt_tol;
      for (Eigen::Index k = 0; k < lam_w.size(); ++k)
        if (lam_w[k] < worst && !pinned[static_cast<std::size_t>(W[k])]) {
          worst = lam_w[k];
          drop = k;
          if (zero_steps > 3) break;
        }
      if (drop < 0) {
        done = true;
        break;
      }
      last_drop = W[drop];
      inW[static_cast<std::size_t>(W[drop])] = 0;
      W.erase(W.begin() + drop);
      continue;
    }
    double step = 1.0;
    Eigen::Index block = -1;
    for (Eigen::Index i = 0; i < Cy.rows(); ++i) {
      if (inW[static_cast<std::size_t>(i)]) continue;
      const double cp = Cy.row(i).dot(p);
      if (cp <= 1e-14 * p.norm()) continue;
      const double a = std::max(0.0, (Dn[i] - Cy.row(i).dot(y)) / cp);
      if (a < step) {
        step = a;
        block = i;
      }
    }
    y += step * p;
    const bool zero = step * p.norm() <= 1e-15 * (1.0 + y.norm());
    zero_steps = zero ? zero_steps + 1 : 0;
    // A just-dropped constraint that blocks at once had a numerically zero multiplier: keep it.
    if (zero && block >= 0 && block == last_drop) pinned[static_cast<std::size_t>(block)] = 1;
    if (!zero) std::fill(pinned.begin(), pinned.end(), 0);
    last_drop = -1;
    if (block >= 0) {
      W.insert(std::lower_bound(W.begin(), W.end(), block), block);
      inW[static_cast<std::size_t>(block)] = 1;
    }
  }
  if (!done) {
    const Eigen::VectorXd g = H.transpose() * (H * y - b);
    std::ostringstream os;
    os << "qp_solve: iteration cap " << opt.max_iter << " reached (working set " << W.size()
       << ", reduced gradient " << g.norm() << ")";
    throw QPError(os.str());
  }
  res.iterations = it;
  res.active = W;

  // Recover v and the multipliers of the normalized problem.
  const Eigen::VectorXd v = Z * y;
  for (std::size_t k = 0; k < W.size(); ++k) res.lambda[W[k]] = lam_w.size() ? lam_w[static_cast<Eigen::Index>(k)] : 0.0;
  const Eigen::VectorXd grad = Gn.transpose() * (Gn * v - b);
  Eigen::VectorXd resid = grad + Cn.transpose() * res.lambda;
  if (An.rows()) {
    res.mu = detail::lstsq(An.transpose(), -resid);
    resid += An.transpose() * res.mu;
  }

  KKTReport& K = res.kkt;
  const double gscale = std::max(1e-300, (Gn.transpose() * b).lpNorm<Eigen::Infinity>());
  K.stationarity = resid.lpNorm<Eigen::Infinity>() / gscale;
  K.primal_eq = An.rows() ? (An * v).lpNorm<Eigen::Infinity>() : 0.0;
  const Eigen::VectorXd slack = Cn.rows() ? Eigen::VectorXd(Cn * v - Dn) : Eigen::VectorXd(0);
  K.primal_ineq = slack.size() ? std::max(0.0, slack.maxCoeff()) : 0.0;
  K.dual_min = res.lambda.size() ? std::min(0.0, res.lambda.minCoeff()) : 0.0;
  K.complementarity = slack.size() ? (res.lambda.cwiseProduct(slack)).lpNorm<Eigen::Infinity>() : 0.0;
  K.ok = K.stationarity <= opt.kkt_tol && K.primal_eq <= opt.feas_tol &&
         K.primal_ineq <= opt.feas_tol && K.dual_min >= -opt.opt_tol && K.complementarity <= opt.feas_tol;

  res.w = v.cwiseQuotient(cn) * bn;
  return res;
}

}  // namespace trtc
