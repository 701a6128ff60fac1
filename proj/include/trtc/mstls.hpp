#pragma once

// Sequentially thresholded constrained least squares with per-column bounds
//   L_k = lam max(1, |b| / |G_k|),  U_k = (1/lam) min(1, |b| / |G_k|),
// the lambda selection loss
//   loss(lam) = |G (w(lam) - w0)| / |G w0| + |w(lam)|_0 / J,
// and the group variant that thresholds on sums over an ensemble.

#include <cmath>
#include <future>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "trtc/qp.hpp"

namespace trtc {

/// One equation's regression: weak system plus constraints, all on the same columns.
struct RegressionProblem {
  Eigen::MatrixXd G;
  Eigen::VectorXd b;
  Eigen::MatrixXd A;
  Eigen::MatrixXd C;
  Eigen::VectorXd D;
  std::vector<Eigen::Index> forced;

  Eigen::Index J() const { return G.cols(); }
};

using Support = std::vector<char>;

inline std::vector<double> log_lambda_grid(double lo = 1e-4, double hi = 1.0, int n = 100) {
  std::vector<double> r(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    r[static_cast<std::size_t>(i)] = n == 1 ? lo : std::pow(10.0, std::log10(lo) + (std::log10(hi) - std::log10(lo)) * i / (n - 1));
  return r;
}

/// Per-column bounds for one system.
struct ThresholdBounds {
  Eigen::VectorXd L, U;
};

inline ThresholdBounds threshold_bounds(const RegressionProblem& p, double lam) {
  const double bn = p.b.norm();
  ThresholdBounds t{Eigen::VectorXd(p.J()), Eigen::VectorXd(p.J())};
  for (Eigen::Index k = 0; k < p.J(); ++k) {
    const double gk = p.G.col(k).norm();
    const double ratio = gk > 0.0 ? bn / gk : std::numeric_limits<double>::infinity();
    t.L[k] = lam * std::max(1.0, ratio);
    t.U[k] = std::min(1.0, ratio) / lam;
  }
  return t;
}

/// Constrained solve restricted to a support; returns the full-length coefficient vector.
class SupportSolver {
 public:
  SupportSolver(const RegressionProblem& p, QPOptions opt) : p_(p), opt_(opt) {}

  const QPResult& solve(const Support& s) {
    {
      std::lock_guard<std::mutex> lk(m_);
      if (auto it = cache_.find(s); it != cache_.end()) return it->second;
    }
    std::vector<Eigen::Index> cols;
    for (Eigen::Index k = 0; k < p_.J(); ++k)
      if (s[static_cast<std::size_t>(k)]) cols.push_back(k);
    QPProblem q;
    q.G = p_.G(Eigen::all, cols);
    q.b = p_.b;
    q.A = p_.A.rows() ? Eigen::MatrixXd(p_.A(Eigen::all, cols)) : Eigen::MatrixXd(0, Eigen::Index(cols.size()));
    q.C = p_.C.rows() ? Eigen::MatrixXd(p_.C(Eigen::all, cols)) : Eigen::MatrixXd(0, Eigen::Index(cols.size()));
    q.D = p_.C.rows() ? p_.D : Eigen::VectorXd(0);
    QPResult r = qp_solve(q, opt_);
    Eigen::VectorXd w = Eigen::VectorXd::Zero(p_.J());
    for (std::size_t i = 0; i < cols.size(); ++i) w[cols[i]] = r.w[static_cast<Eigen::Index>(i)];
    r.w = std::move(w);
    std::lock_guard<std::mutex> lk(m_);
    return cache_.emplace(s, std::move(r)).first->second;
  }

  std::size_t solves() const { return cache_.size(); }

 private:
  const RegressionProblem& p_;
  QPOptions opt_;
  std::mutex m_;
  std::map<Support, QPResult> cache_;
};

struct MstlsResult {
  Eigen::VectorXd w;
  Support support;
  int iterations = 0;
  KKTReport kkt;
};

inline Support full_support(Eigen::Index J) { return Support(static_cast<std::size_t>(J), 1); }

inline int support_size(const Support& s) {
  int n = 0;
  for (char c : s) n += c != 0;
  return n;
}

namespace detail {

inline Support forced_mask(Eigen::Index J, const std::vector<Eigen::Index>& forced) {
  Support f(static_cast<std::size_t>(J), 0);
  for (auto k : forced) f[static_cast<std::size_t>(k)] = 1;
  return f;
}

// Keep-set from summed magnitudes and summed bounds (one system: plain bounds).
inline Support keep_set(const std::vector<const Eigen::VectorXd*>& w, const std::vector<ThresholdBounds>& tb,
                        const Support& forced, const Support& current) {
  const std::size_t J = forced.size();
  Support s(J, 0);
  for (std::size_t k = 0; k < J; ++k) {
    if (!current[k]) continue;
    if (forced[k]) {
      s[k] = 1;
      continue;
    }
    double mag = 0.0, L = 0.0, U = 0.0;
    for (std::size_t p = 0; p < w.size(); ++p) {
      mag += std::abs((*w[p])[static_cast<Eigen::Index>(k)]);
      L += tb[p].L[static_cast<Eigen::Index>(k)];
      U += tb[p].U[static_cast<Eigen::Index>(k)];
    }
    s[k] = (L <= mag && mag <= U) ? 1 : 0;
  }
  return s;
}

}  // namespace detail

/// Thresholding iteration for a group of systems sharing one library. The full-support solves
/// w0[p] are the starting points.
inline std::vector<MstlsResult> group_mstls_step(std::vector<SupportSolver*>& solvers,
                                                 const std::vector<const RegressionProblem*>& probs,
                                                 const std::vector<Eigen::VectorXd>& w0, double lam) {
  if (!(lam > 0.0)) throw std::invalid_argument("mstls: lambda must be positive");
  const std::size_t P = probs.size();
  const Eigen::Index J = probs[0]->J();
  std::vector<ThresholdBounds> tb;
  for (auto* p : probs) tb.push_back(threshold_bounds(*p, lam));
  const Support forced = detail::forced_mask(J, probs[0]->forced);
  std::vector<Eigen::VectorXd> w = w0;
  Support cur = full_support(J);
  int it = 0;
  for (; it <= J; ++it) {
    std::vector<const Eigen::VectorXd*> wp;
    for (auto& x : w) wp.push_back(&x);
    const Support next = detail::keep_set(wp, tb, forced, cur);
    if (next == cur && it > 0) break;
    cur = next;
    if (support_size(cur) == 0) {
      for (auto& x : w) x.setZero();
      break;
    }
    for (std::size_t p = 0; p < P; ++p) w[p] = solvers[p]->solve(cur).w;
  }
  std::vector<MstlsResult> out(P);
  for (std::size_t p = 0; p < P; ++p) {
    out[p].w = w[p];
    out[p].support = cur;
    out[p].iterations = it;
    if (support_size(cur)) out[p].kkt = solvers[p]->solve(cur).kkt;
  }
  return out;
}

inline MstlsResult mstls_step(const RegressionProblem& p, double lam, const QPOptions& opt = {}) {
  SupportSolver s(p, opt);
  std::vector<SupportSolver*> ss{&s};
  const Eigen::VectorXd w0 = s.solve(full_support(p.J())).w;
  return group_mstls_step(ss, {&p}, {w0}, lam)[0];
}

struct PathPoint {
  double lambda = 0.0;
  double loss = 0.0;
  int nnz = 0;
  Support support;
};

struct SelectionResult {
  double lambda_hat = 0.0;
  std::size_t index = 0;
  std::vector<MstlsResult> w;        // one per system at lambda_hat
  std::vector<Eigen::VectorXd> w0;   // constrained full-support solves
  std::vector<PathPoint> path;
  std::size_t qp_solves = 0;

  nlohmann::json to_json() const {
    nlohmann::json p = nlohmann::json::array();
    for (const auto& pt : path) p.push_back({{"lambda", pt.lambda}, {"loss", pt.loss}, {"nnz", pt.nnz}});
    nlohmann::json kk = nlohmann::json::array();
    for (const auto& r : w) kk.push_back(r.kkt.to_json());
    return {{"lambda_hat", lambda_hat}, {"index", index}, {"path", p}, {"kkt", kk}, {"qp_solves", qp_solves}};
  }
};

/// Ties within this relative margin count as equal losses, and the smallest lambda wins.
inline constexpr double kLossTieTol = 1e-12;

/// Index of the first entry within the tie margin of the minimum; -1 if none is finite.
inline long smallest_minimizer(const std::vector<double>& loss) {
  double best = std::numeric_limits<double>::infinity();
  for (double l : loss) best = std::min(best, l);
  if (!std::isfinite(best)) return -1;
  for (std::size_t i = 0; i < loss.size(); ++i)
    if (loss[i] <= best + kLossTieTol * std::abs(best)) return static_cast<long>(i);
  return -1;
}

inline double mstls_loss(const RegressionProblem& p, const Eigen::VectorXd& w, const Eigen::VectorXd& w0) {
  const double den = (p.G * w0).norm();
  const double fit = den > 0.0 ? (p.G * (w - w0)).norm() / den : 0.0;
  int nnz = 0;
  for (Eigen::Index k = 0; k < w.size(); ++k) nnz += w[k] != 0.0;
  return fit + double(nnz) / double(p.J());
}

/// Lambda path over a group of systems (P = 1 for a single equation); the loss is summed over systems.
inline SelectionResult group_select_lambda(const std::vector<const RegressionProblem*>& probs,
                                           const std::vector<double>& grid, const QPOptions& opt = {},
                                           int workers = 1) {
  if (grid.empty()) throw std::invalid_argument("select_lambda: empty lambda grid");
  if (probs.empty()) throw std::invalid_argument("select_lambda: no systems");
  for (auto* p : probs) {
    if (p->J() != probs[0]->J()) throw std::invalid_argument("group_mstls: inconsistent libraries across systems");
    if (p->forced != probs[0]->forced) throw std::invalid_argument("group_mstls: inconsistent forced sets");
  }
  const std::size_t P = probs.size();
  std::vector<std::unique_ptr<SupportSolver>> owners;
  std::vector<SupportSolver*> solvers;
  for (auto* p : probs) {
    owners.push_back(std::make_unique<SupportSolver>(*p, opt));
    solvers.push_back(owners.back().get());
  }
  SelectionResult out;
  for (std::size_t p = 0; p < P; ++p) out.w0.push_back(solvers[p]->solve(full_support(probs[p]->J())).w);

  std::vector<std::vector<MstlsResult>> per(grid.size());
  std::vector<std::string> errors(grid.size());
  auto run = [&](std::size_t i) {
    try {
      per[i] = group_mstls_step(solvers, probs, out.w0, grid[i]);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  };
  if (workers <= 1) {
    for (std::size_t i = 0; i < grid.size(); ++i) run(i);
  } else {
    std::vector<std::future<void>> fs;
    for (int t = 0; t < workers; ++t)
      fs.push_back(std::async(std::launch::async, [&, t] {
        for (std::size_t i = static_cast<std::size_t>(t); i < grid.size(); i += static_cast<std::size_t>(workers)) run(i);
      }));
    for (auto& f : fs) f.get();
  }

  std::vector<double> losses;
  std::string last_err;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    PathPoint pt;
    pt.lambda = grid[i];
    if (!errors[i].empty()) {
      pt.loss = std::numeric_limits<double>::infinity();
      last_err = errors[i];
      out.path.push_back(pt);
      losses.push_back(pt.loss);
      continue;
    }
    for (std::size_t p = 0; p < P; ++p) pt.loss += mstls_loss(*probs[p], per[i][p].w, out.w0[p]);
    pt.support = per[i][0].support;
    pt.nnz = support_size(pt.support);
    out.path.push_back(pt);
    losses.push_back(pt.loss);
  }
  const long i = smallest_minimizer(losses);
  if (i < 0) throw QPError("select_lambda: every lambda failed; last error: " + last_err);
  out.index = static_cast<std::size_t>(i);
  out.lambda_hat = grid[out.index];
  out.w = per[out.index];
  for (auto* s : solvers) out.qp_solves += s->solves();
  return out;
}

inline SelectionResult select_lambda(const RegressionProblem& p, const std::vector<double>& grid,
                                     const QPOptions& opt = {}, int workers = 1) {
  return group_select_lambda({&p}, grid, opt, workers);
}

}  // namespace trtc
