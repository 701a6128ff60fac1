#pragma once

// Linear constraints on closure coefficients.
//
// Rows are assembled for coefficients of the scaled problem: variables u_v / s_v, x / s_x,
// t / s_t. A physical coefficient is w = w_hat * m with m = (s_slot / s_t) s_x^[flux] / prod s_v^p_v.
// With unit scales the rows are the physical ones.
//
//   equality      q(u*) = 0 at black-body states               (T, S equations; F rows vanish)
//   hyperbolicity sum w d_e f <= 0  (i.e. d_e p^F >= 0)          (F flux block)
//   stability     d_F q^F <= 0
//                 d_T q^S + (alpha/c) d_S q^S <= 0
//                 d_S q^S <= alpha / rho c_V

#include <array>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "trtc/dataset.hpp"
#include "trtc/physics.hpp"
#include "trtc/termlib.hpp"

namespace trtc {

struct Scaling {
  State s{1.0, 1.0, 1.0, 1.0};
  double sx = 1.0;
  double st = 1.0;

  State to_hat(const State& u) const { return {u[0] / s[0], u[1] / s[1], u[2] / s[2], u[3] / s[3]}; }

  /// Physical coefficient per unit scaled coefficient.
  double multiplier(const Term& t) const {
    double m = s[static_cast<int>(t.slot)] / st;
    if (t.kind == TermKind::flux) m *= sx;
    for (int v = 0; v < kNumVars; ++v) m /= std::pow(s[v], t.m.p[v]);
    return m;
  }

  /// Scales from data magnitudes: s_v = max |u_v| (1 if zero), s_x, s_t = domain extents.
  static Scaling from_data(const MomentDataset& d) {
    Scaling sc;
    for (int v = 0; v < kNumVars; ++v) {
      double m = 0.0;
      for (double x : d.fields[v]) m = std::max(m, std::abs(x));
      sc.s[v] = m > 0.0 ? m : 1.0;
    }
    sc.sx = d.x.size() > 1 ? d.x.back() - d.x.front() : 1.0;
    sc.st = d.t.size() > 1 ? d.t.back() - d.t.front() : 1.0;
    return sc;
  }

  nlohmann::json to_json() const { return {{"s", s}, {"sx", sx}, {"st", st}}; }
  static Scaling from_json(const nlohmann::json& j) {
    Scaling sc;
    sc.s = j.at("s").get<State>();
    sc.sx = j.at("sx").get<double>();
    sc.st = j.at("st").get<double>();
    return sc;
  }
};

/// Physical material constants the constraints depend on.
struct EquilibriumParams {
  double gamma = 1e9;
  double rho_cv = ProblemParams{}.rho_cv;
  double a = units::a;
  double c = units::c;

  double beta() const { return 15.0 * a * gamma / units::pi4; }    // S* = beta T
  double alpha() const { return 15.0 * a * c * gamma / units::pi4; }  // a c sigma_P T^4 = alpha T

  static EquilibriumParams from(const ProblemParams& p) { return {p.gamma, p.rho_cv, units::a, units::c}; }
};

/// Black-body state (rho c_V T + a T^4, 0, T, a sigma_P(T) T^4) with a sigma_P T^4 = beta T.
inline State equilibrium_state(double T, const EquilibriumParams& ep) {
  return {ep.rho_cv * T + ep.a * T * T * T * T, 0.0, T, ep.beta() * T};
}

inline std::vector<State> equilibrium_states(const std::vector<double>& T_grid, const EquilibriumParams& ep) {
  std::vector<State> r;
  for (double T : T_grid) {
    if (T < 0.0) throw std::invalid_argument("equilibrium_states: negative temperature");
    r.push_back(equilibrium_state(T, ep));
  }
  return r;
}

inline std::vector<double> linspace(double a, double b, int n) {
  std::vector<double> r(n);
  for (int i = 0; i < n; ++i) r[i] = n == 1 ? a : a + (b - a) * double(i) / double(n - 1);
  return r;
}

inline std::vector<double> default_T_grid(double T_max) { return linspace(0.0, 4.0 * T_max, 7); }

/// (e, F, T) nodes: linspace(0, e_max, p) x linspace(0, F_max, p+1) x linspace(0, T_max, p+1).
inline std::vector<State> hyperbolicity_nodes(double e_max, double F_max, double T_max, int p_max) {
  std::vector<State> r;
  for (double e : linspace(0.0, e_max, p_max))
    for (double F : linspace(0.0, F_max, p_max + 1))
      for (double T : linspace(0.0, T_max, p_max + 1)) r.push_back({e, F, T, 0.0});
  return r;
}

/// n states on the inflow boundary x index 0 at evenly spaced time indices.
inline std::vector<State> boundary_samples(const MomentDataset& d, int n = 20) {
  std::vector<State> r;
  const std::size_t Nt = d.nt();
  for (int k = 0; k < n; ++k) {
    const std::size_t j = n == 1 ? 0 : static_cast<std::size_t>(std::llround(double(k) * (Nt - 1) / (n - 1)));
    r.push_back(d.state(0, j));
  }
  return r;
}

struct ConstraintGrids {
  std::vector<double> T_grid;
  std::vector<State> hyp_nodes;
  std::vector<State> boundary;

  /// Grids from training data maxima with the given F-library cap.
  static ConstraintGrids from_data(const MomentDataset& d, int p_max_F = 3, int n_boundary = 20) {
    double em = 0, Fm = 0, Tm = 0;
    for (double v : d.field(Var::e)) em = std::max(em, std::abs(v));
    for (double v : d.field(Var::F)) Fm = std::max(Fm, std::abs(v));
    for (double v : d.field(Var::T)) Tm = std::max(Tm, std::abs(v));
    return {default_T_grid(Tm), hyperbolicity_nodes(em, Fm, Tm, p_max_F), boundary_samples(d, n_boundary)};
  }
};

/// Constraints acting on one equation's coefficient vector (scaled coefficients).
struct EquationConstraints {
  Var slot = Var::e;
  Eigen::MatrixXd A;  // A w = 0
  Eigen::MatrixXd C;  // C w <= D
  Eigen::VectorXd D;
  std::vector<std::string> eq_tags, ineq_tags;
  int skipped_rows = 0;
  int zero_eq_rows = 0;

  Eigen::Index n_eq() const { return A.rows(); }
  Eigen::Index n_ineq() const { return C.rows(); }
};

namespace detail {

inline void append_row(Eigen::MatrixXd& M, const Eigen::RowVectorXd& r) {
  M.conservativeResize(M.rows() + 1, r.size());
  M.row(M.rows() - 1) = r;
}

inline void append_ineq(EquationConstraints& ec, const Eigen::RowVectorXd& r, double d, std::string tag) {
  append_row(ec.C, r);
  ec.D.conservativeResize(ec.D.size() + 1);
  ec.D[ec.D.size() - 1] = d;
  ec.ineq_tags.push_back(std::move(tag));
}

// Derivative of a term's monomial in scaled variables; nullopt if singular.
inline bool scaled_deriv(const Term& t, Var v, const State& uh, double& out) {
  try {
    out = t.m.deriv(v, uh);
  } catch (const std::domain_error&) {
    return false;
  }
  return std::isfinite(out);
}

inline EquationConstraints empty_constraints(Var slot, Eigen::Index J) {
  EquationConstraints ec;
  ec.slot = slot;
  ec.A.resize(0, J);
  ec.C.resize(0, J);
  ec.D.resize(0);
  return ec;
}

}  // namespace detail

/// Rows g_k(u*_i) for source columns; flux columns are zero. All-zero rows are counted and dropped.
inline void build_equality(const TermLibrary& lib, const std::vector<State>& equilibria, const Scaling& sc,
                           EquationConstraints& ec) {
  const Eigen::Index J = static_cast<Eigen::Index>(lib.size());
  for (std::size_t i = 0; i < equilibria.size(); ++i) {
    const State uh = sc.to_hat(equilibria[i]);
    Eigen::RowVectorXd r = Eigen::RowVectorXd::Zero(J);
    bool singular = false;
    for (Eigen::Index k = 0; k < J; ++k) {
      const Term& t = lib.terms[k];
      if (t.kind != TermKind::source) continue;
      try {
        r[k] = t.m.eval(uh);
      } catch (const std::domain_error&) {
        singular = true;
      }
    }
    if (singular) {
      ++ec.skipped_rows;
      continue;
    }
    if (r.lpNorm<Eigen::Infinity>() == 0.0) {
      ++ec.zero_eq_rows;
      continue;
    }
    detail::append_row(ec.A, r);
    std::ostringstream os;
    os << "equilibrium T=" << equilibria[i][2];
    ec.eq_tags.push_back(os.str());
  }
}

/// sum_k w_k d_e f_k(u) <= 0 at each state for the flux block of the F equation.
inline void build_hyperbolicity(const TermLibrary& lib, const std::vector<State>& states, const Scaling& sc,
                                EquationConstraints& ec, const std::string& tag = "hyperbolicity") {
  const Eigen::Index J = static_cast<Eigen::Index>(lib.size());
  for (std::size_t i = 0; i < states.size(); ++i) {
    const State uh = sc.to_hat(states[i]);
    Eigen::RowVectorXd r = Eigen::RowVectorXd::Zero(J);
    bool ok = true;
    for (Eigen::Index k = 0; k < J; ++k)
      if (lib.terms[k].kind == TermKind::flux) ok &= detail::scaled_deriv(lib.terms[k], Var::e, uh, r[k]);
    if (!ok) {
      ++ec.skipped_rows;
      continue;
    }
    detail::append_ineq(ec, r, 0.0, tag + " #" + std::to_string(i));
  }
}

/// d_F q^F <= 0 at each state (F equation sources).
inline void build_F_source_stability(const TermLibrary& lib, const std::vector<State>& states, const Scaling& sc,
                                     EquationConstraints& ec, const std::string& tag = "dF qF") {
  const Eigen::Index J = static_cast<Eigen::Index>(lib.size());
  for (std::size_t i = 0; i < states.size(); ++i) {
    const State uh = sc.to_hat(states[i]);
    Eigen::RowVectorXd r = Eigen::RowVectorXd::Zero(J);
    bool ok = true;
    for (Eigen::Index k = 0; k < J; ++k)
      if (lib.terms[k].kind == TermKind::source) ok &= detail::scaled_deriv(lib.terms[k], Var::F, uh, r[k]);
    if (!ok) {
      ++ec.skipped_rows;
      continue;
    }
    detail::append_ineq(ec, r, 0.0, tag + " #" + std::to_string(i));
  }
}

/// d_T q^S + (alpha/c) d_S q^S <= 0 and d_S q^S <= alpha / rho c_V at each state.
inline void build_S_source_stability(const TermLibrary& lib, const std::vector<State>& states, const Scaling& sc,
                                     const EquilibriumParams& ep, EquationConstraints& ec,
                                     const std::string& tag = "qS") {
  const Eigen::Index J = static_cast<Eigen::Index>(lib.size());
  const double ratio = ep.alpha() / ep.c * sc.s[2] / sc.s[3];
  const double bound = sc.st * ep.alpha() / ep.rho_cv;
  std::vector<std::pair<Eigen::RowVectorXd, std::string>> mids, thirds;
  for (std::size_t i = 0; i < states.size(); ++i) {
    const State uh = sc.to_hat(states[i]);
    Eigen::RowVectorXd rm = Eigen::RowVectorXd::Zero(J), rs = Eigen::RowVectorXd::Zero(J);
    bool ok = true;
    for (Eigen::Index k = 0; k < J; ++k) {
      if (lib.terms[k].kind != TermKind::source) continue;
      double dT = 0, dS = 0;
      ok &= detail::scaled_deriv(lib.terms[k], Var::T, uh, dT);
      ok &= detail::scaled_deriv(lib.terms[k], Var::S, uh, dS);
      rm[k] = dT + ratio * dS;
      rs[k] = dS;
    }
    if (!ok) {
      ec.skipped_rows += 2;
      continue;
    }
    mids.push_back({rm, tag + " dT+ #" + std::to_string(i)});
    thirds.push_back({rs, tag + " dS #" + std::to_string(i)});
  }
  for (auto& [r, t] : mids) detail::append_ineq(ec, r, 0.0, t);
  for (auto& [r, t] : thirds) detail::append_ineq(ec, r, bound, t);
}

struct ModelConstraints {
  std::array<EquationConstraints, kNumVars> eq;

  const EquationConstraints& operator[](Var v) const { return eq[static_cast<int>(v)]; }
  EquationConstraints& operator[](Var v) { return eq[static_cast<int>(v)]; }

  int total_eq() const {
    int n = 0;
    for (const auto& e : eq) n += static_cast<int>(e.n_eq());
    return n;
  }
  int total_ineq() const {
    int n = 0;
    for (const auto& e : eq) n += static_cast<int>(e.n_ineq());
    return n;
  }
  int total_skipped() const {
    int n = 0;
    for (const auto& e : eq) n += e.skipped_rows;
    return n;
  }
  int total_zero_eq() const {
    int n = 0;
    for (const auto& e : eq) n += e.zero_eq_rows;
    return n;
  }

  nlohmann::json report() const {
    nlohmann::json j;
    for (int v = 0; v < kNumVars; ++v)
      j[kVarNames[v]] = {{"equality", eq[v].n_eq()},
                         {"equality_zero_dropped", eq[v].zero_eq_rows},
                         {"inequality", eq[v].n_ineq()},
                         {"skipped_singular", eq[v].skipped_rows}};
    j["total_equality"] = total_eq();
    j["total_inequality"] = total_ineq();
    j["total_inequality_slots"] = total_ineq() + total_skipped();
    return j;
  }
};

/// Full constraint set for the model library.
inline ModelConstraints build_constraints(const ModelLibrary& lib, const ConstraintGrids& grids,
                                          const EquilibriumParams& ep, const Scaling& sc) {
  ModelConstraints mc;
  for (int v = 0; v < kNumVars; ++v) mc.eq[v] = detail::empty_constraints(Var(v), static_cast<Eigen::Index>(lib.eq[v].size()));
  const auto eqs = equilibrium_states(grids.T_grid, ep);
  build_equality(lib[Var::F], eqs, sc, mc[Var::F]);
  build_equality(lib[Var::T], eqs, sc, mc[Var::T]);
  build_equality(lib[Var::S], eqs, sc, mc[Var::S]);

  std::vector<State> hyp = grids.hyp_nodes;
  hyp.insert(hyp.end(), grids.boundary.begin(), grids.boundary.end());
  build_hyperbolicity(lib[Var::F], hyp, sc, mc[Var::F]);

  std::vector<State> stab;
  for (double T : grids.T_grid) stab.push_back({0.0, 0.0, T, 0.0});  // d_F q^F depends on T only
  stab.insert(stab.end(), grids.boundary.begin(), grids.boundary.end());
  build_F_source_stability(lib[Var::F], stab, sc, mc[Var::F]);

  std::vector<State> stabS = eqs;
  stabS.insert(stabS.end(), grids.boundary.begin(), grids.boundary.end());
  build_S_source_stability(lib[Var::S], stabS, sc, ep, mc[Var::S]);
  return mc;
}

// A-posteriori audit on data, in physical coefficients.

struct AuditViolation {
  std::string kind;
  std::size_t point = 0;  // flat index j * N_x + i
  double value = 0.0;
  double bound = 0.0;
  double tol = 0.0;
};

struct AuditReport {
  std::size_t points = 0;
  std::vector<AuditViolation> violations;
  bool ok() const { return violations.empty(); }
};

namespace detail {
// Sum of w_k * dv f_k with a magnitude scale sum |w_k dv f_k|.
inline std::pair<double, double> dsum(const TermLibrary& lib, const Eigen::VectorXd& w, TermKind kind, Var v,
                                      const State& u) {
  double s = 0.0, mag = 0.0;
  for (std::size_t k = 0; k < lib.size(); ++k) {
    if (lib.terms[k].kind != kind || w[static_cast<Eigen::Index>(k)] == 0.0) continue;
    const double d = w[static_cast<Eigen::Index>(k)] * lib.terms[k].m.deriv(v, u);
    s += d;
    mag += std::abs(d);
  }
  return {s, mag};
}
}  // namespace detail

/// Check hyperbolicity and the source-stability inequalities at every data point. Tolerance is
/// rel_tol times the magnitude of the summed terms (plus the bound for the last row).
inline AuditReport audit(const ModelLibrary& lib, const std::array<Eigen::VectorXd, kNumVars>& W, const MomentDataset& d,
                         const EquilibriumParams& ep, double rel_tol = 1e-8) {
  AuditReport rep;
  const std::size_t n = d.nx() * d.nt();
  rep.points = n;
  const auto& wF = W[1];
  const auto& wS = W[3];
  const double bound = ep.alpha() / ep.rho_cv;
  for (std::size_t p = 0; p < n; ++p) {
    const State u{d.fields[0][p], d.fields[1][p], d.fields[2][p], d.fields[3][p]};
    auto check = [&](const char* kind, double val, double mag, double bnd) {
      const double tol = rel_tol * (mag + std::abs(bnd));
      if (val > bnd + tol) rep.violations.push_back({kind, p, val, bnd, tol});
    };
    if (wF.size()) {
      auto [h, hm] = detail::dsum(lib[Var::F], wF, TermKind::flux, Var::e, u);
      check("hyperbolicity", h, hm, 0.0);
      if (u[2] > 0.0) {
        auto [b, bm] = detail::dsum(lib[Var::F], wF, TermKind::source, Var::F, u);
        check("dF qF", b, bm, 0.0);
      }
    }
    if (wS.size()) {
      auto [dT, mT] = detail::dsum(lib[Var::S], wS, TermKind::source, Var::T, u);
      auto [dS, mS] = detail::dsum(lib[Var::S], wS, TermKind::source, Var::S, u);
      const double r = ep.alpha() / ep.c;
      check("dT qS + (alpha/c) dS qS", dT + r * dS, mT + r * mS, 0.0);
      check("dS qS", dS, mS, bound);
    }
  }
  return rep;
}

}  // namespace trtc
