#pragma once

// Closure models for the total-energy moment system
//   d_t e = w01 d_x F
//   d_t F = d_x P^F(u) + Q^F(u)
//   d_t T = w02 T + w03 S
//   d_t S = d_x P^S(u) + Q^S(u)
// with P = sum w f over flux terms and Q = sum w g over sources (the flux function is p = -P).
// Also: log-linear parameter dependence w = w0 gamma^eta_g (T_in^3)^eta_T and the tabulated
// optically thin closure.

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "trtc/constraints.hpp"
#include "trtc/physics.hpp"
#include "trtc/termlib.hpp"

namespace trtc {

class ClosureError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct WeightedTerm {
  Term term;
  double w = 0.0;
};

struct ClosureModel {
  std::array<std::vector<WeightedTerm>, kNumVars> eq;
  bool has_params = false;
  double gamma = 0.0;
  double T_in3 = 0.0;
  nlohmann::json provenance = nlohmann::json::object();

  const std::vector<WeightedTerm>& operator[](Var v) const { return eq[static_cast<int>(v)]; }
  std::vector<WeightedTerm>& operator[](Var v) { return eq[static_cast<int>(v)]; }

  /// Nonzero coefficients of a model library.
  static ClosureModel from_library(const ModelLibrary& lib, const std::array<Eigen::VectorXd, kNumVars>& W) {
    ClosureModel m;
    for (int v = 0; v < kNumVars; ++v) {
      if (W[v].size() != static_cast<Eigen::Index>(lib.eq[v].size()))
        throw ClosureError(std::string("from_library: coefficient block size mismatch for ") + kVarNames[v]);
      for (std::size_t k = 0; k < lib.eq[v].size(); ++k)
        if (W[v][static_cast<Eigen::Index>(k)] != 0.0) m.eq[v].push_back({lib.eq[v].terms[k], W[v][static_cast<Eigen::Index>(k)]});
    }
    return m;
  }

  /// Coefficient vector on a library (terms absent from the model are zero).
  Eigen::VectorXd coefficients(const TermLibrary& lib) const {
    Eigen::VectorXd w = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(lib.size()));
    for (const auto& wt : eq[static_cast<int>(lib.slot)]) {
      const long k = lib.find(wt.term);
      if (k < 0) throw ClosureError("coefficients: term " + wt.term.name() + " not in library");
      w[k] = wt.w;
    }
    return w;
  }

  double coefficient(Var slot, TermKind kind, const Monomial& m) const {
    for (const auto& wt : eq[static_cast<int>(slot)])
      if (wt.term.kind == kind && wt.term.m == m) return wt.w;
    return 0.0;
  }

  /// Flux aggregate P_v(u) (the equation reads d_t u_v = d_x P_v + Q_v).
  double flux(Var v, const State& u) const {
    double s = 0.0;
    for (const auto& wt : eq[static_cast<int>(v)])
      if (wt.term.kind == TermKind::flux) s += wt.w * wt.term.m.eval(u);
    return s;
  }
  double source(Var v, const State& u) const {
    double s = 0.0;
    for (const auto& wt : eq[static_cast<int>(v)])
      if (wt.term.kind == TermKind::source) s += wt.w * wt.term.m.eval(u);
    return s;
  }
  double dsource(Var v, Var by, const State& u) const {
    double s = 0.0;
    for (const auto& wt : eq[static_cast<int>(v)])
      if (wt.term.kind == TermKind::source) s += wt.w * wt.term.m.deriv(by, u);
    return s;
  }
  double dflux(Var v, Var by, const State& u) const {
    double s = 0.0;
    for (const auto& wt : eq[static_cast<int>(v)])
      if (wt.term.kind == TermKind::flux) s += wt.w * wt.term.m.deriv(by, u);
    return s;
  }
  bool has_flux(Var v) const {
    for (const auto& wt : eq[static_cast<int>(v)])
      if (wt.term.kind == TermKind::flux) return true;
    return false;
  }

  /// Bound on |eigenvalues| of the flux Jacobian of (-P_e, -P_F, 0, -P_S). The (e, F) block has
  /// lambda^2 - b lambda + w01 a = 0 with a = d_e p^F, b = d_F p^F; the S equation adds d = d_S p^S.
  double max_wave_speed(const State& u) const {
    const double w01 = dflux(Var::e, Var::F, u);
    const double a = -dflux(Var::F, Var::e, u);
    const double b = -dflux(Var::F, Var::F, u);
    const double d = -dflux(Var::S, Var::S, u);
    const double disc = b * b - 4.0 * w01 * a;
    double s = std::abs(d);
    s = std::max(s, 0.5 * (std::abs(b) + std::sqrt(std::abs(disc))));
    s = std::max(s, std::sqrt(std::abs(w01 * a)));
    return s;
  }

  /// Parity audit: every term must respect the (x, F) -> (-x, -F) symmetry of its slot.
  bool parity_ok() const {
    for (const auto& e : eq)
      for (const auto& wt : e)
        if (!trtc::parity_ok(wt.term)) return false;
    return true;
  }

  int nnz() const {
    int n = 0;
    for (const auto& e : eq) n += static_cast<int>(e.size());
    return n;
  }

  std::string describe() const {
    std::ostringstream os;
    for (int v = 0; v < kNumVars; ++v) {
      os << "d_t " << kVarNames[v] << " =";
      for (const auto& wt : eq[v]) os << ' ' << (wt.w < 0 ? "- " : "+ ") << std::abs(wt.w) << ' ' << wt.term.name();
      os << '\n';
    }
    return os.str();
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["schema_version"] = 1;
    for (int v = 0; v < kNumVars; ++v) {
      nlohmann::json a = nlohmann::json::array();
      for (const auto& wt : eq[v]) a.push_back({{"term", trtc::to_json(wt.term)}, {"w", wt.w}});
      j["equations"][kVarNames[v]] = a;
    }
    if (has_params) j["params"] = {{"gamma", gamma}, {"T_in3", T_in3}};
    j["provenance"] = provenance;
    return j;
  }

  static ClosureModel from_json(const nlohmann::json& j) {
    ClosureModel m;
    for (int v = 0; v < kNumVars; ++v)
      for (const auto& x : j.at("equations").at(kVarNames[v])) {
        const double w = x.at("w").get<double>();
        if (!std::isfinite(w)) throw ClosureError("from_json: non-finite coefficient");
        m.eq[v].push_back({term_from_json(x.at("term")), w});
      }
    if (j.contains("params")) {
      m.has_params = true;
      m.gamma = j["params"].at("gamma");
      m.T_in3 = j["params"].at("T_in3");
    }
    if (j.contains("provenance")) m.provenance = j["provenance"];
    return m;
  }
};

/// Analytic base block: d_t e = -d_x F, d_t T = (-alpha T + c S) / rho c_V.
inline void set_analytic_base(ClosureModel& m, const EquilibriumParams& ep) {
  m[Var::e] = {{{Var::e, TermKind::flux, mono(0, 1, 0, 0), true}, -1.0}};
  m[Var::T] = {{{Var::T, TermKind::source, mono(0, 0, 1, 0), true}, -ep.alpha() / ep.rho_cv},
               {{Var::T, TermKind::source, mono(0, 0, 0, 1), true}, ep.c / ep.rho_cv}};
}

/// Pointwise right-hand side given a spatial-derivative operator for the flux aggregates.
using DerivativeOp = std::function<std::vector<double>(const std::vector<double>&)>;

inline std::array<std::vector<double>, kNumVars> rhs(const ClosureModel& m,
                                                     const std::array<std::vector<double>, kNumVars>& u,
                                                     const DerivativeOp& dx) {
  const std::size_t n = u[0].size();
  std::array<std::vector<double>, kNumVars> out;
  for (int v = 0; v < kNumVars; ++v) {
    std::vector<double> P(n, 0.0);
    out[v].assign(n, 0.0);
    const bool flux = m.has_flux(Var(v));
    for (std::size_t i = 0; i < n; ++i) {
      const State s{u[0][i], u[1][i], u[2][i], u[3][i]};
      if (flux) P[i] = m.flux(Var(v), s);
      out[v][i] = m.source(Var(v), s);
      if (!std::isfinite(out[v][i]) || !std::isfinite(P[i]))
        throw ClosureError(std::string("rhs: non-finite value in ") + kVarNames[v] + " equation at index " + std::to_string(i));
    }
    if (flux) {
      const auto d = dx(P);
      for (std::size_t i = 0; i < n; ++i) out[v][i] += d[i];
    }
  }
  return out;
}

// Log-linear parametrization.

struct ParamPoint {
  double gamma = 0.0;
  double T_in3 = 0.0;
};

struct LogLinearTerm {
  Term term;
  double w0 = 0.0;     // signed reference coefficient
  double eta_T = 0.0;
  double eta_g = 0.0;
  double r2 = 0.0;     // relative l2 error of the fit over the ensemble

  double at(double gamma, double T_in3) const { return w0 * std::pow(gamma, eta_g) * std::pow(T_in3, eta_T); }
};

struct ParametrizedClosure {
  std::vector<LogLinearTerm> terms;
  bool base_fitted = false;  // e and T equation terms present in terms
  nlohmann::json provenance = nlohmann::json::object();

  nlohmann::json to_json() const {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& t : terms)
      a.push_back({{"term", trtc::to_json(t.term)}, {"w0", t.w0}, {"eta_T", t.eta_T}, {"eta_gamma", t.eta_g}, {"r2", t.r2}});
    return {{"schema_version", 1}, {"terms", a}, {"base_fitted", base_fitted}, {"provenance", provenance}};
  }
  static ParametrizedClosure from_json(const nlohmann::json& j) {
    ParametrizedClosure p;
    for (const auto& x : j.at("terms"))
      p.terms.push_back({term_from_json(x.at("term")), x.at("w0"), x.at("eta_T"), x.at("eta_gamma"), x.at("r2")});
    p.base_fitted = j.value("base_fitted", false);
    if (j.contains("provenance")) p.provenance = j["provenance"];
    return p;
  }
};

/// Fit log10|w_i| = log10|w_i0| + eta_g log10 gamma + eta_T log10 T_in^3 per term over an ensemble.
/// Every term must appear with one sign in every member.
inline ParametrizedClosure fit_loglinear(const std::vector<std::pair<ParamPoint, ClosureModel>>& ens) {
  if (ens.size() < 3) throw ClosureError("fit_loglinear: need at least 3 ensemble points");
  Eigen::MatrixXd X(static_cast<Eigen::Index>(ens.size()), 3);
  for (std::size_t p = 0; p < ens.size(); ++p) {
    if (ens[p].first.gamma <= 0 || ens[p].first.T_in3 <= 0) throw ClosureError("fit_loglinear: parameters must be positive");
    X.row(static_cast<Eigen::Index>(p)) << 1.0, std::log10(ens[p].first.gamma), std::log10(ens[p].first.T_in3);
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  if (qr.rank() < 3) throw ClosureError("fit_loglinear: rank-deficient parameter design (collinear parameters)");

  ParametrizedClosure pc;
  std::vector<std::string> bad;
  const ClosureModel& ref = ens[0].second;
  for (int v = 0; v < kNumVars; ++v)
    for (const auto& wt : ref.eq[v]) {
      Eigen::VectorXd y(static_cast<Eigen::Index>(ens.size())), w(static_cast<Eigen::Index>(ens.size()));
      bool ok = true;
      const double sgn = wt.w > 0 ? 1.0 : -1.0;
      for (std::size_t p = 0; p < ens.size(); ++p) {
        const double c = ens[p].second.coefficient(Var(v), wt.term.kind, wt.term.m);
        if (c * sgn <= 0.0) ok = false;
        w[static_cast<Eigen::Index>(p)] = c;
        y[static_cast<Eigen::Index>(p)] = c * sgn > 0 ? std::log10(std::abs(c)) : 0.0;
      }
      if (!ok) {
        bad.push_back(std::string(kVarNames[v]) + ":" + wt.term.name());
        continue;
      }
      const Eigen::Vector3d beta = qr.solve(y);
      LogLinearTerm t{wt.term, sgn * std::pow(10.0, beta[0]), beta[2], beta[1], 0.0};
      Eigen::VectorXd fit(w.size());
      for (std::size_t p = 0; p < ens.size(); ++p) fit[static_cast<Eigen::Index>(p)] = t.at(ens[p].first.gamma, ens[p].first.T_in3);
      t.r2 = (fit - w).norm() / w.norm();
      if (v == 0 || v == 2) pc.base_fitted = true;
      pc.terms.push_back(t);
    }
  // Terms present elsewhere but missing from the first member.
  for (std::size_t p = 1; p < ens.size(); ++p)
    for (int v = 0; v < kNumVars; ++v)
      for (const auto& wt : ens[p].second.eq[v])
        if (ref.coefficient(Var(v), wt.term.kind, wt.term.m) == 0.0) {
          const std::string n = std::string(kVarNames[v]) + ":" + wt.term.name();
          if (std::find(bad.begin(), bad.end(), n) == bad.end()) bad.push_back(n);
        }
  if (!bad.empty()) {
    std::string s = "fit_loglinear: sign inconsistency or missing term across the ensemble:";
    for (const auto& b : bad) s += " " + b;
    throw ClosureError(s);
  }
  return pc;
}

struct InstantiateInfo {
  double kappa_L = 0.0;
  bool kappa_warning = false;
  std::string message;
};

/// Closure at (gamma, T_in^3); base terms from analytic defaults unless fitted. kappa_L is
/// evaluated with T_o and L (optional) and a warning raised below the validity threshold.
inline ClosureModel instantiate_at(const ParametrizedClosure& pc, double gamma, double T_in3, const EquilibriumParams& ep,
                                   InstantiateInfo* info = nullptr, double T_o = 1.0, double L = 4.0) {
  if (gamma <= 0 || T_in3 <= 0) throw ClosureError("instantiate_at: parameters must be positive");
  ClosureModel m;
  m.has_params = true;
  m.gamma = gamma;
  m.T_in3 = T_in3;
  if (!pc.base_fitted) {
    EquilibriumParams e2 = ep;
    e2.gamma = gamma;
    set_analytic_base(m, e2);
  }
  for (const auto& t : pc.terms) m[t.term.slot].push_back({t.term, t.at(gamma, T_in3)});
  if (info) {
    info->kappa_L = kappa_L(T_o, std::cbrt(T_in3), gamma, L).exact;
    info->kappa_warning = info->kappa_L < kappa_L_validity;
    if (info->kappa_warning) {
      std::ostringstream os;
      os << "kappa_L = " << info->kappa_L << " below the closure validity threshold " << kappa_L_validity;
      info->message = os.str();
    }
  }
  m.provenance = {{"instantiated_from", pc.provenance}, {"gamma", gamma}, {"T_in3", T_in3}};
  return m;
}

/// Tensor-product linear interpolation of log|w| on a rectangular grid in (log gamma, log T_in^3);
/// an alternative to the log-linear fit for queries inside the training hull.
inline ClosureModel interpolate_log_bilinear(const std::vector<std::pair<ParamPoint, ClosureModel>>& ens, double gamma,
                                             double T_in3) {
  std::vector<double> gs, ts;
  for (const auto& [p, m] : ens) {
    gs.push_back(std::log10(p.gamma));
    ts.push_back(std::log10(p.T_in3));
  }
  auto uniq = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end(), [](double a, double b) { return std::abs(a - b) < 1e-9; }), v.end());
    return v;
  };
  const auto G = uniq(gs), T = uniq(ts);
  if (G.size() * T.size() != ens.size() || G.size() < 2 || T.size() < 2)
    throw ClosureError("interpolate_log_bilinear: ensemble is not a full rectangular grid");
  const double lg = std::log10(gamma), lt = std::log10(T_in3);
  if (lg < G.front() - 1e-9 || lg > G.back() + 1e-9 || lt < T.front() - 1e-9 || lt > T.back() + 1e-9)
    throw ClosureError("interpolate_log_bilinear: query outside the training hull");
  auto bracket = [](const std::vector<double>& a, double x) {
    std::size_t i = 0;
    while (i + 2 < a.size() && x > a[i + 1]) ++i;
    return std::make_pair(i, std::clamp((x - a[i]) / (a[i + 1] - a[i]), 0.0, 1.0));
  };
  const auto [ig, fg] = bracket(G, lg);
  const auto [it, ft] = bracket(T, lt);
  auto member = [&](std::size_t a, std::size_t b) -> const ClosureModel& {
    for (std::size_t p = 0; p < ens.size(); ++p)
      if (std::abs(gs[p] - G[a]) < 1e-9 && std::abs(ts[p] - T[b]) < 1e-9) return ens[p].second;
    throw ClosureError("interpolate_log_bilinear: missing grid member");
  };
  const ClosureModel& m00 = member(ig, it);
  ClosureModel out;
  out.has_params = true;
  out.gamma = gamma;
  out.T_in3 = T_in3;
  for (int v = 0; v < kNumVars; ++v)
    for (const auto& wt : m00.eq[v]) {
      double acc = 0.0;
      const double sgn = wt.w > 0 ? 1.0 : -1.0;
      for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b) {
          const double c = member(ig + a, it + b).coefficient(Var(v), wt.term.kind, wt.term.m);
          if (c * sgn <= 0) throw ClosureError("interpolate_log_bilinear: sign change in " + wt.term.name());
          acc += (a ? fg : 1 - fg) * (b ? ft : 1 - ft) * std::log10(std::abs(c));
        }
      out.eq[v].push_back({wt.term, sgn * std::pow(10.0, acc)});
    }
  return out;
}

// Tabulated optically thin closure (coefficients in erg-based units, T in eV).

struct TabulatedRow {
  Var slot;
  TermKind kind;
  Monomial m;
  double w0, eta_T, eta_g, r2;
};

inline const std::vector<TabulatedRow>& published_rows() {
  static const std::vector<TabulatedRow> rows = {
      {Var::F, TermKind::flux, mono(1, 0, 0, 0), -8.17e+20, 1.56e-02, -1.87e-02, 2.31e-04},
      {Var::F, TermKind::flux, mono(1, 2, 0, 0), 6.80e-04, -2.65, -2.02e-02, 2.86e-04},
      {Var::F, TermKind::flux, mono(0, 4, 0, 0), -9.65e-27, -3.91, -1.01e-01, 8.11e-04},
      {Var::S, TermKind::flux, mono(0, 1, 0, 0), -3.49e-02, -7.06e-01, 7.19e-01, 8.51e-03},
      {Var::S, TermKind::flux, mono(0, 1, 0, 1), -4.01e-02, -1.39, 2.62e-02, 8.66e-04},
      {Var::S, TermKind::flux, mono(0, 1, 0, 3), 8.95e-05, -2.38, -1.69, 3.30e-04},
      {Var::S, TermKind::flux, mono(0, 3, 0, 0), 7.24e-26, -3.51, 8.03e-01, 3.33e-04},
      {Var::S, TermKind::flux, mono(0, 3, 0, 1), 1.70e-26, -4.08, 5.72e-02, 2.11e-04},
      {Var::S, TermKind::source, mono(0, 0, 0, 2), -8.60e+09, -7.67e-01, -6.10e-01, 2.76e-02},
      {Var::S, TermKind::source, mono(0, 0, 1, 1), 1.82e+11, -7.67e-01, 3.90e-01, 9.69e-03},
      {Var::S, TermKind::source, mono(1, 0, 0, 1), 3.07e+07, -1.38, 1.07e-01, 2.45e-02},
      {Var::S, TermKind::source, mono(1, 0, 1, 0), -6.50e+08, -1.38, 1.11, 2.29e-02},
  };
  return rows;
}

/// Factor taking an erg-based coefficient to eV-based units: eps^(deg - d), deg the combined
/// power of e, F, S in the term, d = 1 for the e, F, S equations and 0 for T.
inline double erg_to_eV_factor(const Term& t) {
  const int deg = t.m[Var::e] + t.m[Var::F] + t.m[Var::S];
  const int d = t.slot == Var::T ? 0 : 1;
  return std::pow(units::erg_per_eV, deg - d);
}

/// The tabulated closure as a ParametrizedClosure; eV units unless erg_units is set.
inline ParametrizedClosure published_closure(bool erg_units = false) {
  ParametrizedClosure pc;
  for (const auto& r : published_rows()) {
    const Term t{r.slot, r.kind, r.m, r.slot == Var::S && r.kind == TermKind::source};
    pc.terms.push_back({t, r.w0 * (erg_units ? 1.0 : erg_to_eV_factor(t)), r.eta_T, r.eta_g, r.r2});
  }
  pc.provenance = {{"source", "tabulated log-linear closure"}, {"units", erg_units ? "erg" : "eV"}};
  return pc;
}

/// The nine optically thin training points: gamma in {1e8, 10^8.5, 1e9}, T_in^3 in {1e9, 10^9.5, 1e10}.
inline std::vector<ParamPoint> training_points() {
  std::vector<ParamPoint> r;
  for (double lg : {8.0, 8.5, 9.0})
    for (double lt : {9.0, 9.5, 10.0}) r.push_back({std::pow(10.0, lg), std::pow(10.0, lt)});
  return r;
}

/// The 5 x 5 parameter grid {1e8, ..., 1e10}^2 in half decades.
inline std::vector<ParamPoint> parameter_grid() {
  std::vector<ParamPoint> r;
  for (int a = 0; a < 5; ++a)
    for (int b = 0; b < 5; ++b) r.push_back({std::pow(10.0, 8.0 + 0.5 * a), std::pow(10.0, 8.0 + 0.5 * b)});
  return r;
}

inline bool is_training_point(const ParamPoint& p) {
  for (const auto& q : training_points())
    if (std::abs(std::log10(p.gamma) - std::log10(q.gamma)) < 1e-9 && std::abs(std::log10(p.T_in3) - std::log10(q.T_in3)) < 1e-9)
      return true;
  return false;
}

}  // namespace trtc
