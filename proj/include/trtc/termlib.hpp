#pragma once

// Candidate-term libraries for the reflection-symmetric total energy model.
//
// Coefficients multiply terms as they appear on the right-hand side:
//   d_t u = sum_k w_k d_x f_k(u) + sum_k w_k g_k(u),
// so the flux function of the F and S equations is p = -sum_k w_k f_k.

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace trtc {

enum class Var : int { e = 0, F = 1, T = 2, S = 3 };
inline constexpr int kNumVars = 4;
inline constexpr const char* kVarNames[kNumVars] = {"e", "F", "T", "S"};

using State = std::array<double, kNumVars>;

enum class TermKind { flux, source };

/// Monomial e^pe F^pF T^pT S^pS. Only the T power may be negative.
struct Monomial {
  std::array<int, kNumVars> p{0, 0, 0, 0};

  int operator[](Var v) const { return p[static_cast<int>(v)]; }
  int degree() const { return p[0] + p[1] + p[2] + p[3]; }

  double eval(const State& u) const {
    // F factor first: F = 0 makes the term vanish regardless of the other factors.
    if (p[1] > 0 && u[1] == 0.0) return 0.0;
    double r = 1.0;
    for (int v = 0; v < kNumVars; ++v) {
      const int k = p[v];
      if (k == 0) continue;
      if (k < 0 && u[v] <= 0.0)
        throw std::domain_error(std::string("negative power of ") + kVarNames[v] + " at non-positive value");
      r *= ipow(u[v], k);
    }
    return r;
  }

  /// Partial derivative with respect to variable v.
  double deriv(Var v, const State& u) const {
    const int iv = static_cast<int>(v);
    const int k = p[iv];
    if (k == 0) return 0.0;
    Monomial m = *this;
    m.p[iv] -= 1;
    return k * m.eval(u);
  }

  std::string str() const {
    std::ostringstream os;
    bool first = true;
    for (int v = 0; v < kNumVars; ++v) {
      if (p[v] == 0) continue;
      if (!first) os << ' ';
      os << kVarNames[v];
      if (p[v] != 1) os << '^' << p[v];
      first = false;
    }
    if (first) os << '1';
    return os.str();
  }

  bool operator==(const Monomial&) const = default;

  static double ipow(double x, int k) {
    if (k < 0) return 1.0 / ipow(x, -k);
    double r = 1.0;
    while (k) {
      if (k & 1) r *= x;
      x *= x;
      k >>= 1;
    }
    return r;
  }
};

struct Term {
  Var slot = Var::F;
  TermKind kind = TermKind::source;
  Monomial m;
  bool forced = false;

  std::string name() const {
    return kind == TermKind::flux ? "dx(" + m.str() + ")" : m.str();
  }
  bool operator==(const Term& o) const {
    return slot == o.slot && kind == o.kind && m == o.m && forced == o.forced;
  }
};

/// Parity of a term under (x, F) -> (-x, -F): +1 if the evaluated column is even in F.
inline int f_parity(const Term& t) { return (t.m[Var::F] % 2 == 0) ? 1 : -1; }

/// Reflection-symmetry audit of a term in its slot.
inline bool parity_ok(const Term& t) {
  const int pF = t.m[Var::F];
  switch (t.slot) {
    case Var::e: return t.kind == TermKind::flux && pF % 2 == 1;
    case Var::T: return t.kind == TermKind::source && pF == 0;
    case Var::F:
      if (t.kind == TermKind::flux) return pF % 2 == 0 && t.m[Var::S] == 0;
      return pF % 2 == 1 && t.m[Var::e] == 0 && t.m[Var::S] == 0;
    case Var::S:
      if (t.kind == TermKind::flux) return pF % 2 == 1 && t.m[Var::e] == 0;
      return pF == 0;
  }
  return false;
}

struct LibraryCaps {
  int p_tot = 4;
  int p_max = 3;
};

struct TermLibrary {
  Var slot = Var::F;
  LibraryCaps caps;
  std::string convention;
  std::vector<Term> terms;

  std::size_t size() const { return terms.size(); }
  std::vector<std::size_t> forced_indices() const {
    std::vector<std::size_t> r;
    for (std::size_t i = 0; i < terms.size(); ++i)
      if (terms[i].forced) r.push_back(i);
    return r;
  }
  std::size_t count(TermKind k) const {
    std::size_t n = 0;
    for (const auto& t : terms) n += t.kind == k;
    return n;
  }
  long find(const Term& t) const {
    for (std::size_t i = 0; i < terms.size(); ++i)
      if (terms[i].kind == t.kind && terms[i].m == t.m) return static_cast<long>(i);
    return -1;
  }
};

inline Monomial mono(int pe, int pF, int pT, int pS) { return Monomial{{pe, pF, pT, pS}}; }

/// F-equation library: flux d_x(e^i F^{2j} T^k), 1 <= i+j+k <= p_tot, each index <= p_max;
/// sources T^j F for j in [-p_max, p_max].
inline TermLibrary build_F_library(int p_tot, int p_max) {
  if (p_tot < 1 || p_max < 1) throw std::invalid_argument("build_F_library: caps must be >= 1");
  TermLibrary lib;
  lib.slot = Var::F;
  lib.caps = {p_tot, p_max};
  lib.convention = "flux 1<=i+j+k<=p_tot; source T^j F, |j|<=p_max";
  for (int i = 0; i <= p_max; ++i)
    for (int j = 0; j <= p_max; ++j)
      for (int k = 0; k <= p_max; ++k) {
        const int s = i + j + k;
        if (s < 1 || s > p_tot) continue;
        lib.terms.push_back({Var::F, TermKind::flux, mono(i, 2 * j, k, 0), false});
      }
  for (int j = -p_max; j <= p_max; ++j)
    lib.terms.push_back({Var::F, TermKind::source, mono(0, 1, j, 0), false});
  return lib;
}

/// Source monomial dropped from the S library so the (4, 3) count is 62; see README.
inline Monomial default_sigma_excluded_source() { return mono(0, 0, 1, 0); }

/// S-equation library (S = sigma_E E): flux d_x(F^{2i+1} T^j S^k), 0 <= i+j+k <= p_tot;
/// sources e^i T^j S^k, 1 <= i+j+k <= p_tot, minus the excluded monomials.
/// The sources eS, eT, TS, S^2 are forced.
inline TermLibrary build_sigma_library(int p_tot, int p_max,
                                       const std::vector<Monomial>& excluded = {default_sigma_excluded_source()}) {
  if (p_tot < 1 || p_max < 1) throw std::invalid_argument("build_sigma_library: caps must be >= 1");
  TermLibrary lib;
  lib.slot = Var::S;
  lib.caps = {p_tot, p_max};
  std::ostringstream conv;
  conv << "flux 0<=i+j+k<=p_tot; source 1<=i+j+k<=p_tot; excluded sources:";
  for (const auto& m : excluded) conv << " [" << m.str() << "]";
  lib.convention = conv.str();
  for (int i = 0; i <= p_max; ++i)
    for (int j = 0; j <= p_max; ++j)
      for (int k = 0; k <= p_max; ++k) {
        if (i + j + k > p_tot) continue;
        lib.terms.push_back({Var::S, TermKind::flux, mono(0, 2 * i + 1, j, k), false});
      }
  const Monomial forced[] = {mono(1, 0, 0, 1), mono(1, 0, 1, 0), mono(0, 0, 1, 1), mono(0, 0, 0, 2)};
  for (int i = 0; i <= p_max; ++i)
    for (int j = 0; j <= p_max; ++j)
      for (int k = 0; k <= p_max; ++k) {
        const int s = i + j + k;
        if (s < 1 || s > p_tot) continue;
        const Monomial m = mono(i, 0, j, k);
        bool skip = false;
        for (const auto& x : excluded) skip |= (x == m);
        if (skip) continue;
        bool f = false;
        for (const auto& x : forced) f |= (x == m);
        lib.terms.push_back({Var::S, TermKind::source, m, f});
      }
  return lib;
}

/// Base terms: e-equation d_x F; T-equation sources T and S. All forced.
inline TermLibrary base_e_library() {
  TermLibrary lib;
  lib.slot = Var::e;
  lib.convention = "base";
  lib.terms.push_back({Var::e, TermKind::flux, mono(0, 1, 0, 0), true});
  return lib;
}

inline TermLibrary base_T_library() {
  TermLibrary lib;
  lib.slot = Var::T;
  lib.convention = "base";
  lib.terms.push_back({Var::T, TermKind::source, mono(0, 0, 1, 0), true});
  lib.terms.push_back({Var::T, TermKind::source, mono(0, 0, 0, 1), true});
  return lib;
}

/// Full model library, one TermLibrary per equation slot in the order e, F, T, S.
struct ModelLibrary {
  std::array<TermLibrary, kNumVars> eq;

  const TermLibrary& operator[](Var v) const { return eq[static_cast<int>(v)]; }
  TermLibrary& operator[](Var v) { return eq[static_cast<int>(v)]; }
};

inline ModelLibrary build_model_library(LibraryCaps F = {}, LibraryCaps S = {},
                                        const std::vector<Monomial>& excluded = {default_sigma_excluded_source()}) {
  ModelLibrary m;
  m[Var::e] = base_e_library();
  m[Var::F] = build_F_library(F.p_tot, F.p_max);
  m[Var::T] = base_T_library();
  m[Var::S] = build_sigma_library(S.p_tot, S.p_max, excluded);
  return m;
}

/// Pointwise evaluation of a term's monomial on gridded fields (flux terms are differentiated later).
inline std::vector<double> eval_term(const Term& t, std::span<const double> e, std::span<const double> F,
                                     std::span<const double> T, std::span<const double> S) {
  const std::size_t n = e.size();
  if (F.size() != n || T.size() != n || S.size() != n) throw std::invalid_argument("eval_term: field size mismatch");
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = t.m.eval({e[i], F[i], T[i], S[i]});
    if (!std::isfinite(out[i])) throw std::domain_error("eval_term: non-finite value for " + t.name());
  }
  return out;
}

// JSON descriptors.

inline nlohmann::json to_json(const Term& t) {
  return {{"slot", kVarNames[static_cast<int>(t.slot)]},
          {"kind", t.kind == TermKind::flux ? "flux" : "source"},
          {"powers", t.m.p},
          {"forced", t.forced},
          {"name", t.name()}};
}

inline Var var_from_name(const std::string& s) {
  for (int v = 0; v < kNumVars; ++v)
    if (s == kVarNames[v]) return static_cast<Var>(v);
  throw std::invalid_argument("unknown variable name: " + s);
}

inline Term term_from_json(const nlohmann::json& j) {
  Term t;
  t.slot = var_from_name(j.at("slot").get<std::string>());
  const auto kind = j.at("kind").get<std::string>();
  if (kind != "flux" && kind != "source") throw std::invalid_argument("unknown term kind: " + kind);
  t.kind = kind == "flux" ? TermKind::flux : TermKind::source;
  t.m.p = j.at("powers").get<std::array<int, kNumVars>>();
  t.forced = j.at("forced").get<bool>();
  return t;
}

inline nlohmann::json to_json(const TermLibrary& lib) {
  nlohmann::json terms = nlohmann::json::array();
  for (const auto& t : lib.terms) terms.push_back(to_json(t));
  return {{"slot", kVarNames[static_cast<int>(lib.slot)]},
          {"p_tot", lib.caps.p_tot},
          {"p_max", lib.caps.p_max},
          {"convention", lib.convention},
          {"terms", terms}};
}

inline TermLibrary library_from_json(const nlohmann::json& j) {
  TermLibrary lib;
  lib.slot = var_from_name(j.at("slot").get<std::string>());
  lib.caps = {j.value("p_tot", 0), j.value("p_max", 0)};
  lib.convention = j.value("convention", "");
  for (const auto& t : j.at("terms")) lib.terms.push_back(term_from_json(t));
  return lib;
}

}  // namespace trtc
