#include "trtc/termlib.hpp"

#include <algorithm>
#include <random>
#include <set>

#include <gtest/gtest.h>

using namespace trtc;

TEST(TermLib, PaperCounts) {
  const auto F = build_F_library(4, 3);
  EXPECT_EQ(F.count(TermKind::flux), 31u);
  EXPECT_EQ(F.count(TermKind::source), 7u);
  EXPECT_EQ(F.size(), 38u);
  const auto S = build_sigma_library(4, 3);
  EXPECT_EQ(S.count(TermKind::flux), 32u);
  EXPECT_EQ(S.count(TermKind::source), 30u);
  EXPECT_EQ(S.size(), 62u);
  // Without the exclusion the naive count is 63.
  EXPECT_EQ(build_sigma_library(4, 3, {}).size(), 63u);
}

TEST(TermLib, SmallFLibraryByHand) {
  const auto F = build_F_library(1, 1);
  std::vector<std::string> names;
  for (const auto& t : F.terms) names.push_back(t.name());
  const std::vector<std::string> expected = {"dx(T)", "dx(F^2)", "dx(e)", "F T^-1", "F", "F T"};
  EXPECT_EQ(names, expected);
}

TEST(TermLib, SmallSigmaLibraryMatchesBruteForce) {
  for (int cap : {1, 2}) {
    const auto S = build_sigma_library(cap + 1, cap);
    std::set<std::pair<int, std::array<int, 4>>> built;
    for (const auto& t : S.terms) built.insert({t.kind == TermKind::flux ? 0 : 1, t.m.p});
    // Independent enumeration over a generous power box, filtered by the defining rules.
    std::set<std::pair<int, std::array<int, 4>>> brute;
    for (int pe = 0; pe <= 9; ++pe)
      for (int pF = 0; pF <= 9; ++pF)
        for (int pT = 0; pT <= 9; ++pT)
          for (int pS = 0; pS <= 9; ++pS) {
            if (pe == 0 && pF % 2 == 1) {
              const int i = (pF - 1) / 2;
              if (i <= cap && pT <= cap && pS <= cap && i + pT + pS <= cap + 1) brute.insert({0, {0, pF, pT, pS}});
            }
            if (pF == 0) {
              const int s = pe + pT + pS;
              const bool excluded = (pe == 0 && pT == 1 && pS == 0);
              if (s >= 1 && s <= cap + 1 && pe <= cap && pT <= cap && pS <= cap && !excluded)
                brute.insert({1, {pe, 0, pT, pS}});
            }
          }
    EXPECT_EQ(built, brute) << "cap " << cap;
  }
}

TEST(TermLib, ForcedSetAndParity) {
  const auto S = build_sigma_library(4, 3);
  std::set<std::string> forced;
  for (auto i : S.forced_indices()) forced.insert(S.terms[i].name());
  EXPECT_EQ(forced, (std::set<std::string>{"e S", "e T", "T S", "S^2"}));
  const auto lib = build_model_library();
  for (const auto& eq : lib.eq)
    for (const auto& t : eq.terms) EXPECT_TRUE(parity_ok(t)) << t.name();
  for (const auto& t : lib[Var::F].terms)
    if (t.kind == TermKind::source) {
      EXPECT_GE(t.m[Var::T], -3);
    }
  for (const auto& t : lib[Var::S].terms) EXPECT_GE(t.m[Var::T], 0);
}

TEST(TermLib, DeterministicOrdering) {
  const auto a = build_model_library();
  const auto b = build_model_library();
  for (int s = 0; s < kNumVars; ++s) EXPECT_EQ(a.eq[s].terms, b.eq[s].terms);
  const auto j = to_json(a[Var::S]);
  const auto back = library_from_json(j);
  EXPECT_EQ(back.terms, a[Var::S].terms);
  EXPECT_EQ(back.convention, a[Var::S].convention);
}

TEST(TermLib, ParityAuditOnRandomRows) {
  std::mt19937 rng(7);
  std::uniform_real_distribution<double> U(0.5, 2.0), V(-2.0, 2.0);
  const auto lib = build_model_library();
  for (int trial = 0; trial < 20; ++trial) {
    const State u{U(rng), V(rng), U(rng), U(rng)};
    State m = u;
    m[1] = -u[1];
    for (const auto& eq : lib.eq)
      for (const auto& t : eq.terms) EXPECT_EQ(t.m.eval(m), f_parity(t) * t.m.eval(u)) << t.name();
  }
}

TEST(TermLib, Evaluation) {
  const Term eF2{Var::F, TermKind::flux, mono(1, 2, 0, 0), false};
  std::vector<double> e(5, 2.0), F(5, 3.0), T(5, 1.0), S(5, 1.0);
  for (double v : eval_term(eF2, e, F, T, S)) EXPECT_EQ(v, 18.0);
  const Term Tm3F{Var::F, TermKind::source, mono(0, 1, -3, 0), false};
  EXPECT_EQ(Tm3F.m.eval({1.0, 0.0, 0.0, 1.0}), 0.0);
  EXPECT_THROW(Tm3F.m.eval({1.0, 1.0, 0.0, 1.0}), std::domain_error);
  const Term S2{Var::S, TermKind::source, mono(0, 0, 0, 2), true};
  std::vector<double> Sv = {0.5, 1e20, 3.0, 7.25, 1e-3};
  const auto col = eval_term(S2, e, F, T, Sv);
  for (std::size_t i = 0; i < Sv.size(); ++i) EXPECT_EQ(col[i], Sv[i] * Sv[i]);
}

TEST(TermLib, MonomialDerivatives) {
  const Monomial m = mono(2, 2, -1, 1);
  const State u{1.5, 0.7, 2.0, 3.0};
  const double f = m.eval(u);
  EXPECT_DOUBLE_EQ(m.deriv(Var::e, u), 2.0 * f / u[0]);
  EXPECT_DOUBLE_EQ(m.deriv(Var::F, u), 2.0 * f / u[1]);
  EXPECT_DOUBLE_EQ(m.deriv(Var::T, u), -1.0 * f / u[2]);
  EXPECT_DOUBLE_EQ(m.deriv(Var::S, u), f / u[3]);
}
