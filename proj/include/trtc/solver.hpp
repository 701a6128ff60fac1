#pragma once

// Finite-volume solver for closed balance laws d_t u = d_x P(u) + Q(u).
// WENO5 reconstruction of local Lax-Friedrichs split fluxes f = -P, embedded Dormand-Prince 5(4)
// in time, sources pointwise. Reference closures: a P1-type system in the library's form and a
// gray diffusion system (implicit diffusion, pointwise implicit exchange).

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "trtc/closure.hpp"
#include "trtc/dataset.hpp"

namespace trtc {

class SolverError : public std::runtime_error {
 public:
  SolverError(const std::string& kind, const std::string& msg, long cell = -1, double t = 0.0, double x = 0.0)
      : std::runtime_error(kind + ": " + msg), kind_(kind), cell_(cell), t_(t), x_(x) {}
  const std::string& kind() const { return kind_; }
  long cell() const { return cell_; }
  double time() const { return t_; }
  double position() const { return x_; }
  nlohmann::json to_json() const {
    return {{"error", kind_}, {"message", what()}, {"cell", cell_}, {"t", t_}, {"x", x_}};
  }

 private:
  std::string kind_;
  long cell_;
  double t_, x_;
};

using Fields = std::array<std::vector<double>, kNumVars>;

// WENO5 (Jiang-Shu) value at the right face of v2 from cells v0..v4.
inline double weno5(double v0, double v1, double v2, double v3, double v4, double eps = 1e-6) {
  // Candidate values as v2 plus corrections, so constant data reconstructs exactly.
  const double d0 = (2.0 * (v0 - v1) - 5.0 * (v1 - v2)) / 6.0;
  const double d1 = (2.0 * (v3 - v2) - (v1 - v2)) / 6.0;
  const double d2 = (5.0 * (v3 - v2) - (v4 - v2)) / 6.0;
  const double b0 = 13.0 / 12.0 * (v0 - 2.0 * v1 + v2) * (v0 - 2.0 * v1 + v2) + 0.25 * (v0 - 4.0 * v1 + 3.0 * v2) * (v0 - 4.0 * v1 + 3.0 * v2);
  const double b1 = 13.0 / 12.0 * (v1 - 2.0 * v2 + v3) * (v1 - 2.0 * v2 + v3) + 0.25 * (v1 - v3) * (v1 - v3);
  const double b2 = 13.0 / 12.0 * (v2 - 2.0 * v3 + v4) * (v2 - 2.0 * v3 + v4) + 0.25 * (3.0 * v2 - 4.0 * v3 + v4) * (3.0 * v2 - 4.0 * v3 + v4);
  const double a0 = 0.1 / ((eps + b0) * (eps + b0));
  const double a1 = 0.6 / ((eps + b1) * (eps + b1));
  const double a2 = 0.3 / ((eps + b2) * (eps + b2));
  return v2 + (a0 * d0 + a1 * d1 + a2 * d2) / (a0 + a1 + a2);
}

enum class Side { left = 0, right = 1 };

/// Face values from cell averages: left-biased (from the left cell) or right-biased values at each of
/// the N+1 faces. The input carries 3 ghost cells per side.
inline std::vector<double> weno5_reconstruct(const std::vector<double>& ext, bool left_biased, double eps = 1e-6) {
  if (ext.size() < 7) throw std::invalid_argument("weno5_reconstruct: need at least one cell plus 3 ghosts per side");
  const std::size_t N = ext.size() - 6;
  std::vector<double> out(N + 1);
  for (std::size_t m = 0; m <= N; ++m) {
    const double* u = ext.data() + m;  // cells m-3 .. m+2 around face m
    out[m] = left_biased ? weno5(u[0], u[1], u[2], u[3], u[4], eps) : weno5(u[5], u[4], u[3], u[2], u[1], eps);
  }
  return out;
}

// Boundary data.

/// Boundary samples u_v(t_k) at one end of the domain with a least-squares quadratic in time;
/// window = 0 fits every sample at once, otherwise the `window` samples nearest the query.
struct BoundaryTrace {
  std::vector<double> t;
  Fields v;
  std::size_t window = 0;

  void validate() const {
    if (t.size() < 3) throw std::invalid_argument("BoundaryTrace: quadratic fit needs at least 3 samples");
    for (const auto& f : v)
      if (f.size() != t.size()) throw std::invalid_argument("BoundaryTrace: value/time length mismatch");
    if (window != 0 && window < 3) throw std::invalid_argument("BoundaryTrace: window must be 0 or >= 3");
  }

  State at(double tq) const {
    std::size_t lo = 0, hi = t.size();
    if (window != 0 && window < t.size()) {
      const auto it = std::lower_bound(t.begin(), t.end(), tq);
      const long c = static_cast<long>(it - t.begin());
      long a = std::max(0L, c - static_cast<long>(window / 2));
      a = std::min(a, static_cast<long>(t.size() - window));
      lo = static_cast<std::size_t>(a);
      hi = lo + window;
    }
    const double t0 = 0.5 * (t[lo] + t[hi - 1]);
    const double ts = std::max(0.5 * (t[hi - 1] - t[lo]), 1e-300);
    Eigen::MatrixXd X(static_cast<Eigen::Index>(hi - lo), 3);
    for (std::size_t k = lo; k < hi; ++k) {
      const double s = (t[k] - t0) / ts;
      X.row(static_cast<Eigen::Index>(k - lo)) << 1.0, s, s * s;
    }
    const auto qr = X.colPivHouseholderQr();
    const double s = (tq - t0) / ts;
    State r{};
    for (int q = 0; q < kNumVars; ++q) {
      Eigen::VectorXd y(static_cast<Eigen::Index>(hi - lo));
      for (std::size_t k = lo; k < hi; ++k) y[static_cast<Eigen::Index>(k - lo)] = v[q][k];
      const Eigen::Vector3d c = qr.solve(y);
      r[q] = c[0] + c[1] * s + c[2] * s * s;
    }
    return r;
  }
};

enum class BCKind { dirichlet, copy, mirror };

/// Boundary treatment at one end, per variable. Dirichlet and copy fill every ghost with the
/// boundary value; mirror reflects interior cells with F negated.
struct BoundarySpec {
  std::array<BCKind, kNumVars> kind{BCKind::copy, BCKind::copy, BCKind::copy, BCKind::copy};
  BoundaryTrace trace;

  static BoundarySpec all(BCKind k) {
    BoundarySpec b;
    b.kind.fill(k);
    return b;
  }
  static BoundarySpec dirichlet(BoundaryTrace tr) {
    tr.validate();
    BoundarySpec b = all(BCKind::dirichlet);
    b.trace = std::move(tr);
    return b;
  }
  bool needs_trace() const {
    return std::any_of(kind.begin(), kind.end(), [](BCKind k) { return k == BCKind::dirichlet; });
  }
};

inline const char* to_string(BCKind k) {
  switch (k) {
    case BCKind::dirichlet: return "dirichlet";
    case BCKind::copy: return "copy";
    case BCKind::mirror: return "mirror";
  }
  return "?";
}

inline constexpr int kGhost = 3;

struct SolverConfig {
  std::size_t N_cells = 128;
  double x0 = 0.0, x1 = 4.0;
  double rtol = 1e-6;
  double atol = 1e-8;  // times the per-variable magnitude scale
  double cfl = 0.8;
  // Step cap dt <= source_stability / rho(d q / d u) from the pointwise source Jacobian; keeps the
  // explicit stages inside their stability interval when relaxation is faster than transport.
  // Zero disables the cap.
  double source_stability = 2.5;
  double weno_eps = 1e-6;
  bool global_wave_speed = false;  // one alpha for every face instead of the local stencil maximum
  std::array<BoundarySpec, 2> bc;
  std::vector<double> output_times;  // empty: initial and final time only
  std::size_t max_steps = 5'000'000;
  double dt_min_rel = 1e-12;  // underflow threshold relative to the horizon
  std::array<double, kNumVars> scale{0, 0, 0, 0};  // 0: from the initial and boundary data

  double dx() const { return (x1 - x0) / double(N_cells); }
  std::vector<double> centers() const {
    std::vector<double> x(N_cells);
    for (std::size_t i = 0; i < N_cells; ++i) x[i] = x0 + (double(i) + 0.5) * dx();
    return x;
  }
  void validate() const {
    if (N_cells < 16) throw std::invalid_argument("SolverConfig: N_cells must be >= 16");
    if (!(rtol > 0) || !(atol > 0)) throw std::invalid_argument("SolverConfig: tolerances must be positive");
    if (!(cfl > 0)) throw std::invalid_argument("SolverConfig: CFL must be positive");
    if (!(x1 > x0)) throw std::invalid_argument("SolverConfig: empty domain");
    for (const auto& b : bc)
      if (b.needs_trace()) b.trace.validate();
    for (std::size_t k = 1; k < output_times.size(); ++k)
      if (!(output_times[k] > output_times[k - 1])) throw std::invalid_argument("SolverConfig: output times must increase");
  }
};

struct SolverStats {
  std::size_t accepted = 0, rejected = 0, rhs_evals = 0;
  double dt_min = std::numeric_limits<double>::infinity(), dt_max = 0.0;
  double max_conservation_defect = 0.0;  // per step, relative to sum |e| dx
  double last_error_norm = 0.0;
  double max_error_norm = 0.0;

  nlohmann::json to_json() const {
    return {{"accepted", accepted}, {"rejected", rejected}, {"rhs_evals", rhs_evals}, {"dt_min", dt_min},
            {"dt_max", dt_max}, {"max_conservation_defect", max_conservation_defect}, {"max_error_norm", max_error_norm}};
  }
};

/// Spatial operator with ghost filling; exposes the e-equation face fluxes for bookkeeping.
class SpatialOperator {
 public:
  SpatialOperator(const ClosureModel& m, const SolverConfig& cfg) : m_(m), cfg_(cfg) {
    for (int v = 0; v < kNumVars; ++v) flux_[v] = m.has_flux(Var(v));
  }

  /// du/dt. If boundary_flux is given it receives the e-equation numerical flux at the left and right faces.
  void operator()(double t, const Fields& u, Fields& du, std::array<double, 2>* boundary_flux = nullptr,
                  double* e_source = nullptr) const {
    const std::size_t N = u[0].size();
    const std::size_t NE = N + 2 * kGhost;
    Fields ext;
    for (int v = 0; v < kNumVars; ++v) {
      ext[v].assign(NE, 0.0);
      std::copy(u[v].begin(), u[v].end(), ext[v].begin() + kGhost);
    }
    fill_ghosts(t, ext, N);

    // Flux functions and wave speeds on every cell.
    Fields f;
    std::vector<double> speed(NE);
    for (int v = 0; v < kNumVars; ++v) f[v].assign(NE, 0.0);
    for (std::size_t k = 0; k < NE; ++k) {
      const State s{ext[0][k], ext[1][k], ext[2][k], ext[3][k]};
      for (int v = 0; v < kNumVars; ++v)
        if (flux_[v]) f[v][k] = -m_.flux(Var(v), s);
      speed[k] = m_.max_wave_speed(s);
      if (!std::isfinite(speed[k])) throw std::domain_error("non-finite wave speed at extended cell " + std::to_string(k));
    }
    std::vector<double> alpha(N + 1);
    if (cfg_.global_wave_speed) {
      std::fill(alpha.begin(), alpha.end(), *std::max_element(speed.begin(), speed.end()));
    } else {
      for (std::size_t m = 0; m <= N; ++m) alpha[m] = *std::max_element(speed.begin() + m, speed.begin() + m + 6);
    }

    const double dx = cfg_.dx();
    for (int v = 0; v < kNumVars; ++v) {
      du[v].assign(N, 0.0);
      if (!flux_[v]) continue;
      std::vector<double> fh(N + 1);
      for (std::size_t m = 0; m <= N; ++m) {
        double fp[5], fm[5];
        for (int s = 0; s < 5; ++s) {
          const std::size_t kp = m + s, km = m + 5 - s;
          fp[s] = 0.5 * (f[v][kp] + alpha[m] * ext[v][kp]);
          fm[s] = 0.5 * (f[v][km] - alpha[m] * ext[v][km]);
        }
        fh[m] = weno5(fp[0], fp[1], fp[2], fp[3], fp[4], cfg_.weno_eps) + weno5(fm[0], fm[1], fm[2], fm[3], fm[4], cfg_.weno_eps);
      }
      for (std::size_t i = 0; i < N; ++i) du[v][i] = -(fh[i + 1] - fh[i]) / dx;
      if (v == 0 && boundary_flux) *boundary_flux = {fh[0], fh[N]};
    }
    double esrc = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
      const State s{u[0][i], u[1][i], u[2][i], u[3][i]};
      for (int v = 0; v < kNumVars; ++v) {
        const double q = m_.source(Var(v), s);
        du[v][i] += q;
        if (v == 0) esrc += q * dx;
      }
    }
    if (e_source) *e_source = esrc;
    if (boundary_flux && !flux_[0]) *boundary_flux = {0.0, 0.0};
  }

  void fill_ghosts(double t, Fields& ext, std::size_t N) const {
    for (int side = 0; side < 2; ++side) {
      const BoundarySpec& b = cfg_.bc[side];
      State bv{};
      if (b.needs_trace()) bv = b.trace.at(t);
      for (int v = 0; v < kNumVars; ++v) {
        for (int g = 0; g < kGhost; ++g) {
          // ghost g counts outward from the face: 0 is adjacent to the boundary cell.
          const std::size_t gi = side == 0 ? std::size_t(kGhost - 1 - g) : std::size_t(kGhost) + N + std::size_t(g);
          const std::size_t inner = side == 0 ? std::size_t(kGhost) + std::size_t(g) : std::size_t(kGhost) + N - 1 - std::size_t(g);
          const std::size_t edge = side == 0 ? std::size_t(kGhost) : std::size_t(kGhost) + N - 1;
          switch (b.kind[v]) {
            case BCKind::dirichlet: ext[v][gi] = bv[v]; break;
            case BCKind::copy: ext[v][gi] = ext[v][edge]; break;
            case BCKind::mirror: ext[v][gi] = (v == static_cast<int>(Var::F) ? -1.0 : 1.0) * ext[v][inner]; break;
          }
        }
      }
    }
  }

  double max_speed(const Fields& u) const {
    double s = 0.0;
    for (std::size_t i = 0; i < u[0].size(); ++i) s = std::max(s, m_.max_wave_speed({u[0][i], u[1][i], u[2][i], u[3][i]}));
    return s;
  }

 private:
  const ClosureModel& m_;
  const SolverConfig& cfg_;
  std::array<bool, kNumVars> flux_{};
};

/// Mirror image x -> x0 + x1 - x with F negated.
inline Fields mirror_fields(const Fields& u) {
  Fields r = u;
  for (int v = 0; v < kNumVars; ++v) {
    std::reverse(r[v].begin(), r[v].end());
    if (v == static_cast<int>(Var::F))
      for (auto& x : r[v]) x = -x;
  }
  return r;
}

inline MomentDataset mirror_dataset(const MomentDataset& d) {
  MomentDataset o = d;
  const std::size_t N = d.nx();
  for (int v = 0; v < kNumVars; ++v)
    for (std::size_t j = 0; j < d.nt(); ++j)
      for (std::size_t i = 0; i < N; ++i)
        o.fields[v][j * N + i] = (v == static_cast<int>(Var::F) ? -1.0 : 1.0) * d.fields[v][j * N + (N - 1 - i)];
  return o;
}

namespace detail {

// Dormand-Prince 5(4).
inline constexpr double dp_c[7] = {0.0, 1.0 / 5, 3.0 / 10, 4.0 / 5, 8.0 / 9, 1.0, 1.0};
inline constexpr double dp_a[7][6] = {
    {},
    {1.0 / 5},
    {3.0 / 40, 9.0 / 40},
    {44.0 / 45, -56.0 / 15, 32.0 / 9},
    {19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729},
    {9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176, -5103.0 / 18656},
    {35.0 / 384, 0.0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84}};
inline constexpr double dp_b[7] = {35.0 / 384, 0.0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84, 0.0};
inline constexpr double dp_bs[7] = {5179.0 / 57600, 0.0, 7571.0 / 16695, 393.0 / 640, -92097.0 / 339200, 187.0 / 2100, 1.0 / 40};

}  // namespace detail

struct SimulationResult {
  MomentDataset data;
  SolverStats stats;
};

/// Integrate from (u0, t0) to t_final, recording the configured output times.
inline SimulationResult simulate(const ClosureModel& model, const SolverConfig& cfg, const Fields& u0, double t0,
                                 double t_final) {
  cfg.validate();
  const std::size_t N = cfg.N_cells;
  for (const auto& f : u0)
    if (f.size() != N) throw std::invalid_argument("simulate: initial state size differs from N_cells");
  if (!(t_final > t0)) throw std::invalid_argument("simulate: t_final must exceed t0");
  std::vector<double> outs = cfg.output_times;
  if (outs.empty()) outs = {t0, t_final};
  if (outs.front() < t0 - 1e-12 * (t_final - t0) || outs.back() > t_final * (1 + 1e-12))
    throw std::invalid_argument("simulate: output times outside [t0, t_final]");

  const SpatialOperator L(model, cfg);
  const double dx = cfg.dx();
  const auto xc = cfg.centers();

  std::array<double, kNumVars> scale = cfg.scale;
  for (int v = 0; v < kNumVars; ++v) {
    if (scale[v] > 0) continue;
    double s = 0.0;
    for (double x : u0[v]) s = std::max(s, std::abs(x));
    for (const auto& b : cfg.bc)
      if (b.kind[v] == BCKind::dirichlet)
        for (double x : b.trace.v[v]) s = std::max(s, std::abs(x));
    scale[v] = s;
  }
  if (scale[1] == 0.0) scale[1] = units::c * scale[0];
  for (auto& s : scale)
    if (s == 0.0) s = 1.0;

  SimulationResult res;
  MomentDataset& out = res.data;
  out.x = xc;
  out.t = outs;
  out.allocate(N, outs.size());
  out.provenance.generator = "trtc.simulate";
  out.provenance.created = utc_now_iso();
  out.provenance.notes["model"] = model.to_json();
  out.provenance.notes["solver"] = {{"N_cells", N}, {"rtol", cfg.rtol}, {"atol", cfg.atol}, {"cfl", cfg.cfl},
                                    {"source_stability", cfg.source_stability}, {"bc_left", to_string(cfg.bc[0].kind[0])}, {"bc_right", to_string(cfg.bc[1].kind[0])}};
  std::size_t next_out = 0;
  auto record = [&](const Fields& u) {
    for (int v = 0; v < kNumVars; ++v) std::copy(u[v].begin(), u[v].end(), out.fields[v].begin() + next_out * N);
    ++next_out;
  };

  Fields u = u0;
  double t = t0;
  while (next_out < outs.size() && outs[next_out] <= t0 + 1e-12 * (t_final - t0)) record(u);

  const double horizon = t_final - t0;
  const double dt_floor = cfg.dt_min_rel * horizon;
  SolverStats& st = res.stats;
  std::array<Fields, 7> k;
  std::array<std::array<double, 2>, 7> bflux{};
  std::array<double, 7> esrc{};
  Fields y;

  auto eval = [&](double tt, const Fields& uu, int s) {
    L(tt, uu, k[s], &bflux[s], &esrc[s]);
    ++st.rhs_evals;
  };
  auto cfl_dt = [&](const Fields& uu) {
    const double s = L.max_speed(uu);
    return s > 0 ? cfg.cfl * dx / s : horizon;
  };
  // Largest eigenvalue modulus of the source Jacobian over the cells.
  auto source_dt = [&](const Fields& uu) {
    if (!(cfg.source_stability > 0)) return horizon;
    double rho = 0.0;
    Eigen::Matrix4d J;
    for (std::size_t i = 0; i < N; ++i) {
      const State s{uu[0][i], uu[1][i], uu[2][i], uu[3][i]};
      for (int a = 0; a < kNumVars; ++a)
        for (int b = 0; b < kNumVars; ++b) J(a, b) = model.dsource(Var(a), Var(b), s) * scale[b] / scale[a];  // balanced
      if (!J.allFinite()) continue;
      rho = std::max(rho, Eigen::EigenSolver<Eigen::Matrix4d>(J, false).eigenvalues().cwiseAbs().maxCoeff());
    }
    return rho > 0 ? cfg.source_stability / rho : horizon;
  };
  eval(t, u, 0);
  double dt = std::min(0.5 * cfl_dt(u), horizon);
  bool fsal = true;

  while (t < t_final - 1e-14 * horizon) {
    if (st.accepted + st.rejected >= cfg.max_steps) throw SolverError("step cap", "maximum number of steps reached", -1, t);
    const double cap = std::min(cfl_dt(u), source_dt(u));
    dt = std::min({dt, cap, t_final - t});
    if (next_out < outs.size()) dt = std::min(dt, outs[next_out] - t);
    if (dt < dt_floor) {
      std::ostringstream os;
      os << "step size " << dt << " below " << dt_floor << " at t = " << t;
      throw SolverError("step-size underflow", os.str(), -1, t);
    }
    if (!fsal) eval(t, u, 0);

    bool failed = false;
    try {
      for (int s = 1; s < 7; ++s) {
        for (int v = 0; v < kNumVars; ++v) {
          y[v] = u[v];
          for (int r = 0; r < s; ++r)
            if (detail::dp_a[s][r] != 0.0)
              for (std::size_t i = 0; i < N; ++i) y[v][i] += dt * detail::dp_a[s][r] * k[r][v][i];
        }
        eval(t + detail::dp_c[s] * dt, y, s);
      }
    } catch (const std::domain_error&) {
      failed = true;
    }

    double err = std::numeric_limits<double>::infinity();
    if (!failed) {
      double acc = 0.0;
      bool finite = true;
      for (int v = 0; v < kNumVars; ++v)
        for (std::size_t i = 0; i < N; ++i) {
          double e = 0.0;
          for (int s = 0; s < 7; ++s) e += (detail::dp_b[s] - detail::dp_bs[s]) * k[s][v][i];
          e *= dt;
          const double sc = cfg.atol * scale[v] + cfg.rtol * std::max(std::abs(u[v][i]), std::abs(y[v][i]));
          const double r = e / sc;
          if (!std::isfinite(r) || !std::isfinite(y[v][i])) finite = false;
          acc += r * r;
        }
      err = finite ? std::sqrt(acc / double(kNumVars * N)) : std::numeric_limits<double>::infinity();
    }

    if (!(err <= 1.0)) {
      ++st.rejected;
      const double fac = std::isfinite(err) ? std::max(0.2, 0.9 * std::pow(err, -0.2)) : 0.25;
      dt *= fac;
      fsal = true;  // k[0] is still valid at (t, u)
      continue;
    }

    // Accept: y already holds the 5th-order solution (row 7 of a equals b).
    double mass0 = 0.0, mass1 = 0.0, mabs = 0.0, flux_int = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
      mass0 += u[0][i] * dx;
      mass1 += y[0][i] * dx;
      mabs += std::abs(y[0][i]) * dx;
    }
    for (int s = 0; s < 7; ++s) flux_int += dt * detail::dp_b[s] * (bflux[s][0] - bflux[s][1] + esrc[s]);
    if (mabs > 0) st.max_conservation_defect = std::max(st.max_conservation_defect, std::abs(mass1 - mass0 - flux_int) / mabs);

    t += dt;
    u = y;
    k[0] = k[6];
    bflux[0] = bflux[6];
    esrc[0] = esrc[6];
    fsal = true;
    ++st.accepted;
    st.dt_min = std::min(st.dt_min, dt);
    st.dt_max = std::max(st.dt_max, dt);
    st.last_error_norm = err;
    st.max_error_norm = std::max(st.max_error_norm, err);

    for (std::size_t i = 0; i < N; ++i) {
      for (int v : {static_cast<int>(Var::T), static_cast<int>(Var::S)})
        if (u[v][i] < 0.0) {
          std::ostringstream os;
          os << "negative " << kVarNames[v] << " = " << u[v][i] << " at cell " << i << " (x = " << xc[i] << "), t = " << t;
          throw SolverError("closure blow-up", os.str(), static_cast<long>(i), t, xc[i]);
        }
    }
    for (int v = 0; v < kNumVars; ++v) scale[v] = std::max(scale[v], std::abs(*std::max_element(u[v].begin(), u[v].end(), [](double a, double b) { return std::abs(a) < std::abs(b); })));

    while (next_out < outs.size() && outs[next_out] <= t + 1e-12 * horizon) record(u);
    const double fac = std::min(5.0, std::max(0.2, 0.9 * std::pow(std::max(err, 1e-10), -0.2)));
    dt *= fac;
  }
  while (next_out < outs.size()) record(u);
  return res;
}

// Helpers for data-driven runs.

/// Time slice j of a dataset interpolated onto the solver cell centres.
inline Fields initial_state_from(const MomentDataset& d, std::size_t j, const SolverConfig& cfg) {
  const auto xc = cfg.centers();
  const MomentDataset r = resample_linear(slice(d, {0, d.nx() - 1, j, j}), xc, {d.t[j]});
  Fields u;
  for (int v = 0; v < kNumVars; ++v) u[v] = r.fields[v];
  return u;
}

/// Samples of the first (left) or last (right) data cell over time, from slice j0 on.
inline BoundaryTrace boundary_trace_from(const MomentDataset& d, Side side, std::size_t window = 0, std::size_t j0 = 0) {
  if (j0 >= d.nt()) throw std::invalid_argument("boundary_trace_from: first slice out of range");
  BoundaryTrace b;
  b.t.assign(d.t.begin() + static_cast<long>(j0), d.t.end());
  b.window = window;
  const std::size_t i = side == Side::left ? 0 : d.nx() - 1;
  for (int v = 0; v < kNumVars; ++v) {
    b.v[v].resize(b.t.size());
    for (std::size_t j = j0; j < d.nt(); ++j) b.v[v][j - j0] = d.at(Var(v), i, j);
  }
  return b;
}

// Reference closures.

/// Constant-coefficient P1-type system in the library's form:
///   d_t e = -d_x F
///   d_t F = -(c^2/3) d_x e [+ (c^2/3) rho c_V d_x T] - c sigma F
///   d_t T = (-alpha T + c S) / rho c_V
///   d_t S = s_flux d_x F + (a_e e + a_S S)(S - beta T)
/// Black-body states are stationary; the (e, F) block propagates at c/sqrt(3).
struct P1Reference {
  double sigma = 0.0;
  bool pressure_from_E = false;
  double s_flux = 0.0;
  double a_e = 0.0, a_S = 0.0;
  bool with_T = true;
};

inline ClosureModel p1_reference(const EquilibriumParams& ep, const P1Reference& r = {}) {
  ClosureModel m;
  set_analytic_base(m, ep);
  if (!r.with_T) m[Var::T].clear();
  const double c2 = ep.c * ep.c / 3.0;
  m[Var::F].push_back({{Var::F, TermKind::flux, mono(1, 0, 0, 0), false}, -c2});
  if (r.pressure_from_E) m[Var::F].push_back({{Var::F, TermKind::flux, mono(0, 0, 1, 0), false}, c2 * ep.rho_cv});
  if (r.sigma != 0.0) m[Var::F].push_back({{Var::F, TermKind::source, mono(0, 1, 0, 0), false}, -ep.c * r.sigma});
  if (r.s_flux != 0.0) m[Var::S].push_back({{Var::S, TermKind::flux, mono(0, 1, 0, 0), false}, r.s_flux});
  const double beta = ep.beta();
  if (r.a_e != 0.0) {
    m[Var::S].push_back({{Var::S, TermKind::source, mono(1, 0, 0, 1), true}, r.a_e});
    m[Var::S].push_back({{Var::S, TermKind::source, mono(1, 0, 1, 0), true}, -r.a_e * beta});
  }
  if (r.a_S != 0.0) {
    m[Var::S].push_back({{Var::S, TermKind::source, mono(0, 0, 0, 2), true}, r.a_S});
    m[Var::S].push_back({{Var::S, TermKind::source, mono(0, 0, 1, 1), true}, -r.a_S * beta});
  }
  m.provenance = {{"reference", "P1"}, {"sigma", r.sigma}, {"s_flux", r.s_flux}, {"a_e", r.a_e}, {"a_S", r.a_S}};
  return m;
}

/// Gray diffusion: d_t E = d_x (D d_x E) + c sigma_P (a T^4 - E),  rho c_V d_t T = c sigma_P (E - a T^4),
/// D = c / (3 sigma_R). Crank-Nicolson diffusion with zero-flux walls, then a pointwise implicit
/// exchange step that conserves E + rho c_V T.
struct GrayDiffusionConfig {
  std::size_t N_cells = 256;
  double x0 = 0.0, x1 = 4.0;
  double dt = 1e-13;
  std::function<double(double)> sigma_R;
  std::function<double(double)> sigma_P;  // empty: no exchange
  double rho_cv = ProblemParams{}.rho_cv;
  double a = units::a;
  double c = units::c;
  std::vector<double> output_times;
};

inline MomentDataset simulate_gray_diffusion(const GrayDiffusionConfig& g, std::vector<double> E, std::vector<double> T,
                                             double t0, double t_final) {
  const std::size_t N = g.N_cells;
  if (N < 16 || E.size() != N || T.size() != N) throw std::invalid_argument("gray diffusion: bad grid or state size");
  if (!g.sigma_R) throw std::invalid_argument("gray diffusion: sigma_R required");
  if (!(g.dt > 0) || !(t_final > t0)) throw std::invalid_argument("gray diffusion: bad time step or horizon");
  const double dx = (g.x1 - g.x0) / double(N);
  std::vector<double> outs = g.output_times.empty() ? std::vector<double>{t0, t_final} : g.output_times;
  MomentDataset d;
  for (std::size_t i = 0; i < N; ++i) d.x.push_back(g.x0 + (double(i) + 0.5) * dx);
  d.t = outs;
  d.allocate(N, outs.size());
  d.params.rho_cv = g.rho_cv;
  d.provenance.generator = "trtc.gray_diffusion";
  std::size_t next = 0;
  auto Dface = [&](std::size_t i) {  // face i+1/2
    const double d0 = g.c / (3.0 * g.sigma_R(T[i])), d1 = g.c / (3.0 * g.sigma_R(T[i + 1]));
    return 2.0 * d0 * d1 / (d0 + d1);
  };
  auto record = [&] {
    for (std::size_t i = 0; i < N; ++i) {
      const double gl = i > 0 ? Dface(i - 1) * (E[i] - E[i - 1]) / dx : 0.0;
      const double gr = i + 1 < N ? Dface(i) * (E[i + 1] - E[i]) / dx : 0.0;
      d.at(Var::e, i, next) = E[i] + g.rho_cv * T[i];
      d.at(Var::F, i, next) = -0.5 * (gl + gr);
      d.at(Var::T, i, next) = T[i];
      d.at(Var::S, i, next) = g.sigma_P ? g.sigma_P(T[i]) * E[i] : 0.0;
    }
    ++next;
  };
  double t = t0;
  while (next < outs.size() && outs[next] <= t + 1e-12 * (t_final - t0)) record();
  std::vector<double> lo(N), di(N), up(N), rhs(N), cp(N), dp(N);
  while (t < t_final - 1e-12 * (t_final - t0)) {
    double h = std::min(g.dt, t_final - t);
    if (next < outs.size()) h = std::min(h, outs[next] - t);
    // Crank-Nicolson: (I - h/2 A) E' = (I + h/2 A) E, A the zero-flux Laplacian with face diffusivities.
    std::vector<double> Df(N - 1);
    for (std::size_t i = 0; i + 1 < N; ++i) Df[i] = Dface(i) / (dx * dx);
    for (std::size_t i = 0; i < N; ++i) {
      const double l = i > 0 ? Df[i - 1] : 0.0, r = i + 1 < N ? Df[i] : 0.0;
      double AE = -(l + r) * E[i];
      if (i > 0) AE += l * E[i - 1];
      if (i + 1 < N) AE += r * E[i + 1];
      rhs[i] = E[i] + 0.5 * h * AE;
      lo[i] = -0.5 * h * l;
      up[i] = -0.5 * h * r;
      di[i] = 1.0 + 0.5 * h * (l + r);
    }
    // Thomas algorithm.
    cp[0] = up[0] / di[0];
    dp[0] = rhs[0] / di[0];
    for (std::size_t i = 1; i < N; ++i) {
      const double m = di[i] - lo[i] * cp[i - 1];
      cp[i] = up[i] / m;
      dp[i] = (rhs[i] - lo[i] * dp[i - 1]) / m;
    }
    E[N - 1] = dp[N - 1];
    for (std::size_t i = N - 1; i-- > 0;) E[i] = dp[i] - cp[i] * E[i + 1];
    if (g.sigma_P) {
      for (std::size_t i = 0; i < N; ++i) {
        // Backward Euler in T with E from energy conservation, Newton iterations.
        const double Ei = E[i], Ti = T[i];
        double Tn = Ti;
        for (int it = 0; it < 50; ++it) {
          const double En = Ei - g.rho_cv * (Tn - Ti);
          const double sp = g.sigma_P(Tn);
          const double F = g.rho_cv * (Tn - Ti) - h * g.c * sp * (En - g.a * std::pow(Tn, 4));
          const double dT = 1e-7 * std::max(Tn, 1e-3);
          const double En2 = Ei - g.rho_cv * (Tn + dT - Ti);
          const double F2 = g.rho_cv * (Tn + dT - Ti) - h * g.c * g.sigma_P(Tn + dT) * (En2 - g.a * std::pow(Tn + dT, 4));
          const double step = F / ((F2 - F) / dT);
          Tn = std::max(0.5 * Tn, Tn - step);
          if (std::abs(step) <= 1e-13 * Tn) break;
        }
        E[i] = Ei - g.rho_cv * (Tn - Ti);
        T[i] = Tn;
      }
    }
    t += h;
    while (next < outs.size() && outs[next] <= t + 1e-12 * (t_final - t0)) record();
  }
  while (next < outs.size()) record();
  return d;
}

}  // namespace trtc
