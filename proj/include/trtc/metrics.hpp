#pragma once

// Relative error metrics between a candidate and a reference dataset on one grid:
//   err_L1     = sum |U^ - U| / sum |U|                over space-time
//   err_L1_j   = sum_i |U^ - U| / sum_i |U|           per time slice
//   err_Int_j  = |sum_i (U^ - U)| / |sum_i U|         per time slice
// and the parameter-sweep table.

#include <cmath>
#include <fstream>
#include <functional>
#include <future>
#include <iomanip>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "trtc/closure.hpp"
#include "trtc/dataset.hpp"
#include "trtc/physics.hpp"
#include "trtc/solver.hpp"

namespace trtc {

class MetricsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct VarMetrics {
  double err_L1 = 0.0;  // over the evaluated window, undefined slices excluded
  std::vector<double> err_L1_j;
  std::vector<double> err_Int_j;
  std::vector<char> defined;  // slice j has a nonzero denominator
  double max_L1_j = 0.0, max_Int_j = 0.0;  // over defined slices with t >= t_min
};

struct MetricOptions {
  double t_min = -std::numeric_limits<double>::infinity();  // aggregates use t > t_min (t >= t_min when -inf)
  bool strict_after = true;
};

struct MetricReport {
  std::array<VarMetrics, kNumVars> var;
  std::vector<double> t;
  std::size_t nx = 0;
  double t_min = 0.0;
  nlohmann::json tag = nlohmann::json::object();
  double kappa_L = std::numeric_limits<double>::quiet_NaN();

  const VarMetrics& operator[](Var v) const { return var[static_cast<int>(v)]; }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["nx"] = nx;
    j["nt"] = t.size();
    j["t_min"] = std::isfinite(t_min) ? nlohmann::json(t_min) : nlohmann::json(nullptr);
    j["tag"] = tag;
    if (std::isfinite(kappa_L)) j["kappa_L"] = kappa_L;
    for (int v = 0; v < kNumVars; ++v) {
      const auto& m = var[v];
      nlohmann::json undefined = nlohmann::json::array();
      for (std::size_t k = 0; k < m.defined.size(); ++k)
        if (!m.defined[k]) undefined.push_back(k);
      j["vars"][kVarNames[v]] = {{"err_L1", m.err_L1}, {"max_err_L1_j", m.max_L1_j}, {"max_err_Int_j", m.max_Int_j},
                                 {"undefined_slices", undefined}};
    }
    return j;
  }

  /// Time series as CSV: t, then err_L1_j and err_Int_j for each variable (empty when undefined).
  std::string to_csv() const {
    std::ostringstream os;
    os << std::setprecision(10) << "t";
    for (int v = 0; v < kNumVars; ++v) os << ",err_L1_j_" << kVarNames[v] << ",err_Int_j_" << kVarNames[v];
    os << '\n';
    for (std::size_t k = 0; k < t.size(); ++k) {
      os << t[k];
      for (int v = 0; v < kNumVars; ++v) {
        if (var[v].defined[k])
          os << ',' << var[v].err_L1_j[k] << ',' << var[v].err_Int_j[k];
        else
          os << ",,";
      }
      os << '\n';
    }
    return os.str();
  }
};

inline bool same_grid(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return false;
  double s = 0.0;
  for (double x : b) s = std::max(s, std::abs(x));
  for (std::size_t i = 0; i < a.size(); ++i)
    if (std::abs(a[i] - b[i]) > 1e-9 * s) return false;
  return true;
}

inline MetricReport metrics(const MomentDataset& cand, const MomentDataset& ref, const MetricOptions& opt = {}) {
  if (!same_grid(cand.x, ref.x) || !same_grid(cand.t, ref.t))
    throw MetricsError("metrics: candidate and reference grids differ (resample first)");
  MetricReport r;
  r.t = ref.t;
  r.nx = ref.nx();
  r.t_min = opt.t_min;
  const std::size_t Nx = ref.nx(), Nt = ref.nt();
  auto in_window = [&](double t) {
    if (!std::isfinite(opt.t_min)) return true;
    return opt.strict_after ? t > opt.t_min : t >= opt.t_min;
  };
  for (int v = 0; v < kNumVars; ++v) {
    VarMetrics& m = r.var[v];
    m.err_L1_j.assign(Nt, 0.0);
    m.err_Int_j.assign(Nt, 0.0);
    m.defined.assign(Nt, 0);
    double num = 0.0, den = 0.0;
    for (std::size_t j = 0; j < Nt; ++j) {
      double a = 0.0, b = 0.0, s = 0.0, S = 0.0;
      for (std::size_t i = 0; i < Nx; ++i) {
        const double u = ref.fields[v][j * Nx + i], uh = cand.fields[v][j * Nx + i];
        a += std::abs(uh - u);
        b += std::abs(u);
        s += uh - u;
        S += u;
      }
      if (!(b > 0.0) || !(std::abs(S) > 0.0)) continue;
      m.defined[j] = 1;
      m.err_L1_j[j] = a / b;
      m.err_Int_j[j] = std::abs(s) / std::abs(S);
      if (in_window(ref.t[j])) {
        num += a;
        den += b;
        m.max_L1_j = std::max(m.max_L1_j, m.err_L1_j[j]);
        m.max_Int_j = std::max(m.max_Int_j, m.err_Int_j[j]);
      }
    }
    m.err_L1 = den > 0.0 ? num / den : std::numeric_limits<double>::quiet_NaN();
  }
  return r;
}

// Parameter sweep.

enum class PointStatus { ok, blowup, absent, failed };

inline const char* to_string(PointStatus s) {
  switch (s) {
    case PointStatus::ok: return "ok";
    case PointStatus::blowup: return "blowup";
    case PointStatus::absent: return "absent";
    case PointStatus::failed: return "failed";
  }
  return "?";
}

struct SweepRow {
  ParamPoint p;
  double kappa_L = 0.0;
  bool training = false;
  PointStatus status = PointStatus::absent;
  std::array<double, kNumVars> err_L1{};
  std::string message;
};

struct SweepReport {
  std::vector<SweepRow> rows;

  std::string to_csv() const {
    std::ostringstream os;
    os << std::setprecision(10) << "gamma,T_in3,kappa_L,training,status,err_L1_e,err_L1_F,err_L1_T,err_L1_S\n";
    for (const auto& r : rows) {
      os << r.p.gamma << ',' << r.p.T_in3 << ',' << r.kappa_L << ',' << (r.training ? 1 : 0) << ',' << to_string(r.status);
      for (int v = 0; v < kNumVars; ++v) {
        os << ',';
        if (r.status == PointStatus::ok) os << r.err_L1[v];
      }
      os << '\n';
    }
    return os.str();
  }
  nlohmann::json to_json() const {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& r : rows) {
      nlohmann::json e = {{"gamma", r.p.gamma}, {"T_in3", r.p.T_in3}, {"kappa_L", r.kappa_L},
                          {"training", r.training}, {"status", to_string(r.status)}, {"message", r.message}};
      if (r.status == PointStatus::ok)
        for (int v = 0; v < kNumVars; ++v) e["err_L1"][kVarNames[v]] = r.err_L1[v];
      a.push_back(e);
    }
    return {{"rows", a}};
  }
};

/// Reference lookup (nullopt when no reference exists) and a runner producing the candidate on the
/// reference grid; SolverError "closure blow-up" marks a blow-up point.
using ReferenceLookup = std::function<std::optional<MomentDataset>(const ParamPoint&)>;
using SweepRunner = std::function<MomentDataset(const ParamPoint&, const MomentDataset&)>;

inline SweepReport sweep_report(const std::vector<ParamPoint>& grid, const ReferenceLookup& refs, const SweepRunner& run,
                                double T_o = 1.0, double L = 4.0, const MetricOptions& opt = {}, int workers = 1) {
  SweepReport rep;
  rep.rows.resize(grid.size());
  auto one = [&](std::size_t k) {
    SweepRow& r = rep.rows[k];
    r.p = grid[k];
    r.kappa_L = kappa_L(T_o, std::cbrt(r.p.T_in3), r.p.gamma, L).exact;
    r.training = is_training_point(r.p);
    std::optional<MomentDataset> ref;
    try {
      ref = refs(r.p);
    } catch (const std::exception& e) {
      r.status = PointStatus::absent;
      r.message = e.what();
      return;
    }
    if (!ref) {
      r.status = PointStatus::absent;
      r.message = "no reference data";
      return;
    }
    try {
      const MomentDataset c = run(r.p, *ref);
      const MetricReport m = metrics(c, *ref, opt);
      for (int v = 0; v < kNumVars; ++v) r.err_L1[v] = m.var[v].err_L1;
      r.status = PointStatus::ok;
    } catch (const SolverError& e) {
      r.status = e.kind() == "closure blow-up" ? PointStatus::blowup : PointStatus::failed;
      r.message = e.what();
    } catch (const std::exception& e) {
      r.status = PointStatus::failed;
      r.message = e.what();
    }
  };
  if (workers <= 1) {
    for (std::size_t k = 0; k < grid.size(); ++k) one(k);
  } else {
    std::vector<std::future<void>> fs;
    for (int w = 0; w < workers; ++w)
      fs.push_back(std::async(std::launch::async, [&, w] {
        for (std::size_t k = std::size_t(w); k < grid.size(); k += std::size_t(workers)) one(k);
      }));
    for (auto& f : fs) f.get();
  }
  return rep;
}

}  // namespace trtc
