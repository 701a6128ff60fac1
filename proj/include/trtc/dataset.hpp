#pragma once

// Gridded moment fields (e, F, T, S = sigma_E E) with parameters and provenance.
// On disk: a directory holding meta.json and one little-endian float64 file per field,
// row-major with x fastest.

#include <algorithm>
#include <array>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "trtc/hash.hpp"
#include "trtc/termlib.hpp"

namespace trtc {

inline constexpr int kDatasetSchemaVersion = 1;

struct DatasetError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ProblemParams {
  double gamma = 1e9;
  double T_in = 1000.0;
  double T_o = 1.0;
  double rho_cv = 6.241509074460763e20;  // 1e9 erg cm^-3 eV^-1 expressed in eV cm^-3 eV^-1
  double L = 4.0;
  int M_omega = 8;
  int G = 16;
};

struct Provenance {
  std::string generator;
  std::string config_hash;
  std::string created;
  std::string parent_hash;
  nlohmann::json notes = nlohmann::json::object();
};

inline std::string utc_now_iso() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

struct MomentDataset {
  std::vector<double> x;  // N_x
  std::vector<double> t;  // N_t
  std::array<std::vector<double>, kNumVars> fields;  // each N_x * N_t, index j * N_x + i
  ProblemParams params;
  Provenance provenance;

  std::size_t nx() const { return x.size(); }
  std::size_t nt() const { return t.size(); }
  double dx() const { return x.size() > 1 ? x[1] - x[0] : 0.0; }
  double dt() const { return t.size() > 1 ? t[1] - t[0] : 0.0; }

  std::vector<double>& field(Var v) { return fields[static_cast<int>(v)]; }
  const std::vector<double>& field(Var v) const { return fields[static_cast<int>(v)]; }
  double& at(Var v, std::size_t i, std::size_t j) { return field(v)[j * nx() + i]; }
  double at(Var v, std::size_t i, std::size_t j) const { return field(v)[j * nx() + i]; }
  State state(std::size_t i, std::size_t j) const {
    return {at(Var::e, i, j), at(Var::F, i, j), at(Var::T, i, j), at(Var::S, i, j)};
  }

  void allocate(std::size_t Nx, std::size_t Nt) {
    for (auto& f : fields) f.assign(Nx * Nt, 0.0);
  }

  /// Time slice j of one field.
  std::vector<double> slice_t(Var v, std::size_t j) const {
    const auto& f = field(v);
    return {f.begin() + j * nx(), f.begin() + (j + 1) * nx()};
  }

  /// Content hash over grids, fields and parameters.
  std::string content_hash() const {
    Sha256 h;
    h.update(std::span<const double>(x)).update(std::span<const double>(t));
    for (const auto& f : fields) h.update(std::span<const double>(f));
    const double p[] = {params.gamma, params.T_in, params.T_o, params.rho_cv, params.L,
                        double(params.M_omega), double(params.G)};
    h.update(p, sizeof(p));
    return h.hex();
  }
};

/// Structural checks; physical=true adds T >= 0.
inline void validate(const MomentDataset& d, bool physical = true) {
  const std::size_t n = d.nx() * d.nt();
  if (d.nx() == 0 || d.nt() == 0) throw DatasetError("dataset: empty grid");
  for (int v = 0; v < kNumVars; ++v)
    if (d.fields[v].size() != n) throw DatasetError(std::string("dataset: field ") + kVarNames[v] + " has wrong size");
  auto uniform = [](const std::vector<double>& g, const char* name) {
    if (g.size() < 3) return;
    const double h = g[1] - g[0];
    if (!(h > 0.0)) throw DatasetError(std::string("dataset: ") + name + " grid not increasing");
    for (std::size_t i = 1; i < g.size(); ++i)
      if (std::abs((g[i] - g[i - 1]) - h) > 1e-12 * std::max(std::abs(g.back()), std::abs(h)) * 10.0 &&
          std::abs((g[i] - g[i - 1]) / h - 1.0) > 1e-9)
        throw DatasetError(std::string("dataset: ") + name + " grid not uniform");
  };
  uniform(d.x, "x");
  uniform(d.t, "t");
  if (physical)
    for (double T : d.field(Var::T))
      if (!(T >= 0.0)) throw DatasetError("dataset: negative or non-finite temperature");
}

// Persistence.

namespace detail {

inline void write_f64_le(const std::filesystem::path& p, const std::vector<double>& v) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw DatasetError("cannot open for writing: " + p.string());
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
  } else {
    for (double d : v) {
      unsigned char b[8];
      std::memcpy(b, &d, 8);
      std::reverse(b, b + 8);
      os.write(reinterpret_cast<const char*>(b), 8);
    }
  }
  if (!os) throw DatasetError("write failed: " + p.string());
}

inline std::vector<double> read_f64_le(const std::filesystem::path& p, std::size_t n) {
  if (!std::filesystem::exists(p)) throw DatasetError("missing field file: " + p.filename().string());
  const auto size = std::filesystem::file_size(p);
  if (size != n * sizeof(double))
    throw DatasetError("field file " + p.filename().string() + " has " + std::to_string(size) + " bytes, expected " +
                       std::to_string(n * sizeof(double)));
  std::vector<double> v(n);
  std::ifstream is(p, std::ios::binary);
  is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
  if (!is) throw DatasetError("truncated field file: " + p.filename().string());
  if constexpr (std::endian::native != std::endian::little) {
    for (double& d : v) {
      unsigned char b[8];
      std::memcpy(b, &d, 8);
      std::reverse(b, b + 8);
      std::memcpy(&d, b, 8);
    }
  }
  return v;
}

}  // namespace detail

inline nlohmann::json params_to_json(const ProblemParams& p) {
  return {{"gamma", p.gamma}, {"T_in", p.T_in}, {"T_o", p.T_o}, {"rho_cv", p.rho_cv},
          {"L", p.L},         {"M_omega", p.M_omega}, {"G", p.G}};
}

inline ProblemParams params_from_json(const nlohmann::json& j) {
  ProblemParams p;
  p.gamma = j.at("gamma").get<double>();
  p.T_in = j.at("T_in").get<double>();
  p.T_o = j.at("T_o").get<double>();
  p.rho_cv = j.at("rho_cv").get<double>();
  p.L = j.at("L").get<double>();
  p.M_omega = j.at("M_omega").get<int>();
  p.G = j.at("G").get<int>();
  return p;
}

inline void write_dataset(const MomentDataset& d, const std::filesystem::path& dir) {
  validate(d, false);
  std::filesystem::create_directories(dir);
  nlohmann::json meta;
  meta["schema_version"] = kDatasetSchemaVersion;
  meta["shape"] = {{"nx", d.nx()}, {"nt", d.nt()}};
  meta["layout"] = "row-major, x fastest";
  meta["byte_order"] = "little";
  meta["dtype"] = "float64";
  meta["x"] = d.x;
  meta["t"] = d.t;
  meta["params"] = params_to_json(d.params);
  meta["provenance"] = {{"generator", d.provenance.generator},
                        {"config_hash", d.provenance.config_hash},
                        {"created", d.provenance.created},
                        {"parent_hash", d.provenance.parent_hash},
                        {"notes", d.provenance.notes}};
  nlohmann::json files;
  for (int v = 0; v < kNumVars; ++v) files[kVarNames[v]] = std::string(kVarNames[v]) + ".bin";
  meta["fields"] = files;
  meta["content_hash"] = d.content_hash();
  for (int v = 0; v < kNumVars; ++v) detail::write_f64_le(dir / files[kVarNames[v]].get<std::string>(), d.fields[v]);
  std::ofstream os(dir / "meta.json");
  os << std::setprecision(17) << meta.dump(2) << "\n";
  if (!os) throw DatasetError("cannot write meta.json in " + dir.string());
}

inline MomentDataset read_dataset(const std::filesystem::path& dir) {
  const auto mp = dir / "meta.json";
  if (!std::filesystem::exists(mp)) throw DatasetError("missing meta.json in " + dir.string());
  nlohmann::json meta;
  try {
    std::ifstream is(mp);
    meta = nlohmann::json::parse(is);
  } catch (const std::exception& e) {
    throw DatasetError(std::string("meta.json parse error: ") + e.what());
  }
  if (meta.value("schema_version", -1) != kDatasetSchemaVersion)
    throw DatasetError("schema version mismatch in " + mp.string());
  if (meta.value("byte_order", "") != "little" || meta.value("dtype", "") != "float64")
    throw DatasetError("unsupported payload encoding in " + mp.string());
  MomentDataset d;
  d.x = meta.at("x").get<std::vector<double>>();
  d.t = meta.at("t").get<std::vector<double>>();
  const std::size_t nx = meta.at("shape").at("nx"), nt = meta.at("shape").at("nt");
  if (nx != d.x.size() || nt != d.t.size()) throw DatasetError("shape mismatch between meta grids and shape");
  d.params = params_from_json(meta.at("params"));
  const auto& pv = meta.at("provenance");
  d.provenance.generator = pv.value("generator", "");
  d.provenance.config_hash = pv.value("config_hash", "");
  d.provenance.created = pv.value("created", "");
  d.provenance.parent_hash = pv.value("parent_hash", "");
  d.provenance.notes = pv.value("notes", nlohmann::json::object());
  for (int v = 0; v < kNumVars; ++v) {
    if (!meta.at("fields").contains(kVarNames[v]))
      throw DatasetError(std::string("meta.json does not list field ") + kVarNames[v]);
    d.fields[v] = detail::read_f64_le(dir / meta["fields"][kVarNames[v]].get<std::string>(), nx * nt);
  }
  return d;
}

/// One row per (x, t): x,t,e,F,T,S.
inline void write_csv(const MomentDataset& d, const std::filesystem::path& p) {
  std::ofstream os(p);
  if (!os) throw DatasetError("cannot open " + p.string());
  os << "x,t,e,F,T,S\n" << std::setprecision(17);
  for (std::size_t j = 0; j < d.nt(); ++j)
    for (std::size_t i = 0; i < d.nx(); ++i)
      os << d.x[i] << ',' << d.t[j] << ',' << d.at(Var::e, i, j) << ',' << d.at(Var::F, i, j) << ','
         << d.at(Var::T, i, j) << ',' << d.at(Var::S, i, j) << '\n';
}

// Slicing and resampling.

struct DatasetSlice {
  std::size_t i0 = 0, i1 = 0;  // inclusive
  std::size_t j0 = 0, j1 = 0;  // inclusive
};

/// Index of the grid point nearest to v; ties resolve toward the interior of [lo_side, hi_side].
inline std::size_t nearest_index(const std::vector<double>& g, double v, bool upper) {
  std::size_t best = 0;
  double bd = INFINITY;
  const double h = g.size() > 1 ? std::abs(g[1] - g[0]) : 1.0;
  const double tol = 1e-9 * h;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double d = std::abs(g[i] - v);
    if (d < bd - tol || (std::abs(d - bd) <= tol && ((upper && g[i] <= v) || (!upper && g[i] >= v)))) {
      bd = d;
      best = i;
    }
  }
  return best;
}

/// Slice covering physical bounds [x0, x1] x [t0, t1], inclusive of the nearest endpoints.
inline DatasetSlice slice_for(const MomentDataset& d, double x0, double x1, double t0, double t1) {
  return {nearest_index(d.x, x0, false), nearest_index(d.x, x1, true), nearest_index(d.t, t0, false),
          nearest_index(d.t, t1, true)};
}

inline MomentDataset slice(const MomentDataset& d, const DatasetSlice& s) {
  if (s.i0 > s.i1 || s.j0 > s.j1 || s.i1 >= d.nx() || s.j1 >= d.nt()) throw DatasetError("slice out of range");
  MomentDataset o;
  o.params = d.params;
  o.provenance = d.provenance;
  o.provenance.parent_hash = d.content_hash();
  o.provenance.notes["slice"] = {s.i0, s.i1, s.j0, s.j1};
  o.x.assign(d.x.begin() + s.i0, d.x.begin() + s.i1 + 1);
  o.t.assign(d.t.begin() + s.j0, d.t.begin() + s.j1 + 1);
  o.allocate(o.nx(), o.nt());
  for (int v = 0; v < kNumVars; ++v)
    for (std::size_t j = 0; j < o.nt(); ++j)
      for (std::size_t i = 0; i < o.nx(); ++i)
        o.fields[v][j * o.nx() + i] = d.fields[v][(j + s.j0) * d.nx() + (i + s.i0)];
  return o;
}

/// Every sx-th x sample and st-th t sample starting at index 0.
inline MomentDataset resample_stride(const MomentDataset& d, std::size_t sx, std::size_t st) {
  if (sx == 0 || st == 0) throw DatasetError("resample: zero stride");
  MomentDataset o;
  o.params = d.params;
  o.provenance = d.provenance;
  o.provenance.parent_hash = d.content_hash();
  o.provenance.notes["resample"] = {{"mode", "stride"}, {"sx", sx}, {"st", st}};
  for (std::size_t i = 0; i < d.nx(); i += sx) o.x.push_back(d.x[i]);
  for (std::size_t j = 0; j < d.nt(); j += st) o.t.push_back(d.t[j]);
  o.allocate(o.nx(), o.nt());
  for (int v = 0; v < kNumVars; ++v)
    for (std::size_t j = 0; j < o.nt(); ++j)
      for (std::size_t i = 0; i < o.nx(); ++i) o.fields[v][j * o.nx() + i] = d.fields[v][(j * st) * d.nx() + i * sx];
  return o;
}

namespace detail {
struct Lerp {
  std::size_t i = 0;
  double w = 0.0;  // weight of i+1
};
inline Lerp lerp_index(const std::vector<double>& g, double v) {
  if (g.size() == 1 || v <= g.front()) return {0, 0.0};
  if (v >= g.back()) return {g.size() - 2, 1.0};
  const double h = (g.back() - g.front()) / double(g.size() - 1);
  std::size_t i = std::min<std::size_t>(g.size() - 2, static_cast<std::size_t>((v - g.front()) / h));
  while (i > 0 && g[i] > v) --i;
  while (i + 2 < g.size() && g[i + 1] < v) ++i;
  return {i, (v - g[i]) / (g[i + 1] - g[i])};
}
}  // namespace detail

/// Bilinear interpolation onto new grids; values outside the source range are clamped to the edge.
inline MomentDataset resample_linear(const MomentDataset& d, const std::vector<double>& nx,
                                     const std::vector<double>& nt) {
  MomentDataset o;
  o.params = d.params;
  o.provenance = d.provenance;
  o.provenance.parent_hash = d.content_hash();
  o.provenance.notes["resample"] = {{"mode", "linear"}, {"nx", nx.size()}, {"nt", nt.size()}};
  o.x = nx;
  o.t = nt;
  o.allocate(nx.size(), nt.size());
  std::vector<detail::Lerp> lx(nx.size()), lt(nt.size());
  for (std::size_t i = 0; i < nx.size(); ++i) lx[i] = detail::lerp_index(d.x, nx[i]);
  for (std::size_t j = 0; j < nt.size(); ++j) lt[j] = detail::lerp_index(d.t, nt[j]);
  const std::size_t Nx = d.nx();
  for (int v = 0; v < kNumVars; ++v)
    for (std::size_t j = 0; j < nt.size(); ++j)
      for (std::size_t i = 0; i < nx.size(); ++i) {
        const auto [ix, wx] = lx[i];
        const auto [jt, wt] = lt[j];
        const auto& f = d.fields[v];
        const std::size_t ix1 = std::min(ix + 1, Nx - 1), jt1 = std::min(jt + 1, d.nt() - 1);
        auto val = [&](std::size_t a, std::size_t b) { return f[b * Nx + a]; };
        double r = (1 - wx) * (1 - wt) * val(ix, jt);
        if (wx != 0.0) r += wx * (1 - wt) * val(ix1, jt);
        if (wt != 0.0) r += (1 - wx) * wt * val(ix, jt1);
        if (wx != 0.0 && wt != 0.0) r += wx * wt * val(ix1, jt1);
        o.fields[v][j * nx.size() + i] = r;
      }
  return o;
}

/// Resample to (Nx', Nt') points: stride subsampling when N is a multiple of N', otherwise linear
/// interpolation onto a uniform grid spanning the same first and last coordinates.
inline MomentDataset resample(const MomentDataset& d, std::size_t Nx, std::size_t Nt, bool allow_interp = true) {
  if (Nx == 0 || Nt == 0) throw DatasetError("resample: empty target");
  if (Nx == d.nx() && Nt == d.nt()) {
    MomentDataset o = d;
    o.provenance.notes["resample"] = {{"mode", "identity"}};
    return o;
  }
  if (d.nx() % Nx == 0 && d.nt() % Nt == 0) return resample_stride(d, d.nx() / Nx, d.nt() / Nt);
  // Time grids with N = k (N' - 1) + 1 are also stride-commensurate.
  const bool tx = d.nx() % Nx == 0 || (Nx > 1 && (d.nx() - 1) % (Nx - 1) == 0);
  const bool tt = d.nt() % Nt == 0 || (Nt > 1 && (d.nt() - 1) % (Nt - 1) == 0);
  if (tx && tt) {
    const std::size_t sx = d.nx() % Nx == 0 ? d.nx() / Nx : (d.nx() - 1) / (Nx - 1);
    const std::size_t st = d.nt() % Nt == 0 ? d.nt() / Nt : (d.nt() - 1) / (Nt - 1);
    return resample_stride(d, sx, st);
  }
  if (!allow_interp) throw DatasetError("resample: grids not commensurate and interpolation not requested");
  auto lin = [](const std::vector<double>& g, std::size_t n) {
    std::vector<double> r(n);
    for (std::size_t i = 0; i < n; ++i) r[i] = n == 1 ? g.front() : g.front() + (g.back() - g.front()) * double(i) / double(n - 1);
    return r;
  };
  return resample_linear(d, lin(d.x, Nx), lin(d.t, Nt));
}

/// Uniform grid of cell centres on [0, L].
inline std::vector<double> cell_centers(double L, std::size_t N) {
  std::vector<double> x(N);
  for (std::size_t i = 0; i < N; ++i) x[i] = (double(i) + 0.5) * L / double(N);
  return x;
}

inline std::vector<double> uniform_times(double dt, std::size_t N) {
  std::vector<double> t(N);
  for (std::size_t j = 0; j < N; ++j) t[j] = double(j) * dt;
  return t;
}

/// e = E + rho_cv T.
inline double total_energy(double E, double T, double rho_cv) { return E + rho_cv * T; }
inline double radiation_energy(double e, double T, double rho_cv) { return e - rho_cv * T; }

}  // namespace trtc
