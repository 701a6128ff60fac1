#pragma once

// Convolutional weak form with separable rectified-polynomial test functions
//   psi(x, t) = phi_x(x) phi_t(t),  phi(v) = (1 - (v/a)^2)_+^p.
// For an equation d_t u = sum w d_x f + sum w g tested against psi(. - x_q, . - t_q):
//   b_q          = -<d_t psi, u>
//   flux column  = -<d_x psi, f>
//   source column = <psi, g>
// Inner products are trapezoidal sums; the test functions vanish at the ends of their support so
// the sums carry no endpoint corrections.

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/special_functions/beta.hpp>
#include <fftw3.h>

#include "trtc/dataset.hpp"
#include "trtc/termlib.hpp"

namespace trtc {

struct WeakFormError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// One axis of a separable test function. Half-width a is in grid units; samples cover offsets
/// -n..n with n = floor(a) and already include the grid spacing (quadrature weight).
struct TestFunction1D {
  double a = 0.0;
  double p = 0.0;
  double delta = 1.0;
  int n = 0;
  std::vector<double> phi;   // phi(i delta) * delta
  std::vector<double> dphi;  // phi'(i delta) * delta, derivative in physical units

  int width() const { return 2 * n + 1; }
};

inline TestFunction1D build_test_function(double p, double a_grid, double delta, int max_deriv = 1) {
  if (!(p > max_deriv)) throw WeakFormError("test function power must exceed the derivative order");
  if (!(a_grid > 1.0)) throw WeakFormError("test function half-width must exceed one grid cell");
  if (!(delta > 0.0)) throw WeakFormError("test function grid spacing must be positive");
  TestFunction1D tf;
  tf.a = a_grid;
  tf.p = p;
  tf.delta = delta;
  tf.n = static_cast<int>(std::floor(a_grid));
  tf.phi.resize(tf.width());
  tf.dphi.resize(tf.width());
  for (int i = -tf.n; i <= tf.n; ++i) {
    const double v = i / a_grid;
    const double base = 1.0 - v * v;
    double f = 0.0, df = 0.0;
    if (base > 0.0) {
      f = std::pow(base, p);
      df = -2.0 * p * v / (a_grid * delta) * std::pow(base, p - 1.0);
    }
    tf.phi[i + tf.n] = f * delta;
    tf.dphi[i + tf.n] = df * delta;
  }
  return tf;
}

/// int phi dv over the support for half-width a (physical units).
inline double phi_integral(double p, double a) { return a * boost::math::beta(0.5, p + 1.0); }

/// Standard deviation of |phi_hat|^2 as a density in angular wavenumber, for a = 1.
inline double phi_spectral_sigma_unit(double p) {
  using boost::math::beta;
  return std::sqrt(4.0 * p * p * beta(1.5, 2.0 * p - 1.0) / beta(0.5, 2.0 * p + 1.0));
}

/// Power giving phi = tau at the last interior sample of a support of half-width m samples.
inline double power_for_tau(double tau, int m) {
  const double md = m;
  return std::log(tau) / std::log((2.0 * md - 1.0) / (md * md));
}

// Spectra and changepoint.

/// Mean magnitude spectrum along one axis (modes 0..N/2) of the dataset fields, each field
/// normalized by its max abs so that no variable dominates.
inline std::vector<double> mean_abs_spectrum(const MomentDataset& d, bool along_x) {
  const int N = static_cast<int>(along_x ? d.nx() : d.nt());
  const int M = static_cast<int>(along_x ? d.nt() : d.nx());
  const int H = N / 2 + 1;
  std::vector<double> acc(H, 0.0);
  std::vector<double> in(N);
  std::vector<std::complex<double>> out(H);
  fftw_plan plan = fftw_plan_dft_r2c_1d(N, in.data(), reinterpret_cast<fftw_complex*>(out.data()), FFTW_ESTIMATE);
  for (int v = 0; v < kNumVars; ++v) {
    const auto& f = d.fields[v];
    double mx = 0.0;
    for (double x : f) mx = std::max(mx, std::abs(x));
    if (!(mx > 0.0)) continue;
    for (int s = 0; s < M; ++s) {
      for (int i = 0; i < N; ++i) in[i] = (along_x ? f[s * d.nx() + i] : f[i * d.nx() + s]) / mx;
      fftw_execute(plan);
      for (int k = 0; k < H; ++k) acc[k] += std::abs(out[k]) / M;
    }
  }
  fftw_destroy_plan(plan);
  return acc;
}

/// Index of the changepoint of a two-segment least-squares line fit to y(k); 0 when degenerate.
inline int two_segment_changepoint(const std::vector<double>& y) {
  const int n = static_cast<int>(y.size());
  if (n < 4) return 0;
  auto sse_line = [&](int lo, int hi) {  // inclusive range, least-squares line
    const int m = hi - lo + 1;
    if (m <= 2) return 0.0;
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (int k = lo; k <= hi; ++k) {
      sx += k;
      sy += y[k];
      sxx += double(k) * k;
      sxy += k * y[k];
    }
    const double den = m * sxx - sx * sx;
    const double slope = den != 0.0 ? (m * sxy - sx * sy) / den : 0.0;
    const double icpt = (sy - slope * sx) / m;
    double r = 0.0;
    for (int k = lo; k <= hi; ++k) r += std::pow(y[k] - slope * k - icpt, 2);
    return r;
  };
  int best = 0;
  double bs = INFINITY;
  for (int c = 1; c < n - 1; ++c) {
    const double s = sse_line(0, c) + sse_line(c, n - 1);
    if (best == 0 || s < bs - 1e-15 * std::abs(bs)) {
      bs = s;
      best = c;
    }
  }
  return best;
}

/// Changepoint mode index of the cumulative magnitude spectrum along an axis.
inline int spectral_changepoint(const MomentDataset& d, bool along_x) {
  const auto spec = mean_abs_spectrum(d, along_x);
  std::vector<double> cum(spec.size());
  std::partial_sum(spec.begin(), spec.end(), cum.begin());
  if (!(cum.back() > 0.0)) return 0;
  const double dc_share = spec[0] / cum.back();
  if (dc_share > 1.0 - 1e-12) return 0;
  for (double& c : cum) c /= cum.back();
  return two_segment_changepoint(cum);
}

struct AxisParams {
  double p = 4.0;
  double a = 0.0;  // grid units
  int changepoint = 0;
  bool fallback = false;
  bool capped = false;
};

struct TestParams {
  AxisParams x, t;
};

/// Choose (p, a) per axis from the data spectrum: phi = tau at the last interior sample and the
/// changepoint wavenumber sits tau_hat spectral standard deviations into phi's power spectrum.
inline AxisParams select_axis_params(int N, int k_c, double tau, double tau_hat) {
  if (!(tau > 0.0 && tau < 1.0) || !(tau_hat > 0.0)) throw WeakFormError("select_test_params: need 0 < tau < 1, tau_hat > 0");
  AxisParams r;
  r.changepoint = k_c;
  const int cap = std::max(3, N / 3);
  if (k_c <= 0) {
    r.fallback = true;
    r.p = 4.0;
    r.a = std::max(3.0, std::floor(N / 10.0));
    return r;
  }
  const double kt = 2.0 * std::numbers::pi * k_c / N;  // radians per sample
  for (int m = 3; m <= cap; ++m) {
    const double p = power_for_tau(tau, m);
    if (m >= tau_hat * phi_spectral_sigma_unit(p) / kt) {
      r.p = p;
      r.a = m;
      return r;
    }
  }
  r.capped = true;
  r.a = cap;
  r.p = power_for_tau(tau, cap);
  return r;
}

inline TestParams select_test_params(const MomentDataset& d, double tau = 1e-4, double tau_hat = 6.0) {
  TestParams tp;
  tp.x = select_axis_params(static_cast<int>(d.nx()), spectral_changepoint(d, true), tau, tau_hat);
  tp.t = select_axis_params(static_cast<int>(d.nt()), spectral_changepoint(d, false), tau, tau_hat);
  return tp;
}

// Query points.

struct QueryGrid {
  std::vector<int> ix, it;
  std::size_t size() const { return ix.size() * it.size(); }
};

inline std::vector<int> query_axis(int N, int n, int stride) {
  std::vector<int> q;
  for (int i = n; i <= N - 1 - n; i += stride) q.push_back(i);
  return q;
}

/// Uniform interior query grid; stride starts at the half-width and halves until K >= min_K.
inline QueryGrid choose_queries(int Nx, int Nt, const TestFunction1D& fx, const TestFunction1D& ft, std::size_t min_K) {
  if (2 * fx.n + 1 > Nx || 2 * ft.n + 1 > Nt) throw WeakFormError("test function support exceeds the data domain");
  int sx = std::max(1, fx.n), st = std::max(1, ft.n);
  QueryGrid q;
  for (;;) {
    q.ix = query_axis(Nx, fx.n, sx);
    q.it = query_axis(Nt, ft.n, st);
    if (q.size() >= min_K || (sx == 1 && st == 1)) break;
    // Halve the coarser stride first (relative to its half-width).
    if (sx > 1 && (st == 1 || double(sx) / fx.n >= double(st) / ft.n)) sx = std::max(1, sx / 2);
    else st = std::max(1, st / 2);
  }
  return q;
}

// Separable correlation sum_{i,j} kx[i - iq] kt[j - jq] f[i, j] at query points.

namespace detail {

inline Eigen::VectorXd correlate_direct(const std::vector<double>& f, int Nx, int /*Nt*/, const std::vector<double>& kx,
                                        const std::vector<double>& kt, const QueryGrid& q) {
  const int nx = static_cast<int>(kx.size()) / 2, nt = static_cast<int>(kt.size()) / 2;
  const int Q = static_cast<int>(q.it.size());
  // Along t first for every x.
  std::vector<double> tmp(static_cast<std::size_t>(Nx) * Q);
  for (int c = 0; c < Q; ++c) {
    const int j0 = q.it[c] - nt;
    for (int i = 0; i < Nx; ++i) {
      double s = 0.0;
      for (int l = 0; l < 2 * nt + 1; ++l) s += kt[l] * f[static_cast<std::size_t>(j0 + l) * Nx + i];
      tmp[static_cast<std::size_t>(c) * Nx + i] = s;
    }
  }
  Eigen::VectorXd out(q.size());
  std::size_t r = 0;
  for (int c = 0; c < Q; ++c)
    for (int iq : q.ix) {
      double s = 0.0;
      const int i0 = iq - nx;
      for (int l = 0; l < 2 * nx + 1; ++l) s += kx[l] * tmp[static_cast<std::size_t>(c) * Nx + i0 + l];
      out[r++] = s;
    }
  return out;
}

// Full 1D correlation of each line with kernel k via FFT (zero padded), kept at indices idx.
inline void fft_correlate_lines(const std::vector<double>& in, int N, int lines, bool along_fast,
                                const std::vector<double>& k, const std::vector<int>& idx, int fast_len,
                                std::vector<double>& out) {
  const int n = static_cast<int>(k.size()) / 2;
  int P = 1;
  while (P < N + 2 * n + 1) P <<= 1;
  std::vector<double> buf(P), kb(P, 0.0);
  const int H = P / 2 + 1;
  std::vector<std::complex<double>> fb(H), fk(H);
  // Correlation with k equals convolution with reversed k; place reversed kernel centred at 0.
  for (int l = -n; l <= n; ++l) kb[(P - l) % P] = k[l + n];
  fftw_plan pk = fftw_plan_dft_r2c_1d(P, kb.data(), reinterpret_cast<fftw_complex*>(fk.data()), FFTW_ESTIMATE);
  fftw_execute(pk);
  fftw_destroy_plan(pk);
  fftw_plan pf = fftw_plan_dft_r2c_1d(P, buf.data(), reinterpret_cast<fftw_complex*>(fb.data()), FFTW_ESTIMATE);
  fftw_plan pb = fftw_plan_dft_c2r_1d(P, reinterpret_cast<fftw_complex*>(fb.data()), buf.data(), FFTW_ESTIMATE);
  const int Q = static_cast<int>(idx.size());
  out.assign(static_cast<std::size_t>(lines) * Q, 0.0);
  for (int s = 0; s < lines; ++s) {
    std::fill(buf.begin(), buf.end(), 0.0);
    for (int i = 0; i < N; ++i)
      buf[i] = along_fast ? in[static_cast<std::size_t>(s) * fast_len + i] : in[static_cast<std::size_t>(i) * fast_len + s];
    fftw_execute(pf);
    for (int m = 0; m < H; ++m) fb[m] *= fk[m];
    fftw_execute(pb);
    for (int c = 0; c < Q; ++c) out[static_cast<std::size_t>(s) * Q + c] = buf[idx[c]] / P;
  }
  fftw_destroy_plan(pf);
  fftw_destroy_plan(pb);
}

inline Eigen::VectorXd correlate_fft(const std::vector<double>& f, int Nx, int Nt, const std::vector<double>& kx,
                                     const std::vector<double>& kt, const QueryGrid& q) {
  // t-direction: lines indexed by x (stride Nx), results tmp[x][qt].
  std::vector<double> tmp;
  fft_correlate_lines(f, Nt, Nx, false, kt, q.it, Nx, tmp);
  // Rearrange to lines indexed by qt along x.
  const int Q = static_cast<int>(q.it.size());
  std::vector<double> byq(static_cast<std::size_t>(Q) * Nx);
  for (int i = 0; i < Nx; ++i)
    for (int c = 0; c < Q; ++c) byq[static_cast<std::size_t>(c) * Nx + i] = tmp[static_cast<std::size_t>(i) * Q + c];
  std::vector<double> res;
  fft_correlate_lines(byq, Nx, Q, true, kx, q.ix, Nx, res);
  Eigen::VectorXd out(q.size());
  std::size_t r = 0;
  const int QX = static_cast<int>(q.ix.size());
  for (int c = 0; c < Q; ++c)
    for (int a = 0; a < QX; ++a) out[r++] = res[static_cast<std::size_t>(c) * QX + a];
  return out;
}

}  // namespace detail

enum class ConvMethod { direct, fft };

/// Weighted sum sum_{i,j} kx(x_i - x_q) kt(t_j - t_q) f(x_i, t_j) at all query points (x fastest).
inline Eigen::VectorXd weak_inner(const std::vector<double>& f, int Nx, int Nt, const std::vector<double>& kx,
                                  const std::vector<double>& kt, const QueryGrid& q, ConvMethod m = ConvMethod::direct) {
  return m == ConvMethod::direct ? detail::correlate_direct(f, Nx, Nt, kx, kt, q)
                                 : detail::correlate_fft(f, Nx, Nt, kx, kt, q);
}

struct WeakSystem {
  Var slot = Var::F;
  Eigen::MatrixXd G;  // K x J
  Eigen::VectorXd b;  // K
  Eigen::VectorXd col_norms;
  QueryGrid queries;
  TestFunction1D fx, ft;

  std::size_t K() const { return static_cast<std::size_t>(G.rows()); }
  std::size_t J() const { return static_cast<std::size_t>(G.cols()); }
};

/// Assemble (G, b) for one equation slot. The evolved variable of the slot is the slot variable.
inline WeakSystem assemble_weak_system(const MomentDataset& d, const TermLibrary& lib, const TestFunction1D& fx,
                                       const TestFunction1D& ft, const QueryGrid& q,
                                       ConvMethod method = ConvMethod::direct) {
  const int Nx = static_cast<int>(d.nx()), Nt = static_cast<int>(d.nt());
  for (int i : q.ix)
    if (i - fx.n < 0 || i + fx.n >= Nx) throw WeakFormError("query point support leaves the data domain in x");
  for (int j : q.it)
    if (j - ft.n < 0 || j + ft.n >= Nt) throw WeakFormError("query point support leaves the data domain in t");
  WeakSystem ws;
  ws.slot = lib.slot;
  ws.queries = q;
  ws.fx = fx;
  ws.ft = ft;
  const std::size_t K = q.size(), J = lib.size();
  ws.G.resize(static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(J));
  ws.b = -weak_inner(d.field(lib.slot), Nx, Nt, fx.phi, ft.dphi, q, method);
  const auto& e = d.field(Var::e);
  const auto& F = d.field(Var::F);
  const auto& T = d.field(Var::T);
  const auto& S = d.field(Var::S);
  for (std::size_t k = 0; k < J; ++k) {
    const Term& t = lib.terms[k];
    std::vector<double> col;
    try {
      col = eval_term(t, e, F, T, S);
    } catch (const std::domain_error& ex) {
      throw WeakFormError(std::string("term evaluation failed: ") + ex.what());
    }
    if (t.kind == TermKind::flux)
      ws.G.col(static_cast<Eigen::Index>(k)) = -weak_inner(col, Nx, Nt, fx.dphi, ft.phi, q, method);
    else
      ws.G.col(static_cast<Eigen::Index>(k)) = weak_inner(col, Nx, Nt, fx.phi, ft.phi, q, method);
  }
  if (!ws.G.allFinite() || !ws.b.allFinite()) throw WeakFormError("non-finite entry in weak system");
  ws.col_norms = ws.G.colwise().norm().transpose();
  return ws;
}

/// Relative weak residual ||G w - b|| / ||b||.
inline double weak_residual(const WeakSystem& ws, const Eigen::VectorXd& w) {
  return (ws.G * w - ws.b).norm() / ws.b.norm();
}

inline nlohmann::json to_json(const TestFunction1D& tf) {
  return {{"a_grid", tf.a}, {"p", tf.p}, {"delta", tf.delta}, {"n", tf.n}};
}

}  // namespace trtc
