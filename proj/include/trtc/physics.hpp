#pragma once

// Constants, Planckian, Larsen opacity and its weighted means.
// Units: temperature in eV with k = 1, length in cm, time in s, energy in eV.

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/digamma.hpp>

namespace trtc {

namespace units {
inline constexpr double h = 4.135667696e-15;  // eV s
inline constexpr double c = 2.99792458e10;    // cm / s
inline constexpr double k = 1.0;
inline constexpr double erg_per_eV = 1.602176634e-12;

// ac = 8 pi^5 k^4 / (15 h^3 c^2)
inline constexpr double ac =
    8.0 * std::numbers::pi * std::numbers::pi * std::numbers::pi * std::numbers::pi *
    std::numbers::pi / (15.0 * h * h * h * c * c);
inline constexpr double sigma_sb = ac / 4.0;
inline constexpr double a = ac / c;
inline constexpr double pi4 =
    std::numbers::pi * std::numbers::pi * std::numbers::pi * std::numbers::pi;
}  // namespace units

struct OpacitySpec {
  double gamma = 1e9;
};

namespace detail {

// Adaptive Gauss-Kronrod on [0, xmax]; integrands used here decay like x^n e^{-x}.
template <class F>
double integrate_x(F&& f, double xmax = 50.0, double tol = 1e-11) {
  using boost::math::quadrature::gauss_kronrod;
  // Split so the adaptive rule resolves features near the origin.
  const double cuts[] = {0.0, 1e-3, 1e-2, 0.1, 1.0, 5.0, 15.0, xmax};
  double sum = 0.0;
  for (int i = 0; i + 1 < 8; ++i) {
    if (cuts[i] >= xmax) break;
    const double hi = std::min(cuts[i + 1], xmax);
    sum += gauss_kronrod<double, 31>::integrate(f, cuts[i], hi, 12, tol);
  }
  return sum;
}

}  // namespace detail

/// Spectral radiance 2 h nu^3 / c^2 / (exp(h nu / T) - 1).
inline double planck_B(double nu, double T) {
  if (nu <= 0.0 || T <= 0.0) return 0.0;
  const double x = units::h * nu / T;
  if (x > 700.0) return 0.0;
  return 2.0 * units::h * nu * nu * nu / (units::c * units::c) / std::expm1(x);
}

/// Larsen opacity gamma / (h nu)^3 (1 - exp(-h nu / T)), in 1/cm.
inline double larsen_sigma(double nu, double T, double gamma) {
  if (nu <= 0.0) throw std::domain_error("larsen_sigma: nu must be positive");
  if (T <= 0.0) throw std::domain_error("larsen_sigma: T must be positive");
  const double hnu = units::h * nu;
  return gamma / (hnu * hnu * hnu) * (-std::expm1(-hnu / T));
}

/// alpha = 15 a c gamma / (pi^4 k^3); the linearized emission rate a c sigma_P T^4 = alpha T.
inline double alpha_coeff(double gamma) {
  return 15.0 * units::ac * gamma / (units::pi4 * units::k * units::k * units::k);
}

inline double alpha_coeff_sb(double gamma) {
  return 60.0 * units::sigma_sb * gamma / (units::pi4 * units::k * units::k * units::k);
}

/// Closed-form Planck mean for the Larsen opacity.
inline double sigma_P(double T, double gamma) {
  if (T <= 0.0) throw std::domain_error("sigma_P: T must be positive");
  return 15.0 * gamma / (units::pi4 * T * T * T);
}

/// Planck mean by quadrature of int sigma B / int B using the physical functions.
inline double sigma_P_quadrature(double T, double gamma) {
  if (T <= 0.0) throw std::domain_error("sigma_P_quadrature: T must be positive");
  auto num = [&](double x) {
    const double nu = x * T / units::h;
    return larsen_sigma(nu, T, gamma) * planck_B(nu, T);
  };
  auto den = [&](double x) { return planck_B(x * T / units::h, T); };
  return detail::integrate_x(num) / detail::integrate_x(den);
}

/// int_0^inf B dnu by quadrature.
inline double planck_integral_quadrature(double T) {
  if (T <= 0.0) return 0.0;
  auto f = [&](double x) { return planck_B(x * T / units::h, T); };
  return detail::integrate_x(f) * T / units::h;
}

/// int_0^inf x^7 e^{2x} (e^x - 1)^{-3} dx, the Rosseland integral of the Larsen opacity.
inline double rosseland_integral() {
  auto f = [](double x) {
    const double em = std::exp(-x);
    const double d = -std::expm1(-x);
    return x * x * x * x * x * x * x * em / (d * d * d);
  };
  return detail::integrate_x(f, 80.0);
}

inline constexpr double rosseland_constant = 5.0886e-3;

/// Rosseland mean, closed approximate form.
inline double sigma_R(double T, double gamma) {
  if (T <= 0.0) throw std::domain_error("sigma_R: T must be positive");
  return rosseland_constant * gamma / (units::k * units::k * units::k * T * T * T);
}

/// Rosseland mean by quadrature of int dB/dT / int (1/sigma) dB/dT.
inline double sigma_R_quadrature(double T, double gamma) {
  if (T <= 0.0) throw std::domain_error("sigma_R_quadrature: T must be positive");
  auto dBdT = [&](double nu) {
    const double x = units::h * nu / T;
    const double em = std::exp(-x);
    const double d = -std::expm1(-x);
    return 2.0 * units::h * nu * nu * nu / (units::c * units::c) * (x / T) * em / (d * d);
  };
  auto num = [&](double x) { return dBdT(x * T / units::h); };
  auto den = [&](double x) {
    const double nu = x * T / units::h;
    return dBdT(nu) / larsen_sigma(nu, T, gamma);
  };
  return detail::integrate_x(num, 80.0) / detail::integrate_x(den, 80.0);
}

struct CrossPlanck {
  double exact = 0.0;         // quadrature
  double approx = 0.0;        // 15 gamma / (pi^4 T_in^3) log(T_in / T_o)
  double harmonic = 0.0;      // same prefactor times (digamma(eta + 1) + Euler gamma)
  bool approx_valid = true;   // false when T_o >= T_in
};

/// Planck mean of sigma(nu, T_o) weighted by B(nu, T_in).
inline CrossPlanck sigma_P_cross(double T_o, double T_in, double gamma) {
  if (T_o <= 0.0 || T_in <= 0.0) throw std::domain_error("sigma_P_cross: temperatures must be positive");
  CrossPlanck r;
  auto num = [&](double x) {
    const double nu = x * T_in / units::h;
    return larsen_sigma(nu, T_o, gamma) * planck_B(nu, T_in);
  };
  auto den = [&](double x) { return planck_B(x * T_in / units::h, T_in); };
  r.exact = detail::integrate_x(num) / detail::integrate_x(den);
  const double pre = 15.0 * gamma / (units::pi4 * std::pow(units::k * T_in, 3));
  const double eta = T_in / T_o;
  r.approx = pre * std::log(eta);
  r.harmonic = pre * (boost::math::digamma(eta + 1.0) + std::numbers::egamma);
  r.approx_valid = T_o < T_in;
  return r;
}

struct KappaL {
  double exact = 0.0;
  double approx = 0.0;
};

inline KappaL kappa_L(double T_o, double T_in, double gamma, double L) {
  if (L <= 0.0) throw std::domain_error("kappa_L: L must be positive");
  const auto s = sigma_P_cross(T_o, T_in, gamma);
  return {1.0 / (L * s.exact), 1.0 / (L * s.approx)};
}

inline constexpr double kappa_L_validity = 0.07;

// Incomplete Planck integrals in x = h nu / T.

namespace detail {

// P(x) = int_0^x t^3 / (e^t - 1) dt for x <= 1 via the Bernoulli expansion.
inline double planck_P_series(double x) {
  const double x2 = x * x;
  const double x3 = x2 * x;
  double s = 1.0 / 3.0 - x / 8.0 + x2 / 60.0;
  double p = x2 * x2;  // x^4
  s -= p / 5040.0;
  p *= x2;
  s += p / 272160.0;
  p *= x2;
  s -= p / 13305600.0;
  p *= x2;
  s += p / 622702080.0;
  p *= x2;
  s -= p * (691.0 / 1307674368000.0) / 15.0;
  p *= x2;
  s += p * (7.0 / 523069747200.0) / 17.0;
  return x3 * s;
}

// e^x Q(x) with Q(x) = int_x^inf t^3 / (e^t - 1) dt, for x >= 1.
inline double planck_Q_scaled(double x) {
  const double x2 = x * x;
  const double x3 = x2 * x;
  double s = 0.0;
  const double q = std::exp(-x);
  double w = 1.0;
  for (int n = 1; n < 200; ++n) {
    const double dn = n;
    const double term = w * (x3 / dn + 3.0 * x2 / (dn * dn) + 6.0 * x / (dn * dn * dn) +
                             6.0 / (dn * dn * dn * dn));
    s += term;
    if (term < 1e-17 * s) break;
    w *= q;
  }
  return s;
}

}  // namespace detail

inline constexpr double planck_total = units::pi4 / 15.0;

/// int_{x_lo}^{x_hi} t^3 / (e^t - 1) dt, x_hi may be +inf.
inline double planck_integral_between(double x_lo, double x_hi) {
  if (!(x_hi > x_lo)) return 0.0;
  auto P = [](double x) {
    if (std::isinf(x)) return planck_total;
    if (x <= 1.0) return detail::planck_P_series(x);
    return planck_total - std::exp(-x) * detail::planck_Q_scaled(x);
  };
  if (x_lo >= 1.0) {
    if (x_lo > 700.0) return 0.0;
    const double qlo = detail::planck_Q_scaled(x_lo);
    if (std::isinf(x_hi)) return std::exp(-x_lo) * qlo;
    const double qhi = detail::planck_Q_scaled(x_hi);
    return std::exp(-x_lo) * (qlo - std::exp(-(x_hi - x_lo)) * qhi);
  }
  return P(x_hi) - P(x_lo);
}

/// Planck-weighted mean of the Larsen opacity over x in [x_lo, x_hi], in units of gamma / T^3.
/// Uses int sigma B dnu = 2 gamma T / (h^3 c^2) (e^{-x_lo} - e^{-x_hi}).
inline double larsen_group_mean_scaled(double x_lo, double x_hi) {
  if (x_lo >= 1.0) {
    const double dx = x_hi - x_lo;
    const double tail = std::isinf(x_hi) ? 0.0 : std::exp(-dx);
    const double qlo = detail::planck_Q_scaled(x_lo);
    const double qhi = std::isinf(x_hi) ? 0.0 : detail::planck_Q_scaled(x_hi);
    return (1.0 - tail) / (qlo - tail * qhi);
  }
  const double num = std::exp(-x_lo) - (std::isinf(x_hi) ? 0.0 : std::exp(-x_hi));
  return num / planck_integral_between(x_lo, x_hi);
}

}  // namespace trtc
