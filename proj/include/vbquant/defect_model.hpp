#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <iterator>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "vbquant/error.hpp"

namespace vbquant {

enum class RatioMode { Combined, D1Only, PLOnly };

constexpr std::string_view ratio_mode_name(RatioMode m) {
  switch (m) {
  case RatioMode::Combined: return "combined";
  case RatioMode::D1Only: return "d1";
  case RatioMode::PLOnly: return "pl";
  }
  return "?";
}

inline RatioMode parse_ratio_mode(std::string_view s) {
  if (s == "combined") return RatioMode::Combined;
  if (s == "d1" || s == "d1only") return RatioMode::D1Only;
  if (s == "pl" || s == "plonly") return RatioMode::PLOnly;
  throw Error(Errc::Domain, "unknown ratio mode '" + std::string(s) + "'");
}

/// |r_A^2 - 2 r_S^2| must exceed this (nm^2).
inline constexpr double kGeometryGuard = 1e-6;
inline constexpr double kDefaultStructuralRadiusNm = 1.0;
/// Excitation energies closer than this (eV) are the same calibration key.
inline constexpr double kElTolerance = 1e-6;

/// Search range of the inter-defect distance for inversion (nm).
inline constexpr double kLdSearchMin = 1e-3;
inline constexpr double kLdSearchMax = 1e4;

struct ElCoefficients {
  double c_a = 0.0; ///< activated-region scale C_A'
  double c_s = 0.0; ///< structural-region scale C_S'
};

/// Activation-model calibration. The covariance (when present) is ordered
/// r_a, alpha, beta, then (c_a, c_s) for each excitation energy ascending.
struct CalibrationModel {
  double r_s_nm = kDefaultStructuralRadiusNm;
  double r_a_nm = 0.0;
  double alpha = 0.0; ///< L_D = alpha * fluence^-beta, fluence in ions/nm^2
  double beta = 0.0;
  std::map<double, ElCoefficients> per_el;
  RatioMode mode = RatioMode::Combined;
  Eigen::MatrixXd covariance;
  std::map<std::string, std::string> meta;

  std::size_t parameter_count() const { return 3 + 2 * per_el.size(); }

  std::optional<std::size_t> el_index(double el) const {
    std::size_t i = 0;
    for (const auto& [key, _] : per_el) {
      if (std::abs(key - el) <= kElTolerance) return i;
      ++i;
    }
    return std::nullopt;
  }

  const ElCoefficients& coefficients(double el) const {
    for (const auto& [key, c] : per_el)
      if (std::abs(key - el) <= kElTolerance) return c;
    throw Error(Errc::Domain, "calibration has no entry for E_L = " + std::to_string(el) + " eV");
  }

  bool has_covariance() const {
    return covariance.rows() == static_cast<Eigen::Index>(parameter_count()) &&
           covariance.cols() == covariance.rows();
  }

  double sigma(std::size_t index) const {
    if (!has_covariance()) return 0.0;
    const auto i = static_cast<Eigen::Index>(index);
    return std::sqrt(std::max(covariance(i, i), 0.0));
  }

  void validate() const {
    if (!(r_s_nm > 0.0)) throw Error(Errc::Domain, "r_s must be positive");
    if (!(r_a_nm > r_s_nm)) throw Error(Errc::Domain, "r_a must exceed r_s");
    if (!(std::abs(r_a_nm * r_a_nm - 2.0 * r_s_nm * r_s_nm) > kGeometryGuard))
      throw Error(Errc::DegenerateGeometry, "r_a^2 is within the guard of 2 r_s^2");
    if (!(alpha > 0.0) || !(beta > 0.0)) throw Error(Errc::Domain, "alpha and beta must be positive");
    for (const auto& [el, c] : per_el) {
      if (!(el > 0.0)) throw Error(Errc::Domain, "excitation energy keys must be positive");
      if (!(c.c_a >= 0.0) || !(c.c_s >= 0.0)) throw Error(Errc::Domain, "C_A' and C_S' must be non-negative");
    }
  }
};

struct RatioObservation {
  double fluence_ions_per_nm2 = 0.0;
  double excitation_energy_ev = 0.0;
  double ratio = 0.0;
  double ratio_sigma = 0.0; ///< 0 = unknown (unit weight)
  RatioMode mode = RatioMode::Combined;
};

enum class Branch { LowDensity, HighDensity };

constexpr std::string_view branch_name(Branch b) {
  return b == Branch::LowDensity ? "low_density" : "high_density";
}

struct DensityEstimate {
  double l_d_nm = 0.0;
  double density_cm3 = 0.0;
  double ci68_lo = 0.0;
  double ci68_hi = 0.0;
  Branch branch = Branch::LowDensity;
  bool valid = true;
  std::string reason;
};

// ---------------------------------------------------------------------------
// Closed-form pieces

/// Rate-equation activation ratio for inter-defect distance l_d. Written
/// with expm1 so the large-l_d tail keeps full relative precision.
inline double activation_ratio(double l_d, double r_s, double r_a, double c_a, double c_s) {
  const double s2 = r_s * r_s;
  const double a2 = r_a * r_a;
  if (!(std::abs(a2 - 2.0 * s2) > kGeometryGuard))
    throw Error(Errc::DegenerateGeometry, "r_a^2 - 2 r_s^2 is below the guard");
  const double u = std::numbers::pi / (l_d * l_d);
  const double a = s2 * u;
  const double b = (a2 - s2) * u;
  const double k = (a2 - s2) / (a2 - 2.0 * s2);
  const double bracket = -std::exp(-a) * std::expm1(a - b);
  const double structural = -std::expm1(-a);
  return c_a * k * bracket + c_s * structural;
}

/// Partial derivatives of activation_ratio: (d/dl_d, d/dr_a, d/dc_a, d/dc_s).
struct RatioGradient {
  double d_l_d = 0.0;
  double d_r_a = 0.0;
  double d_c_a = 0.0;
  double d_c_s = 0.0;
};

inline RatioGradient activation_ratio_gradient(double l_d, double r_s, double r_a, double c_a, double c_s) {
  const double s2 = r_s * r_s;
  const double a2 = r_a * r_a;
  const double u = std::numbers::pi / (l_d * l_d);
  const double a = s2 * u;
  const double b = (a2 - s2) * u;
  const double den = a2 - 2.0 * s2;
  const double k = (a2 - s2) / den;
  const double e1 = std::exp(-a);
  const double e2 = std::exp(-b);
  const double bracket = -e1 * std::expm1(a - b);
  const double structural = -std::expm1(-a);
  RatioGradient g;
  g.d_l_d = (2.0 / l_d) * (c_a * k * (a * e1 - b * e2) - c_s * a * e1);
  const double dk_dr_a = -s2 / (den * den) * 2.0 * r_a;
  g.d_r_a = c_a * (dk_dr_a * bracket + k * e2 * 2.0 * r_a * u);
  g.d_c_a = k * bracket;
  g.d_c_s = structural;
  return g;
}

inline double eval_ratio(double l_d_nm, const CalibrationModel& m, double el) {
  if (!(l_d_nm > 0.0)) throw Error(Errc::Domain, "L_D must be positive");
  const auto& c = m.coefficients(el);
  return activation_ratio(l_d_nm, m.r_s_nm, m.r_a_nm, c.c_a, c.c_s);
}

inline double l_d_from_fluence(double fluence, double alpha, double beta) {
  if (!(fluence > 0.0)) throw Error(Errc::Domain, "fluence must be positive");
  return alpha * std::pow(fluence, -beta);
}

/// n_D in cm^-3 from L_D in nm (1 nm^3 = 1e-21 cm^3).
inline double density_from_l_d(double l_d_nm) {
  if (!(l_d_nm > 0.0)) throw Error(Errc::Domain, "L_D must be positive");
  return 1e21 / ((4.0 / 3.0) * std::numbers::pi * l_d_nm * l_d_nm * l_d_nm);
}

inline double l_d_from_density(double density_cm3) {
  if (!(density_cm3 > 0.0)) throw Error(Errc::Domain, "density must be positive");
  return std::cbrt(1e21 / ((4.0 / 3.0) * std::numbers::pi * density_cm3));
}

// ---------------------------------------------------------------------------
// Curve maximum and inversion

struct CurvePoint {
  double l_d_nm = 0.0;
  double ratio = 0.0;
};

/// Maximum of the calibration curve over [kLdSearchMin, kLdSearchMax]:
/// coarse log-spaced scan, then golden-section refinement in log L_D.
inline CurvePoint curve_maximum(const ElCoefficients& c, double r_s, double r_a) {
  auto f = [&](double log_l) { return activation_ratio(std::exp(log_l), r_s, r_a, c.c_a, c.c_s); };
  const double lo = std::log(kLdSearchMin);
  const double hi = std::log(kLdSearchMax);
  constexpr int kScan = 400;
  int best = 0;
  double best_v = f(lo);
  for (int i = 1; i <= kScan; ++i) {
    const double v = f(lo + (hi - lo) * i / kScan);
    if (v > best_v) {
      best_v = v;
      best = i;
    }
  }
  if (best == 0) return {kLdSearchMin, best_v};
  if (best == kScan) return {kLdSearchMax, best_v};
  double a = lo + (hi - lo) * (best - 1) / kScan;
  double b = lo + (hi - lo) * (best + 1) / kScan;
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double x1 = b - inv_phi * (b - a);
  double x2 = a + inv_phi * (b - a);
  double f1 = f(x1);
  double f2 = f(x2);
  while (b - a > 1e-13) {
    if (f1 < f2) {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + inv_phi * (b - a);
      f2 = f(x2);
    } else {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - inv_phi * (b - a);
      f1 = f(x1);
    }
  }
  const double xm = 0.5 * (a + b);
  return {std::exp(xm), f(xm)};
}

inline CurvePoint curve_maximum(const CalibrationModel& m, double el) {
  return curve_maximum(m.coefficients(el), m.r_s_nm, m.r_a_nm);
}

struct InvertOptions {
  Branch branch = Branch::LowDensity;
  double ratio_sigma = 0.0;
  double relative_tolerance = 1e-10; ///< bisection stop, relative in L_D
};

namespace detail {

/// 68% interval of n_D from the ratio uncertainty and the (r_a, c_a, c_s)
/// block of the calibration covariance, first order in log n_D.
inline std::pair<double, double> inversion_interval(const CalibrationModel& m, double el, double l_d,
                                                    double density, double ratio_sigma) {
  const auto& c = m.coefficients(el);
  const auto g = activation_ratio_gradient(l_d, m.r_s_nm, m.r_a_nm, c.c_a, c.c_s);
  if (!(std::abs(g.d_l_d) > 0.0)) return {0.0, std::numeric_limits<double>::infinity()};
  double var_f = ratio_sigma * ratio_sigma;
  if (m.has_covariance()) {
    const auto j = static_cast<Eigen::Index>(3 + 2 * *m.el_index(el));
    const Eigen::Index idx[3] = {0, j, j + 1};
    const double grad[3] = {g.d_r_a, g.d_c_a, g.d_c_s};
    for (int p = 0; p < 3; ++p)
      for (int q = 0; q < 3; ++q) var_f += grad[p] * grad[q] * m.covariance(idx[p], idx[q]);
  }
  const double sigma_log_l = std::sqrt(std::max(var_f, 0.0)) / std::abs(g.d_l_d) / l_d;
  const double sigma_log_n = 3.0 * sigma_log_l;
  return {density * std::exp(-sigma_log_n), density * std::exp(sigma_log_n)};
}

inline DensityEstimate make_estimate(double l_d, Branch branch) {
  DensityEstimate e;
  e.l_d_nm = l_d;
  e.density_cm3 = density_from_l_d(l_d);
  e.ci68_lo = e.ci68_hi = e.density_cm3;
  e.branch = branch;
  return e;
}

} // namespace detail

/// Solves eval_ratio(L_D) = ratio on the requested monotonic branch by
/// bisection in log L_D. The branches are split at the curve maximum.
///
/// A ratio below the branch's range gives valid = false with the search
/// bound as a sentinel L_D. A ratio above the maximum is outside the model
/// and raises AboveMaximum; no density is fabricated for it.
inline DensityEstimate invert_ratio(double ratio, const CalibrationModel& m, double el,
                                    const InvertOptions& options = {}) {
  if (!(ratio >= 0.0) || !std::isfinite(ratio)) throw Error(Errc::NoSolution, "ratio must be finite and >= 0");
  const auto& c = m.coefficients(el);
  const CurvePoint peak = curve_maximum(c, m.r_s_nm, m.r_a_nm);
  if (ratio > peak.ratio)
    throw Error(Errc::AboveMaximum, "ratio " + std::to_string(ratio) + " exceeds the calibration maximum " +
                                        std::to_string(peak.ratio) + " at L_D = " + std::to_string(peak.l_d_nm) +
                                        " nm");
  auto f = [&](double l) { return activation_ratio(l, m.r_s_nm, m.r_a_nm, c.c_a, c.c_s); };

  const bool low = options.branch == Branch::LowDensity;
  double lo = low ? peak.l_d_nm : kLdSearchMin;
  double hi = low ? kLdSearchMax : peak.l_d_nm;
  const double floor_ratio = low ? f(kLdSearchMax) : f(kLdSearchMin);
  if (ratio <= floor_ratio && !(ratio == peak.ratio)) {
    auto e = detail::make_estimate(low ? kLdSearchMax : kLdSearchMin, options.branch);
    e.valid = false;
    e.reason = low ? "below detection" : "below the high-density branch range";
    return e;
  }
  if (ratio == peak.ratio) {
    auto e = detail::make_estimate(peak.l_d_nm, options.branch);
    std::tie(e.ci68_lo, e.ci68_hi) = detail::inversion_interval(m, el, e.l_d_nm, e.density_cm3, options.ratio_sigma);
    return e;
  }
  // f decreases with L on the low branch and increases on the high branch
  while (hi / lo - 1.0 > options.relative_tolerance) {
    const double mid = std::sqrt(lo * hi);
    const double v = f(mid);
    const bool go_right = low ? (v > ratio) : (v < ratio);
    (go_right ? lo : hi) = mid;
  }
  auto e = detail::make_estimate(std::sqrt(lo * hi), options.branch);
  std::tie(e.ci68_lo, e.ci68_hi) = detail::inversion_interval(m, el, e.l_d_nm, e.density_cm3, options.ratio_sigma);
  e.ci68_lo = std::min(e.ci68_lo, e.density_cm3);
  e.ci68_hi = std::max(e.ci68_hi, e.density_cm3);
  return e;
}

// ---------------------------------------------------------------------------
// Fluence law and power law

/// n_D for each fluence with a 68% band from the (alpha, beta) covariance,
/// first-order in log n_D. The branch flag compares L_D with the curve
/// maximum at `el` (default: the first calibrated E_L).
inline std::vector<DensityEstimate> density_vs_fluence(const CalibrationModel& m, std::span<const double> fluences,
                                                       std::optional<double> el = std::nullopt) {
  std::vector<DensityEstimate> out;
  if (fluences.empty()) return out;
  double l_max = 0.0;
  if (el || !m.per_el.empty()) {
    const double key = el ? *el : m.per_el.begin()->first;
    l_max = curve_maximum(m, key).l_d_nm;
  } else {
    l_max = curve_maximum(ElCoefficients{1.0, 0.0}, m.r_s_nm, m.r_a_nm).l_d_nm;
  }
  for (double fl : fluences) {
    const double l_d = l_d_from_fluence(fl, m.alpha, m.beta);
    auto e = detail::make_estimate(l_d, l_d >= l_max ? Branch::LowDensity : Branch::HighDensity);
    if (m.has_covariance()) {
      // log n = const - 3 log alpha + 3 beta log F
      const double ga = -3.0 / m.alpha;
      const double gb = 3.0 * std::log(fl);
      const double var = ga * ga * m.covariance(1, 1) + 2.0 * ga * gb * m.covariance(1, 2) +
                         gb * gb * m.covariance(2, 2);
      const double s = std::sqrt(std::max(var, 0.0));
      e.ci68_lo = e.density_cm3 * std::exp(-s);
      e.ci68_hi = e.density_cm3 * std::exp(s);
    }
    out.push_back(e);
  }
  return out;
}

struct PowerLawFit {
  double c = 0.0;
  double gamma = 0.0;
  double sigma_c = 0.0;
  double sigma_gamma = 0.0;
  double sigma_log_c = 0.0;
  double residual_rms_log = 0.0;
};

/// density = c * fluence^gamma by ordinary least squares in log-log space.
inline PowerLawFit fit_power_law(std::span<const std::pair<double, double>> points) {
  if (points.size() < 3) throw Error(Errc::InsufficientData, "power-law fit needs at least 3 points");
  const double n = static_cast<double>(points.size());
  double mx = 0.0;
  double my = 0.0;
  for (const auto& [x, y] : points) {
    if (!(x > 0.0) || !(y > 0.0)) throw Error(Errc::Domain, "power-law points must be positive");
    mx += std::log(x);
    my += std::log(y);
  }
  mx /= n;
  my /= n;
  double sxx = 0.0;
  double sxy = 0.0;
  for (const auto& [x, y] : points) {
    const double dx = std::log(x) - mx;
    sxx += dx * dx;
    sxy += dx * (std::log(y) - my);
  }
  if (!(sxx > 0.0)) throw Error(Errc::InsufficientData, "power-law fit needs distinct fluences");
  PowerLawFit fit;
  fit.gamma = sxy / sxx;
  const double log_c = my - fit.gamma * mx;
  fit.c = std::exp(log_c);
  double rss = 0.0;
  for (const auto& [x, y] : points) {
    const double r = std::log(y) - (log_c + fit.gamma * std::log(x));
    rss += r * r;
  }
  const double s2 = rss / (n - 2.0);
  fit.sigma_gamma = std::sqrt(s2 / sxx);
  fit.sigma_log_c = std::sqrt(s2 * (1.0 / n + mx * mx / sxx));
  fit.sigma_c = fit.c * fit.sigma_log_c;
  fit.residual_rms_log = std::sqrt(rss / n);
  return fit;
}

} // namespace vbquant
