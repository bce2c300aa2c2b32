#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "vbquant/error.hpp"

namespace vbquant {

enum class AxisKind { WavelengthNm, EnergyEv, RamanShiftCm };

/// hc in eV·nm; fixed so every conversion path agrees to the last digit.
inline constexpr double kHcEvNm = 1239.84198;

inline constexpr std::size_t kMinSpectrumSamples = 8;

constexpr std::string_view axis_name(AxisKind kind) {
  switch (kind) {
  case AxisKind::WavelengthNm: return "nm";
  case AxisKind::EnergyEv: return "eV";
  case AxisKind::RamanShiftCm: return "cm-1";
  }
  return "?";
}

inline AxisKind parse_axis_kind(std::string_view name) {
  if (name == "nm" || name == "wavelength") return AxisKind::WavelengthNm;
  if (name == "ev" || name == "eV" || name == "energy") return AxisKind::EnergyEv;
  if (name == "cm-1" || name == "shift" || name == "raman") return AxisKind::RamanShiftCm;
  throw Error(Errc::Domain, "unknown axis kind '" + std::string(name) + "'");
}

inline double excitation_ev_from_nm(double wavelength_nm) {
  if (!(wavelength_nm > 0.0)) throw Error(Errc::Domain, "excitation wavelength must be positive");
  return kHcEvNm / wavelength_nm;
}

struct Window {
  double lo = 0.0;
  double hi = 0.0;

  bool contains(double v) const { return v >= lo && v <= hi; }
  double width() const { return hi - lo; }
};

/// Immutable sampled spectrum. x is strictly increasing, y is finite.
class Spectrum {
public:
  Spectrum(AxisKind kind, std::vector<double> x, std::vector<double> y,
           std::optional<double> excitation_ev = std::nullopt, std::string label = {})
      : kind_(kind), x_(std::move(x)), y_(std::move(y)), excitation_ev_(excitation_ev),
        label_(std::move(label)) {
    validate();
  }

  AxisKind axis_kind() const { return kind_; }
  std::span<const double> x() const { return x_; }
  std::span<const double> y() const { return y_; }
  std::size_t size() const { return x_.size(); }
  std::optional<double> excitation_ev() const { return excitation_ev_; }
  const std::string& label() const { return label_; }

  double x_min() const { return x_.front(); }
  double x_max() const { return x_.back(); }

  Spectrum with_y(std::vector<double> y) const {
    return Spectrum(kind_, x_, std::move(y), excitation_ev_, label_);
  }
  Spectrum with_label(std::string label) const {
    return Spectrum(kind_, x_, y_, excitation_ev_, std::move(label));
  }
  Spectrum with_excitation(double excitation_ev) const {
    return Spectrum(kind_, x_, y_, excitation_ev, label_);
  }

private:
  void validate() const {
    if (x_.size() != y_.size())
      throw Error(Errc::Domain, "x and y lengths differ (" + std::to_string(x_.size()) + " vs " +
                                    std::to_string(y_.size()) + ")");
    if (x_.size() < kMinSpectrumSamples)
      throw Error(Errc::Empty, "spectrum needs at least " + std::to_string(kMinSpectrumSamples) +
                                   " samples, got " + std::to_string(x_.size()));
    for (std::size_t i = 0; i < x_.size(); ++i) {
      if (!std::isfinite(x_[i]) || !std::isfinite(y_[i]))
        throw Error(Errc::Domain, "non-finite sample at index " + std::to_string(i));
      if (i > 0 && !(x_[i] > x_[i - 1]))
        throw Error(Errc::Axis, "x not strictly increasing at index " + std::to_string(i));
    }
    if (excitation_ev_ && !(*excitation_ev_ > 0.0))
      throw Error(Errc::Domain, "excitation energy must be positive");
    if (kind_ != AxisKind::RamanShiftCm && !(x_.front() > 0.0))
      throw Error(Errc::Domain, "wavelength/energy axis must be positive");
  }

  AxisKind kind_;
  std::vector<double> x_;
  std::vector<double> y_;
  std::optional<double> excitation_ev_;
  std::string label_;
};

namespace detail {

// Absolute wavenumber (cm^-1) is the pivot: linear in eV and in Raman shift.
inline double to_wavenumber(double v, AxisKind kind, double laser_wavenumber) {
  switch (kind) {
  case AxisKind::WavelengthNm:
    if (!(v > 0.0)) throw Error(Errc::Domain, "wavelength must be positive");
    return 1e7 / v;
  case AxisKind::EnergyEv:
    if (!(v > 0.0)) throw Error(Errc::Domain, "photon energy must be positive");
    return v * 1e7 / kHcEvNm;
  case AxisKind::RamanShiftCm: {
    const double nu = laser_wavenumber - v;
    if (!(nu > 0.0)) throw Error(Errc::Domain, "Raman shift exceeds the excitation wavenumber");
    return nu;
  }
  }
  return 0.0;
}

inline double from_wavenumber(double nu, AxisKind kind, double laser_wavenumber) {
  switch (kind) {
  case AxisKind::WavelengthNm: return 1e7 / nu;
  case AxisKind::EnergyEv: return nu * kHcEvNm / 1e7;
  case AxisKind::RamanShiftCm: return laser_wavenumber - nu;
  }
  return 0.0;
}

} // namespace detail

/// Converts a single axis value between kinds. excitation_ev is required
/// whenever either side is a Raman shift.
inline double convert_value(double v, AxisKind from, AxisKind to,
                            std::optional<double> excitation_ev = std::nullopt) {
  if (from == to) return v;
  double laser_nu = 0.0;
  if (from == AxisKind::RamanShiftCm || to == AxisKind::RamanShiftCm) {
    if (!excitation_ev) throw Error(Errc::MissingExcitation, "Raman shift conversion needs E_L");
    laser_nu = *excitation_ev * 1e7 / kHcEvNm;
  }
  return detail::from_wavenumber(detail::to_wavenumber(v, from, laser_nu), to, laser_nu);
}

/// Transforms sample positions to another axis kind. Counts are carried over
/// unchanged; order is reversed when the mapping is decreasing.
inline Spectrum convert_axis(const Spectrum& s, AxisKind target) {
  if (s.axis_kind() == target) return s;
  std::vector<double> x(s.size());
  std::vector<double> y(s.y().begin(), s.y().end());
  for (std::size_t i = 0; i < s.size(); ++i)
    x[i] = convert_value(s.x()[i], s.axis_kind(), target, s.excitation_ev());
  if (x.size() > 1 && x.back() < x.front()) {
    std::reverse(x.begin(), x.end());
    std::reverse(y.begin(), y.end());
  }
  return Spectrum(target, std::move(x), std::move(y), s.excitation_ev(), s.label());
}

/// Trapezoidal integral of the linear interpolant over [lo, hi] ∩ [x_min, x_max].
inline double integrate_window(const Spectrum& s, double lo, double hi) {
  if (!(lo <= hi)) throw Error(Errc::Domain, "integration window has lo > hi");
  const double a = std::max(lo, s.x_min());
  const double b = std::min(hi, s.x_max());
  if (a > b)
    throw Error(Errc::EmptyWindow, "window [" + std::to_string(lo) + ", " + std::to_string(hi) +
                                       "] does not overlap the spectrum");
  const auto x = s.x();
  const auto y = s.y();
  auto interp = [&](std::size_t i, double t) {
    const double w = (t - x[i]) / (x[i + 1] - x[i]);
    return y[i] + w * (y[i + 1] - y[i]);
  };

  // first segment index containing a
  std::size_t i = static_cast<std::size_t>(std::upper_bound(x.begin(), x.end(), a) - x.begin());
  i = (i == 0) ? 0 : i - 1;
  if (i >= x.size() - 1) return 0.0; // a == x_max

  double total = 0.0;
  double t0 = a;
  double y0 = interp(i, a);
  for (; i + 1 < x.size(); ++i) {
    const double t1 = std::min(x[i + 1], b);
    const double y1 = (t1 == x[i + 1]) ? y[i + 1] : interp(i, t1);
    total += 0.5 * (y0 + y1) * (t1 - t0);
    if (t1 >= b) break;
    t0 = t1;
    y0 = y1;
  }
  return total;
}

/// Samples whose x fall inside the window, as index range [first, last).
inline std::pair<std::size_t, std::size_t> window_indices(const Spectrum& s, Window w) {
  const auto x = s.x();
  const auto first = std::lower_bound(x.begin(), x.end(), w.lo) - x.begin();
  const auto last = std::upper_bound(x.begin(), x.end(), w.hi) - x.begin();
  return {static_cast<std::size_t>(first), static_cast<std::size_t>(last)};
}

// ---------------------------------------------------------------------------
// Baseline

enum class BaselineKind { Linear, PolynomialDegreeN };

inline constexpr int kMaxBaselineDegree = 3;

struct BaselineSpec {
  int degree = 1;
  /// Regions used for the fit; empty means the whole spectrum.
  std::vector<Window> anchors;
  /// Peak regions removed from the anchors.
  std::vector<Window> exclude;
};

/// Polynomial in the normalized coordinate t = (x - x_center) / x_scale.
struct Baseline {
  int degree = 1;
  std::vector<double> coefficients;
  double x_center = 0.0;
  double x_scale = 1.0;
  std::vector<Window> anchors;
  std::vector<Window> exclude;

  BaselineKind kind() const {
    return degree == 1 ? BaselineKind::Linear : BaselineKind::PolynomialDegreeN;
  }

  double operator()(double x) const {
    const double t = (x - x_center) / x_scale;
    double v = 0.0;
    for (auto c = coefficients.rbegin(); c != coefficients.rend(); ++c) v = v * t + *c;
    return v;
  }
};

inline bool baseline_uses_sample(const BaselineSpec& spec, double x) {
  const bool anchored = spec.anchors.empty() ||
                        std::any_of(spec.anchors.begin(), spec.anchors.end(),
                                    [x](const Window& w) { return w.contains(x); });
  const bool excluded = std::any_of(spec.exclude.begin(), spec.exclude.end(),
                                    [x](const Window& w) { return w.contains(x); });
  return anchored && !excluded;
}

/// Fits the baseline by ordinary least squares on the anchor samples and
/// subtracts it from every sample. Residual counts may go negative.
inline std::pair<Spectrum, Baseline> subtract_baseline(const Spectrum& s, const BaselineSpec& spec) {
  if (spec.degree < 0 || spec.degree > kMaxBaselineDegree)
    throw Error(Errc::Domain, "baseline degree must be in [0, 3]");
  const auto x = s.x();
  const auto y = s.y();
  std::vector<std::size_t> used;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (baseline_uses_sample(spec, x[i])) used.push_back(i);

  const auto ncoef = static_cast<std::size_t>(spec.degree + 1);
  if (used.size() < 2 * ncoef)
    throw Error(Errc::IllConditioned, "baseline anchors hold " + std::to_string(used.size()) +
                                          " samples, need " + std::to_string(2 * ncoef));

  Baseline b;
  b.degree = spec.degree;
  b.anchors = spec.anchors;
  b.exclude = spec.exclude;
  const double lo = x[used.front()];
  const double hi = x[used.back()];
  b.x_center = 0.5 * (lo + hi);
  b.x_scale = std::max(0.5 * (hi - lo), 1e-300);

  Eigen::MatrixXd A(static_cast<Eigen::Index>(used.size()), static_cast<Eigen::Index>(ncoef));
  Eigen::VectorXd rhs(static_cast<Eigen::Index>(used.size()));
  for (std::size_t r = 0; r < used.size(); ++r) {
    const double t = (x[used[r]] - b.x_center) / b.x_scale;
    double p = 1.0;
    for (std::size_t c = 0; c < ncoef; ++c) {
      A(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = p;
      p *= t;
    }
    rhs(static_cast<Eigen::Index>(r)) = y[used[r]];
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
  qr.setThreshold(1e-10);
  if (qr.rank() < static_cast<Eigen::Index>(ncoef))
    throw Error(Errc::IllConditioned, "anchor region too narrow for baseline degree " +
                                          std::to_string(spec.degree));
  const Eigen::VectorXd coef = qr.solve(rhs);
  b.coefficients.assign(coef.data(), coef.data() + coef.size());

  std::vector<double> out(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) out[i] = y[i] - b(x[i]);
  return {s.with_y(std::move(out)), std::move(b)};
}

} // namespace vbquant
