#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <span>
#include <string_view>
#include <vector>

#include "vbquant/error.hpp"

namespace vbquant {

enum class PeakShape { Lorentzian, Gaussian };

constexpr std::string_view shape_name(PeakShape s) {
  return s == PeakShape::Lorentzian ? "lorentzian" : "gaussian";
}

/// sigma = fwhm * kFwhmToSigma for a Gaussian.
inline const double kFwhmToSigma = 1.0 / (2.0 * std::sqrt(2.0 * std::numbers::ln2));

/// Area-parameterized line shape: the integral over the real line is `area`.
struct PeakModel {
  PeakShape shape = PeakShape::Lorentzian;
  double center = 0.0;
  double fwhm = 1.0;
  double area = 1.0;

  double operator()(double x) const {
    const double d = x - center;
    if (shape == PeakShape::Lorentzian) {
      const double q = 1.0 + 4.0 * d * d / (fwhm * fwhm);
      return 2.0 * area / (std::numbers::pi * fwhm) / q;
    }
    const double sigma = fwhm * kFwhmToSigma;
    return area / (sigma * std::sqrt(2.0 * std::numbers::pi)) * std::exp(-0.5 * d * d / (sigma * sigma));
  }

  double height() const { return (*this)(center); }

  /// Partial derivatives with respect to (center, fwhm, area).
  std::array<double, 3> gradient(double x) const {
    const double d = x - center;
    if (shape == PeakShape::Lorentzian) {
      const double g2 = fwhm * fwhm;
      const double den = g2 + 4.0 * d * d;
      const double k = 2.0 * area / std::numbers::pi;
      return {k * fwhm * 8.0 * d / (den * den), k * (4.0 * d * d - g2) / (den * den),
              2.0 * fwhm / (std::numbers::pi * den)};
    }
    const double sigma = fwhm * kFwhmToSigma;
    const double v = (*this)(x);
    const double d_sigma = v * (d * d / (sigma * sigma * sigma) - 1.0 / sigma);
    return {v * d / (sigma * sigma), d_sigma * kFwhmToSigma, v / area};
  }
};

inline void validate_peak(const PeakModel& p) {
  if (!(p.fwhm > 0.0) || !std::isfinite(p.fwhm)) throw Error(Errc::Domain, "peak fwhm must be positive");
  if (!(p.area > 0.0) || !std::isfinite(p.area)) throw Error(Errc::Domain, "peak area must be positive");
  if (!std::isfinite(p.center)) throw Error(Errc::Domain, "peak center must be finite");
}

inline double evaluate_peaks(std::span<const PeakModel> peaks, double x) {
  double v = 0.0;
  for (const auto& p : peaks) v += p(x);
  return v;
}

/// Compares the analytic parameter Jacobian of a peak sum against central
/// finite differences (step 1e-6 of each parameter's scale). The deviation of
/// each column is normalized by that column's largest analytic entry, so
/// derivatives crossing zero do not inflate the figure. Returns the maximum.
inline double jacobian_check(std::span<const PeakModel> peaks, std::span<const double> x) {
  double worst = 0.0;
  std::vector<PeakModel> work(peaks.begin(), peaks.end());
  for (std::size_t k = 0; k < peaks.size(); ++k) {
    for (int p = 0; p < 3; ++p) {
      double* param = p == 0 ? &work[k].center : (p == 1 ? &work[k].fwhm : &work[k].area);
      const double base = *param;
      const double scale = p == 0 ? std::max(std::abs(base), peaks[k].fwhm) : std::abs(base);
      const double h = 1e-6 * scale;
      double col_max = 0.0;
      double col_dev = 0.0;
      for (double xi : x) {
        const double analytic = peaks[k].gradient(xi)[static_cast<std::size_t>(p)];
        *param = base + h;
        const double up = evaluate_peaks(work, xi);
        *param = base - h;
        const double down = evaluate_peaks(work, xi);
        *param = base;
        const double fd = (up - down) / (2.0 * h);
        col_max = std::max(col_max, std::abs(analytic));
        col_dev = std::max(col_dev, std::abs(analytic - fd));
      }
      if (col_max > 0.0) worst = std::max(worst, col_dev / col_max);
    }
  }
  return worst;
}

} // namespace vbquant
