#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "vbquant/error.hpp"
#include "vbquant/text_table.hpp"

namespace vbquant {

enum class AnalyzerConfig { ParallelAnalyzer, PerpendicularAnalyzer };

constexpr std::string_view analyzer_name(AnalyzerConfig c) {
  return c == AnalyzerConfig::ParallelAnalyzer ? "parallel" : "perpendicular";
}

inline AnalyzerConfig parse_analyzer(std::string_view s) {
  if (s == "parallel" || s == "XX" || s == "xx") return AnalyzerConfig::ParallelAnalyzer;
  if (s == "perpendicular" || s == "YX" || s == "yx") return AnalyzerConfig::PerpendicularAnalyzer;
  throw Error(Errc::Parse, "unknown analyzer configuration '" + std::string(s) + "'");
}

struct PolarSeries {
  std::string feature;
  std::vector<double> theta_deg;
  std::vector<double> intensity;
  AnalyzerConfig config = AnalyzerConfig::ParallelAnalyzer;
};

enum class PolarModel { Isotropic, CosSquared };

constexpr std::string_view polar_model_name(PolarModel m) {
  return m == PolarModel::Isotropic ? "isotropic" : "cos2";
}

struct PolarFitOptions {
  /// A cos^2 verdict also needs a/(a+b) at least this large; AICc alone
  /// flags pure noise as modulated far too often.
  double min_modulation_depth = 0.15;
};

/// a, b, theta0 are the cos^2 fit I = a cos^2(theta - theta0) + b whatever
/// the selected model; level is the isotropic fit I = level.
struct PolarFit {
  std::string feature;
  PolarModel model = PolarModel::Isotropic;
  double a = 0.0;
  double b = 0.0;
  double theta0_deg = 0.0;
  double modulation_depth = 0.0;
  double level = 0.0;
  double rss_isotropic = 0.0;
  double rss_cos2 = 0.0;
  double aicc_isotropic = 0.0;
  double aicc_cos2 = 0.0;
  std::size_t samples = 0;
};

inline constexpr std::size_t kMinPolarAngles = 5;
inline constexpr double kMinPolarCoverageDeg = 90.0;

namespace detail {

/// Angle folded into [-90, 90).
inline double fold_angle(double deg) {
  double t = std::fmod(deg + 90.0, 180.0);
  if (t < 0.0) t += 180.0;
  return t - 90.0;
}

inline double aicc(double rss, std::size_t n, int k) {
  const double nn = static_cast<double>(n);
  return nn * std::log(rss / nn) + 2.0 * k + 2.0 * k * (k + 1) / (nn - k - 1);
}

/// Best a >= 0 for I = a cos^2(theta - theta0) at fixed theta0; returns the RSS.
inline double zero_offset_rss(const std::vector<double>& t_rad, const std::vector<double>& y, double theta0,
                              double& a) {
  double sc = 0.0, cc = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double c = std::cos(t_rad[i] - theta0);
    sc += y[i] * c * c;
    cc += c * c * c * c;
  }
  a = cc > 0.0 ? std::max(sc / cc, 0.0) : 0.0;
  double rss = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double c = std::cos(t_rad[i] - theta0);
    const double r = y[i] - a * c * c;
    rss += r * r;
  }
  return rss;
}

} // namespace detail

inline void validate_polar_series(const PolarSeries& s) {
  if (s.theta_deg.size() != s.intensity.size())
    throw Error(Errc::Domain, s.feature + ": theta and intensity lengths differ");
  if (s.theta_deg.size() < kMinPolarAngles)
    throw Error(Errc::InsufficientAngles, s.feature + ": " + std::to_string(s.theta_deg.size()) +
                                              " angles, need at least " + std::to_string(kMinPolarAngles));
  for (std::size_t i = 0; i < s.theta_deg.size(); ++i) {
    if (!std::isfinite(s.theta_deg[i]) || !std::isfinite(s.intensity[i]))
      throw Error(Errc::Domain, s.feature + ": non-finite polar sample");
    if (s.intensity[i] < 0.0) throw Error(Errc::Domain, s.feature + ": negative intensity");
  }
  const auto [lo, hi] = std::minmax_element(s.theta_deg.begin(), s.theta_deg.end());
  if (*hi - *lo < kMinPolarCoverageDeg)
    throw Error(Errc::InsufficientAngles, s.feature + ": angles span " + std::to_string(*hi - *lo) +
                                              " deg, need at least 90");
}

/// Fits the isotropic and cos^2 models and selects one by AICc (k = 1 and 3).
inline PolarFit fit_polar(const PolarSeries& s, const PolarFitOptions& options = {}) {
  validate_polar_series(s);
  const std::size_t n = s.theta_deg.size();
  const auto& y = s.intensity;
  std::vector<double> t(n);
  for (std::size_t i = 0; i < n; ++i) t[i] = detail::fold_angle(s.theta_deg[i]) * std::numbers::pi / 180.0;

  PolarFit f;
  f.feature = s.feature;
  f.samples = n;

  double sum = 0.0, sum_sq = 0.0;
  for (double v : y) {
    sum += v;
    sum_sq += v * v;
  }
  f.level = sum / static_cast<double>(n);
  for (double v : y) f.rss_isotropic += (v - f.level) * (v - f.level);

  // a cos^2(t - t0) + b = p0 + p1 cos 2t + p2 sin 2t
  Eigen::MatrixXd A(static_cast<Eigen::Index>(n), 3);
  Eigen::VectorXd rhs(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    A(r, 0) = 1.0;
    A(r, 1) = std::cos(2.0 * t[i]);
    A(r, 2) = std::sin(2.0 * t[i]);
    rhs(r) = y[i];
  }
  const Eigen::Vector3d p = A.colPivHouseholderQr().solve(rhs);
  const double half_a = std::hypot(p(1), p(2));
  double a = 2.0 * half_a;
  double b = p(0) - half_a;
  double theta0 = 0.5 * std::atan2(p(2), p(1));
  double rss_cos = (A * p - rhs).squaredNorm();
  if (b < 0.0 && b >= -1e-10 * (std::abs(p(0)) + half_a)) {
    b = 0.0; // rounding-level violation of b >= 0
  } else if (b < 0.0) {
    // constrained b = 0: one-dimensional search over theta0
    b = 0.0;
    constexpr int kGrid = 720;
    double best = std::numeric_limits<double>::infinity();
    double best_t0 = 0.0;
    for (int k = 0; k < kGrid; ++k) {
      const double t0 = -std::numbers::pi / 2 + std::numbers::pi * k / kGrid;
      double ak;
      const double r = detail::zero_offset_rss(t, y, t0, ak);
      if (r < best) {
        best = r;
        best_t0 = t0;
      }
    }
    double lo = best_t0 - std::numbers::pi / kGrid;
    double hi = best_t0 + std::numbers::pi / kGrid;
    const double g = (std::sqrt(5.0) - 1.0) / 2.0;
    for (int it = 0; it < 100 && hi - lo > 1e-14; ++it) {
      const double m1 = hi - g * (hi - lo);
      const double m2 = lo + g * (hi - lo);
      double a1, a2;
      if (detail::zero_offset_rss(t, y, m1, a1) < detail::zero_offset_rss(t, y, m2, a2))
        hi = m2;
      else
        lo = m1;
    }
    theta0 = 0.5 * (lo + hi);
    rss_cos = detail::zero_offset_rss(t, y, theta0, a);
  }
  f.a = a;
  f.b = b;
  f.theta0_deg = detail::fold_angle(theta0 * 180.0 / std::numbers::pi);
  f.modulation_depth = (a + b) > 0.0 ? std::clamp(a / (a + b), 0.0, 1.0) : 0.0;
  f.rss_cos2 = rss_cos;

  // An exact fit has RSS at rounding level; flooring both makes ties go to
  // the simpler model.
  const double floor = 1e-24 * std::max(sum_sq, std::numeric_limits<double>::min());
  f.aicc_isotropic = detail::aicc(std::max(f.rss_isotropic, floor), n, 1);
  f.aicc_cos2 = detail::aicc(std::max(f.rss_cos2, floor), n, 3);
  f.model = (f.aicc_cos2 < f.aicc_isotropic && f.modulation_depth >= options.min_modulation_depth)
                ? PolarModel::CosSquared
                : PolarModel::Isotropic;
  return f;
}

// ---------------------------------------------------------------------------
// Classification

struct ModeEntry {
  std::string feature;
  PolarModel model = PolarModel::Isotropic;
  double modulation_depth = 0.0;
  std::optional<PolarModel> expected;
};

struct ModeReport {
  std::vector<ModeEntry> entries;
  std::vector<std::string> warnings;
};

/// Expected behaviour of the hBN features; nullopt for unknown tags.
inline std::optional<PolarModel> expected_polar_model(std::string_view feature) {
  if (feature == "E2g" || feature == "D1" || feature == "PL") return PolarModel::Isotropic;
  if (feature == "D2" || feature == "D2a" || feature == "D2b") return PolarModel::CosSquared;
  return std::nullopt;
}

inline ModeReport classify_modes(const std::map<std::string, PolarFit>& fits) {
  ModeReport report;
  for (const auto& [feature, fit] : fits) {
    ModeEntry e{feature, fit.model, fit.modulation_depth, expected_polar_model(feature)};
    if (e.expected && *e.expected != e.model)
      report.warnings.push_back(feature + " classified " + std::string(polar_model_name(e.model)) + ", expected " +
                                std::string(polar_model_name(*e.expected)));
    report.entries.push_back(std::move(e));
  }
  return report;
}

// ---------------------------------------------------------------------------
// I/O

/// Three columns (theta_deg, intensity, feature) or, with default_feature set,
/// two columns for a single feature. Series keep file order per feature.
inline std::map<std::string, PolarSeries> parse_polar_series(std::istream& in, AnalyzerConfig config,
                                                             const std::string& default_feature = {},
                                                             const std::string& source = {}) {
  std::map<std::string, PolarSeries> out;
  for (const auto& row : text::read_table(in)) {
    const double theta = text::parse_number(text::field_at(row, 0, source), row.line_no, source);
    const double v = text::parse_number(text::field_at(row, 1, source), row.line_no, source);
    std::string feature;
    if (row.fields.size() > 2)
      feature = std::string(text::trim(row.fields[2]));
    else if (!default_feature.empty())
      feature = default_feature;
    else
      throw Error(Errc::Parse, source + ": line " + std::to_string(row.line_no) + ": missing feature column");
    auto& s = out[feature];
    s.feature = feature;
    s.config = config;
    s.theta_deg.push_back(theta);
    s.intensity.push_back(v);
  }
  return out;
}

inline std::map<std::string, PolarSeries> load_polar_series(const std::filesystem::path& path, AnalyzerConfig config,
                                                            const std::string& default_feature = {}) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::Io, "cannot open " + path.string());
  return parse_polar_series(in, config, default_feature, path.string());
}

inline double polar_model_value(const PolarFit& f, double theta_deg) {
  if (f.model == PolarModel::Isotropic) return f.level;
  const double c = std::cos((theta_deg - f.theta0_deg) * std::numbers::pi / 180.0);
  return f.a * c * c + f.b;
}

/// Plot-ready columns theta_deg, intensity, model, all divided by the
/// intensity at theta = 0 (mod 180), or by the maximum when no such sample
/// exists.
inline void write_polar_plot(std::ostream& out, const PolarSeries& s, const PolarFit& f) {
  double norm = 0.0;
  for (std::size_t i = 0; i < s.theta_deg.size(); ++i)
    if (std::abs(detail::fold_angle(s.theta_deg[i])) < 1e-9) {
      norm = s.intensity[i];
      break;
    }
  std::string basis = "theta0";
  if (!(norm > 0.0)) {
    norm = *std::max_element(s.intensity.begin(), s.intensity.end());
    basis = "max";
  }
  if (!(norm > 0.0)) norm = 1.0;
  out << "# feature=" << s.feature << " config=" << analyzer_name(s.config) << " model=" << polar_model_name(f.model)
      << " normalized_by=" << basis << "\n# theta_deg,intensity,model\n";
  out.precision(12);
  for (std::size_t i = 0; i < s.theta_deg.size(); ++i)
    out << s.theta_deg[i] << ',' << s.intensity[i] / norm << ',' << polar_model_value(f, s.theta_deg[i]) / norm
        << '\n';
}

} // namespace vbquant
