#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vbquant/defect_model.hpp"
#include "vbquant/error.hpp"
#include "vbquant/peakfit.hpp"

namespace vbquant {

inline constexpr const char* kFitReportSchema = "vbquant-fit-v1";

/// Everything a later stage needs from one fitted spectrum.
struct FitReport {
  std::string source;
  std::string label;
  std::string preset;
  std::optional<double> excitation_ev;
  PeakFitResult result;
};

inline nlohmann::ordered_json fit_report_to_json(const FitReport& r) {
  nlohmann::ordered_json j;
  j["schema"] = kFitReportSchema;
  j["source"] = r.source;
  j["label"] = r.label;
  j["preset"] = r.preset;
  j["excitation_ev"] = r.excitation_ev ? nlohmann::ordered_json(*r.excitation_ev) : nlohmann::ordered_json(nullptr);
  auto peaks = nlohmann::ordered_json::array();
  for (const auto& p : r.result.peaks) {
    peaks.push_back({{"identity", p.identity},
                     {"shape", std::string(shape_name(p.model.shape))},
                     {"center", p.model.center},
                     {"fwhm", p.model.fwhm},
                     {"area", p.model.area},
                     {"sigma_center", p.sigma_center},
                     {"sigma_fwhm", p.sigma_fwhm},
                     {"sigma_area", p.sigma_area},
                     {"present", p.present},
                     {"note", p.note}});
  }
  j["peaks"] = peaks;
  j["residual_rms"] = r.result.residual_rms;
  j["iterations"] = r.result.iterations;
  j["converged"] = r.result.converged;
  j["free_parameters"] = r.result.free_parameters();
  auto windows = nlohmann::ordered_json::array();
  for (const auto& w : r.result.windows) {
    windows.push_back({{"lo", w.window.lo},
                       {"hi", w.window.hi},
                       {"samples", w.samples},
                       {"first_param", w.first_param},
                       {"param_count", w.param_count},
                       {"offset_c0", w.offset_c0},
                       {"offset_c1", w.offset_c1},
                       {"residual_rms", w.residual_rms},
                       {"iterations", w.iterations},
                       {"converged", w.converged},
                       {"stop_reason", w.stop_reason}});
  }
  j["windows"] = windows;
  auto cov = nlohmann::ordered_json::array();
  for (Eigen::Index a = 0; a < r.result.covariance.rows(); ++a) {
    auto row = nlohmann::ordered_json::array();
    for (Eigen::Index b = 0; b < r.result.covariance.cols(); ++b) row.push_back(r.result.covariance(a, b));
    cov.push_back(row);
  }
  j["covariance"] = cov;
  return j;
}

inline FitReport fit_report_from_json(const nlohmann::ordered_json& j) {
  if (!j.is_object() || !j.contains("schema") || j.at("schema") != kFitReportSchema)
    throw Error(Errc::Schema, std::string("expected schema tag ") + kFitReportSchema);
  FitReport r;
  r.source = j.value("source", "");
  r.label = j.value("label", "");
  r.preset = j.value("preset", "");
  if (j.contains("excitation_ev") && j.at("excitation_ev").is_number()) r.excitation_ev = j.at("excitation_ev").get<double>();
  if (!j.contains("peaks") || !j.at("peaks").is_array()) throw Error(Errc::Schema, "fit report has no peaks array");
  for (const auto& p : j.at("peaks")) {
    FittedPeak fp;
    fp.identity = p.at("identity").get<std::string>();
    fp.model.shape = p.at("shape").get<std::string>() == "gaussian" ? PeakShape::Gaussian : PeakShape::Lorentzian;
    fp.model.center = p.at("center").get<double>();
    fp.model.fwhm = p.at("fwhm").get<double>();
    fp.model.area = p.at("area").get<double>();
    fp.sigma_center = p.value("sigma_center", 0.0);
    fp.sigma_fwhm = p.value("sigma_fwhm", 0.0);
    fp.sigma_area = p.value("sigma_area", 0.0);
    fp.present = p.value("present", true);
    fp.note = p.value("note", "");
    r.result.peaks.push_back(std::move(fp));
  }
  r.result.residual_rms = j.value("residual_rms", 0.0);
  r.result.iterations = j.value("iterations", 0);
  r.result.converged = j.value("converged", true);
  return r;
}

inline FitReport read_fit_report_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::Io, "cannot open " + path.string());
  try {
    return fit_report_from_json(nlohmann::ordered_json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::Parse, path.string() + ": " + e.what());
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Spectral ratios

struct RatioValue {
  double ratio = 0.0;
  double sigma = 0.0;
};

/// Ratio of the mode's numerator areas to A_E2g with first-order error
/// propagation. Absent numerator peaks count as zero area.
inline RatioValue spectral_ratio(std::span<const FittedPeak> peaks, RatioMode mode) {
  auto get = [&](std::string_view id) -> const FittedPeak* {
    for (const auto& p : peaks)
      if (p.identity == id) return &p;
    return nullptr;
  };
  const auto* e2g = get("E2g");
  if (!e2g || !e2g->present || !(e2g->model.area > 0.0))
    throw Error(Errc::Domain, "ratio needs a present E2g peak");
  double num = 0.0;
  double num_var = 0.0;
  auto add = [&](std::string_view id) {
    if (const auto* p = get(id); p && p->present) {
      num += p->model.area;
      num_var += p->sigma_area * p->sigma_area;
    }
  };
  if (mode != RatioMode::PLOnly) add("D1");
  if (mode != RatioMode::D1Only) add("PL");
  const double e = e2g->model.area;
  const double ratio = num / e;
  const double rel_e = e2g->sigma_area / e;
  return {ratio, std::sqrt(num_var / (e * e) + ratio * ratio * rel_e * rel_e)};
}

} // namespace vbquant
