#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "vbquant/error.hpp"
#include "vbquant/lsq.hpp"
#include "vbquant/peak_model.hpp"
#include "vbquant/spectra.hpp"

namespace vbquant {

struct FitOptions {
  lsq::SolverOptions solver{};
  bool fit_offset = true;         ///< local linear offset c0 + c1*x per window
  bool allow_nonconverged = false;
};

struct FittedPeak {
  std::string identity;
  PeakModel model;
  double sigma_center = 0.0;
  double sigma_fwhm = 0.0;
  double sigma_area = 0.0;
  bool present = true;
  std::string note; ///< "MissingPeak" or the failure message of an absent peak
};

struct WindowFit {
  Window window;
  std::size_t samples = 0;
  std::size_t first_param = 0; ///< row of this window's block in the covariance
  std::size_t param_count = 0;
  double offset_c0 = 0.0; ///< local offset c0 + c1 * x
  double offset_c1 = 0.0;
  double residual_rms = 0.0;
  int iterations = 0;
  bool converged = true;
  std::string stop_reason;
};

/// Covariance is ordered per window as [center, fwhm, area] for each peak,
/// then the offset (c0, c1) when fitted.
struct PeakFitResult {
  std::vector<FittedPeak> peaks;
  std::vector<WindowFit> windows;
  Eigen::MatrixXd covariance;
  double residual_rms = 0.0;
  int iterations = 0;
  bool converged = true;

  std::size_t free_parameters() const { return static_cast<std::size_t>(covariance.rows()); }

  const FittedPeak* find(std::string_view identity) const {
    for (const auto& p : peaks)
      if (p.identity == identity) return &p;
    return nullptr;
  }
};

namespace detail {

class WindowProblem {
public:
  WindowProblem(std::span<const double> x, std::span<const double> y, Window window,
                std::vector<PeakShape> shapes, bool fit_offset)
      : x_(x), y_(y), window_(window), shapes_(std::move(shapes)), fit_offset_(fit_offset) {
    x_mid_ = 0.5 * (window.lo + window.hi);
    half_ = 0.5 * window.width();
    double ymax = 0.0;
    for (double v : y_) ymax = std::max(ymax, std::abs(v));
    const double area_scale = std::max(ymax, 1e-300) * std::max(window.width(), 1e-300);
    log_fwhm_lo_ = std::log(1e-6 * window.width());
    log_fwhm_hi_ = std::log(10.0 * window.width());
    log_area_lo_ = std::log(1e-14 * area_scale);
    log_area_hi_ = std::log(1e6 * area_scale);
  }

  Eigen::Index parameter_count() const {
    return static_cast<Eigen::Index>(3 * shapes_.size() + (fit_offset_ ? 2 : 0));
  }

  Eigen::VectorXd pack(std::span<const PeakModel> seeds) const {
    Eigen::VectorXd p = Eigen::VectorXd::Zero(parameter_count());
    for (std::size_t k = 0; k < seeds.size(); ++k) {
      p(3 * k) = seeds[k].center;
      p(3 * k + 1) = std::log(seeds[k].fwhm);
      p(3 * k + 2) = std::log(seeds[k].area);
    }
    return p;
  }

  PeakModel peak(const Eigen::VectorXd& p, std::size_t k) const {
    return {shapes_[k], p(3 * k), std::exp(p(3 * k + 1)), std::exp(p(3 * k + 2))};
  }

  double t(double x) const { return (x - x_mid_) / half_; }

  void offset_raw(const Eigen::VectorXd& p, double& c0, double& c1) const {
    if (!fit_offset_) {
      c0 = c1 = 0.0;
      return;
    }
    const auto o = static_cast<Eigen::Index>(3 * shapes_.size());
    c1 = p(o + 1) / half_;
    c0 = p(o) - p(o + 1) * x_mid_ / half_;
  }

  bool residuals(const Eigen::VectorXd& p, Eigen::VectorXd& r) const {
    r.resize(static_cast<Eigen::Index>(x_.size()));
    const auto o = static_cast<Eigen::Index>(3 * shapes_.size());
    for (std::size_t i = 0; i < x_.size(); ++i) {
      double v = fit_offset_ ? p(o) + p(o + 1) * t(x_[i]) : 0.0;
      for (std::size_t k = 0; k < shapes_.size(); ++k) v += peak(p, k)(x_[i]);
      r(static_cast<Eigen::Index>(i)) = v - y_[i];
    }
    return r.allFinite();
  }

  void jacobian(const Eigen::VectorXd& p, Eigen::MatrixXd& J) const {
    J.resize(static_cast<Eigen::Index>(x_.size()), parameter_count());
    const auto o = static_cast<Eigen::Index>(3 * shapes_.size());
    for (std::size_t k = 0; k < shapes_.size(); ++k) {
      const PeakModel m = peak(p, k);
      for (std::size_t i = 0; i < x_.size(); ++i) {
        const auto g = m.gradient(x_[i]);
        const auto row = static_cast<Eigen::Index>(i);
        const auto col = static_cast<Eigen::Index>(3 * k);
        J(row, col) = g[0];
        J(row, col + 1) = g[1] * m.fwhm;
        J(row, col + 2) = g[2] * m.area;
      }
    }
    if (fit_offset_)
      for (std::size_t i = 0; i < x_.size(); ++i) {
        J(static_cast<Eigen::Index>(i), o) = 1.0;
        J(static_cast<Eigen::Index>(i), o + 1) = t(x_[i]);
      }
  }

  void project(Eigen::VectorXd& p) const {
    for (std::size_t k = 0; k < shapes_.size(); ++k) {
      const auto c = static_cast<Eigen::Index>(3 * k);
      p(c) = std::clamp(p(c), window_.lo, window_.hi);
      p(c + 1) = std::clamp(p(c + 1), log_fwhm_lo_, log_fwhm_hi_);
      p(c + 2) = std::clamp(p(c + 2), log_area_lo_, log_area_hi_);
    }
  }

  /// Maps the internal covariance (log fwhm, log area, normalized offset) to
  /// physical parameters (fwhm, area, c0 + c1*x).
  Eigen::MatrixXd physical_covariance(const Eigen::VectorXd& p, const Eigen::MatrixXd& cov) const {
    const Eigen::Index n = parameter_count();
    Eigen::MatrixXd T = Eigen::MatrixXd::Identity(n, n);
    for (std::size_t k = 0; k < shapes_.size(); ++k) {
      const auto c = static_cast<Eigen::Index>(3 * k);
      T(c + 1, c + 1) = std::exp(p(c + 1));
      T(c + 2, c + 2) = std::exp(p(c + 2));
    }
    if (fit_offset_) {
      const auto o = static_cast<Eigen::Index>(3 * shapes_.size());
      T(o, o) = 1.0;
      T(o, o + 1) = -x_mid_ / half_;
      T(o + 1, o) = 0.0;
      T(o + 1, o + 1) = 1.0 / half_;
    }
    return T * cov * T.transpose();
  }

private:
  std::span<const double> x_;
  std::span<const double> y_;
  Window window_;
  std::vector<PeakShape> shapes_;
  bool fit_offset_;
  double x_mid_ = 0.0;
  double half_ = 1.0;
  double log_fwhm_lo_ = 0.0;
  double log_fwhm_hi_ = 0.0;
  double log_area_lo_ = 0.0;
  double log_area_hi_ = 0.0;
};

/// Fits peaks + optional linear offset to window samples (x, y).
inline PeakFitResult fit_window(std::span<const double> x, std::span<const double> y, Window window,
                                std::span<const PeakModel> seeds, const FitOptions& options) {
  if (seeds.empty()) throw Error(Errc::Domain, "no seed peaks");
  if (!(window.hi > window.lo)) throw Error(Errc::Domain, "fit window has lo >= hi");
  std::vector<PeakShape> shapes;
  for (const auto& s : seeds) {
    validate_peak(s);
    if (!window.contains(s.center))
      throw Error(Errc::Domain, "seed center " + std::to_string(s.center) + " outside fit window");
    shapes.push_back(s.shape);
  }
  WindowProblem problem(x, y, window, shapes, options.fit_offset);
  const auto nfree = static_cast<std::size_t>(problem.parameter_count());
  if (x.size() < 3 * nfree)
    throw Error(Errc::WindowTooSmall, "window [" + std::to_string(window.lo) + ", " + std::to_string(window.hi) +
                                          "] holds " + std::to_string(x.size()) + " samples, need " +
                                          std::to_string(3 * nfree));

  Eigen::VectorXd p0 = problem.pack(seeds);
  problem.project(p0);
  {
    Eigen::MatrixXd J0;
    problem.jacobian(p0, J0);
    if (lsq::rank_deficient(J0))
      throw Error(Errc::SingularJacobian, "seed peaks give a rank-deficient Jacobian (degenerate seeds)");
  }

  const auto sol = lsq::levenberg_marquardt(problem, p0, options.solver);
  if (!sol.converged && !options.allow_nonconverged)
    throw Error(Errc::NonConvergence, "no convergence after " + std::to_string(sol.iterations) +
                                          " iterations (cost " + std::to_string(sol.cost) + ", " +
                                          std::to_string(sol.accepted_steps) + " accepted steps)");
  if (lsq::rank_deficient(sol.jacobian))
    throw Error(Errc::SingularJacobian, "rank-deficient Jacobian at the solution");

  const Eigen::MatrixXd cov = problem.physical_covariance(sol.params, lsq::covariance(sol.jacobian, sol.cost));

  PeakFitResult out;
  out.covariance = cov;
  out.iterations = sol.iterations;
  out.converged = sol.converged;
  out.residual_rms = std::sqrt(sol.cost / static_cast<double>(x.size()));
  for (std::size_t k = 0; k < seeds.size(); ++k) {
    FittedPeak fp;
    fp.model = problem.peak(sol.params, k);
    const auto c = static_cast<Eigen::Index>(3 * k);
    fp.sigma_center = std::sqrt(std::max(cov(c, c), 0.0));
    fp.sigma_fwhm = std::sqrt(std::max(cov(c + 1, c + 1), 0.0));
    fp.sigma_area = std::sqrt(std::max(cov(c + 2, c + 2), 0.0));
    out.peaks.push_back(std::move(fp));
  }
  WindowFit wf;
  wf.window = window;
  wf.samples = x.size();
  wf.param_count = nfree;
  problem.offset_raw(sol.params, wf.offset_c0, wf.offset_c1);
  wf.residual_rms = out.residual_rms;
  wf.iterations = sol.iterations;
  wf.converged = sol.converged;
  wf.stop_reason = std::string(lsq::stop_reason_name(sol.reason));
  out.windows.push_back(wf);
  return out;
}

} // namespace detail

/// Fits `seeds` (shape fixed, position/width/area free) plus a local linear
/// offset to the samples of `s` inside `window`.
inline PeakFitResult fit_peaks(const Spectrum& s, Window window, std::span<const PeakModel> seeds,
                               const FitOptions& options = {}) {
  const auto [first, last] = window_indices(s, window);
  return detail::fit_window(s.x().subspan(first, last - first), s.y().subspan(first, last - first), window,
                            seeds, options);
}

// ---------------------------------------------------------------------------
// Standard hBN peak sets

enum class Preset { HbnRaman, HbnPl };

struct PresetPeak {
  std::string identity;
  double center = 0.0;
};

/// Nearest preset center wins; an equidistant tie or two peaks claiming the
/// same identity is an error.
inline std::vector<std::string> assign_identities(std::span<const double> centers,
                                                  std::span<const PresetPeak> presets) {
  if (presets.empty()) throw Error(Errc::Domain, "no preset identities");
  std::vector<std::string> ids;
  for (double c : centers) {
    std::size_t best = 0;
    double best_d = std::abs(c - presets[0].center);
    bool tie = false;
    for (std::size_t i = 1; i < presets.size(); ++i) {
      const double d = std::abs(c - presets[i].center);
      if (d < best_d) {
        best = i;
        best_d = d;
        tie = false;
      } else if (d == best_d) {
        tie = true;
      }
    }
    if (tie)
      throw Error(Errc::AmbiguousIdentity, "peak at " + std::to_string(c) + " is equidistant from two presets");
    if (std::find(ids.begin(), ids.end(), presets[best].identity) != ids.end())
      throw Error(Errc::AmbiguousIdentity, "two peaks map to identity " + presets[best].identity);
    ids.push_back(presets[best].identity);
  }
  return ids;
}

struct ExtractOptions {
  bool parallel_polarization = false; ///< resolve D2 into D2a + D2b
  FitOptions fit{};
  int max_passes = 30;
  double pass_tolerance = 1e-13;
};

struct PresetWindow {
  std::string name;
  Window window;
  std::vector<PeakModel> seeds; ///< area is re-estimated from the data
  std::vector<PresetPeak> identities;
};

inline std::vector<PresetWindow> preset_windows(Preset preset, bool parallel_polarization) {
  using enum PeakShape;
  if (preset == Preset::HbnPl)
    return {{"PL", {1.2, 1.8}, {{Gaussian, 1.53, 0.2, 1.0}}, {{"PL", 1.53}}}};
  PresetWindow d2{"D2", {250.0, 650.0}, {}, {}};
  if (parallel_polarization) {
    d2.seeds = {{Lorentzian, 459.0, 138.0, 1.0}, {Lorentzian, 352.0, 191.0, 1.0}};
    d2.identities = {{"D2a", 459.0}, {"D2b", 352.0}};
  } else {
    d2.seeds = {{Lorentzian, 450.0, 120.0, 1.0}};
    d2.identities = {{"D2", 450.0}};
  }
  // strongest first so its tails are known when the weak windows are fitted
  return {{"E2g", {1330.0, 1410.0}, {{Lorentzian, 1365.0, 10.0, 1.0}}, {{"E2g", 1365.0}}},
          {"D1", {1230.0, 1340.0}, {{Lorentzian, 1290.0, 30.0, 1.0}}, {{"D1", 1290.0}}},
          std::move(d2)};
}

/// Fits the preset windows of an hBN Raman (cm^-1) or PL (eV) spectrum.
/// Overlapping tails between windows are handled by alternating window fits,
/// each with the other windows' current peaks subtracted, until the
/// parameters stop moving. Peaks whose area is below 3 sigma, or whose window
/// shows no signal or fails to fit, are returned with present = false.
inline PeakFitResult extract_standard_peaks(const Spectrum& s, Preset preset, const ExtractOptions& options = {}) {
  const AxisKind want = preset == Preset::HbnRaman ? AxisKind::RamanShiftCm : AxisKind::EnergyEv;
  if (s.axis_kind() != want)
    throw Error(Errc::Axis, std::string("preset expects a ") + std::string(axis_name(want)) + " axis");

  const auto plans = preset_windows(preset, options.parallel_polarization);
  std::vector<PresetPeak> all_ids;
  for (const auto& p : plans) all_ids.insert(all_ids.end(), p.identities.begin(), p.identities.end());

  const auto x = s.x();
  const auto y = s.y();
  double ymax = 0.0;
  for (double v : y) ymax = std::max(ymax, std::abs(v));

  struct State {
    std::optional<PeakFitResult> fit;
    std::string failure;
  };
  std::vector<State> state(plans.size());

  auto others = [&](std::size_t skip, double xi) {
    double v = 0.0;
    for (std::size_t w = 0; w < plans.size(); ++w) {
      if (w == skip || !state[w].fit) continue;
      for (const auto& p : state[w].fit->peaks)
        if (p.present) v += p.model(xi);
    }
    return v;
  };

  for (int pass = 0; pass < options.max_passes; ++pass) {
    double change = 0.0;
    for (std::size_t w = 0; w < plans.size(); ++w) {
      const auto& plan = plans[w];
      const auto [first, last] = window_indices(s, plan.window);
      const std::size_t n = last - first;
      std::vector<double> wx(x.begin() + static_cast<std::ptrdiff_t>(first), x.begin() + static_cast<std::ptrdiff_t>(last));
      std::vector<double> wy(n);
      for (std::size_t i = 0; i < n; ++i) wy[i] = y[first + i] - others(w, wx[i]);

      if (n < 2) {
        state[w] = {std::nullopt, "window holds no samples"};
        continue;
      }
      // signal above the chord through the window end points
      double excess = -std::numeric_limits<double>::infinity();
      double excess_area = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double chord = wy.front() + (wy.back() - wy.front()) * (wx[i] - wx.front()) / (wx.back() - wx.front());
        excess = std::max(excess, wy[i] - chord);
        if (i > 0) {
          const double c0 = wy.front() + (wy.back() - wy.front()) * (wx[i - 1] - wx.front()) / (wx.back() - wx.front());
          excess_area += 0.5 * ((wy[i] - chord) + (wy[i - 1] - c0)) * (wx[i] - wx[i - 1]);
        }
      }
      if (!(excess > 1e-9 * ymax)) {
        state[w] = {std::nullopt, "no signal above the local trend"};
        continue;
      }

      std::vector<PeakModel> seeds = plan.seeds;
      if (state[w].fit) {
        for (std::size_t k = 0; k < seeds.size(); ++k) seeds[k] = state[w].fit->peaks[k].model;
      } else {
        const double share = std::max(excess_area, excess * plan.seeds.front().fwhm) / static_cast<double>(seeds.size());
        for (auto& sd : seeds) sd.area = std::max(share, 1e-12 * ymax * plan.window.width());
      }
      try {
        auto fit = detail::fit_window(wx, wy, plan.window, seeds, options.fit);
        if (state[w].fit)
          for (std::size_t k = 0; k < seeds.size(); ++k) {
            const auto& a = state[w].fit->peaks[k].model;
            const auto& b = fit.peaks[k].model;
            change = std::max({change, std::abs(a.area - b.area) / b.area, std::abs(a.fwhm - b.fwhm) / b.fwhm,
                               std::abs(a.center - b.center) / b.fwhm});
          }
        else
          change = std::numeric_limits<double>::infinity();
        for (auto& p : fit.peaks) {
          p.present = p.model.area > 3.0 * p.sigma_area;
          if (!p.present) p.note = "MissingPeak";
        }
        state[w] = {std::move(fit), {}};
      } catch (const Error& e) {
        if (e.code() != Errc::NonConvergence && e.code() != Errc::SingularJacobian &&
            e.code() != Errc::WindowTooSmall)
          throw;
        state[w] = {std::nullopt, e.what()};
      }
    }
    if (plans.size() == 1 || change < options.pass_tolerance) break;
  }

  PeakFitResult out;
  out.iterations = 0;
  std::size_t nparam = 0;
  double sq = 0.0;
  std::size_t nsamples = 0;
  for (const auto& st : state)
    if (st.fit) nparam += st.fit->free_parameters();
  out.covariance = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(nparam), static_cast<Eigen::Index>(nparam));
  std::size_t offset = 0;
  for (std::size_t w = 0; w < plans.size(); ++w) {
    const auto& plan = plans[w];
    if (state[w].fit) {
      auto& fit = *state[w].fit;
      std::vector<double> centers;
      for (const auto& p : fit.peaks) centers.push_back(p.model.center);
      const auto ids = assign_identities(centers, all_ids);
      for (std::size_t k = 0; k < fit.peaks.size(); ++k) {
        fit.peaks[k].identity = ids[k];
        out.peaks.push_back(fit.peaks[k]);
      }
      const auto np = static_cast<Eigen::Index>(fit.free_parameters());
      out.covariance.block(static_cast<Eigen::Index>(offset), static_cast<Eigen::Index>(offset), np, np) = fit.covariance;
      WindowFit wf = fit.windows.front();
      wf.first_param = offset;
      out.windows.push_back(wf);
      offset += fit.free_parameters();
      out.iterations += fit.iterations;
      out.converged = out.converged && fit.converged;
      sq += fit.residual_rms * fit.residual_rms * static_cast<double>(wf.samples);
      nsamples += wf.samples;
    } else {
      for (std::size_t k = 0; k < plan.seeds.size(); ++k) {
        FittedPeak fp;
        fp.identity = plan.identities[k].identity;
        fp.model = plan.seeds[k];
        fp.model.area = 0.0;
        fp.present = false;
        fp.note = "MissingPeak: " + state[w].failure;
        out.peaks.push_back(std::move(fp));
      }
    }
  }
  out.residual_rms = nsamples ? std::sqrt(sq / static_cast<double>(nsamples)) : 0.0;
  return out;
}

/// Area of a present peak, 0 when the identity is absent.
inline double present_area(const PeakFitResult& r, std::string_view identity) {
  const auto* p = r.find(identity);
  return (p && p->present) ? p->model.area : 0.0;
}

} // namespace vbquant
