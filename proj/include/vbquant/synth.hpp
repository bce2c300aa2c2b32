#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vbquant/defect_model.hpp"
#include "vbquant/error.hpp"
#include "vbquant/peak_model.hpp"
#include "vbquant/polarization.hpp"
#include "vbquant/random.hpp"
#include "vbquant/spectra.hpp"
#include "vbquant/spectra_io.hpp"

namespace vbquant {

/// A peak defined on its own axis. On a grid of another kind the profile is
/// evaluated at the converted sample position (no Jacobian), so `area`
/// stays the area on the peak's own axis.
struct SynthPeak {
  PeakModel model;
  AxisKind axis = AxisKind::RamanShiftCm;
  std::string identity;
};

struct GridSpec {
  AxisKind axis = AxisKind::RamanShiftCm;
  double lo = 0.0;
  double hi = 1.0;
  std::size_t count = 0;
};

enum class NoiseKind { None, Gaussian, Poisson };

struct NoiseSpec {
  NoiseKind kind = NoiseKind::None;
  double sigma = 0.0; ///< Gaussian only
};

struct SynthSpec {
  GridSpec grid;
  std::vector<SynthPeak> peaks;
  std::vector<double> baseline; ///< polynomial in the grid's x, constant term first
  NoiseSpec noise;
  std::uint64_t seed = 0;
  std::optional<double> excitation_ev;
  std::string label;
};

struct SynthResult {
  Spectrum spectrum;
  std::vector<double> clean; ///< noiseless y
  SynthSpec truth;
};

inline std::vector<double> grid_points(const GridSpec& g) {
  if (g.count < kMinSpectrumSamples) throw Error(Errc::Empty, "grid needs at least 8 points");
  if (!(g.hi > g.lo)) throw Error(Errc::Domain, "grid hi must exceed lo");
  std::vector<double> x(g.count);
  const double step = (g.hi - g.lo) / static_cast<double>(g.count - 1);
  for (std::size_t i = 0; i < g.count; ++i) x[i] = g.lo + step * static_cast<double>(i);
  x.back() = g.hi;
  return x;
}

inline double synth_clean_value(const SynthSpec& spec, double x) {
  double v = 0.0;
  double pw = 1.0;
  for (double c : spec.baseline) {
    v += c * pw;
    pw *= x;
  }
  for (const auto& p : spec.peaks) {
    const double xp = p.axis == spec.grid.axis ? x : convert_value(x, spec.grid.axis, p.axis, spec.excitation_ev);
    v += p.model(xp);
  }
  return v;
}

inline SynthResult generate_spectrum(const SynthSpec& spec) {
  for (const auto& p : spec.peaks) validate_peak(p.model);
  const auto x = grid_points(spec.grid);
  std::vector<double> clean(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) clean[i] = synth_clean_value(spec, x[i]);
  std::vector<double> y = clean;
  SplitMix64 rng(spec.seed);
  switch (spec.noise.kind) {
  case NoiseKind::None: break;
  case NoiseKind::Gaussian:
    for (double& v : y) v += spec.noise.sigma * rng.normal();
    break;
  case NoiseKind::Poisson:
    for (double& v : y) v = static_cast<double>(rng.poisson(std::max(v, 0.0)));
    break;
  }
  Spectrum s(spec.grid.axis, x, std::move(y), spec.excitation_ev, spec.label);
  return {std::move(s), std::move(clean), spec};
}

// ---------------------------------------------------------------------------
// Ground truth serialization

inline nlohmann::ordered_json synth_truth_json(const SynthSpec& spec) {
  nlohmann::ordered_json j;
  j["label"] = spec.label;
  j["seed"] = spec.seed;
  j["grid"] = {{"axis", std::string(axis_name(spec.grid.axis))},
               {"lo", spec.grid.lo},
               {"hi", spec.grid.hi},
               {"count", spec.grid.count}};
  j["excitation_ev"] = spec.excitation_ev ? nlohmann::ordered_json(*spec.excitation_ev) : nlohmann::ordered_json();
  j["baseline"] = spec.baseline;
  const char* noise = spec.noise.kind == NoiseKind::None ? "none"
                      : spec.noise.kind == NoiseKind::Gaussian ? "gaussian" : "poisson";
  j["noise"] = {{"kind", noise}, {"sigma", spec.noise.sigma}};
  auto peaks = nlohmann::ordered_json::array();
  for (const auto& p : spec.peaks)
    peaks.push_back({{"identity", p.identity},
                     {"axis", std::string(axis_name(p.axis))},
                     {"shape", std::string(shape_name(p.model.shape))},
                     {"center", p.model.center},
                     {"fwhm", p.model.fwhm},
                     {"area", p.model.area}});
  j["peaks"] = peaks;
  return j;
}

inline SynthSpec synth_truth_from_json(const nlohmann::ordered_json& j) {
  SynthSpec s;
  s.label = j.at("label").get<std::string>();
  s.seed = j.at("seed").get<std::uint64_t>();
  const auto& g = j.at("grid");
  s.grid = {parse_axis_kind(g.at("axis").get<std::string>()), g.at("lo").get<double>(), g.at("hi").get<double>(),
            g.at("count").get<std::size_t>()};
  if (j.at("excitation_ev").is_number()) s.excitation_ev = j.at("excitation_ev").get<double>();
  s.baseline = j.at("baseline").get<std::vector<double>>();
  const auto kind = j.at("noise").at("kind").get<std::string>();
  s.noise.kind = kind == "none" ? NoiseKind::None : kind == "gaussian" ? NoiseKind::Gaussian : NoiseKind::Poisson;
  s.noise.sigma = j.at("noise").at("sigma").get<double>();
  for (const auto& p : j.at("peaks")) {
    SynthPeak sp;
    sp.identity = p.at("identity").get<std::string>();
    sp.axis = parse_axis_kind(p.at("axis").get<std::string>());
    sp.model.shape = p.at("shape").get<std::string>() == "gaussian" ? PeakShape::Gaussian : PeakShape::Lorentzian;
    sp.model.center = p.at("center").get<double>();
    sp.model.fwhm = p.at("fwhm").get<double>();
    sp.model.area = p.at("area").get<double>();
    s.peaks.push_back(std::move(sp));
  }
  return s;
}

/// Spectrum file with the generating spec on a "# truth " header line.
inline void write_synth_spectrum(const std::filesystem::path& path, const SynthResult& r) {
  write_spectrum_file(path, r.spectrum, {"truth " + synth_truth_json(r.truth).dump()});
}

// ---------------------------------------------------------------------------
// Calibration observations

struct CalibrationSynthOptions {
  double relative_noise = 0.0; ///< multiplicative Gaussian sigma
  std::uint64_t seed = 0;
  bool record_sigma = true; ///< ratio_sigma = relative_noise * noiseless ratio
};

/// One observation per (fluence, E_L); E_L defaults to every key of the
/// truth model. Order: E_L outer, fluence inner.
inline std::vector<RatioObservation> generate_calibration_dataset(const CalibrationModel& truth,
                                                                  std::span<const double> fluences,
                                                                  std::span<const double> els = {},
                                                                  const CalibrationSynthOptions& options = {}) {
  truth.validate();
  std::vector<double> energies(els.begin(), els.end());
  if (energies.empty())
    for (const auto& [el, _] : truth.per_el) energies.push_back(el);
  SplitMix64 rng(options.seed);
  std::vector<RatioObservation> out;
  for (double el : energies) {
    for (double fl : fluences) {
      const double f = eval_ratio(l_d_from_fluence(fl, truth.alpha, truth.beta), truth, el);
      RatioObservation o;
      o.fluence_ions_per_nm2 = fl;
      o.excitation_energy_ev = el;
      o.mode = truth.mode;
      o.ratio = options.relative_noise > 0.0 ? std::max(f * (1.0 + options.relative_noise * rng.normal()), 0.0) : f;
      o.ratio_sigma = options.record_sigma ? options.relative_noise * f : 0.0;
      out.push_back(o);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Polar series

struct PolarSynthSpec {
  std::string feature;
  double a = 0.0;
  double b = 1.0;
  double theta0_deg = 0.0;
  std::vector<double> theta_deg;
  double relative_noise = 0.0; ///< multiplicative Gaussian sigma
  std::uint64_t seed = 0;
  AnalyzerConfig config = AnalyzerConfig::ParallelAnalyzer;
};

inline std::vector<double> angle_grid(double lo, double hi, double step) {
  std::vector<double> out;
  for (int k = 0;; ++k) {
    const double t = lo + step * k;
    if (t > hi + 1e-9 * step) break;
    out.push_back(t);
  }
  return out;
}

inline PolarSeries generate_polar_series(const PolarSynthSpec& spec) {
  PolarSeries s;
  s.feature = spec.feature;
  s.config = spec.config;
  s.theta_deg = spec.theta_deg;
  SplitMix64 rng(spec.seed);
  for (double t : spec.theta_deg) {
    const double c = std::cos((t - spec.theta0_deg) * std::numbers::pi / 180.0);
    const double v = spec.a * c * c + spec.b;
    s.intensity.push_back(spec.relative_noise > 0.0 ? std::max(v * (1.0 + spec.relative_noise * rng.normal()), 0.0)
                                                    : v);
  }
  return s;
}

/// The hBN feature set under parallel analyzers: E2g, D1 and PL flat, D2a and
/// D2b modulated with a/b = 4. Each feature draws from its own substream.
inline std::vector<PolarSeries> paper_like_polar_set(double relative_noise, std::uint64_t seed,
                                                     double step_deg = 10.0) {
  const auto theta = angle_grid(0.0, 360.0 - step_deg, step_deg);
  struct Feature {
    const char* name;
    double a, b, theta0;
  };
  const Feature features[] = {
      {"E2g", 0.0, 1.0, 0.0}, {"D1", 0.0, 1.0, 0.0}, {"PL", 0.0, 1.0, 0.0},
      {"D2a", 4.0, 1.0, 0.0}, {"D2b", 4.0, 1.0, 0.0},
  };
  std::vector<PolarSeries> out;
  std::uint64_t k = 0;
  for (const auto& f : features) {
    PolarSynthSpec spec{f.name, f.a, f.b, f.theta0, theta, relative_noise, seed * 0x100000001B3ULL + (++k)};
    out.push_back(generate_polar_series(spec));
  }
  return out;
}

inline void write_polar_series(std::ostream& out, std::span<const PolarSeries> series) {
  out << "# theta_deg,intensity,feature\n";
  out.precision(17);
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.theta_deg.size(); ++i)
      out << s.theta_deg[i] << ',' << s.intensity[i] << ',' << s.feature << '\n';
}

// ---------------------------------------------------------------------------
// Reference irradiation settings

/// Tile fluences (ions/nm^2) of the two irradiation series, highest first.
inline const std::vector<double> kTileFluenceSet1{11.5, 5.8, 2.89, 1.44, 1.15, 0.58,
                                                  0.289, 0.144, 0.115, 0.058, 0.0289, 0.0144};
inline const std::vector<double> kTileFluenceSet2{22.4, 12.8, 6.4, 3.2, 2.2, 1.3,
                                                  0.6, 0.3, 0.2, 0.13, 0.06, 0.03};

/// Activation parameters of the N-irradiated series with plausible per-E_L
/// scales for 1.96, 2.33 and 2.62 eV. Used as ground truth for synthetic data.
inline CalibrationModel reference_truth_model() {
  CalibrationModel m;
  m.r_s_nm = 1.0;
  m.r_a_nm = 2.42;
  m.alpha = 4.27;
  m.beta = 0.6;
  m.per_el = {{1.96, {60.0, 5.0}}, {2.33, {300.0, 25.0}}, {2.62, {350.0, 30.0}}};
  return m;
}

// ---------------------------------------------------------------------------
// Irradiated tile sets

struct TileSynthOptions {
  double e2g_area = 1e5;
  double d1_fraction = 0.01; ///< A_D1 = ratio * d1_fraction * A_E2g, rest goes to A_PL
  double d2_to_d1 = 0.5;
  NoiseSpec noise{};
  std::uint64_t seed = 0;
};

struct SynthTile {
  std::string name;
  double fluence_ions_per_nm2 = 0.0;
  double excitation_ev = 0.0;
  double ratio = 0.0;
  SynthSpec raman;
  SynthSpec pl;
};

/// Raman (cm^-1) and PL (eV) spectra for every tile and excitation energy.
/// Areas are set so (A_D1 + A_PL)/A_E2g equals the truth model's ratio.
inline std::vector<SynthTile> generate_tile_set(const CalibrationModel& truth, std::span<const double> fluences,
                                                const TileSynthOptions& options = {}) {
  truth.validate();
  std::vector<SynthTile> out;
  std::uint64_t stream = 0;
  for (const auto& [el, _] : truth.per_el) {
    for (std::size_t i = 0; i < fluences.size(); ++i) {
      SynthTile t;
      t.name = "tile" + std::string(i + 1 < 10 ? "0" : "") + std::to_string(i + 1);
      t.fluence_ions_per_nm2 = fluences[i];
      t.excitation_ev = el;
      t.ratio = eval_ratio(l_d_from_fluence(fluences[i], truth.alpha, truth.beta), truth, el);
      const double a_e2g = options.e2g_area;
      const double a_d1 = t.ratio * options.d1_fraction * a_e2g;
      const double a_pl = t.ratio * (1.0 - options.d1_fraction) * a_e2g;
      using enum PeakShape;
      t.raman.grid = {AxisKind::RamanShiftCm, 200.0, 1500.0, 1301};
      t.raman.peaks = {{{Lorentzian, 1365.0, 10.0, a_e2g}, AxisKind::RamanShiftCm, "E2g"},
                       {{Lorentzian, 1290.0, 30.0, a_d1}, AxisKind::RamanShiftCm, "D1"},
                       {{Lorentzian, 450.0, 120.0, a_d1 * options.d2_to_d1}, AxisKind::RamanShiftCm, "D2"}};
      t.raman.noise = options.noise;
      t.raman.seed = options.seed * 0x9E3779B97F4A7C15ULL + (++stream);
      t.raman.excitation_ev = el;
      t.raman.label = t.name;
      t.pl.grid = {AxisKind::EnergyEv, 1.1, 2.0, 451};
      t.pl.peaks = {{{Gaussian, 1.53, 0.2, a_pl}, AxisKind::EnergyEv, "PL"}};
      t.pl.noise = options.noise;
      t.pl.seed = options.seed * 0x9E3779B97F4A7C15ULL + (++stream);
      t.pl.excitation_ev = el;
      t.pl.label = t.name;
      out.push_back(std::move(t));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Maps

/// Pixel i is placed at (i % nx, i / nx).
inline SpectralMap generate_map(std::span<const SynthSpec> pixels, std::size_t nx) {
  if (nx == 0) throw Error(Errc::Domain, "map width must be positive");
  SpectralMap map;
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    const double px = static_cast<double>(i % nx);
    const double py = static_cast<double>(i / nx);
    map.pixels.push_back({px, py, generate_spectrum(pixels[i]).spectrum});
    if (std::find(map.xs.begin(), map.xs.end(), px) == map.xs.end()) map.xs.push_back(px);
    if (std::find(map.ys.begin(), map.ys.end(), py) == map.ys.end()) map.ys.push_back(py);
  }
  return map;
}

inline void write_map(std::ostream& out, const SpectralMap& map) {
  out << "# x_pos,y_pos,axis_value,counts\n";
  out.precision(17);
  for (const auto& p : map.pixels) {
    const auto x = p.spectrum.x();
    const auto y = p.spectrum.y();
    for (std::size_t i = 0; i < x.size(); ++i) out << p.x_pos << ',' << p.y_pos << ',' << x[i] << ',' << y[i] << '\n';
  }
}

} // namespace vbquant
