// vbquant command-line front end: fit, calibrate, density, map, polar, synth.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "vbquant/vbquant.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace vbquant;

namespace {

struct Global {
  std::string out_dir = ".";
  int verbosity = 0;
};

Global g_opts;

/// Per-input failures; processing continues and the exit code reflects them.
struct Failures {
  std::vector<std::pair<std::string, std::string>> items;
  void add(const std::string& what, const std::string& msg) {
    items.emplace_back(what, msg);
    std::cerr << "error: " << what << ": " << msg << '\n';
  }
  bool empty() const { return items.empty(); }
  json to_json() const {
    auto a = json::array();
    for (const auto& [w, m] : items) a.push_back({{"input", w}, {"error", m}});
    return a;
  }
};

void log(int level, const std::string& msg) {
  if (g_opts.verbosity >= level) std::cerr << msg << '\n';
}

fs::path out_path(const std::string& name) {
  fs::path dir(g_opts.out_dir);
  fs::create_directories(dir);
  return dir / name;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw Error(Errc::Io, "cannot write " + path.string());
  out << j.dump(2) << '\n';
  log(1, "wrote " + path.string());
}

/// Files are kept as given, directories contribute their regular files with
/// a matching extension. The result is sorted so reports are order-stable.
std::vector<fs::path> expand_inputs(const std::vector<std::string>& inputs, const std::vector<std::string>& exts) {
  std::vector<fs::path> out;
  for (const auto& in : inputs) {
    const fs::path p(in);
    if (fs::is_directory(p)) {
      for (const auto& e : fs::directory_iterator(p)) {
        if (!e.is_regular_file()) continue;
        const auto name = e.path().filename().string();
        if (exts.empty() || std::any_of(exts.begin(), exts.end(), [&](const std::string& x) { return name.ends_with(x); }))
          out.push_back(e.path());
      }
    } else {
      out.push_back(p);
    }
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

const std::vector<std::string> kSpectrumExts{".csv", ".txt", ".dat", ".tsv"};

std::string fmt(double v, int prec = 6) {
  std::ostringstream s;
  s << std::setprecision(prec) << v;
  return s.str();
}

// ---------------------------------------------------------------------------
// Spectrum fitting shared by fit and density

struct SpectrumInputArgs {
  std::string preset = "auto";
  std::string axis;
  std::optional<double> excitation_ev;
  std::optional<double> excitation_nm;
  std::size_t x_column = 0;
  std::size_t y_column = 1;
  bool parallel = false;
  int baseline_degree = -1;
};

void add_spectrum_options(CLI::App* cmd, SpectrumInputArgs& a) {
  cmd->add_option("--preset", a.preset, "Peak preset: raman (cm-1), pl (eV), combined (both from one spectrum) or auto (by axis)")
      ->check(CLI::IsMember({"auto", "raman", "pl", "combined"}));
  cmd->add_option("--axis", a.axis, "Input axis kind: nm, eV or cm-1 (default: from file header or preset)");
  cmd->add_option("--excitation-ev", a.excitation_ev, "Laser excitation energy E_L in eV");
  cmd->add_option("--excitation-nm", a.excitation_nm, "Laser wavelength in nm (alternative to --excitation-ev)");
  cmd->add_option("--x-col", a.x_column, "Zero-based column of the axis values");
  cmd->add_option("--y-col", a.y_column, "Zero-based column of the counts");
  cmd->add_flag("--parallel", a.parallel, "Parallel analyzer: resolve D2 into D2a and D2b");
  cmd->add_option("--baseline-degree", a.baseline_degree,
                  "Subtract a polynomial baseline of this degree (0-3) fitted outside the preset windows");
}

std::vector<Window> preset_exclusions(Preset p) {
  std::vector<Window> w;
  for (const auto& plan : preset_windows(p, false)) w.push_back(plan.window);
  return w;
}

PeakFitResult merge_results(PeakFitResult a, const PeakFitResult& b) {
  const auto na = a.covariance.rows();
  const auto nb = b.covariance.rows();
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(na + nb, na + nb);
  cov.topLeftCorner(na, na) = a.covariance;
  cov.bottomRightCorner(nb, nb) = b.covariance;
  std::size_t sa = 0, sb = 0;
  for (const auto& w : a.windows) sa += w.samples;
  for (const auto& w : b.windows) sb += w.samples;
  for (auto w : b.windows) {
    w.first_param += static_cast<std::size_t>(na);
    a.windows.push_back(w);
  }
  a.peaks.insert(a.peaks.end(), b.peaks.begin(), b.peaks.end());
  a.covariance = cov;
  const double ss = a.residual_rms * a.residual_rms * static_cast<double>(sa) +
                    b.residual_rms * b.residual_rms * static_cast<double>(sb);
  a.residual_rms = sa + sb ? std::sqrt(ss / static_cast<double>(sa + sb)) : 0.0;
  a.iterations += b.iterations;
  a.converged = a.converged && b.converged;
  return a;
}

PeakFitResult fit_preset(const Spectrum& s, Preset p, const SpectrumInputArgs& a) {
  const AxisKind want = p == Preset::HbnRaman ? AxisKind::RamanShiftCm : AxisKind::EnergyEv;
  Spectrum work = convert_axis(s, want);
  if (a.baseline_degree >= 0) {
    BaselineSpec spec;
    spec.degree = a.baseline_degree;
    spec.exclude = preset_exclusions(p);
    work = subtract_baseline(work, spec).first;
  }
  ExtractOptions opts;
  opts.parallel_polarization = a.parallel;
  return extract_standard_peaks(work, p, opts);
}

FitReport fit_spectrum_file(const fs::path& path, const SpectrumInputArgs& a) {
  if (!fs::exists(path)) throw Error(Errc::Io, "no such file: " + path.string());
  const auto hints = read_header_hints(path);
  AcquisitionMeta meta;
  if (!a.axis.empty())
    meta.axis_kind = parse_axis_kind(a.axis);
  else if (hints.axis_kind)
    meta.axis_kind = *hints.axis_kind;
  else
    meta.axis_kind = a.preset == "pl"         ? AxisKind::EnergyEv
                     : a.preset == "combined" ? AxisKind::WavelengthNm
                                              : AxisKind::RamanShiftCm;
  if (a.excitation_ev)
    meta.excitation_ev = *a.excitation_ev;
  else if (a.excitation_nm)
    meta.excitation_ev = excitation_ev_from_nm(*a.excitation_nm);
  else
    meta.excitation_ev = hints.excitation_ev;
  meta.label = hints.label.value_or(path.stem().string());
  const auto loaded = load_spectrum(path, {a.x_column, a.y_column, 0}, meta);
  if (loaded.dropped_rows) log(0, path.string() + ": dropped " + std::to_string(loaded.dropped_rows) + " non-finite rows");

  std::string preset = a.preset;
  if (preset == "auto")
    preset = meta.axis_kind == AxisKind::RamanShiftCm ? "raman"
             : meta.axis_kind == AxisKind::EnergyEv   ? "pl"
                                                      : "combined";
  FitReport r;
  r.source = path.string();
  r.label = meta.label;
  r.preset = preset;
  r.excitation_ev = meta.excitation_ev;
  if (preset == "raman")
    r.result = fit_preset(loaded.spectrum, Preset::HbnRaman, a);
  else if (preset == "pl")
    r.result = fit_preset(loaded.spectrum, Preset::HbnPl, a);
  else
    r.result = merge_results(fit_preset(loaded.spectrum, Preset::HbnRaman, a),
                             fit_preset(loaded.spectrum, Preset::HbnPl, a));
  return r;
}

/// Peaks of all reports sharing (label, E_L), e.g. separate Raman and PL files of one tile.
struct TileKey {
  std::string label;
  double el = 0.0;
  bool operator<(const TileKey& o) const { return std::tie(label, el) < std::tie(o.label, o.el); }
};

std::map<TileKey, std::vector<FittedPeak>> group_reports(const std::vector<FitReport>& reports, Failures& fail) {
  std::map<TileKey, std::vector<FittedPeak>> out;
  for (const auto& r : reports) {
    if (!r.excitation_ev) {
      fail.add(r.source, "report carries no excitation energy");
      continue;
    }
    auto& v = out[{r.label, *r.excitation_ev}];
    v.insert(v.end(), r.result.peaks.begin(), r.result.peaks.end());
  }
  return out;
}

// ---------------------------------------------------------------------------
// fit

struct FitArgs {
  std::vector<std::string> inputs;
  SpectrumInputArgs spec;
  std::string summary = "fit_summary.csv";
};

double peak_value(const PeakFitResult& r, const char* id, bool width) {
  const auto* p = r.find(id);
  if (!p || !p->present) return std::nan("");
  return width ? p->model.fwhm : p->model.area;
}

int cmd_fit(const FitArgs& a) {
  Failures fail;
  const auto files = expand_inputs(a.inputs, kSpectrumExts);
  if (files.empty()) {
    std::cerr << "error: no input files\n";
    return 2;
  }
  const char* ids[] = {"D2", "D2a", "D2b", "D1", "E2g", "PL"};
  std::ofstream table(out_path(a.summary));
  table << "label,source,excitation_ev";
  for (const char* id : ids) table << ",A_" << id;
  for (const char* id : ids) table << ",G_" << id;
  table << '\n';
  std::cout << std::left << std::setw(20) << "label" << std::setw(14) << "A_D1" << std::setw(14) << "A_E2g"
            << std::setw(14) << "A_PL" << std::setw(12) << "G_D1" << std::setw(12) << "G_E2g" << "G_PL\n";
  // report names: file stem, prefixed by the parent directory when stems repeat
  std::map<std::string, int> stem_count;
  for (const auto& f : files) ++stem_count[f.stem().string()];
  json index = json::array();
  for (const auto& f : files) {
    try {
      const auto r = fit_spectrum_file(f, a.spec);
      std::string name = f.stem().string();
      if (stem_count[name] > 1) name = f.parent_path().filename().string() + "_" + name;
      const auto report_path = out_path(name + ".fit.json");
      write_json(report_path, fit_report_to_json(r));
      index.push_back({{"source", f.string()}, {"label", r.label}, {"report", report_path.string()}});
      table << r.label << ',' << f.string() << ',' << (r.excitation_ev ? fmt(*r.excitation_ev, 10) : "");
      table << std::setprecision(12);
      for (const char* id : ids) table << ',' << peak_value(r.result, id, false);
      for (const char* id : ids) table << ',' << peak_value(r.result, id, true);
      table << '\n';
      std::cout << std::setw(20) << r.label << std::setw(14) << fmt(peak_value(r.result, "D1", false))
                << std::setw(14) << fmt(peak_value(r.result, "E2g", false)) << std::setw(14)
                << fmt(peak_value(r.result, "PL", false)) << std::setw(12) << fmt(peak_value(r.result, "D1", true))
                << std::setw(12) << fmt(peak_value(r.result, "E2g", true)) << fmt(peak_value(r.result, "PL", true))
                << '\n';
      for (const auto& p : r.result.peaks)
        if (!p.present) log(1, r.label + ": " + p.identity + " absent (" + p.note + ")");
    } catch (const std::exception& e) {
      fail.add(f.string(), e.what());
    }
  }
  write_json(out_path("fit_index.json"), {{"reports", index}, {"errors", fail.to_json()}});
  std::cout << files.size() - fail.items.size() << "/" << files.size() << " spectra fitted\n";
  return fail.empty() ? 0 : 1;
}

// ---------------------------------------------------------------------------
// calibrate

struct CalibrateArgs {
  std::vector<std::string> ratio_tables;
  std::vector<std::string> reports;
  std::string fluence_table;
  std::string mode = "combined";
  double r_s = kDefaultStructuralRadiusNm;
  std::optional<double> seed_r_a, seed_alpha, seed_beta;
  bool unit_weights = false;
  bool allow_narrow = false;
  std::string out = "calibration.json";
};

std::vector<RatioObservation> observations_from_reports(const CalibrateArgs& a, RatioMode mode, Failures& fail) {
  if (a.fluence_table.empty()) throw Error(Errc::InsufficientData, "fit reports need --fluence-table");
  const auto fluences = load_fluence_table(a.fluence_table);
  std::map<std::string, double> by_tile;
  for (const auto& e : fluences) by_tile[e.tile] = e.fluence_ions_per_nm2;
  std::vector<FitReport> reports;
  for (const auto& f : expand_inputs(a.reports, {".fit.json"})) {
    try {
      reports.push_back(read_fit_report_file(f));
    } catch (const std::exception& e) {
      fail.add(f.string(), e.what());
    }
  }
  std::vector<RatioObservation> obs;
  for (const auto& [key, peaks] : group_reports(reports, fail)) {
    const auto it = by_tile.find(key.label);
    if (it == by_tile.end()) {
      fail.add(key.label, "tile not found in fluence table");
      continue;
    }
    try {
      const auto rv = spectral_ratio(peaks, mode);
      obs.push_back({it->second, key.el, rv.ratio, rv.sigma, mode});
    } catch (const std::exception& e) {
      fail.add(key.label, e.what());
    }
  }
  return obs;
}

int cmd_calibrate(const CalibrateArgs& a) {
  Failures fail;
  const RatioMode mode = parse_ratio_mode(a.mode);
  std::vector<RatioObservation> obs;
  try {
    for (const auto& t : a.ratio_tables) {
      auto part = load_ratio_table(t, mode);
      obs.insert(obs.end(), part.begin(), part.end());
    }
    if (!a.reports.empty()) {
      auto part = observations_from_reports(a, mode, fail);
      obs.insert(obs.end(), part.begin(), part.end());
    }
    if (a.unit_weights)
      for (auto& o : obs) o.ratio_sigma = 0.0;

    CalibrationFitOptions opts;
    opts.r_s_nm = a.r_s;
    opts.allow_narrow_activation = a.allow_narrow;
    if (a.seed_r_a || a.seed_alpha || a.seed_beta)
      opts.seed = CalibrationSeed{a.seed_r_a.value_or(2.5 * a.r_s), a.seed_alpha.value_or(4.0), a.seed_beta.value_or(0.6)};
    auto fit = fit_calibration(obs, opts);
    fit.model.meta["generator"] = "vbquant calibrate";
    fit.model.meta["observations"] = std::to_string(fit.observations);
    fit.model.meta["weighted_cost"] = fmt(fit.cost, 10);
    fit.model.meta["reduced_chi2"] = fmt(fit.reduced_chi2, 10);
    fit.model.meta["stop_reason"] = fit.stop_reason;
    fit.model.meta["covariance_basis"] = fit.absolute_sigma ? "absolute_sigma" : "residual_scaled";
    const auto path = out_path(a.out);
    write_calibration_file(path, fit.model);
    {
      std::ofstream t(out_path(fs::path(a.out).stem().string() + "_observations.csv"));
      write_ratio_table(t, obs);
    }
    const auto names = calibration_parameter_names(fit.model);
    std::vector<double> values{fit.model.r_a_nm, fit.model.alpha, fit.model.beta};
    for (const auto& [el, c] : fit.model.per_el) {
      values.push_back(c.c_a);
      values.push_back(c.c_s);
    }
    std::cout << "calibration (" << ratio_mode_name(mode) << ", " << obs.size() << " observations, r_s = " << a.r_s
              << " nm, " << fit.iterations << " iterations, " << fit.stop_reason << ", weighted cost "
              << fmt(fit.cost, 4) << ")\n";
    for (std::size_t i = 0; i < names.size(); ++i)
      std::cout << "  " << std::left << std::setw(12) << names[i] << fmt(values[i], 8) << " +/- "
                << fmt(fit.model.sigma(i), 3) << '\n';
    std::cout << "wrote " << path.string() << '\n';
  } catch (const std::exception& e) {
    fail.add("calibrate", e.what());
    return 1;
  }
  return fail.empty() ? 0 : 1;
}

// ---------------------------------------------------------------------------
// density

struct DensityArgs {
  std::string calibration;
  std::vector<double> ratios;
  std::vector<double> fluences;
  std::vector<std::string> inputs;
  std::optional<double> el;
  std::string branch = "low";
  SpectrumInputArgs spec;
  std::string out = "density.json";
};

json estimate_json(const DensityEstimate& d) {
  return {{"l_d_nm", d.l_d_nm},
          {"density_cm3", d.density_cm3},
          {"ci68", {d.ci68_lo, d.ci68_hi}},
          {"branch", std::string(branch_name(d.branch))},
          {"valid", d.valid},
          {"reason", d.reason}};
}

int cmd_density(const DensityArgs& a) {
  Failures fail;
  CalibrationModel m;
  try {
    m = read_calibration_file(a.calibration);
  } catch (const std::exception& e) {
    fail.add(a.calibration, e.what());
    return 1;
  }
  const Branch branch = a.branch == "high" ? Branch::HighDensity : Branch::LowDensity;
  auto pick_el = [&](std::optional<double> from_input) -> double {
    if (a.el) return *a.el;
    if (from_input) return *from_input;
    if (m.per_el.size() == 1) return m.per_el.begin()->first;
    throw Error(Errc::Domain, "calibration has several E_L entries; pass --el");
  };

  json estimates = json::array();
  std::cout << std::left << std::setw(24) << "input" << std::setw(12) << "ratio" << std::setw(10) << "E_L"
            << std::setw(12) << "L_D[nm]" << std::setw(14) << "n_D[cm-3]" << "status\n";
  auto invert = [&](const std::string& what, double ratio, double sigma, std::optional<double> el_hint) {
    try {
      const double el = pick_el(el_hint);
      DensityEstimate d;
      try {
        d = invert_ratio(ratio, m, el, {branch, sigma});
      } catch (const Error& e) {
        if (e.code() != Errc::AboveMaximum) throw;
        d.valid = false;
        d.branch = branch;
        d.reason = e.what();
        d.l_d_nm = std::nan("");
        d.density_cm3 = std::nan("");
        d.ci68_lo = d.ci68_hi = std::nan("");
      }
      json j = {{"input", what}, {"ratio", ratio}, {"ratio_sigma", sigma}, {"el_ev", el}};
      j.update(estimate_json(d));
      estimates.push_back(j);
      std::cout << std::setw(24) << what << std::setw(12) << fmt(ratio) << std::setw(10) << fmt(el, 4)
                << std::setw(12) << fmt(d.l_d_nm) << std::setw(14) << fmt(d.density_cm3)
                << (d.valid ? "ok" : d.reason) << '\n';
    } catch (const std::exception& e) {
      fail.add(what, e.what());
    }
  };

  for (double r : a.ratios) invert("ratio=" + fmt(r), r, 0.0, std::nullopt);

  std::vector<FitReport> reports;
  for (const auto& f : expand_inputs(a.inputs, {".fit.json"})) {
    try {
      reports.push_back(f.extension() == ".json" ? read_fit_report_file(f) : fit_spectrum_file(f, a.spec));
    } catch (const std::exception& e) {
      fail.add(f.string(), e.what());
    }
  }
  for (const auto& [key, peaks] : group_reports(reports, fail)) {
    try {
      const auto rv = spectral_ratio(peaks, m.mode);
      invert(key.label, rv.ratio, rv.sigma, key.el);
    } catch (const std::exception& e) {
      fail.add(key.label, e.what());
    }
  }

  json predictions = json::array();
  json power = nullptr;
  if (!a.fluences.empty()) {
    try {
      const auto ests = density_vs_fluence(m, a.fluences, a.el);
      std::vector<std::pair<double, double>> pts;
      for (std::size_t i = 0; i < ests.size(); ++i) {
        json j = {{"fluence_ions_per_nm2", a.fluences[i]}};
        j.update(estimate_json(ests[i]));
        predictions.push_back(j);
        pts.emplace_back(a.fluences[i], ests[i].density_cm3);
      }
      if (pts.size() >= 3) {
        const auto pl = fit_power_law(pts);
        power = {{"c", pl.c}, {"gamma", pl.gamma}, {"sigma_c", pl.sigma_c}, {"sigma_gamma", pl.sigma_gamma}};
        std::cout << "power law n_D = C * F^gamma: C = " << fmt(pl.c) << ", gamma = " << fmt(pl.gamma, 10) << '\n';
      }
    } catch (const std::exception& e) {
      fail.add("fluences", e.what());
    }
  }

  json report = {{"calibration", a.calibration},
                 {"mode", std::string(ratio_mode_name(m.mode))},
                 {"branch", std::string(branch_name(branch))},
                 {"estimates", estimates},
                 {"fluence_predictions", predictions},
                 {"power_law", power},
                 {"errors", fail.to_json()}};
  try {
    write_json(out_path(a.out), report);
  } catch (const std::exception& e) {
    fail.add(a.out, e.what());
  }
  return fail.empty() ? 0 : 1;
}

// ---------------------------------------------------------------------------
// map

struct MapArgs {
  std::string input;
  double lo = 1.37;
  double hi = 1.65;
  std::string axis = "eV";
  std::string window_axis;
  std::optional<double> excitation_ev;
  bool normalize = false;
  std::string out = "map";
};

int cmd_map(const MapArgs& a) {
  Failures fail;
  SpectralMap map;
  try {
    if (!fs::exists(a.input)) throw Error(Errc::Io, "no such file: " + a.input);
    map = load_map(a.input, {parse_axis_kind(a.axis), a.excitation_ev, {}});
  } catch (const std::exception& e) {
    fail.add(a.input, e.what());
    return 1;
  }
  const AxisKind wax = a.window_axis.empty() ? parse_axis_kind(a.axis) : parse_axis_kind(a.window_axis);
  std::map<std::pair<double, double>, double> values;
  for (const auto& p : map.pixels) {
    const std::string where = "pixel (" + fmt(p.x_pos) + ", " + fmt(p.y_pos) + ")";
    try {
      values[{p.x_pos, p.y_pos}] = integrate_window(convert_axis(p.spectrum, wax), a.lo, a.hi);
    } catch (const std::exception& e) {
      fail.add(where, e.what());
    }
  }
  double vmin = std::numeric_limits<double>::infinity();
  double vmax = -vmin;
  for (const auto& [_, v] : values) {
    vmin = std::min(vmin, v);
    vmax = std::max(vmax, v);
  }
  const double scale = (a.normalize && vmax != 0.0 && std::isfinite(vmax)) ? vmax : 1.0;

  std::ofstream grid(out_path(a.out + "_grid.csv"));
  grid << "# window=" << a.lo << ":" << a.hi << " axis=" << axis_name(wax) << " normalized=" << (a.normalize ? 1 : 0)
       << " min=" << std::setprecision(17) << (values.empty() ? std::nan("") : vmin)
       << " max=" << (values.empty() ? std::nan("") : vmax) << '\n';
  grid << "# rows: y_pos ascending; columns: x_pos ascending\n";
  json rows = json::array();
  for (double y : map.ys) {
    json row = json::array();
    for (std::size_t i = 0; i < map.xs.size(); ++i) {
      const auto it = values.find({map.xs[i], y});
      const double v = it == values.end() ? std::nan("") : it->second / scale;
      grid << (i ? "," : "") << v;
      row.push_back(it == values.end() ? json(nullptr) : json(v));
    }
    grid << '\n';
    rows.push_back(row);
  }
  json report = {{"input", a.input},
                 {"window", {{"lo", a.lo}, {"hi", a.hi}, {"axis", std::string(axis_name(wax))}}},
                 {"normalized", a.normalize},
                 {"min", values.empty() ? json(nullptr) : json(vmin)},
                 {"max", values.empty() ? json(nullptr) : json(vmax)},
                 {"x_positions", map.xs},
                 {"y_positions", map.ys},
                 {"values", rows},
                 {"dropped_rows", map.dropped_rows},
                 {"errors", fail.to_json()}};
  write_json(out_path(a.out + ".json"), report);
  std::cout << values.size() << "/" << map.pixels.size() << " pixels integrated over [" << a.lo << ", " << a.hi
            << "] " << axis_name(wax) << "; min " << fmt(vmin) << ", max " << fmt(vmax) << '\n';
  return fail.empty() ? 0 : 1;
}

// ---------------------------------------------------------------------------
// polar

struct PolarArgs {
  std::vector<std::string> inputs;
  std::string feature;
  std::string config = "parallel";
  double min_depth = PolarFitOptions{}.min_modulation_depth;
  std::string out = "polar.json";
};

int cmd_polar(const PolarArgs& a) {
  Failures fail;
  const auto cfg = parse_analyzer(a.config);
  std::map<std::string, PolarSeries> series;
  for (const auto& f : expand_inputs(a.inputs, kSpectrumExts)) {
    try {
      if (!fs::exists(f)) throw Error(Errc::Io, "no such file: " + f.string());
      const std::string def = a.feature.empty() ? f.stem().string() : a.feature;
      for (auto& [name, s] : load_polar_series(f, cfg, def)) {
        if (series.count(name)) throw Error(Errc::Parse, "feature " + name + " appears in more than one file");
        series[name] = std::move(s);
      }
    } catch (const std::exception& e) {
      fail.add(f.string(), e.what());
    }
  }
  std::map<std::string, PolarFit> fits;
  json fit_json = json::array();
  for (const auto& [name, s] : series) {
    try {
      const auto f = fit_polar(s, {a.min_depth});
      fits[name] = f;
      fit_json.push_back({{"feature", name},
                          {"model", std::string(polar_model_name(f.model))},
                          {"a", f.a},
                          {"b", f.b},
                          {"theta0_deg", f.theta0_deg},
                          {"modulation_depth", f.modulation_depth},
                          {"level", f.level},
                          {"rss_isotropic", f.rss_isotropic},
                          {"rss_cos2", f.rss_cos2},
                          {"aicc_isotropic", f.aicc_isotropic},
                          {"aicc_cos2", f.aicc_cos2},
                          {"samples", f.samples}});
      std::ofstream plot(out_path("polar_" + name + ".csv"));
      write_polar_plot(plot, s, f);
    } catch (const std::exception& e) {
      fail.add(name, e.what());
    }
  }
  const auto report = classify_modes(fits);
  json cls = json::array();
  for (const auto& e : report.entries) {
    cls.push_back({{"feature", e.feature},
                   {"model", std::string(polar_model_name(e.model))},
                   {"modulation_depth", e.modulation_depth},
                   {"expected", e.expected ? json(std::string(polar_model_name(*e.expected))) : json(nullptr)}});
    std::cout << std::left << std::setw(8) << e.feature << std::setw(12) << polar_model_name(e.model) << "depth "
              << fmt(e.modulation_depth, 4) << '\n';
  }
  for (const auto& w : report.warnings) std::cout << "warning: " << w << '\n';
  write_json(out_path(a.out), {{"fits", fit_json},
                               {"classification", cls},
                               {"warnings", report.warnings},
                               {"errors", fail.to_json()}});
  return fail.empty() ? 0 : 1;
}

// ---------------------------------------------------------------------------
// synth

struct SynthArgs {
  std::uint64_t seed = 42;
  std::string noise = "none";
  double sigma = 0.0;
  double relative_noise = 0.0;
  std::string fluence_set = "s1";
  std::vector<double> fluences;
  double alpha = 4.27, beta = 0.6, r_a = 2.42, r_s = 1.0;
  std::string preset = "raman";
  std::size_t nx = 4;
};

CalibrationModel synth_truth(const SynthArgs& a) {
  auto m = reference_truth_model();
  m.r_s_nm = a.r_s;
  m.r_a_nm = a.r_a;
  m.alpha = a.alpha;
  m.beta = a.beta;
  m.meta["generator"] = "vbquant synth";
  return m;
}

std::vector<double> synth_fluences(const SynthArgs& a) {
  if (!a.fluences.empty()) return a.fluences;
  return a.fluence_set == "s2" ? kTileFluenceSet2 : kTileFluenceSet1;
}

NoiseSpec synth_noise(const SynthArgs& a) {
  if (a.noise == "gaussian") return {NoiseKind::Gaussian, a.sigma};
  if (a.noise == "poisson") return {NoiseKind::Poisson, 0.0};
  return {};
}

std::string el_tag(double el) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(2) << el;
  return s.str();
}

int synth_tiles(const SynthArgs& a) {
  const auto truth = synth_truth(a);
  const auto fl = synth_fluences(a);
  TileSynthOptions opts;
  opts.noise = synth_noise(a);
  opts.seed = a.seed;
  const auto tiles = generate_tile_set(truth, fl, opts);
  {
    std::ofstream ft(out_path("fluences.csv"));
    ft << "tile,fluence_ions_per_nm2\n" << std::setprecision(17);
    for (std::size_t i = 0; i < fl.size(); ++i) ft << tiles[i].name << ',' << fl[i] << '\n';
  }
  std::vector<RatioObservation> truth_obs;
  for (const auto& t : tiles) {
    const auto dir = fs::path("el" + el_tag(t.excitation_ev));
    fs::create_directories(fs::path(g_opts.out_dir) / dir);
    write_synth_spectrum(out_path((dir / (t.name + "_raman.csv")).string()), generate_spectrum(t.raman));
    write_synth_spectrum(out_path((dir / (t.name + "_pl.csv")).string()), generate_spectrum(t.pl));
    truth_obs.push_back({t.fluence_ions_per_nm2, t.excitation_ev, t.ratio, 0.0, RatioMode::Combined});
  }
  std::ofstream rt(out_path("truth_ratios.csv"));
  write_ratio_table(rt, truth_obs);
  write_calibration_file(out_path("truth_calibration.json"), truth);
  std::cout << "wrote " << tiles.size() * 2 << " spectra for " << fl.size() << " tiles x " << truth.per_el.size()
            << " excitation energies to " << g_opts.out_dir << '\n';
  return 0;
}

int synth_calibration(const SynthArgs& a) {
  const auto truth = synth_truth(a);
  const auto fl = synth_fluences(a);
  CalibrationSynthOptions opts;
  opts.relative_noise = a.relative_noise;
  opts.seed = a.seed;
  const auto obs = generate_calibration_dataset(truth, fl, {}, opts);
  std::ofstream out(out_path("ratios.csv"));
  write_ratio_table(out, obs);
  write_calibration_file(out_path("truth_calibration.json"), truth);
  std::cout << "wrote " << obs.size() << " observations\n";
  return 0;
}

int synth_polar(const SynthArgs& a) {
  const auto set = paper_like_polar_set(a.relative_noise, a.seed);
  std::ofstream out(out_path("polar_series.csv"));
  write_polar_series(out, set);
  std::cout << "wrote " << set.size() << " polar series\n";
  return 0;
}

SynthSpec table1_spectrum(const SynthArgs& a, double el) {
  using enum PeakShape;
  SynthSpec s;
  s.seed = a.seed;
  s.noise = synth_noise(a);
  s.excitation_ev = el;
  if (a.preset == "pl") {
    s.grid = {AxisKind::EnergyEv, 1.1, 2.0, 451};
    s.peaks = {{{Gaussian, 1.53, 0.2, 2000.0}, AxisKind::EnergyEv, "PL"}};
    s.label = "synthetic_pl";
  } else {
    s.grid = {AxisKind::RamanShiftCm, 200.0, 1500.0, 1301};
    s.peaks = {{{Lorentzian, 1365.0, 10.0, 1e5}, AxisKind::RamanShiftCm, "E2g"},
               {{Lorentzian, 1290.0, 30.0, 2e4}, AxisKind::RamanShiftCm, "D1"},
               {{Lorentzian, 450.0, 120.0, 3e4}, AxisKind::RamanShiftCm, "D2"}};
    s.label = "synthetic_raman";
  }
  return s;
}

int synth_spectrum(const SynthArgs& a) {
  const auto spec = table1_spectrum(a, 2.33);
  const auto path = out_path(spec.label + ".csv");
  write_synth_spectrum(path, generate_spectrum(spec));
  std::cout << "wrote " << path.string() << '\n';
  return 0;
}

/// nx-wide grid of tiles; pixel i carries the PL band of tile i (eV axis).
int synth_map(const SynthArgs& a) {
  const auto truth = synth_truth(a);
  const auto fl = synth_fluences(a);
  std::vector<SynthSpec> pixels;
  std::ofstream tt(out_path("map_truth.csv"));
  tt << "x_pos,y_pos,fluence_ions_per_nm2,pl_area\n" << std::setprecision(17);
  for (std::size_t i = 0; i < fl.size(); ++i) {
    const double ratio = eval_ratio(l_d_from_fluence(fl[i], truth.alpha, truth.beta), truth, 2.33);
    SynthSpec s;
    s.grid = {AxisKind::EnergyEv, 1.1, 2.0, 451};
    s.peaks = {{{PeakShape::Gaussian, 1.53, 0.2, 100.0 * ratio}, AxisKind::EnergyEv, "PL"}};
    s.noise = synth_noise(a);
    s.seed = a.seed + i;
    s.excitation_ev = 2.33;
    pixels.push_back(s);
    tt << i % a.nx << ',' << i / a.nx << ',' << fl[i] << ',' << 100.0 * ratio << '\n';
  }
  std::ofstream out(out_path("map.csv"));
  write_map(out, generate_map(pixels, a.nx));
  std::cout << "wrote " << pixels.size() << "-pixel map\n";
  return 0;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"vbquant: boron-vacancy defect density from Raman and PL spectra"};
  app.require_subcommand(1);
  app.set_config("--config", "", "TOML/INI config file; command-line flags override it")->envname("VBQUANT_CONFIG");
  app.add_option("--out-dir,-o", g_opts.out_dir, "Directory for reports and outputs");
  app.add_flag("-v,--verbose", g_opts.verbosity, "Increase verbosity");

  FitArgs fit;
  auto* c_fit = app.add_subcommand("fit", "Fit the hBN peak presets to spectra");
  c_fit->add_option("inputs", fit.inputs, "Spectrum files or directories")->required();
  add_spectrum_options(c_fit, fit.spec);
  c_fit->add_option("--summary", fit.summary, "Name of the aggregate table");

  CalibrateArgs cal;
  auto* c_cal = app.add_subcommand("calibrate", "Fit the activation model to ratio observations");
  c_cal->add_option("--ratios", cal.ratio_tables, "Ratio tables: fluence, el_ev, ratio[, sigma]");
  c_cal->add_option("--reports", cal.reports, "Fit reports (files or directories)");
  c_cal->add_option("--fluence-table", cal.fluence_table, "Tile, fluence table for fit reports");
  c_cal->add_option("--mode", cal.mode, "Ratio: combined, d1 or pl")->check(CLI::IsMember({"combined", "d1", "pl"}));
  c_cal->add_option("--r-s", cal.r_s, "Fixed structural radius r_S in nm");
  c_cal->add_option("--seed-r-a", cal.seed_r_a, "Starting r_A (nm); disables the start grid");
  c_cal->add_option("--seed-alpha", cal.seed_alpha, "Starting alpha");
  c_cal->add_option("--seed-beta", cal.seed_beta, "Starting beta");
  c_cal->add_flag("--unit-weights", cal.unit_weights, "Ignore ratio uncertainties");
  c_cal->add_flag("--allow-narrow-activation", cal.allow_narrow, "Also search the mirror branch r_A^2 < 2 r_S^2");
  c_cal->add_option("--out", cal.out, "Calibration file name");

  DensityArgs den;
  auto* c_den = app.add_subcommand("density", "Estimate defect density from ratios or spectra");
  c_den->add_option("--calibration", den.calibration, "Calibration file")->required();
  c_den->add_option("--ratio", den.ratios, "Measured ratio values");
  c_den->add_option("--fluence", den.fluences, "Fluences (ions/nm^2) for predicted densities");
  c_den->add_option("inputs", den.inputs, "Fit reports (.json) or spectra");
  c_den->add_option("--el", den.el, "Excitation energy key in eV");
  c_den->add_option("--branch", den.branch, "Inversion branch")->check(CLI::IsMember({"low", "high"}));
  add_spectrum_options(c_den, den.spec);
  c_den->add_option("--out", den.out, "Report file name");

  MapArgs mp;
  auto* c_map = app.add_subcommand("map", "Integrate a hyperspectral map over a window");
  c_map->add_option("input", mp.input, "Map file: x_pos, y_pos, axis_value, counts")->required();
  c_map->add_option("--window", [&](const CLI::results_t& r) {
          if (r.size() != 2) return false;
          mp.lo = std::stod(r[0]);
          mp.hi = std::stod(r[1]);
          return true;
        }, "Integration window lo hi (default 1.37 1.65)")
      ->expected(2);
  c_map->add_option("--axis", mp.axis, "Axis kind of the map file");
  c_map->add_option("--window-axis", mp.window_axis, "Axis kind of the window (default: map axis)");
  c_map->add_option("--excitation-ev", mp.excitation_ev, "E_L for Raman-shift conversions");
  c_map->add_flag("--normalize", mp.normalize, "Divide by the map maximum");
  c_map->add_option("--out", mp.out, "Output base name");

  PolarArgs pol;
  auto* c_pol = app.add_subcommand("polar", "Classify polarization series");
  c_pol->add_option("inputs", pol.inputs, "Series files: theta_deg, intensity[, feature]")->required();
  c_pol->add_option("--feature", pol.feature, "Feature tag for two-column files (default: file stem)");
  c_pol->add_option("--analyzer", pol.config, "Analyzer: parallel or perpendicular");
  c_pol->add_option("--min-depth", pol.min_depth, "Minimum modulation depth for a cos^2 verdict");
  c_pol->add_option("--out", pol.out, "Report file name");

  SynthArgs syn;
  auto* c_syn = app.add_subcommand("synth", "Generate synthetic datasets with known truth");
  c_syn->require_subcommand(1);
  c_syn->add_option("--seed", syn.seed, "Generator seed");
  c_syn->add_option("--noise", syn.noise, "Spectrum noise")->check(CLI::IsMember({"none", "gaussian", "poisson"}));
  c_syn->add_option("--sigma", syn.sigma, "Gaussian noise sigma");
  c_syn->add_option("--relative-noise", syn.relative_noise, "Multiplicative noise for ratios and polar series");
  c_syn->add_option("--fluence-set", syn.fluence_set, "Tile fluences: s1 or s2")->check(CLI::IsMember({"s1", "s2"}));
  c_syn->add_option("--fluences", syn.fluences, "Explicit fluences (ions/nm^2)");
  c_syn->add_option("--alpha", syn.alpha, "Truth alpha");
  c_syn->add_option("--beta", syn.beta, "Truth beta");
  c_syn->add_option("--r-a", syn.r_a, "Truth r_A (nm)");
  c_syn->add_option("--r-s", syn.r_s, "Truth r_S (nm)");
  auto* s_tiles = c_syn->add_subcommand("tiles", "Raman and PL spectra per tile and excitation energy");
  auto* s_cal = c_syn->add_subcommand("calibration", "Ratio observations");
  auto* s_pol = c_syn->add_subcommand("polar", "Polarization series of the hBN features");
  auto* s_spec = c_syn->add_subcommand("spectrum", "One spectrum with the standard peak positions");
  s_spec->add_option("--preset", syn.preset, "raman or pl")->check(CLI::IsMember({"raman", "pl"}));
  auto* s_map = c_syn->add_subcommand("map", "PL map with one pixel per tile");
  s_map->add_option("--nx", syn.nx, "Map width in pixels")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*c_fit) return cmd_fit(fit);
    if (*c_cal) return cmd_calibrate(cal);
    if (*c_den) return cmd_density(den);
    if (*c_map) return cmd_map(mp);
    if (*c_pol) return cmd_polar(pol);
    if (*s_tiles) return synth_tiles(syn);
    if (*s_cal) return synth_calibration(syn);
    if (*s_pol) return synth_polar(syn);
    if (*s_spec) return synth_spectrum(syn);
    if (*s_map) return synth_map(syn);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
