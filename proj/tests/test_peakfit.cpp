#include <cmath>
#include <numbers>
#include <vector>

#include <gtest/gtest.h>

#include "vbquant/peakfit.hpp"
#include "vbquant/synth.hpp"

using namespace vbquant;

namespace {

std::vector<double> linspace(double lo, double hi, std::size_t n) {
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
  return v;
}

Spectrum sample(const std::vector<PeakModel>& peaks, const std::vector<double>& x, double offset = 0.0) {
  std::vector<double> y;
  for (double xi : x) y.push_back(evaluate_peaks(peaks, xi) + offset);
  return Spectrum(AxisKind::RamanShiftCm, x, y);
}

/// Height for which the counting SNR at the apex, H / sqrt(H + B), is `snr`.
double height_for_snr(double snr, double background) {
  const double s2 = snr * snr;
  return 0.5 * (s2 + std::sqrt(s2 * s2 + 4.0 * s2 * background));
}

double lorentz_area_for_height(double h, double fwhm) { return h * std::numbers::pi * fwhm / 2.0; }

} // namespace

TEST(PeakModel, AreaParameterization) {
  const PeakModel l{PeakShape::Lorentzian, 0.0, 2.0, 5.0};
  EXPECT_NEAR(l.height(), 2.0 * 5.0 / (std::numbers::pi * 2.0), 1e-15);
  EXPECT_NEAR(l(1.0), l.height() / 2.0, 1e-15);
  const PeakModel g{PeakShape::Gaussian, 0.0, 2.0, 5.0};
  EXPECT_NEAR(g(1.0), g.height() / 2.0, 1e-14);
}

TEST(PeakModel, JacobianSinglePeaks) {
  const auto x = linspace(1300, 1430, 400);
  for (auto shape : {PeakShape::Lorentzian, PeakShape::Gaussian}) {
    const std::vector<PeakModel> p{{shape, 1365.0, 10.0, 1000.0}};
    EXPECT_LT(jacobian_check(p, x), 1e-6) << shape_name(shape);
  }
}

TEST(PeakModel, JacobianFourPeakBlend) {
  const auto x = linspace(200, 1500, 1301);
  const std::vector<PeakModel> p{{PeakShape::Lorentzian, 1365, 10, 1e5},
                                 {PeakShape::Lorentzian, 1290, 30, 300},
                                 {PeakShape::Lorentzian, 459, 138, 150},
                                 {PeakShape::Gaussian, 352, 191, 120}};
  EXPECT_LT(jacobian_check(p, x), 1e-5);
}

TEST(PeakModel, ValidateRejectsBadParameters) {
  EXPECT_THROW(validate_peak({PeakShape::Lorentzian, 0, 0, 1}), Error);
  EXPECT_THROW(validate_peak({PeakShape::Lorentzian, 0, 1, -1}), Error);
  EXPECT_THROW(validate_peak({PeakShape::Lorentzian, NAN, 1, 1}), Error);
}

TEST(FitPeaks, RecoversLorentzianFromOffsetSeed) {
  const auto x = linspace(1300, 1430, 261);
  const PeakModel truth{PeakShape::Lorentzian, 1365, 10, 1000};
  const auto s = sample({truth}, x);
  const std::vector<PeakModel> seed{{PeakShape::Lorentzian, 1360, 15, 800}};
  const auto r = fit_peaks(s, {1300, 1430}, seed);
  ASSERT_EQ(r.peaks.size(), 1u);
  EXPECT_TRUE(r.converged);
  EXPECT_NEAR(r.peaks[0].model.center, 1365, 1365 * 1e-6);
  EXPECT_NEAR(r.peaks[0].model.fwhm, 10, 10 * 1e-6);
  EXPECT_NEAR(r.peaks[0].model.area, 1000, 1000 * 1e-6);
}

TEST(FitPeaks, ResolvesOverlappingD2Pair) {
  const auto x = linspace(200, 700, 501);
  const std::vector<PeakModel> truth{{PeakShape::Lorentzian, 459, 138, 3000}, {PeakShape::Lorentzian, 352, 191, 2000}};
  const auto s = sample(truth, x);
  const std::vector<PeakModel> seed{{PeakShape::Lorentzian, 450, 120, 2500}, {PeakShape::Lorentzian, 360, 170, 2500}};
  const auto r = fit_peaks(s, {250, 650}, seed);
  for (std::size_t k = 0; k < 2; ++k) {
    EXPECT_NEAR(r.peaks[k].model.center / truth[k].center, 1.0, 1e-4);
    EXPECT_NEAR(r.peaks[k].model.fwhm / truth[k].fwhm, 1.0, 1e-4);
    EXPECT_NEAR(r.peaks[k].model.area / truth[k].area, 1.0, 1e-4);
  }
}

TEST(FitPeaks, CoincidentSeedsAreSingular) {
  const auto x = linspace(1300, 1430, 261);
  const auto s = sample({{PeakShape::Lorentzian, 1365, 10, 1000}}, x);
  const std::vector<PeakModel> seed{{PeakShape::Lorentzian, 1365, 10, 500}, {PeakShape::Lorentzian, 1365, 10, 500}};
  try {
    (void)fit_peaks(s, {1300, 1430}, seed);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::SingularJacobian);
  }
}

TEST(FitPeaks, TooFewSamplesInWindow) {
  const auto x = linspace(1300, 1430, 261);
  const auto s = sample({{PeakShape::Lorentzian, 1365, 10, 1000}}, x);
  const std::vector<PeakModel> seed{{PeakShape::Lorentzian, 1365, 10, 500}};
  try {
    (void)fit_peaks(s, {1364, 1366}, seed);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::WindowTooSmall);
  }
}

TEST(FitPeaks, AreaWithinFiftyWidthsMatchesAnalyticMass) {
  // window integral of a finely sampled peak against the closed-form mass
  const double lorentz_mass = 2.0 / std::numbers::pi * std::atan(100.0);
  EXPECT_NEAR(lorentz_mass, 0.99363401447, 1e-10);
  EXPECT_GT(lorentz_mass, 1.0 - 0.007);
  for (auto shape : {PeakShape::Lorentzian, PeakShape::Gaussian}) {
    const PeakModel p{shape, 0.0, 1.0, 1.0};
    const auto x = linspace(-50, 50, 200001);
    const auto s = sample({p}, x);
    const double inside = integrate_window(s, -50, 50);
    if (shape == PeakShape::Lorentzian)
      EXPECT_NEAR(inside, lorentz_mass, 1e-8);
    else
      EXPECT_NEAR(inside, 1.0, 1e-9);
  }
}

TEST(FitPeaks, EquivariantUnderScaleAndShift) {
  const auto x = linspace(1300, 1430, 261);
  const std::vector<PeakModel> truth{{PeakShape::Lorentzian, 1365, 10, 1000}, {PeakShape::Lorentzian, 1340, 20, 300}};
  const std::vector<PeakModel> seed{{PeakShape::Lorentzian, 1362, 12, 700}, {PeakShape::Lorentzian, 1343, 18, 400}};
  const auto base = fit_peaks(sample(truth, x), {1300, 1430}, seed);
  // y -> 3 y: areas scale by 3, shapes unchanged
  std::vector<PeakModel> scaled = truth;
  for (auto& p : scaled) p.area *= 3.0;
  const auto rs = fit_peaks(sample(scaled, x), {1300, 1430}, seed);
  // x -> x + 25: centers shift by 25
  std::vector<double> xs;
  for (double v : x) xs.push_back(v + 25.0);
  std::vector<PeakModel> shifted = truth, shifted_seed = seed;
  for (auto& p : shifted) p.center += 25.0;
  for (auto& p : shifted_seed) p.center += 25.0;
  const auto rx = fit_peaks(sample(shifted, xs), {1325, 1455}, shifted_seed);
  for (std::size_t k = 0; k < 2; ++k) {
    EXPECT_NEAR(rs.peaks[k].model.area / (3.0 * base.peaks[k].model.area), 1.0, 1e-8);
    EXPECT_NEAR(rs.peaks[k].model.center, base.peaks[k].model.center, 1e-8 * 1365);
    EXPECT_NEAR(rx.peaks[k].model.center - 25.0, base.peaks[k].model.center, 1e-8 * 1365);
    EXPECT_NEAR(rx.peaks[k].model.area / base.peaks[k].model.area, 1.0, 1e-8);
  }
}

TEST(Identities, NearestPresetAndConflicts) {
  const std::vector<PresetPeak> presets{{"D2a", 459}, {"D2b", 352}};
  const std::vector<double> c1{455, 360};
  EXPECT_EQ(assign_identities(c1, presets), (std::vector<std::string>{"D2a", "D2b"}));
  const std::vector<double> c2{455, 458};
  EXPECT_THROW((void)assign_identities(c2, presets), Error);
  const std::vector<double> c3{405.5};
  try {
    (void)assign_identities(c3, presets);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::AmbiguousIdentity);
  }
}

namespace {

SynthSpec three_peak_raman(double e2g, double d1, double d2, double baseline = 0.0) {
  SynthSpec s;
  s.grid = {AxisKind::RamanShiftCm, 200.0, 1500.0, 1301};
  s.peaks = {{{PeakShape::Lorentzian, 1365.0, 10.0, e2g}, AxisKind::RamanShiftCm, "E2g"},
             {{PeakShape::Lorentzian, 1290.0, 30.0, d1}, AxisKind::RamanShiftCm, "D1"},
             {{PeakShape::Lorentzian, 450.0, 120.0, d2}, AxisKind::RamanShiftCm, "D2"}};
  if (baseline != 0.0) s.baseline = {baseline};
  return s;
}

double truth_area(const SynthSpec& s, const std::string& id) {
  for (const auto& p : s.peaks)
    if (p.identity == id) return p.model.area;
  return 0.0;
}

} // namespace

TEST(ExtractStandardPeaks, NoiselessThreePeakRamanWithinOnePpm) {
  for (double d1 : {30.0, 1000.0, 20000.0}) {
    const auto spec = three_peak_raman(1e5, d1, d1 * 0.5);
    const auto r = extract_standard_peaks(generate_spectrum(spec).spectrum, Preset::HbnRaman);
    for (const char* id : {"E2g", "D1", "D2"}) {
      const auto* p = r.find(id);
      ASSERT_NE(p, nullptr) << id;
      ASSERT_TRUE(p->present) << id;
      EXPECT_NEAR(p->model.area / truth_area(spec, id), 1.0, 1e-6) << id << " d1=" << d1;
    }
    const double ratio = present_area(r, "D1") / present_area(r, "E2g");
    EXPECT_NEAR(ratio, d1 / 1e5, 1e-6 * d1 / 1e5);
  }
}

TEST(ExtractStandardPeaks, PristineSpectrumMarksDefectPeaksMissing) {
  SynthSpec spec;
  spec.grid = {AxisKind::RamanShiftCm, 200.0, 1500.0, 1301};
  spec.peaks = {{{PeakShape::Lorentzian, 1365.0, 10.0, 1e5}, AxisKind::RamanShiftCm, "E2g"}};
  spec.noise = {NoiseKind::Poisson, 0.0};
  spec.baseline = {20.0};
  spec.seed = 7;
  const auto r = extract_standard_peaks(generate_spectrum(spec).spectrum, Preset::HbnRaman);
  ASSERT_TRUE(r.find("E2g")->present);
  for (const char* id : {"D1", "D2"}) {
    const auto* p = r.find(id);
    ASSERT_NE(p, nullptr);
    EXPECT_FALSE(p->present) << id;
    EXPECT_EQ(p->note.rfind("MissingPeak", 0), 0u) << id;
    EXPECT_EQ(present_area(r, id), 0.0);
  }
}

TEST(ExtractStandardPeaks, PlCenterOnEnergyAxis) {
  SynthSpec spec;
  spec.grid = {AxisKind::EnergyEv, 1.1, 2.0, 451};
  spec.peaks = {{{PeakShape::Gaussian, 1.535, 0.2, 5e3}, AxisKind::EnergyEv, "PL"}};
  spec.noise = {NoiseKind::Poisson, 0.0};
  spec.baseline = {10.0};
  spec.seed = 11;
  const auto r = extract_standard_peaks(generate_spectrum(spec).spectrum, Preset::HbnPl);
  const auto* p = r.find("PL");
  ASSERT_TRUE(p && p->present);
  EXPECT_NEAR(p->model.center, 1.535, 0.01);
}

TEST(ExtractStandardPeaks, ParallelPolarizationSplitsD2) {
  auto spec = three_peak_raman(1e5, 2000, 0);
  spec.peaks.pop_back();
  spec.peaks.push_back({{PeakShape::Lorentzian, 459.0, 138.0, 1500}, AxisKind::RamanShiftCm, "D2a"});
  spec.peaks.push_back({{PeakShape::Lorentzian, 352.0, 191.0, 900}, AxisKind::RamanShiftCm, "D2b"});
  ExtractOptions opt;
  opt.parallel_polarization = true;
  const auto r = extract_standard_peaks(generate_spectrum(spec).spectrum, Preset::HbnRaman, opt);
  EXPECT_NEAR(r.find("D2a")->model.area / 1500.0, 1.0, 1e-5);
  EXPECT_NEAR(r.find("D2b")->model.area / 900.0, 1.0, 1e-5);
}

TEST(ExtractStandardPeaks, WrongAxisIsAxisError) {
  const auto spec = three_peak_raman(1e5, 100, 50);
  const auto s = generate_spectrum(spec).spectrum;
  try {
    (void)extract_standard_peaks(s, Preset::HbnPl);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::Axis);
  }
}

TEST(ExtractStandardPeaks, PoissonSnr50AreasWithinFivePercent) {
  // every peak at apex SNR 50 over a flat background
  const double bkg = 100.0;
  const double h = height_for_snr(50.0, bkg);
  const auto spec0 = three_peak_raman(lorentz_area_for_height(h, 10.0), lorentz_area_for_height(h, 30.0),
                                      lorentz_area_for_height(h, 120.0), bkg);
  const int trials = 200;
  int all_within = 0;
  for (int t = 0; t < trials; ++t) {
    auto spec = spec0;
    spec.noise = {NoiseKind::Poisson, 0.0};
    spec.seed = 5000 + static_cast<std::uint64_t>(t);
    const auto r = extract_standard_peaks(generate_spectrum(spec).spectrum, Preset::HbnRaman);
    bool ok = true;
    for (const char* id : {"E2g", "D1", "D2"}) {
      const auto* p = r.find(id);
      ok = ok && p && p->present && std::abs(p->model.area / truth_area(spec, id) - 1.0) < 0.05;
    }
    all_within += ok ? 1 : 0;
  }
  EXPECT_GE(all_within, 190) << all_within << " of " << trials;
}
