#include <cmath>
#include <numbers>
#include <vector>

#include <gtest/gtest.h>

#include "vbquant/spectra.hpp"
#include "vbquant/random.hpp"
#include "vbquant/synth.hpp"

using namespace vbquant;

namespace {

std::vector<double> linspace(double lo, double hi, std::size_t n) {
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
  return v;
}

Spectrum constant(double level, double lo, double hi, std::size_t n, AxisKind kind = AxisKind::RamanShiftCm) {
  return Spectrum(kind, linspace(lo, hi, n), std::vector<double>(n, level), 2.33);
}

} // namespace

TEST(Spectrum, RejectsInvalidConstruction) {
  EXPECT_THROW(Spectrum(AxisKind::EnergyEv, linspace(1, 2, 7), std::vector<double>(7, 1.0)), Error);
  EXPECT_THROW(Spectrum(AxisKind::EnergyEv, linspace(1, 2, 8), std::vector<double>(9, 1.0)), Error);
  auto x = linspace(1, 2, 8);
  std::swap(x[2], x[3]);
  try {
    Spectrum(AxisKind::EnergyEv, x, std::vector<double>(8, 1.0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::Axis);
  }
  EXPECT_THROW(Spectrum(AxisKind::EnergyEv, linspace(1, 2, 8), std::vector<double>(8, 1.0), -1.0), Error);
  EXPECT_THROW(Spectrum(AxisKind::WavelengthNm, linspace(-1, 2, 8), std::vector<double>(8, 1.0)), Error);
}

TEST(ConvertAxis, ElasticLineIsZeroShift) {
  const double el = excitation_ev_from_nm(532.0);
  EXPECT_NEAR(convert_value(532.0, AxisKind::WavelengthNm, AxisKind::RamanShiftCm, el), 0.0, 1e-9);
}

TEST(ConvertAxis, E2gShiftAt532nm) {
  // oracle: 1 / (1/532 - 1365e-7) evaluated at 40 digits
  const double el = excitation_ev_from_nm(532.0);
  const double lambda = convert_value(1365.0, AxisKind::RamanShiftCm, AxisKind::WavelengthNm, el);
  EXPECT_NEAR(lambda, 573.65788855078058, 1e-9);
  EXPECT_NEAR(1e7 / 532.0 - 1e7 / lambda, 1365.0, 1e-8);
}

TEST(ConvertAxis, PlPeakWavelengthToEnergy) {
  EXPECT_NEAR(convert_value(810.0, AxisKind::WavelengthNm, AxisKind::EnergyEv), 1.5307, 5e-5);
  EXPECT_NEAR(convert_value(810.0, AxisKind::WavelengthNm, AxisKind::EnergyEv), 1239.84198 / 810.0, 1e-15);
}

TEST(ConvertAxis, MissingExcitationAndDomain) {
  Spectrum s(AxisKind::WavelengthNm, linspace(540, 560, 8), std::vector<double>(8, 1.0));
  try {
    (void)convert_axis(s, AxisKind::RamanShiftCm);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::MissingExcitation);
  }
  EXPECT_THROW((void)convert_value(-5.0, AxisKind::WavelengthNm, AxisKind::EnergyEv), Error);
  EXPECT_THROW((void)convert_value(0.0, AxisKind::WavelengthNm, AxisKind::EnergyEv), Error);
}

TEST(ConvertAxis, ReordersAndKeepsCounts) {
  std::vector<double> y{1, 2, 3, 4, 5, 6, 7, 8};
  Spectrum s(AxisKind::WavelengthNm, linspace(700, 900, 8), y);
  const auto e = convert_axis(s, AxisKind::EnergyEv);
  ASSERT_EQ(e.size(), 8u);
  for (std::size_t i = 1; i < e.size(); ++i) EXPECT_GT(e.x()[i], e.x()[i - 1]);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(e.y()[i], y[7 - i]);
}

TEST(ConvertAxis, RoundTripProperty) {
  SplitMix64 rng(7);
  const AxisKind kinds[] = {AxisKind::WavelengthNm, AxisKind::EnergyEv, AxisKind::RamanShiftCm};
  for (int trial = 0; trial < 2000; ++trial) {
    const double el = rng.uniform(1.5, 3.5);
    const double laser_nm = kHcEvNm / el;
    // wavelengths on the Stokes side keep every representation positive where needed
    const double lambda = laser_nm * rng.uniform(1.0001, 3.0);
    for (auto from : kinds)
      for (auto to : kinds) {
        const double v = convert_value(lambda, AxisKind::WavelengthNm, from, el);
        const double back = convert_value(convert_value(v, from, to, el), to, from, el);
        EXPECT_NEAR(back, v, 1e-9 * std::abs(v) + 1e-12) << int(from) << "->" << int(to);
      }
  }
}

TEST(IntegrateWindow, UnitRectangle) {
  const auto s = constant(1.0, 0.0, 2.0, 21);
  EXPECT_NEAR(integrate_window(s, 0.0, 2.0), 2.0, 1e-14);
}

TEST(IntegrateWindow, DisjointWindowIsEmpty) {
  const auto s = constant(1.0, 0.0, 2.0, 21);
  try {
    (void)integrate_window(s, 3.0, 4.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::EmptyWindow);
  }
  EXPECT_THROW((void)integrate_window(s, 1.0, 0.5), Error);
}

TEST(IntegrateWindow, PartialOverlapIntegratesIntersection) {
  const auto s = constant(1.0, 0.0, 2.0, 21);
  EXPECT_NEAR(integrate_window(s, -5.0, 1.0), 1.0, 1e-14);
  EXPECT_NEAR(integrate_window(s, 1.5, 9.0), 0.5, 1e-14);
}

TEST(IntegrateWindow, GaussianMassInPlWindow) {
  // oracle: 100 * (Phi(2.4) - Phi(-3.2)) for center 1.53, sigma 0.05 over [1.37, 1.65]
  const double sigma = 0.05;
  const PeakModel g{PeakShape::Gaussian, 1.53, sigma / kFwhmToSigma, 100.0};
  const auto x = linspace(1.0, 2.0, 20001);
  std::vector<double> y;
  for (double v : x) y.push_back(g(v));
  Spectrum s(AxisKind::EnergyEv, x, y);
  EXPECT_NEAR(integrate_window(s, 1.37, 1.65), 99.111532613748802, 1e-5);
}

TEST(IntegrateWindow, AdditiveOverAdjacentWindows) {
  SplitMix64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> x, y;
    double v = rng.uniform(0, 1);
    for (int i = 0; i < 40; ++i) {
      v += rng.uniform(0.01, 0.3);
      x.push_back(v);
      y.push_back(rng.uniform(-1, 5));
    }
    Spectrum s(AxisKind::EnergyEv, x, y);
    const double a = rng.uniform(x.front() - 0.5, x.back());
    const double c = rng.uniform(a, x.back() + 0.5);
    const double b = rng.uniform(a, c);
    double ab = 0, bc = 0;
    try {
      ab = integrate_window(s, a, b);
    } catch (const Error&) {
    }
    try {
      bc = integrate_window(s, b, c);
    } catch (const Error&) {
    }
    const double ac = integrate_window(s, a, c);
    EXPECT_NEAR(ab + bc, ac, 1e-12 * (std::abs(ac) + 1.0));
  }
}

TEST(Baseline, FlatSpectrumBecomesZero) {
  const auto s = constant(5.0, 0.0, 10.0, 50);
  const auto [out, b] = subtract_baseline(s, {});
  EXPECT_EQ(out.size(), s.size());
  EXPECT_EQ(b.kind(), BaselineKind::Linear);
  for (double v : out.y()) EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(Baseline, ExactLineRemoved) {
  const auto x = linspace(0.0, 100.0, 64);
  std::vector<double> y;
  for (double v : x) y.push_back(2 * v + 3);
  Spectrum s(AxisKind::RamanShiftCm, x, y);
  const auto [out, b] = subtract_baseline(s, {});
  for (double v : out.y()) EXPECT_NEAR(v, 0.0, 1e-9);
  EXPECT_NEAR(b(50.0), 103.0, 1e-9);
}

TEST(Baseline, CubicRemovedAndKindReported) {
  const auto x = linspace(-3.0, 5.0, 64);
  std::vector<double> y;
  for (double v : x) y.push_back(1 - v + 0.5 * v * v - 0.1 * v * v * v);
  Spectrum s(AxisKind::RamanShiftCm, x, y);
  const auto [out, b] = subtract_baseline(s, {3, {}, {}});
  EXPECT_EQ(b.kind(), BaselineKind::PolynomialDegreeN);
  for (double v : out.y()) EXPECT_NEAR(v, 0.0, 1e-9);
}

TEST(Baseline, NarrowAnchorsAreIllConditioned) {
  const auto s = constant(1.0, 0.0, 10.0, 11);
  try {
    (void)subtract_baseline(s, {3, {{0.0, 2.5}}, {}}); // 3 samples for 4 coefficients
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::IllConditioned);
  }
  EXPECT_THROW((void)subtract_baseline(s, {4, {}, {}}), Error);
}

TEST(Baseline, EvaluatedBaselineBelowMaximumOnAnchors) {
  SplitMix64 rng(3);
  const auto x = linspace(200, 1500, 400);
  std::vector<double> y;
  for (double v : x) y.push_back(50 + 0.01 * v + 5 * rng.normal());
  Spectrum s(AxisKind::RamanShiftCm, x, y);
  const auto [out, b] = subtract_baseline(s, {1, {}, {}});
  const double ymax = *std::max_element(y.begin(), y.end());
  for (double v : x) EXPECT_LE(b(v), ymax);
}

TEST(Baseline, GaussianOnSlopeRecoversArea) {
  // peak on 0.01 x + 50; baseline fitted outside +-5 fwhm, area from +-10 fwhm
  const PeakModel p{PeakShape::Gaussian, 1365.0, 10.0, 1000.0};
  SynthSpec spec;
  spec.grid = {AxisKind::RamanShiftCm, 900.0, 1830.0, 9301};
  spec.peaks = {{p, AxisKind::RamanShiftCm, "E2g"}};
  spec.baseline = {50.0, 0.01};
  const auto s = generate_spectrum(spec).spectrum;
  const auto [out, b] = subtract_baseline(s, {1, {}, {{p.center - 50.0, p.center + 50.0}}});
  EXPECT_NEAR(integrate_window(out, p.center - 100.0, p.center + 100.0), p.area, 1e-6 * p.area);
}

TEST(Baseline, PoissonSnr50GaussianPeakWithinOnePercent) {
  // SNR 50 at the peak; area from baseline-subtracted data over +-5 sigma
  int within = 0;
  const int trials = 100;
  for (int t = 0; t < trials; ++t) {
    const double sigma = 10.0;
    const double bkg = 100.0;
    // H / sqrt(H + B) = 50 with H the peak height
    const double h = (2500.0 + std::sqrt(2500.0 * 2500.0 + 4 * 2500.0 * bkg)) / 2.0;
    const double area = h * sigma * std::sqrt(2 * std::numbers::pi);
    SynthSpec spec;
    spec.grid = {AxisKind::RamanShiftCm, 1000.0, 1800.0, 801};
    spec.peaks = {{{PeakShape::Gaussian, 1400.0, sigma / kFwhmToSigma, area}, AxisKind::RamanShiftCm, "X"}};
    spec.baseline = {bkg};
    spec.noise = {NoiseKind::Poisson, 0.0};
    spec.seed = 1000 + static_cast<std::uint64_t>(t);
    const auto s = generate_spectrum(spec).spectrum;
    const auto [out, b] = subtract_baseline(s, {1, {}, {{1400.0 - 80.0, 1400.0 + 80.0}}});
    const double got = integrate_window(out, 1350.0, 1450.0);
    if (std::abs(got / area - 1.0) < 0.01) ++within;
  }
  EXPECT_GE(within, 95);
}
