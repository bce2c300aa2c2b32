#include <cmath>
#include <sstream>
#include <vector>

#include <gtest/gtest.h>

#include "vbquant/random.hpp"
#include "vbquant/spectra_io.hpp"
#include "vbquant/synth.hpp"

using namespace vbquant;

TEST(SplitMix64, ReferenceStream) {
  SplitMix64 zero(0);
  EXPECT_EQ(zero.next(), 0xe220a8397b1dcdafULL);
  SplitMix64 rng(42);
  EXPECT_EQ(rng.next(), 0xbdd732262feb6e95ULL);
  EXPECT_EQ(rng.next(), 0x28efe333b266f103ULL);
  EXPECT_EQ(rng.next(), 0x47526757130f9f52ULL);
  SplitMix64 u(42);
  EXPECT_EQ(u.uniform(), 0.7415648787718233);
}

TEST(SplitMix64, NormalMoments) {
  SplitMix64 rng(1);
  const int n = 200000;
  double s = 0, s2 = 0;
  for (int i = 0; i < n; ++i) {
    const double v = rng.normal();
    s += v;
    s2 += v * v;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.01);
}

TEST(SplitMix64, PoissonMeanAndVariance) {
  for (double mean : {0.5, 4.0, 9.9, 10.0, 37.0, 2500.0}) {
    SplitMix64 rng(77);
    const int n = 100000;
    double s = 0, s2 = 0;
    for (int i = 0; i < n; ++i) {
      const double v = static_cast<double>(rng.poisson(mean));
      s += v;
      s2 += v * v;
    }
    const double m = s / n;
    const double var = s2 / n - m * m;
    EXPECT_NEAR(m, mean, 5.0 * std::sqrt(mean / n)) << mean;
    EXPECT_NEAR(var / mean, 1.0, 0.03) << mean;
  }
  SplitMix64 rng(1);
  EXPECT_EQ(rng.poisson(0.0), 0u);
}

TEST(GenerateSpectrum, ZeroSpecGivesZeroSpectrum) {
  SynthSpec s;
  s.grid = {AxisKind::RamanShiftCm, 100, 200, 101};
  const auto r = generate_spectrum(s);
  ASSERT_EQ(r.spectrum.size(), 101u);
  for (double v : r.spectrum.y()) EXPECT_EQ(v, 0.0);
}

TEST(GenerateSpectrum, DeterministicUnderSeed) {
  SynthSpec s;
  s.grid = {AxisKind::RamanShiftCm, 200, 1500, 1301};
  s.peaks = {{{PeakShape::Lorentzian, 1365, 10, 1e5}, AxisKind::RamanShiftCm, "E2g"}};
  s.baseline = {50.0};
  s.noise = {NoiseKind::Poisson, 0.0};
  s.seed = 42;
  const auto a = generate_spectrum(s);
  const auto b = generate_spectrum(s);
  EXPECT_EQ(std::vector<double>(a.spectrum.y().begin(), a.spectrum.y().end()),
            std::vector<double>(b.spectrum.y().begin(), b.spectrum.y().end()));
  s.seed = 43;
  const auto c = generate_spectrum(s);
  EXPECT_NE(std::vector<double>(a.spectrum.y().begin(), a.spectrum.y().end()),
            std::vector<double>(c.spectrum.y().begin(), c.spectrum.y().end()));
}

TEST(GenerateSpectrum, PeakOnOtherAxisIsConverted) {
  // a PL peak given in eV placed on a wavelength grid
  SynthSpec s;
  s.grid = {AxisKind::WavelengthNm, 700, 900, 2001};
  s.peaks = {{{PeakShape::Gaussian, 1.53, 0.2, 100.0}, AxisKind::EnergyEv, "PL"}};
  const auto r = generate_spectrum(s);
  const auto& y = r.spectrum.y();
  const auto it = std::max_element(y.begin(), y.end());
  const double x_peak = r.spectrum.x()[static_cast<std::size_t>(it - y.begin())];
  EXPECT_NEAR(kHcEvNm / x_peak, 1.53, 0.002);
}

TEST(GenerateSpectrum, WrittenFileCarriesTruth) {
  SynthSpec s;
  s.grid = {AxisKind::RamanShiftCm, 200, 1500, 131};
  s.peaks = {{{PeakShape::Lorentzian, 1365, 10, 1e5}, AxisKind::RamanShiftCm, "E2g"}};
  s.seed = 9;
  s.label = "t";
  const auto path = std::filesystem::temp_directory_path() / "vbquant_synth_truth.csv";
  const auto r = generate_spectrum(s);
  write_synth_spectrum(path, r);
  std::ifstream in(path);
  std::string line;
  bool found = false;
  while (std::getline(in, line))
    if (line.rfind("# truth ", 0) == 0) {
      const auto back = synth_truth_from_json(nlohmann::ordered_json::parse(line.substr(8)));
      EXPECT_EQ(synth_truth_json(back).dump(), synth_truth_json(s).dump());
      found = true;
    }
  EXPECT_TRUE(found);
  const auto loaded = load_spectrum(path, {}, {}).spectrum;
  EXPECT_EQ(loaded.size(), 131u);
  std::filesystem::remove(path);
}

TEST(CalibrationDataset, EmptyFluencesAndOrdering) {
  const auto truth = reference_truth_model();
  EXPECT_TRUE(generate_calibration_dataset(truth, std::vector<double>{}).empty());
  const auto obs = generate_calibration_dataset(truth, kTileFluenceSet1);
  ASSERT_EQ(obs.size(), 36u);
  EXPECT_EQ(obs[0].excitation_energy_ev, 1.96);
  EXPECT_EQ(obs[12].excitation_energy_ev, 2.33);
  EXPECT_EQ(obs[1].fluence_ions_per_nm2, kTileFluenceSet1[1]);
  for (const auto& o : obs)
    EXPECT_EQ(o.ratio, eval_ratio(l_d_from_fluence(o.fluence_ions_per_nm2, 4.27, 0.6), truth, o.excitation_energy_ev));
}

TEST(CalibrationDataset, NoiseIsMultiplicativeAndSeeded) {
  const auto truth = reference_truth_model();
  CalibrationSynthOptions o;
  o.relative_noise = 0.05;
  o.seed = 3;
  const auto a = generate_calibration_dataset(truth, kTileFluenceSet1, {}, o);
  const auto b = generate_calibration_dataset(truth, kTileFluenceSet1, {}, o);
  const auto clean = generate_calibration_dataset(truth, kTileFluenceSet1);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].ratio, b[i].ratio);
    EXPECT_NEAR(a[i].ratio_sigma, 0.05 * clean[i].ratio, 1e-12 * clean[i].ratio);
    EXPECT_LT(std::abs(a[i].ratio / clean[i].ratio - 1.0), 0.3);
  }
}

TEST(TileSet, RatioMatchesAreas) {
  const auto truth = reference_truth_model();
  const auto tiles = generate_tile_set(truth, kTileFluenceSet1);
  ASSERT_EQ(tiles.size(), 36u);
  EXPECT_EQ(tiles[0].name, "tile01");
  EXPECT_EQ(tiles[11].name, "tile12");
  for (const auto& t : tiles) {
    const double e2g = t.raman.peaks[0].model.area;
    const double d1 = t.raman.peaks[1].model.area;
    const double pl = t.pl.peaks[0].model.area;
    EXPECT_NEAR((d1 + pl) / e2g, t.ratio, 1e-12 * t.ratio);
  }
}

TEST(Map, LayoutAndRoundTrip) {
  std::vector<SynthSpec> pixels(6);
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    pixels[i].grid = {AxisKind::EnergyEv, 1.1, 2.0, 91};
    pixels[i].peaks = {{{PeakShape::Gaussian, 1.53, 0.2, 10.0 * (i + 1)}, AxisKind::EnergyEv, "PL"}};
  }
  const auto map = generate_map(pixels, 3);
  EXPECT_EQ(map.xs.size(), 3u);
  EXPECT_EQ(map.ys.size(), 2u);
  std::ostringstream out;
  write_map(out, map);
  std::istringstream in(out.str());
  const auto back = parse_map(in, {AxisKind::EnergyEv, {}, {}});
  ASSERT_EQ(back.pixels.size(), 6u);
  for (std::size_t i = 0; i < 6; ++i)
    EXPECT_NEAR(integrate_window(back.pixels[i].spectrum, 1.37, 1.65),
                integrate_window(map.pixels[i].spectrum, 1.37, 1.65), 1e-9);
  EXPECT_THROW((void)generate_map(pixels, 0), Error);
}

TEST(PolarSet, FeaturesAndDeterminism) {
  const auto a = paper_like_polar_set(0.05, 8);
  const auto b = paper_like_polar_set(0.05, 8);
  ASSERT_EQ(a.size(), 5u);
  EXPECT_EQ(a[0].theta_deg.size(), 36u);
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_EQ(a[k].intensity, b[k].intensity);
  EXPECT_NE(a[3].intensity, a[4].intensity);
}
