#include <algorithm>
#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "vbquant/calibration.hpp"
#include "vbquant/calibration_io.hpp"
#include "vbquant/random.hpp"
#include "vbquant/synth.hpp"

using namespace vbquant;

namespace {

void expect_recovered(const CalibrationModel& got, const CalibrationModel& truth, double tol) {
  EXPECT_NEAR(got.r_a_nm / truth.r_a_nm, 1.0, tol);
  EXPECT_NEAR(got.alpha / truth.alpha, 1.0, tol);
  EXPECT_NEAR(got.beta / truth.beta, 1.0, tol);
  ASSERT_EQ(got.per_el.size(), truth.per_el.size());
  for (const auto& [el, c] : truth.per_el) {
    const auto& g = got.coefficients(el);
    EXPECT_NEAR(g.c_a, c.c_a, tol * std::max(c.c_a, 1.0)) << el;
    EXPECT_NEAR(g.c_s, c.c_s, tol * std::max(c.c_a, 1.0)) << el;
  }
}

} // namespace

TEST(FitCalibration, NoiselessReferenceRecovery) {
  const auto truth = reference_truth_model();
  const auto obs = generate_calibration_dataset(truth, kTileFluenceSet1);
  ASSERT_EQ(obs.size(), 36u);
  const auto fit = fit_calibration(obs);
  EXPECT_TRUE(fit.converged);
  expect_recovered(fit.model, truth, 1e-4);
  EXPECT_FALSE(fit.absolute_sigma);
  EXPECT_TRUE(fit.model.has_covariance());
}

TEST(FitCalibration, RecoveryWithRecordedSigmas) {
  const auto truth = reference_truth_model();
  CalibrationSynthOptions o;
  o.relative_noise = 0.02;
  o.seed = 17;
  auto obs = generate_calibration_dataset(truth, kTileFluenceSet1, {}, o);
  const auto fit = fit_calibration(obs);
  EXPECT_TRUE(fit.absolute_sigma);
  EXPECT_NEAR(fit.model.alpha / truth.alpha, 1.0, 0.1);
  EXPECT_NEAR(fit.model.beta / truth.beta, 1.0, 0.1);
  EXPECT_NEAR(fit.model.r_a_nm / truth.r_a_nm, 1.0, 0.1);
  // chi^2 per degree of freedom near 1 when the sigmas are the true ones
  EXPECT_GT(fit.reduced_chi2, 0.3);
  EXPECT_LT(fit.reduced_chi2, 2.5);
}

TEST(FitCalibration, RandomGeometriesNoiseless) {
  SplitMix64 rng(4242);
  for (int trial = 0; trial < 50; ++trial) {
    CalibrationModel truth;
    truth.r_s_nm = 1.0;
    truth.r_a_nm = rng.uniform(1.5, 5.0);
    truth.alpha = rng.uniform(1.0, 10.0);
    truth.beta = rng.uniform(0.3, 1.0);
    for (double el : {1.96, 2.33, 2.62}) {
      const double c_a = std::exp(rng.uniform(std::log(10.0), std::log(1000.0)));
      truth.per_el[el] = {c_a, c_a * rng.uniform(0.02, 0.2)};
    }
    // fluences spanning L_D from 0.7 r_s to 40 r_s
    std::vector<double> fl;
    for (int k = 0; k < 12; ++k) {
      const double l = 0.7 * std::pow(40.0 / 0.7, k / 11.0);
      fl.push_back(std::pow(truth.alpha / l, 1.0 / truth.beta));
    }
    const auto obs = generate_calibration_dataset(truth, fl);
    const auto fit = fit_calibration(obs);
    SCOPED_TRACE("trial " + std::to_string(trial));
    expect_recovered(fit.model, truth, 1e-4);
  }
}

TEST(FitCalibration, FivePercentNoiseMedians) {
  const auto truth = reference_truth_model();
  std::vector<double> alphas, betas;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    CalibrationSynthOptions o;
    o.relative_noise = 0.05;
    o.seed = seed;
    const auto fit = fit_calibration(generate_calibration_dataset(truth, kTileFluenceSet1, {}, o));
    alphas.push_back(fit.model.alpha);
    betas.push_back(fit.model.beta);
  }
  auto median = [](std::vector<double> v) {
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2), v.end());
    return v[v.size() / 2];
  };
  EXPECT_NEAR(median(alphas) / truth.alpha, 1.0, 0.15);
  EXPECT_NEAR(median(betas) / truth.beta, 1.0, 0.15);
  for (double b : betas) EXPECT_NEAR(b, truth.beta, 0.1);
}

TEST(FitCalibration, InsufficientData) {
  auto truth = reference_truth_model();
  truth.per_el = {{2.33, {300.0, 25.0}}};
  const std::vector<double> two{1.0, 0.1};
  auto expect_code = [](const std::vector<RatioObservation>& obs) {
    try {
      (void)fit_calibration(obs);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), Errc::InsufficientData);
    }
  };
  expect_code(generate_calibration_dataset(truth, two));
  const std::vector<double> one{1.0, 1.0, 1.0, 1.0, 1.0, 1.0};
  expect_code(generate_calibration_dataset(truth, one));
  expect_code({});
}

TEST(FitCalibration, RejectsMixedModes) {
  auto obs = generate_calibration_dataset(reference_truth_model(), kTileFluenceSet1);
  obs[3].mode = RatioMode::PLOnly;
  try {
    (void)fit_calibration(obs);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::Domain);
  }
}

TEST(FitCalibration, NarrowActivationMirrorFitsEqually) {
  // r_s^2 <-> r_a^2 - r_s^2 maps the model onto itself with rescaled alpha, C_A'
  const auto truth = reference_truth_model();
  const auto obs = generate_calibration_dataset(truth, kTileFluenceSet1);
  CalibrationFitOptions o;
  o.allow_narrow_activation = true;
  const auto wide = fit_calibration(obs);
  const auto any = fit_calibration(obs, o);
  EXPECT_LE(any.cost, wide.cost * (1.0 + 1e-6) + 1e-20);
  const double s2 = 1.0;
  const double a2 = truth.r_a_nm * truth.r_a_nm;
  const double mirror_r_a = std::sqrt(s2 + s2 * s2 / (a2 - s2));
  const double mirror_alpha = truth.alpha * std::sqrt(s2 / (a2 - s2));
  CalibrationModel mirror = truth;
  mirror.r_a_nm = mirror_r_a;
  mirror.alpha = mirror_alpha;
  const double k = (a2 - s2) / (a2 - 2 * s2);
  const double mk = (mirror_r_a * mirror_r_a - s2) / (mirror_r_a * mirror_r_a - 2 * s2);
  for (auto& [el, c] : mirror.per_el) c.c_a = (c.c_s - c.c_a * k) / mk;
  for (const auto& o2 : obs) {
    const double l = l_d_from_fluence(o2.fluence_ions_per_nm2, 1.0, truth.beta);
    const double f_truth = eval_ratio(truth.alpha * l, truth, o2.excitation_energy_ev);
    const double f_mirror = eval_ratio(mirror.alpha * l, mirror, o2.excitation_energy_ev);
    EXPECT_NEAR(f_mirror, f_truth, 1e-9 * std::max(1.0, f_truth));
  }
}

TEST(FitCalibration, ResultSerializes) {
  const auto fit = fit_calibration(generate_calibration_dataset(reference_truth_model(), kTileFluenceSet1));
  const auto text = write_calibration_string(fit.model);
  EXPECT_EQ(write_calibration_string(read_calibration_string(text)), text);
}
