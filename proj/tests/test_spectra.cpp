#include <gtest/gtest.h>

#include <random>

#include "support.hpp"

namespace os = optospring;

namespace {

struct Setup {
  os::SystemConfig cfg;
  os::EffectiveMode mode;
  std::vector<double> grid;
  os::LoopResponses loop;
};

Setup setup(const os::SystemConfig& cfg, os::ServoState state, const os::GridPolicy& policy = {}) {
  Setup s{cfg, os::extract_mode(cfg, state), {}, {}};
  s.grid = os::frequency_grid_for(s.mode, policy);
  s.loop = os::loop_responses(cfg, s.grid, state);
  return s;
}

}  // namespace

TEST(Grid, LogMasterWithDenseCore) {
  const auto plain = os::frequency_grid();
  EXPECT_EQ(plain.size(), 4096u);
  EXPECT_DOUBLE_EQ(plain.front(), 0.1);
  EXPECT_DOUBLE_EQ(plain.back(), 1e5);
  const auto dense = os::frequency_grid({}, 662.0, 0.01);
  EXPECT_GT(dense.size(), plain.size() + 200);
  const auto in_core = std::count_if(dense.begin(), dense.end(), [](double f) { return std::abs(f - 662.0) <= 0.1 * (1.0 + 1e-9); });
  EXPECT_GE(in_core, 200);
  EXPECT_TRUE(std::is_sorted(dense.begin(), dense.end()));
}

TEST(Thermal, EquipartitionAtCancelledDamping) {
  // Off state: the servo cancels the optical anti-damping, gamma_eff ~ gamma1.
  const auto s = setup(os::testing::preset("baseline"), os::ServoState::off);
  const auto sx = os::thermal_spectrum(300.0, s.cfg.mirror1, s.loop.chi_eff);
  const double expect = os::kBoltzmann * 300.0 / (s.cfg.mirror1.mass * s.mode.omega_eff * s.mode.omega_eff);
  EXPECT_NEAR(os::integrate(sx) / expect, 1.0, 0.01);
}

TEST(Thermal, CooledModeTemperatureFollowsDampingRatio) {
  auto cfg = os::testing::preset("baseline");
  for (double gain : {3.0, 30.0}) {
    const auto s = setup(cfg.with_gain(gain), os::ServoState::on);
    const auto sx = os::thermal_spectrum(300.0, s.cfg.mirror1, s.loop.chi_eff);
    const double t_eff = 300.0 * cfg.mirror1.gamma0 / s.mode.gamma_eff;
    const auto mt = os::mode_temperature(sx, s.mode.omega_eff, s.mode.gamma_eff, cfg.mirror1);
    EXPECT_NEAR(mt.temperature / t_eff, 1.0, 0.02) << gain;
  }
}

TEST(Thermal, StrongServoFreesTheMirrorAtLowFrequency) {
  // The servo makes the heavy mirror follow slow motion, so near the pendulum
  // resonance the light mirror sees no spring and its variance exceeds the
  // single-mode value; the spectral mode temperature excludes that region.
  const auto cfg = os::testing::preset("baseline").with_gain(150.0);
  const auto s = setup(cfg, os::ServoState::on);
  const auto sx = os::thermal_spectrum(300.0, cfg.mirror1, s.loop.chi_eff);
  const double single_mode = os::kBoltzmann * 300.0 * cfg.mirror1.gamma0 / s.mode.gamma_eff /
                             (cfg.mirror1.mass * s.mode.omega_eff * s.mode.omega_eff);
  EXPECT_GT(os::integrate_band(sx, 1.0, 10.0), 10.0 * single_mode);
  const auto mt = os::mode_temperature(sx, s.mode.omega_eff, s.mode.gamma_eff, cfg.mirror1);
  EXPECT_GT(mt.band_lo, 10.0);
  EXPECT_NEAR(mt.temperature / (300.0 * cfg.mirror1.gamma0 / s.mode.gamma_eff), 1.0, 0.35);
}

TEST(Thermal, ZeroTemperatureAndZeroNoiseGiveZeroSpectra) {
  auto cfg = os::testing::preset("baseline");
  cfg.noise.temperature = 0.0;
  cfg.noise.freq_noise_amp = 0.0;
  const auto s = setup(cfg, os::ServoState::on);
  const auto total = os::add(os::thermal_spectrum(0.0, cfg.mirror1, s.loop.chi_eff),
                             os::freqnoise_spectrum(cfg.noise, cfg, s.loop));
  for (double v : total.value) EXPECT_EQ(v, 0.0);
}

TEST(Thermal, ThermalDominatesBelowResonance) {
  const auto cfg = os::testing::preset("baseline");
  const auto s = setup(cfg, os::ServoState::on);
  const auto th = os::thermal_spectrum(cfg.noise.temperature, cfg.mirror1, s.loop.chi_eff);
  const auto fr = os::freqnoise_spectrum(cfg.noise, cfg, s.loop);
  const double f_eff = os::to_hz(s.mode.omega_eff);
  for (std::size_t i = 0; i < th.freq.size(); ++i) {
    if (th.freq[i] > 0.3 * f_eff && th.freq[i] < 0.8 * f_eff) {
      EXPECT_GT(th.value[i], fr.value[i]) << th.freq[i];
    }
  }
}

TEST(FrequencyNoise, PrintedTransferCarriesQuarterOfTheRateLawForce) {
  // The displacement formula corresponds to a force PSD m1^2 w^4 S / g^2 near
  // resonance; the rate law's trap term needs four times that. Stationary
  // occupation times gamma_eff recovers the heating rate of the force.
  auto cfg = os::testing::preset("baseline").with_gain(10.0);
  cfg.noise.temperature = 0.0;
  const auto s = setup(cfg, os::ServoState::on);
  const auto fr = os::freqnoise_spectrum(cfg.noise, cfg, s.loop);
  const auto occ = os::occupations(cfg, cfg.noise, s.mode, fr);
  const auto rate = os::predicted_rate(cfg, cfg.noise, s.mode);
  EXPECT_NEAR(occ.n_freq * s.mode.gamma_eff / (rate.trap / 4.0), 1.0, 0.05);
}

TEST(Occupations, DefinitionalIdentity) {
  const auto cfg = os::testing::preset("baseline");
  const auto s = setup(cfg, os::ServoState::on);
  const auto occ = os::occupations(cfg, cfg.noise, s.mode, os::freqnoise_spectrum(cfg.noise, cfg, s.loop));
  const double lhs = occ.n_th_prime * s.mode.gamma_eff;
  const double rhs = os::kBoltzmann * 300.0 * cfg.mirror1.gamma0 / (os::kHbar * s.mode.omega_eff);
  EXPECT_NEAR(lhs / rhs, 1.0, 1e-12);
  EXPECT_NEAR(occ.n_th_bare, 2.9e12, 0.05 * 2.9e12);
}

TEST(Occupations, UnstableModeThrows) {
  auto cfg = os::testing::preset("baseline").with_gain(0.0);
  const auto mode = os::extract_mode(cfg);
  ASSERT_LT(mode.gamma_eff, 0.0);
  EXPECT_THROW(os::occupations(cfg, cfg.noise, mode, {}), os::InstabilityError);
}

TEST(Calibration, RoundTripIsIdentity) {
  const auto cfg = os::testing::preset("baseline");
  const auto s = setup(cfg, os::ServoState::on);
  const auto sx = os::thermal_spectrum(300.0, cfg.mirror1, s.loop.chi_eff);
  const auto back = os::voltage_to_displacement(os::displacement_to_voltage(sx, cfg, s.mode.omega_eff, cfg.eta), cfg,
                                                s.mode.omega_eff, cfg.eta);
  for (std::size_t i = 0; i < sx.value.size(); ++i) {
    EXPECT_LE(std::abs(back.value[i] - sx.value[i]), 1e-12 * sx.value[i]);
  }
}

TEST(Calibration, FactorFormula) {
  const auto cfg = os::testing::preset("baseline");
  const double w = os::to_angular(662.0);
  const double expect = 2.0 * os::kPi * os::kSpeedOfLight * cfg.mirror1.mass / (1980.0 * 1.56) * (1.0 - 0.19) * w * w * 3.0;
  EXPECT_NEAR(os::calibration_factor(cfg, w, 3.0) / expect, 1.0, 1e-12);
}

TEST(Welch, WhiteNoiseLevelAndParseval) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0.0, 2.0);
  const double dt = 1e-3;
  std::vector<double> x(1 << 17);
  for (auto& v : x) v = n(rng);
  const auto s = os::welch_psd(x, dt, 1024);
  double level = 0.0;
  for (std::size_t k = 1; k + 1 < s.value.size(); ++k) level += s.value[k];
  level /= static_cast<double>(s.value.size() - 2);
  EXPECT_NEAR(level / (2.0 * 4.0 * dt), 1.0, 0.02);
  EXPECT_NEAR(os::bin_sum(s) / 4.0, 1.0, 0.02);
}

TEST(Welch, SinusoidPowerLandsInItsBin) {
  const double dt = 1e-3, f0 = 125.0, amp = 3.0;  // f0 on a bin for N = 1024
  std::vector<double> x(1 << 15);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = amp * std::sin(os::kTwoPi * f0 * dt * static_cast<double>(i));
  const auto s = os::welch_psd(x, dt, 1024);
  EXPECT_NEAR(os::bin_sum(s) / (amp * amp / 2.0), 1.0, 1e-9);
  const auto peak = std::max_element(s.value.begin(), s.value.end()) - s.value.begin();
  EXPECT_DOUBLE_EQ(s.freq[static_cast<std::size_t>(peak)], f0);
}

TEST(Welch, RejectsShortSeries) {
  std::vector<double> x(100, 0.0);
  EXPECT_THROW(os::welch_psd(x, 1e-3, 128), os::InsufficientDataError);
  EXPECT_THROW(os::welch_psd(x, 0.0, 16), os::ValidationError);
}

TEST(Welch, SimulatedTrajectoryParseval) {
  auto cfg = os::testing::preset("baseline").with_gain(10.0);
  cfg.noise.freq_noise_amp = 0.0;
  const auto lm = os::build_langevin_model(cfg, cfg.noise);
  os::SimPlan plan;
  plan.schedule = os::Schedule::always_on;
  plan.duration = 20.0;
  plan.record_stride = 5;
  const auto tr = os::simulate_trajectory(lm, plan, 0);
  double mean = 0.0, var = 0.0;
  for (double v : tr.x) mean += v;
  mean /= static_cast<double>(tr.x.size());
  for (double v : tr.x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(tr.x.size());
  const double dt = tr.t[1] - tr.t[0];
  const auto s = os::welch_psd(tr.x, dt, 1 << 14);
  EXPECT_NEAR(os::bin_sum(s) / var, 1.0, 0.03);
}

TEST(Lorentzian, FitRecoversSyntheticPeak) {
  os::LorentzianFit truth{650.0, 12.0, 3e-12, 0};
  os::Spectrum s;
  for (int i = 0; i < 4000; ++i) {
    const double f = 0.5 * i;
    s.freq.push_back(f);
    s.value.push_back(os::lorentzian(truth, f));
  }
  const auto fit = os::fit_lorentzian(s, 640.0);
  EXPECT_NEAR(fit.center, truth.center, 1e-6);
  EXPECT_NEAR(fit.hwhm / truth.hwhm, 1.0, 1e-6);
  EXPECT_NEAR(fit.area / truth.area, 1.0, 1e-6);
}

TEST(Lorentzian, AreaOutsideThreeSigmaIsAdded) {
  // A pure Lorentzian: the band holds 2 atan(3)/pi ~ 79.5% of the area.
  os::LorentzianFit truth{650.0, 5.0, 1e-10, 0};
  os::Spectrum s;
  s.freq = os::frequency_grid({}, 650.0, 5.0);
  for (double f : s.freq) s.value.push_back(os::lorentzian(truth, f));
  os::MirrorParams m{1.0, 1.0, 1.0, "m"};
  const auto mt = os::mode_temperature(s, os::to_angular(650.0), 0.0, m);
  EXPECT_NEAR(mt.band_integral / truth.area, 2.0 * std::atan(3.0) / os::kPi, 2e-3);
  EXPECT_NEAR(mt.mean_square_x / truth.area, 1.0, 2e-3);
}

TEST(ModeTemperature, MatchesAnalyticCooledValue) {
  const auto cfg = os::testing::preset("baseline").with_gain(10.0);
  const auto s = setup(cfg, os::ServoState::on);
  const auto sx = os::thermal_spectrum(300.0, cfg.mirror1, s.loop.chi_eff);
  const auto mt = os::mode_temperature(sx, s.mode.omega_eff, s.mode.gamma_eff, cfg.mirror1);
  EXPECT_NEAR(mt.temperature / (300.0 * cfg.mirror1.gamma0 / s.mode.gamma_eff), 1.0, 0.03);
}

TEST(ModeTemperature, InvariantUnderGridRefinement) {
  const auto cfg = os::testing::preset("baseline");
  os::GridPolicy fine;
  fine.points *= 2;
  fine.core_points = 2 * fine.core_points - 1;
  fine.wing_per_decade *= 2;
  double t[2];
  int i = 0;
  for (const auto& policy : {os::GridPolicy{}, fine}) {
    const auto s = setup(cfg, os::ServoState::on, policy);
    const auto sx = os::thermal_spectrum(300.0, cfg.mirror1, s.loop.chi_eff);
    t[i++] = os::mode_temperature(sx, s.mode.omega_eff, s.mode.gamma_eff, cfg.mirror1).temperature;
  }
  EXPECT_NEAR(t[1] / t[0], 1.0, 0.02);
}

TEST(Spectrum, ValidationAndUnits) {
  os::Spectrum s;
  s.freq = {1.0, 0.5};
  s.value = {1.0, 1.0};
  EXPECT_THROW(s.validate(), os::ValidationError);
  EXPECT_STREQ(os::unit_of(os::SpectrumKind::displacement), "m^2/Hz");
  EXPECT_STREQ(os::unit_of(os::SpectrumKind::voltage), "V^2/Hz");
}
