#pragma once

// Shared fixtures and hand-rolled generators for the test suites.

#include <cstdint>
#include <random>
#include <string>

#include "optospring.hpp"

namespace optospring::testing {

inline SystemConfig preset(const std::string& name) {
  return load_config(std::string(OPTOSPRING_DEFAULT_PRESET_DIR) + "/" + name + ".cfg");
}

/// Deterministic generator of physically plausible random inputs.
class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  double log_uniform(double lo, double hi) { return std::exp(uniform(std::log(lo), std::log(hi))); }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }

  MirrorParams mirror(double mass_lo, double mass_hi) {
    MirrorParams m;
    m.mass = log_uniform(mass_lo, mass_hi);
    m.omega0 = kTwoPi * log_uniform(0.3, 10.0);
    m.gamma0 = m.omega0 / log_uniform(10.0, 1e7);
    m.label = "m";
    return m;
  }

  /// Random resolved configuration around the baseline regime.
  SystemConfig config() {
    SystemConfig c;
    c.mirror1 = mirror(1e-6, 1e-4);
    c.mirror1.label = "light";
    c.mirror2 = mirror(1e-2, 1.0);
    c.mirror2.label = "heavy";
    auto& cav = c.cavity;
    cav.round_trip_length = uniform(0.02, 0.3);
    cav.finesse = log_uniform(100.0, 1e4);
    cav.kappa = kappa_from_finesse(cav.round_trip_length, cav.finesse) * uniform(0.95, 1.05);
    cav.kappa_in_ratio = uniform(0.05, 0.95);
    cav.detuning = cav.kappa * uniform(-3.0, 3.0);
    cav.omega_laser = kTwoPi * uniform(200e12, 600e12);
    cav.input_power = log_uniform(1e-4, 0.1);
    cav.n_cav_peak = resonant_photon_number(cav.input_power, cav.omega_laser, cav.kappa, cav.kappa_in_ratio);
    cav.cos_beta = uniform(0.5, 1.0);
    cav.zeta1 = 2.0 * cav.cos_beta;
    cav.zeta2 = uniform(0.5, 1.5);
    cav.g_pull = pull_coefficient(cav.pull, cav.omega_laser, cav.round_trip_length, cav.zeta1);
    cav.pressure = uniform(0.0, 10.0);
    c.servo.g_el = log_uniform(1e-3, 1e3);
    c.servo.switch_frequency = uniform(0.5, 5.0);
    if (integer(0, 1)) c.servo.off_gain = log_uniform(1e-4, 1.0);
    const int sections = integer(0, 3);
    for (int i = 0; i < sections; ++i) {
      const auto kind = static_cast<SectionKind>(integer(0, 2));
      const double value = kind == SectionKind::gain ? uniform(0.1, 10.0) : to_angular(log_uniform(1.0, 1e4));
      c.servo.sections.push_back({kind, value});
    }
    c.noise.temperature = uniform(0.0, 400.0);
    c.noise.freq_noise_amp = integer(0, 1) ? log_uniform(1.0, 1e5) : 0.0;
    c.eta = log_uniform(1e-2, 1e4);
    return c;
  }

  std::mt19937_64& engine() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

}  // namespace optospring::testing
