#pragma once

// Coherence condition for an optically trapped oscillator and the budget of
// coherent oscillations before one phonon of heating.

#include <cmath>

#include "optospring/constants.hpp"
#include "optospring/error.hpp"
#include "optospring/model.hpp"
#include "optospring/rate_law.hpp"

namespace optospring {

/// Single-photon coupling g0 = g x_zpf, x_zpf = sqrt(hbar / (2 m omega_eff)).
inline double single_photon_coupling(double g_pull, double mass, double omega_eff) {
  if (!(omega_eff > 0.0)) throw ValidationError("single-photon coupling needs omega_eff > 0");
  return g_pull * std::sqrt(kHbar / (2.0 * mass * omega_eff));
}

inline double single_photon_coupling(const SystemConfig& cfg, double omega_eff) {
  return single_photon_coupling(cfg.cavity.g_pull, cfg.mirror1.mass, omega_eff);
}

struct ConditionVerdict {
  bool satisfied = false;
  double margin = 0.0;  // S_phidot(omega_eff) omega_eff / g0^2
};

/// S_phidot(omega_eff) < g0^2 / omega_eff, strictly.
inline ConditionVerdict check_condition(const NoiseEnv& noise, double g0, double omega_eff) {
  if (!(omega_eff > 0.0)) throw ValidationError("condition check needs omega_eff > 0");
  const double s = noise.psd_at(omega_eff);
  ConditionVerdict v;
  if (s == 0.0) {
    v.margin = 0.0;
  } else {
    v.margin = g0 > 0.0 ? s * omega_eff / (g0 * g0) : INFINITY;
  }
  v.satisfied = v.margin < 1.0;
  return v;
}

struct CoherenceBudget {
  double inv_n_osc_thermal = 0.0;
  double inv_n_osc_trap = 0.0;
  double n_osc = 0.0;
  double condition_margin = 0.0;
  double g0 = 0.0;  // rad/s
  RateTerms rate;
};

/// Default laser for prospective budgets, 300 THz.
inline constexpr double kDefaultLaserOmega = kTwoPi * 300e12;

/// 1/n_osc = 2 pi (d<n>/dt) / omega_eff split into its thermal and
/// trap-induced parts, evaluated from the decoherence-rate law with
/// gamma1 = omega1 / Q1 and g = omega_laser / L.
/// `noise_asd` is sqrt(S_phidot) at omega_eff in Hz/sqrt(Hz).
inline CoherenceBudget feasibility_budget(double m1, double omega_eff, double noise_asd, double round_trip_length,
                                          double q1, double omega1, double temperature,
                                          double omega_laser = kDefaultLaserOmega) {
  if (!(m1 > 0.0 && omega_eff > 0.0 && round_trip_length > 0.0 && q1 > 0.0 && omega1 > 0.0)) {
    throw ValidationError("feasibility budget: inputs must be positive");
  }
  if (!(noise_asd >= 0.0 && temperature >= 0.0)) throw ValidationError("feasibility budget: noise and T >= 0");
  const double g = omega_laser / round_trip_length;
  const double gamma1 = omega1 / q1;
  CoherenceBudget b;
  b.rate = decoherence_rate(temperature, m1, omega1, gamma1, omega_eff, noise_asd * noise_asd, g);
  b.inv_n_osc_thermal = kTwoPi * b.rate.thermal / omega_eff;
  b.inv_n_osc_trap = kTwoPi * b.rate.trap / omega_eff;
  b.n_osc = 1.0 / (b.inv_n_osc_thermal + b.inv_n_osc_trap);
  b.g0 = single_photon_coupling(g, m1, omega_eff);
  NoiseEnv flat;
  flat.freq_noise_table = {{to_hz(omega_eff), noise_asd}};
  b.condition_margin = check_condition(flat, b.g0, omega_eff).margin;
  return b;
}

}  // namespace optospring
