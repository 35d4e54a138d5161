#pragma once

#include "optospring/constants.hpp"
#include "optospring/error.hpp"

namespace optospring {

/// Initial heating rate of a released trapped mode, in phonons per second.
struct RateTerms {
  double total = 0.0;
  double thermal = 0.0;  // n_th (omega1 / omega_eff) gamma1
  double trap = 0.0;     // m1 omega_eff^3 S_phidot(omega_eff) / (hbar g^2)
};

/// Thermal-decoherence law of an optically trapped oscillator. `s_phidot` is
/// the frequency-noise density at the trapped frequency in Hz^2/Hz; `g` is
/// the frequency-pull coefficient in rad/s per m.
inline RateTerms decoherence_rate(double temperature, double mass, double omega1, double gamma1,
                                  double omega_eff, double s_phidot, double g) {
  if (!(omega_eff > 0.0)) throw ValidationError("decoherence rate needs omega_eff > 0");
  const double n_th = kBoltzmann * temperature / (kHbar * omega1);
  RateTerms r;
  r.thermal = n_th * (omega1 / omega_eff) * gamma1;
  r.trap = s_phidot == 0.0 ? 0.0 : mass * omega_eff * omega_eff * omega_eff * s_phidot / (kHbar * g * g);
  r.total = r.thermal + r.trap;
  return r;
}

}  // namespace optospring
