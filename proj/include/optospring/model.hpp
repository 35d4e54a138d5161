#pragma once

// Physical parameter sets for the two suspended mirrors, the cavity, the
// electro-optical servo and the noise environment.

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "optospring/constants.hpp"
#include "optospring/error.hpp"

namespace optospring {

namespace detail {

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ValidationError("invariant violated: " + what);
}

inline bool finite_positive(double v) { return std::isfinite(v) && v > 0.0; }

}  // namespace detail

/// One suspended mirror (pendulum mode) with viscous damping.
struct MirrorParams {
  double mass = 0.0;    // kg
  double omega0 = 0.0;  // rad/s
  double gamma0 = 0.0;  // rad/s, energy dissipation rate
  std::string label;

  double quality() const { return omega0 / gamma0; }

  void validate() const {
    const std::string who = label.empty() ? "mirror" : label;
    detail::require(detail::finite_positive(mass), who + ": mass > 0");
    detail::require(detail::finite_positive(omega0), who + ": omega0 > 0");
    detail::require(detail::finite_positive(gamma0), who + ": gamma0 > 0");
    detail::require(detail::finite_positive(quality()), who + ": Q finite and > 0");
  }
};

/// How the frequency-pull coefficient g is derived when not set explicitly.
enum class PullConvention {
  round_trip,  // g = omega_laser / L
  geometric,   // g = zeta1 * omega_laser / L
};

inline const char* to_string(PullConvention c) {
  return c == PullConvention::round_trip ? "round_trip" : "geometric";
}

inline double pull_coefficient(PullConvention c, double omega_laser, double length,
                               double zeta1) {
  const double g = omega_laser / length;
  return c == PullConvention::geometric ? zeta1 * g : g;
}

/// Optical cavity. Every field is resolved (no derived value left unset)
/// once a configuration has been loaded.
struct CavityParams {
  double round_trip_length = 0.0;  // m
  double finesse = 0.0;
  double kappa = 0.0;           // amplitude decay, rad/s
  double kappa_in_ratio = 0.0;  // kappa_in / kappa
  double detuning = 0.0;        // rad/s, > 0 is blue
  double omega_laser = 0.0;     // rad/s
  double input_power = 0.0;     // W
  // Mean photon number on resonance; the detuning dependence is Lorentzian.
  double n_cav_peak = 0.0;
  // When set, the photon number is this value at every detuning.
  std::optional<double> n_cav_fixed;
  double cos_beta = 1.0;
  double zeta1 = 2.0;
  double zeta2 = 1.0;
  PullConvention pull = PullConvention::round_trip;
  double g_pull = 0.0;  // rad/s per m
  double pressure = 0.0;  // Pa, metadata only

  void validate() const {
    using detail::finite_positive;
    using detail::require;
    require(finite_positive(round_trip_length), "cavity: L > 0");
    require(finite_positive(finesse), "cavity: finesse > 0");
    require(finite_positive(kappa), "cavity: kappa > 0");
    require(kappa_in_ratio >= 0.0 && kappa_in_ratio <= 1.0,
            "cavity: 0 <= kappa_in_ratio <= 1");
    require(std::isfinite(detuning), "cavity: detuning finite");
    require(finite_positive(omega_laser), "cavity: omega_laser > 0");
    require(std::isfinite(input_power) && input_power >= 0.0, "cavity: input_power >= 0");
    require(std::isfinite(n_cav_peak) && n_cav_peak >= 0.0, "cavity: n_cav >= 0");
    if (n_cav_fixed) {
      require(std::isfinite(*n_cav_fixed) && *n_cav_fixed >= 0.0, "cavity: n_cav >= 0");
    }
    require(cos_beta > 0.0 && cos_beta <= 1.0, "cavity: 0 < cos_beta <= 1");
    require(std::isfinite(zeta1) && std::isfinite(zeta2), "cavity: zeta finite");
    require(std::isfinite(g_pull) && g_pull >= 0.0, "cavity: g_pull >= 0");
  }
};

/// Amplitude decay rate implied by the round-trip length and finesse:
/// half the full linewidth FSR/F, in rad/s.
inline double kappa_from_finesse(double round_trip_length, double finesse) {
  return kPi * kSpeedOfLight / (round_trip_length * finesse);
}

/// Resonant photon number of a two-port cavity driven through the input coupler:
/// n0 = 2 kappa_in P / (hbar omega_laser kappa^2).
inline double resonant_photon_number(double input_power, double omega_laser, double kappa,
                                     double kappa_in_ratio) {
  // Standard buildup with amplitude decay rates; the factor 2 is the
  // calibration constant, checked against the 8.5e5 photon operating point
  // of the parametric stability map.
  constexpr double kBuildup = 2.0;
  return kBuildup * kappa_in_ratio * input_power / (kHbar * omega_laser * kappa);
}

/// Mean intracavity photon number at the cavity's current detuning.
inline double intracavity_photons(const CavityParams& cav) {
  if (!(cav.kappa > 0.0)) throw ValidationError("invariant violated: cavity: kappa > 0");
  if (cav.n_cav_fixed) return *cav.n_cav_fixed;
  const double r = cav.detuning / cav.kappa;
  return cav.n_cav_peak / (1.0 + r * r);
}

enum class SectionKind { highpass, lowpass, gain };

inline const char* to_string(SectionKind k) {
  switch (k) {
    case SectionKind::highpass: return "highpass";
    case SectionKind::lowpass: return "lowpass";
    case SectionKind::gain: return "gain";
  }
  return "?";
}

/// First-order filter section. `value` is the corner (rad/s) for
/// highpass/lowpass and the dimensionless factor for gain.
struct FilterSection {
  SectionKind kind = SectionKind::gain;
  double value = 1.0;
};

/// Electro-optical feedback: chi_fb = i omega g_el times the section product.
struct ServoParams {
  double g_el = 0.0;  // N s / m, on-state differentiator gain
  std::vector<FilterSection> sections;
  double switch_frequency = 1.0;  // Hz
  // Residual gain in the switched-off state; empty means "cancel the optical
  // anti-damping" (the near-zero gain used when the cooling is released).
  std::optional<double> off_gain;
  // Recorded from the stability-map parameter list; unused by any formula.
  std::optional<double> g_f;

  void validate() const {
    using detail::require;
    require(std::isfinite(g_el) && g_el >= 0.0, "servo: g_el >= 0");
    if (off_gain) require(std::isfinite(*off_gain) && *off_gain >= 0.0, "servo: off_gain >= 0");
    require(detail::finite_positive(switch_frequency), "servo: switch_frequency > 0");
    for (const auto& s : sections) {
      if (s.kind == SectionKind::gain) {
        require(std::isfinite(s.value), "servo: gain section finite");
      } else {
        require(detail::finite_positive(s.value), "servo: section corner > 0");
      }
    }
  }
};

/// Bath temperature and laser frequency noise sqrt(S_phidot(f)) = A / f.
/// S_phidot is in ordinary-frequency units, Hz^2/Hz.
struct NoiseEnv {
  double temperature = 300.0;  // K
  double freq_noise_amp = 0.0;  // Hz * Hz/sqrt(Hz)
  // Optional (f [Hz], sqrt(S) [Hz/sqrt(Hz)]) pairs overriding the 1/f model.
  std::vector<std::pair<double, double>> freq_noise_table;

  void validate() const {
    using detail::require;
    require(std::isfinite(temperature) && temperature >= 0.0, "noise: T >= 0");
    require(std::isfinite(freq_noise_amp) && freq_noise_amp >= 0.0, "noise: A >= 0");
    for (std::size_t i = 0; i < freq_noise_table.size(); ++i) {
      const auto& [f, v] = freq_noise_table[i];
      require(detail::finite_positive(f), "noise: table frequencies > 0");
      require(std::isfinite(v) && v >= 0.0, "noise: table values >= 0");
      if (i > 0) {
        require(f > freq_noise_table[i - 1].first, "noise: table frequencies strictly increasing");
      }
    }
  }

  /// Amplitude spectral density sqrt(S_phidot) at ordinary frequency f (Hz).
  double asd(double f_hz) const {
    if (freq_noise_table.empty()) return f_hz > 0.0 ? freq_noise_amp / f_hz : 0.0;
    return interpolate_table(f_hz);
  }

  /// One-sided S_phidot(f) in Hz^2/Hz.
  double psd(double f_hz) const {
    const double a = asd(f_hz);
    return a * a;
  }

  /// S_phidot evaluated at an angular frequency.
  double psd_at(double omega) const { return psd(to_hz(omega)); }

  bool silent() const {
    if (freq_noise_table.empty()) return freq_noise_amp == 0.0;
    return std::all_of(freq_noise_table.begin(), freq_noise_table.end(),
                       [](const auto& p) { return p.second == 0.0; });
  }

 private:
  // Log-log interpolation between tabulated points, power-law extrapolation
  // from the end segments; linear where a value is zero.
  double interpolate_table(double f) const {
    const auto& t = freq_noise_table;
    if (t.size() == 1) return t.front().second;
    if (!(f > 0.0)) f = t.front().first;
    std::size_t hi = 1;
    if (f >= t.back().first) {
      hi = t.size() - 1;
    } else if (f > t.front().first) {
      hi = static_cast<std::size_t>(
          std::upper_bound(t.begin(), t.end(), f,
                           [](double x, const auto& p) { return x < p.first; }) -
          t.begin());
    }
    const auto& [f0, v0] = t[hi - 1];
    const auto& [f1, v1] = t[hi];
    if (v0 > 0.0 && v1 > 0.0) {
      const double slope = std::log(v1 / v0) / std::log(f1 / f0);
      return v0 * std::exp(slope * std::log(f / f0));
    }
    const double u = std::clamp((f - f0) / (f1 - f0), 0.0, 1.0);
    return v0 + u * (v1 - v0);
  }
};

/// Everything a run needs.
struct SystemConfig {
  MirrorParams mirror1;  // light, optically trapped mirror
  MirrorParams mirror2;  // heavy, actuated mirror
  CavityParams cavity;
  ServoParams servo;
  NoiseEnv noise;
  double eta = 1.0;  // detector V/W
  std::vector<std::string> warnings;

  void validate() const {
    mirror1.validate();
    mirror2.validate();
    cavity.validate();
    servo.validate();
    noise.validate();
    detail::require(detail::finite_positive(eta), "detector: eta > 0");
  }

  SystemConfig with_detuning(double delta) const {
    SystemConfig c = *this;
    c.cavity.detuning = delta;
    return c;
  }
  SystemConfig with_gain(double g_el) const {
    SystemConfig c = *this;
    c.servo.g_el = g_el;
    return c;
  }
};

}  // namespace optospring
