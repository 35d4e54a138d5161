#pragma once

// One-sided spectral densities over ordinary frequency (Hz): thermal and
// frequency-noise displacement spectra, detector calibration, Welch
// estimation of simulated series and spectral mode temperatures.

#include <algorithm>
#include <cmath>
#include <complex>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>

#include "optospring/constants.hpp"
#include "optospring/error.hpp"
#include "optospring/model.hpp"
#include "optospring/response.hpp"

namespace optospring {

enum class SpectrumKind { displacement, voltage, frequency_noise };

inline const char* unit_of(SpectrumKind k) {
  switch (k) {
    case SpectrumKind::displacement: return "m^2/Hz";
    case SpectrumKind::voltage: return "V^2/Hz";
    case SpectrumKind::frequency_noise: return "Hz^2/Hz";
  }
  return "?";
}

inline const char* to_string(SpectrumKind k) {
  switch (k) {
    case SpectrumKind::displacement: return "displacement";
    case SpectrumKind::voltage: return "voltage";
    case SpectrumKind::frequency_noise: return "frequency-noise";
  }
  return "?";
}

/// One-sided spectral density on a strictly increasing grid of ordinary
/// frequencies. Integrating over the grid gives the variance.
struct Spectrum {
  std::vector<double> freq;   // Hz
  std::vector<double> value;  // unit_of(kind)
  SpectrumKind kind = SpectrumKind::displacement;

  void validate() const {
    if (freq.size() != value.size()) throw ValidationError("invariant violated: spectrum grid/value length");
    for (std::size_t i = 0; i < freq.size(); ++i) {
      if (i > 0 && !(freq[i] > freq[i - 1])) throw ValidationError("invariant violated: spectrum grid strictly increasing");
      if (!(value[i] >= 0.0)) throw ValidationError("invariant violated: spectrum values >= 0");
    }
  }
};

/// Trapezoidal integral of a spectrum over its grid.
inline double integrate(const Spectrum& s) {
  double acc = 0.0;
  for (std::size_t i = 1; i < s.freq.size(); ++i) {
    acc += 0.5 * (s.value[i] + s.value[i - 1]) * (s.freq[i] - s.freq[i - 1]);
  }
  return acc;
}

/// Trapezoidal integral over [lo, hi], interpolating linearly at the edges.
inline double integrate_band(const Spectrum& s, double lo, double hi) {
  auto value_at = [&](double f) {
    auto it = std::upper_bound(s.freq.begin(), s.freq.end(), f);
    const auto i = static_cast<std::size_t>(it - s.freq.begin());
    if (i == 0) return s.value.front();
    if (i >= s.freq.size()) return s.value.back();
    const double u = (f - s.freq[i - 1]) / (s.freq[i] - s.freq[i - 1]);
    return s.value[i - 1] + u * (s.value[i] - s.value[i - 1]);
  };
  double acc = 0.0;
  double prev_f = lo, prev_v = value_at(lo);
  for (std::size_t i = 0; i < s.freq.size(); ++i) {
    if (s.freq[i] <= lo) continue;
    if (s.freq[i] >= hi) break;
    acc += 0.5 * (prev_v + s.value[i]) * (s.freq[i] - prev_f);
    prev_f = s.freq[i];
    prev_v = s.value[i];
  }
  acc += 0.5 * (prev_v + value_at(hi)) * (hi - prev_f);
  return acc;
}

// ---------------------------------------------------------------------------
// Grid policy

struct GridPolicy {
  double f_min = 0.1;    // Hz
  double f_max = 1e5;    // Hz
  std::size_t points = 4096;
  std::size_t core_points = 201;   // across +-10 half-widths
  std::size_t wing_per_decade = 50;
};

/// Log-spaced master grid, densified around a resonance so that a peak of
/// half-width `hwhm_hz` at `peak_hz` integrates to better than 1e-3: a core
/// of points uniform in arctan((f - f0)/hwhm) out to 10 half-widths and
/// log-spaced wings out to where the master spacing is 5% of the distance.
inline std::vector<double> frequency_grid(const GridPolicy& p = {}, double peak_hz = 0.0,
                                          double hwhm_hz = 0.0) {
  std::vector<double> f(p.points);
  const double ratio = std::pow(p.f_max / p.f_min, 1.0 / static_cast<double>(p.points - 1));
  for (std::size_t i = 0; i < p.points; ++i) f[i] = p.f_min * std::pow(ratio, static_cast<double>(i));
  f.back() = p.f_max;
  if (peak_hz > p.f_min && peak_hz < p.f_max && hwhm_hz > 0.0) {
    const double theta_max = std::atan(10.0);
    for (std::size_t i = 0; i < p.core_points; ++i) {
      const double th = -theta_max + 2.0 * theta_max * static_cast<double>(i) / static_cast<double>(p.core_points - 1);
      f.push_back(peak_hz + hwhm_hz * std::tan(th));
    }
    const double reach = 20.0 * peak_hz * (ratio - 1.0);
    if (reach > 10.0 * hwhm_hz) {
      const double decades = std::log10(reach / (10.0 * hwhm_hz));
      const auto n = static_cast<std::size_t>(std::ceil(decades * static_cast<double>(p.wing_per_decade)));
      for (std::size_t i = 1; i <= n; ++i) {
        const double d = 10.0 * hwhm_hz * std::pow(10.0, decades * static_cast<double>(i) / static_cast<double>(n));
        f.push_back(peak_hz + d);
        f.push_back(peak_hz - d);
      }
    }
  }
  std::erase_if(f, [&](double x) { return !(x >= p.f_min && x <= p.f_max); });
  std::sort(f.begin(), f.end());
  std::vector<double> out;
  out.reserve(f.size());
  for (double x : f) {
    if (out.empty() || x > out.back() * (1.0 + 1e-12)) out.push_back(x);
  }
  return out;
}

/// Default grid for a configuration: densified around its mode when stable.
inline std::vector<double> frequency_grid_for(const EffectiveMode& mode, const GridPolicy& p = {}) {
  if (mode.stable && mode.gamma_eff > 0.0) {
    return frequency_grid(p, to_hz(mode.omega_eff), mode.gamma_eff / (4.0 * kPi));
  }
  return frequency_grid(p);
}

// ---------------------------------------------------------------------------
// Closed-loop responses on a grid

struct LoopResponses {
  ComplexResponse chi1, chi2, chi_fb, k_opt, chi_eff;
};

inline LoopResponses loop_responses(const SystemConfig& cfg, std::span<const double> freq_hz,
                                    ServoState state = ServoState::on) {
  LoopResponses r;
  std::vector<double> w(freq_hz.size());
  std::transform(freq_hz.begin(), freq_hz.end(), w.begin(), to_angular);
  for (auto* resp : {&r.chi1, &r.chi2, &r.chi_fb, &r.k_opt, &r.chi_eff}) {
    resp->grid = w;
    resp->values.reserve(w.size());
  }
  for (double omega : w) {
    const auto p = loop_point(cfg, omega, state);
    r.chi1.values.push_back(p.chi1);
    r.chi2.values.push_back(p.chi2);
    r.chi_fb.values.push_back(p.chi_fb);
    r.k_opt.values.push_back(p.k_opt);
    r.chi_eff.values.push_back(p.chi_eff);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Synthetic spectra

/// Fluctuation-dissipation thermal displacement noise of the light mirror,
/// S_x^th = 4 k_B T gamma1 m1 |chi_eff|^2.
inline Spectrum thermal_spectrum(double temperature, const MirrorParams& mirror, const ComplexResponse& chi_eff) {
  if (!(temperature >= 0.0)) throw ValidationError("invariant violated: noise: T >= 0");
  Spectrum s;
  s.kind = SpectrumKind::displacement;
  const double force_psd = 4.0 * kBoltzmann * temperature * mirror.gamma0 * mirror.mass;
  for (std::size_t i = 0; i < chi_eff.grid.size(); ++i) {
    s.freq.push_back(to_hz(chi_eff.grid[i]));
    s.value.push_back(force_psd * std::norm(chi_eff.values[i]));
  }
  return s;
}

/// Displacement driven by laser frequency noise through the optical rigidity,
/// S_x^freq = S_phidot |chi_eff / [chi1 (1 + zeta2 chi2 chi_fb) g]|^2.
inline Spectrum freqnoise_spectrum(const NoiseEnv& noise, const SystemConfig& cfg, const ComplexResponse& chi_eff,
                                   const ComplexResponse& chi1, const ComplexResponse& chi2,
                                   const ComplexResponse& chi_fb) {
  const double g = cfg.cavity.g_pull;
  const double z2 = cfg.cavity.zeta2;
  Spectrum s;
  s.kind = SpectrumKind::displacement;
  for (std::size_t i = 0; i < chi_eff.grid.size(); ++i) {
    const double f = to_hz(chi_eff.grid[i]);
    const double sphi = noise.psd(f);
    s.freq.push_back(f);
    if (sphi == 0.0) {
      s.value.push_back(0.0);
      continue;
    }
    const cplx den = chi1.values[i] * (1.0 + z2 * chi2.values[i] * chi_fb.values[i]) * g;
    if (!(std::abs(den) > 0.0)) {
      throw SingularityError("frequency-noise transfer singular at f = " + std::to_string(f) + " Hz");
    }
    s.value.push_back(sphi * std::norm(chi_eff.values[i] / den));
  }
  return s;
}

inline Spectrum freqnoise_spectrum(const NoiseEnv& noise, const SystemConfig& cfg, const LoopResponses& r) {
  return freqnoise_spectrum(noise, cfg, r.chi_eff, r.chi1, r.chi2, r.chi_fb);
}

/// Sum of two spectra on the same grid.
inline Spectrum add(const Spectrum& a, const Spectrum& b) {
  if (a.freq != b.freq) throw ValidationError("spectra on different grids");
  Spectrum s = a;
  for (std::size_t i = 0; i < s.value.size(); ++i) s.value[i] += b.value[i];
  return s;
}

// ---------------------------------------------------------------------------
// Detector calibration

/// Volts per metre of the reflected-light error signal for a trapped mode
/// at omega_eff: (2 pi c m1 / (F zeta1)) (1 - kappa_in/kappa) omega_eff^2 eta.
inline double calibration_factor(const SystemConfig& cfg, double omega_eff, double eta) {
  const auto& cav = cfg.cavity;
  if (!(cav.zeta1 > 0.0) || !(cav.finesse > 0.0)) throw ValidationError("calibration needs zeta1 > 0 and finesse > 0");
  return kTwoPi * kSpeedOfLight * cfg.mirror1.mass / (cav.finesse * cav.zeta1) * (1.0 - cav.kappa_in_ratio) *
         omega_eff * omega_eff * eta;
}

inline Spectrum displacement_to_voltage(const Spectrum& s_x, const SystemConfig& cfg, double omega_eff, double eta) {
  const double k = calibration_factor(cfg, omega_eff, eta);
  Spectrum s = s_x;
  s.kind = SpectrumKind::voltage;
  for (auto& v : s.value) v *= k * k;
  return s;
}

inline Spectrum voltage_to_displacement(const Spectrum& s_v, const SystemConfig& cfg, double omega_eff, double eta) {
  const double k = calibration_factor(cfg, omega_eff, eta);
  Spectrum s = s_v;
  s.kind = SpectrumKind::displacement;
  for (auto& v : s.value) v /= k * k;
  return s;
}

// ---------------------------------------------------------------------------
// Welch estimator

/// One-sided Welch PSD with a periodic Hann window and per-segment mean
/// removal. Normalized so that the sum of S over bins times the bin width is
/// the series variance.
inline Spectrum welch_psd(std::span<const double> series, double dt, std::size_t segment_length,
                          double overlap = 0.5, SpectrumKind kind = SpectrumKind::displacement) {
  if (!(dt > 0.0)) throw ValidationError("welch: dt > 0");
  if (segment_length < 4) throw ValidationError("welch: segment_length >= 4");
  if (!(overlap >= 0.0 && overlap < 1.0)) throw ValidationError("welch: 0 <= overlap < 1");
  const std::size_t step = std::max<std::size_t>(1, static_cast<std::size_t>(
                                                        std::llround(segment_length * (1.0 - overlap))));
  if (series.size() < segment_length + step) {
    throw InsufficientDataError("welch: need at least two segments of " + std::to_string(segment_length) +
                                " samples, got " + std::to_string(series.size()));
  }
  const std::size_t n = segment_length;
  std::vector<double> window(n);
  double wsum2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    window[i] = 0.5 - 0.5 * std::cos(kTwoPi * static_cast<double>(i) / static_cast<double>(n));
    wsum2 += window[i] * window[i];
  }
  const double fs = 1.0 / dt;
  const std::size_t bins = n / 2 + 1;
  std::vector<double> acc(bins, 0.0);
  std::size_t segments = 0;
  Eigen::FFT<double> fft;
  std::vector<double> buf(n);
  std::vector<std::complex<double>> spec;
  for (std::size_t start = 0; start + n <= series.size(); start += step) {
    const double mean = std::accumulate(series.begin() + start, series.begin() + start + n, 0.0) / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) buf[i] = (series[start + i] - mean) * window[i];
    fft.fwd(spec, buf);
    for (std::size_t k = 0; k < bins; ++k) acc[k] += std::norm(spec[k]);
    ++segments;
  }
  Spectrum s;
  s.kind = kind;
  s.freq.resize(bins);
  s.value.resize(bins);
  for (std::size_t k = 0; k < bins; ++k) {
    const bool edge = k == 0 || (n % 2 == 0 && k == n / 2);
    s.freq[k] = static_cast<double>(k) * fs / static_cast<double>(n);
    s.value[k] = (edge ? 1.0 : 2.0) * acc[k] / (static_cast<double>(segments) * fs * wsum2);
  }
  return s;
}

/// Sum of S * df over the bins of a uniformly spaced spectrum.
inline double bin_sum(const Spectrum& s) {
  if (s.freq.size() < 2) return 0.0;
  const double df = s.freq[1] - s.freq[0];
  return std::accumulate(s.value.begin(), s.value.end(), 0.0) * df;
}

// ---------------------------------------------------------------------------
// Mode temperature

/// Least-squares Lorentzian (area/pi) hwhm / ((f - f0)^2 + hwhm^2).
struct LorentzianFit {
  double center = 0.0;  // Hz
  double hwhm = 0.0;    // Hz
  double area = 0.0;    // spectrum units * Hz
  std::size_t points = 0;
};

inline double lorentzian(const LorentzianFit& l, double f) {
  const double d = f - l.center;
  return l.area / kPi * l.hwhm / (d * d + l.hwhm * l.hwhm);
}

/// Fits the peak nearest `f_guess` using the points above a tenth of its
/// maximum, within an octave of the guess so that unrelated low-frequency
/// structure cannot leak into a broad peak.
inline LorentzianFit fit_lorentzian(const Spectrum& s, double f_guess) {
  const auto& f = s.freq;
  const auto& v = s.value;
  if (f.size() < 5) throw InsufficientDataError("lorentzian fit: spectrum too short");
  auto in_window = [&](std::size_t i) { return f[i] >= 0.5 * f_guess && f[i] <= 2.0 * f_guess; };
  std::size_t peak = f.size();
  for (std::size_t i = 0; i < f.size(); ++i) {
    if (!in_window(i)) continue;
    if (peak == f.size() || v[i] > v[peak]) peak = i;
  }
  if (peak == f.size() || !(v[peak] > 0.0)) throw InsufficientDataError("lorentzian fit: no peak near guess");
  const double vmax = v[peak];
  std::size_t lo = peak, hi = peak;
  while (lo > 0 && in_window(lo - 1) && v[lo - 1] >= 0.1 * vmax) --lo;
  while (hi + 1 < f.size() && in_window(hi + 1) && v[hi + 1] >= 0.1 * vmax) ++hi;
  if (hi - lo + 1 < 5) throw InsufficientDataError("lorentzian fit: fewer than 5 points on the peak");

  // Half-maximum crossings seed the width.
  auto crossing = [&](std::size_t from, int dir) {
    std::size_t i = from;
    while (true) {
      const std::size_t j = static_cast<std::size_t>(static_cast<long>(i) + dir);
      if ((dir < 0 && i == lo) || (dir > 0 && i == hi)) return f[i];
      if (v[j] < 0.5 * vmax) {
        const double u = (0.5 * vmax - v[i]) / (v[j] - v[i]);
        return f[i] + u * (f[j] - f[i]);
      }
      i = j;
    }
  };
  double c = f[peak];
  double w = std::max(0.5 * (crossing(peak, 1) - crossing(peak, -1)), 1e-12 * c);
  double a = kPi * w * vmax;

  // Levenberg-Marquardt on relative residuals (peak-normalized).
  auto residuals = [&](double cc, double ww, double aa, Eigen::VectorXd& r) {
    r.resize(static_cast<Eigen::Index>(hi - lo + 1));
    for (std::size_t i = lo; i <= hi; ++i) {
      const double d = f[i] - cc;
      r[static_cast<Eigen::Index>(i - lo)] = (aa / kPi * ww / (d * d + ww * ww) - v[i]) / vmax;
    }
    return r.squaredNorm();
  };
  Eigen::VectorXd r;
  double cost = residuals(c, w, a, r);
  double lambda = 1e-3;
  for (int it = 0; it < 200; ++it) {
    Eigen::MatrixXd jac(r.size(), 3);
    for (std::size_t i = lo; i <= hi; ++i) {
      const double d = f[i] - c;
      const double q = d * d + w * w;
      const auto row = static_cast<Eigen::Index>(i - lo);
      jac(row, 0) = a / kPi * w * 2.0 * d / (q * q) / vmax;
      jac(row, 1) = a / kPi * (q - 2.0 * w * w) / (q * q) / vmax;
      jac(row, 2) = w / (kPi * q) / vmax;
    }
    const Eigen::Matrix3d jtj = jac.transpose() * jac;
    const Eigen::Vector3d jtr = jac.transpose() * r;
    bool improved = false;
    for (int tries = 0; tries < 20; ++tries) {
      Eigen::Matrix3d lhs = jtj;
      lhs.diagonal() *= (1.0 + lambda);
      const Eigen::Vector3d step = lhs.ldlt().solve(-jtr);
      const double c2 = c + step[0], w2 = w + step[1], a2 = a + step[2];
      Eigen::VectorXd r2;
      if (w2 > 0.0 && a2 > 0.0) {
        const double cost2 = residuals(c2, w2, a2, r2);
        if (cost2 < cost) {
          const double rel = (cost - cost2) / std::max(cost, 1e-300);
          c = c2, w = w2, a = a2, r = r2, cost = cost2;
          lambda = std::max(lambda / 10.0, 1e-12);
          improved = true;
          if (rel < 1e-14) it = 1000;
          break;
        }
      }
      lambda *= 10.0;
    }
    if (!improved) break;
  }
  return {c, w, a, hi - lo + 1};
}

/// Spectral mode temperature: T_eff = m1 omega_eff^2 <x^2> / k_B.
struct ModeTemperature {
  double temperature = 0.0;   // K
  double mean_square_x = 0.0;  // m^2
  double omega_eff = 0.0;     // rad/s
  double band_lo = 0.0, band_hi = 0.0;  // Hz
  double band_integral = 0.0;  // m^2, direct integral over the band
  LorentzianFit fit;
};

/// Integrates the peak within +-3 sigma (sigma = fitted Lorentzian half-width)
/// and adds the fitted Lorentzian's area outside that band.
inline ModeTemperature mode_temperature(const Spectrum& s_x, double omega_eff, double gamma_eff,
                                        const MirrorParams& mirror) {
  (void)gamma_eff;  // the fit determines the width; gamma_eff only names the mode
  ModeTemperature mt;
  mt.omega_eff = omega_eff;
  mt.fit = fit_lorentzian(s_x, to_hz(omega_eff));
  const double sigma = mt.fit.hwhm;
  // Clipped to the grid; the fitted line supplies whatever the band misses.
  mt.band_lo = std::max(mt.fit.center - 3.0 * sigma, s_x.freq.front());
  mt.band_hi = std::min(mt.fit.center + 3.0 * sigma, s_x.freq.back());
  if (!(mt.band_hi > mt.band_lo)) throw ValidationError("mode temperature: fitted peak lies outside the spectrum grid");
  mt.band_integral = integrate_band(s_x, mt.band_lo, mt.band_hi);
  const double inside = (std::atan((mt.band_hi - mt.fit.center) / sigma) - std::atan((mt.band_lo - mt.fit.center) / sigma)) / kPi;
  const double outside = mt.fit.area * (1.0 - inside);
  mt.mean_square_x = mt.band_integral + outside;
  mt.temperature = mirror.mass * omega_eff * omega_eff * mt.mean_square_x / kBoltzmann;
  return mt;
}

// ---------------------------------------------------------------------------
// Occupation numbers

struct Occupations {
  double n_th_prime = 0.0;  // k_B T gamma1 / (hbar omega_eff gamma_eff)
  double n_freq = 0.0;      // m1 omega_eff <x^2>_freq / hbar
  double n_th_bare = 0.0;   // k_B T / (hbar omega1)
};

inline Occupations occupations(const SystemConfig& cfg, const NoiseEnv& noise, const EffectiveMode& mode,
                               const Spectrum& s_x_freq) {
  if (!(mode.gamma_eff > 0.0)) throw InstabilityError("occupations undefined: mode is unstable (gamma_eff <= 0)");
  if (!(mode.omega_eff > 0.0)) throw ValidationError("occupations need omega_eff > 0");
  const auto& m1 = cfg.mirror1;
  const double kt = kBoltzmann * noise.temperature;
  Occupations o;
  o.n_th_prime = kt * m1.gamma0 / (kHbar * mode.omega_eff * mode.gamma_eff);
  o.n_freq = m1.mass * mode.omega_eff * integrate(s_x_freq) / kHbar;
  o.n_th_bare = kt / (kHbar * m1.omega0);
  return o;
}

}  // namespace optospring
