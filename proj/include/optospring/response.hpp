#pragma once

// Frequency-domain model of the closed loop: two suspended mirrors coupled by
// the cavity length, an optical spring acting on the light mirror and an
// electro-optical servo actuating the heavy one.
//
// Convention: x(t) = x e^{i omega t}, so a viscous damper enters as
// +i gamma omega and the Laplace variable is s = i omega.

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <unsupported/Eigen/Polynomials>

#include "optospring/constants.hpp"
#include "optospring/error.hpp"
#include "optospring/model.hpp"
#include "optospring/parallel.hpp"

namespace optospring {

using cplx = std::complex<double>;

/// Complex response sampled on a strictly increasing angular-frequency grid.
struct ComplexResponse {
  std::vector<double> grid;  // rad/s
  std::vector<cplx> values;

  void validate() const {
    if (grid.size() != values.size() || grid.size() < 2) {
      throw ValidationError("invariant violated: response grid and values of equal length >= 2");
    }
    for (std::size_t i = 0; i < grid.size(); ++i) {
      if (i > 0 && !(grid[i] > grid[i - 1])) {
        throw ValidationError("invariant violated: response grid strictly increasing");
      }
      if (!std::isfinite(values[i].real()) || !std::isfinite(values[i].imag())) {
        throw ValidationError("invariant violated: response has no NaN/Inf entries");
      }
    }
  }
};

/// Trapped-mode pole. pole = -gamma_eff/2 + i omega_eff.
struct EffectiveMode {
  double omega_eff = 0.0;
  double gamma_eff = 0.0;
  bool stable = false;
  cplx pole{};
  std::vector<std::string> warnings;
};

enum class ServoState { on, off };

// ---------------------------------------------------------------------------
// Elementary responses

/// chi(omega) = 1 / [m (omega0^2 - omega^2 + i gamma0 omega)].
inline cplx mech_susceptibility(const MirrorParams& m, double omega) {
  return 1.0 / (m.mass * cplx(m.omega0 * m.omega0 - omega * omega, m.gamma0 * omega));
}

/// Static optical spring k0 = Re k_opt(omega -> 0) = 2 hbar g^2 n Delta / (kappa^2 + Delta^2).
inline double static_spring(const CavityParams& cav) {
  const double n = intracavity_photons(cav);
  const double d = cav.detuning;
  return 2.0 * kHbar * cav.g_pull * cav.g_pull * n * d / (cav.kappa * cav.kappa + d * d);
}

/// Optical spring constant k_opt(omega) = 2 hbar g^2 n Delta / [(kappa + i omega)^2 + Delta^2].
inline cplx optical_spring(const CavityParams& cav, double omega) {
  const cplx kw(cav.kappa, omega);
  const cplx den = kw * kw + cav.detuning * cav.detuning;
  const double scale = cav.kappa * cav.kappa + omega * omega + cav.detuning * cav.detuning;
  if (std::abs(den) < 1e-14 * scale) {
    std::ostringstream os;
    os << "optical spring denominator vanishes at omega = " << omega << " rad/s";
    throw SingularityError(os.str());
  }
  const double n = intracavity_photons(cav);
  return 2.0 * kHbar * cav.g_pull * cav.g_pull * n * cav.detuning / den;
}

/// First-order expansion in omega/kappa: k0 [1 - 2 i kappa omega / (kappa^2 + Delta^2)].
inline cplx optical_spring_adiabatic(const CavityParams& cav, double omega) {
  const double k0 = static_spring(cav);
  const double d2 = cav.kappa * cav.kappa + cav.detuning * cav.detuning;
  return k0 * cplx(1.0, -2.0 * cav.kappa * omega / d2);
}

/// Velocity coefficient of the optical spring force on the light mirror,
/// c_opt = -zeta1^2 k0 2 kappa / (kappa^2 + Delta^2); negative means anti-damping.
inline double optical_damping(const CavityParams& cav) {
  const double d2 = cav.kappa * cav.kappa + cav.detuning * cav.detuning;
  return -cav.zeta1 * cav.zeta1 * static_spring(cav) * 2.0 * cav.kappa / d2;
}

/// Section product (no differentiator) at the Laplace variable s.
inline cplx servo_sections_at(std::span<const FilterSection> sections, cplx s) {
  cplx h = 1.0;
  for (const auto& sec : sections) {
    switch (sec.kind) {
      case SectionKind::highpass: h *= s / (s + sec.value); break;
      case SectionKind::lowpass: h *= sec.value / (s + sec.value); break;
      case SectionKind::gain: h *= sec.value; break;
    }
  }
  return h;
}

/// chi_fb(omega) = i omega g times the section product, for an explicit gain.
inline cplx servo_response_with_gain(const ServoParams& servo, double gain, double omega) {
  const cplx s(0.0, omega);
  return gain * s * servo_sections_at(servo.sections, s);
}

/// Trapped-mode reference frequency sqrt(omega1^2 + zeta1^2 k0 / m1), or 0
/// when the spring is softening enough to make it imaginary.
inline double reference_frequency(const SystemConfig& cfg) {
  const double w1 = cfg.mirror1.omega0;
  const double z1 = cfg.cavity.zeta1;
  const double w2 = w1 * w1 + z1 * z1 * static_spring(cfg.cavity) / cfg.mirror1.mass;
  return w2 > 0.0 ? std::sqrt(w2) : 0.0;
}

/// Differentiator gain at which the electronic damping transferred through
/// the optical rigidity nominally cancels the optical anti-damping,
/// g = m2 omega_eff^2 / kappa.
inline double cancellation_gain(const SystemConfig& cfg, double omega_eff) {
  if (!(cfg.cavity.kappa > 0.0)) throw ValidationError("invariant violated: cavity: kappa > 0");
  return cfg.mirror2.mass * omega_eff * omega_eff / cfg.cavity.kappa;
}

/// Same cancellation without the Delta ~ kappa approximation: the gain for
/// which the weak-loop servo damping equals -c_opt at the current detuning,
/// g = m2 omega_eff^2 2 kappa / [zeta2 (kappa^2 + Delta^2)].
/// Reduces to cancellation_gain at Delta = kappa, zeta2 = 1.
inline double anti_damping_cancel_gain(const SystemConfig& cfg, double omega_eff) {
  const auto& cav = cfg.cavity;
  if (cav.detuning == 0.0 || cav.zeta2 == 0.0) return 0.0;
  const double d2 = cav.kappa * cav.kappa + cav.detuning * cav.detuning;
  return std::abs(cfg.mirror2.mass * omega_eff * omega_eff * 2.0 * cav.kappa / (cav.zeta2 * d2));
}

/// Differentiator gain in effect for a servo state.
inline double servo_gain(const SystemConfig& cfg, ServoState state) {
  if (state == ServoState::on) return cfg.servo.g_el;
  if (cfg.servo.off_gain) return *cfg.servo.off_gain;
  return anti_damping_cancel_gain(cfg, reference_frequency(cfg));
}

/// chi_fb(omega) for the given servo state; the off state scales the response
/// by the residual gain.
inline cplx servo_response(const ServoParams& servo, double omega, ServoState state = ServoState::on) {
  const double gain = state == ServoState::on ? servo.g_el : servo.off_gain.value_or(0.0);
  return servo_response_with_gain(servo, gain, omega);
}

inline cplx servo_response(const SystemConfig& cfg, double omega, ServoState state) {
  return servo_response_with_gain(cfg.servo, servo_gain(cfg, state), omega);
}

// ---------------------------------------------------------------------------
// Closed loop

/// Mason's-rule susceptibility of the light mirror:
/// chi_eff = chi1 (1 + zeta2 chi2 chi_fb) / (1 + zeta1^2 chi1 k_opt + zeta2 chi2 chi_fb).
inline cplx effective_susceptibility(cplx chi1, cplx chi2, cplx k_opt, cplx chi_fb, double zeta1,
                                     double zeta2,
                                     double omega = std::numeric_limits<double>::quiet_NaN()) {
  const cplx loop2 = zeta2 * chi2 * chi_fb;
  const cplx den = 1.0 + zeta1 * zeta1 * chi1 * k_opt + loop2;
  const double scale = 1.0 + std::abs(zeta1 * zeta1 * chi1 * k_opt) + std::abs(loop2);
  if (!(std::abs(den) > 1e-14 * scale)) {
    std::ostringstream os;
    os << "closed-loop denominator vanishes (|den| = " << std::abs(den) << ") at omega = " << omega
       << " rad/s";
    throw SingularityError(os.str());
  }
  return chi1 * (1.0 + loop2) / den;
}

/// All loop quantities at one frequency.
struct LoopPoint {
  cplx chi1, chi2, k_opt, chi_fb, chi_eff;
};

inline LoopPoint loop_point(const SystemConfig& cfg, double omega, ServoState state = ServoState::on) {
  LoopPoint p;
  p.chi1 = mech_susceptibility(cfg.mirror1, omega);
  p.chi2 = mech_susceptibility(cfg.mirror2, omega);
  p.k_opt = optical_spring(cfg.cavity, omega);
  p.chi_fb = servo_response(cfg, omega, state);
  p.chi_eff = effective_susceptibility(p.chi1, p.chi2, p.k_opt, p.chi_fb, cfg.cavity.zeta1,
                                       cfg.cavity.zeta2, omega);
  return p;
}

/// Open-loop gain of the cooling servo, zeta2 chi2 chi_fb / (1 + zeta1^2 chi1 k_opt).
inline cplx open_loop_gain(cplx chi1, cplx chi2, cplx k_opt, cplx chi_fb, double zeta1, double zeta2,
                           double omega = std::numeric_limits<double>::quiet_NaN()) {
  const cplx den = 1.0 + zeta1 * zeta1 * chi1 * k_opt;
  if (!(std::abs(den) > 1e-14 * (1.0 + std::abs(zeta1 * zeta1 * chi1 * k_opt)))) {
    std::ostringstream os;
    os << "optical loop denominator vanishes at omega = " << omega << " rad/s";
    throw SingularityError(os.str());
  }
  return zeta2 * chi2 * chi_fb / den;
}

inline cplx open_loop_gain(const SystemConfig& cfg, double omega, ServoState state = ServoState::on) {
  return open_loop_gain(mech_susceptibility(cfg.mirror1, omega),
                        mech_susceptibility(cfg.mirror2, omega), optical_spring(cfg.cavity, omega),
                        servo_response(cfg, omega, state), cfg.cavity.zeta1, cfg.cavity.zeta2, omega);
}

/// Inverts open_loop_gain for chi_fb given a measured loop gain.
inline cplx servo_from_open_loop(const SystemConfig& cfg, double omega, cplx loop_gain) {
  const cplx chi1 = mech_susceptibility(cfg.mirror1, omega);
  const cplx chi2 = mech_susceptibility(cfg.mirror2, omega);
  const double z1 = cfg.cavity.zeta1;
  const cplx den = 1.0 + z1 * z1 * chi1 * optical_spring(cfg.cavity, omega);
  if (cfg.cavity.zeta2 == 0.0) throw SingularityError("zeta2 = 0: servo not observable in the loop gain");
  return loop_gain * den / (cfg.cavity.zeta2 * chi2);
}

/// Samples a response function on an angular grid.
template <class Fn>
ComplexResponse sample_response(std::span<const double> omega_grid, Fn&& fn) {
  ComplexResponse r;
  r.grid.assign(omega_grid.begin(), omega_grid.end());
  r.values.reserve(r.grid.size());
  for (double w : r.grid) r.values.push_back(fn(w));
  return r;
}

// ---------------------------------------------------------------------------
// Pole extraction

namespace detail {

using Poly = std::vector<double>;  // ascending coefficients

inline Poly poly_mul(const Poly& a, const Poly& b) {
  Poly r(a.size() + b.size() - 1, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) r[i + j] += a[i] * b[j];
  return r;
}

inline Poly poly_add(Poly a, const Poly& b) {
  if (b.size() > a.size()) a.resize(b.size(), 0.0);
  for (std::size_t i = 0; i < b.size(); ++i) a[i] += b[i];
  return a;
}

inline Poly poly_scale(Poly a, double k) {
  for (auto& c : a) c *= k;
  return a;
}

template <class T>
T poly_eval(const Poly& p, T x) {
  T r = 0.0;
  for (auto it = p.rbegin(); it != p.rend(); ++it) r = r * x + *it;
  return r;
}

/// Servo numerator/denominator in s, chi_fb = g s N(s)/D(s).
inline std::pair<Poly, Poly> servo_polys(const ServoParams& servo, double gain) {
  Poly num{0.0, gain};
  Poly den{1.0};
  for (const auto& sec : servo.sections) {
    switch (sec.kind) {
      case SectionKind::highpass:
        num = poly_mul(num, {0.0, 1.0});
        den = poly_mul(den, {sec.value, 1.0});
        break;
      case SectionKind::lowpass:
        num = poly_mul(num, {sec.value});
        den = poly_mul(den, {sec.value, 1.0});
        break;
      case SectionKind::gain:
        num = poly_scale(num, sec.value);
        break;
    }
  }
  return {num, den};
}

struct Characteristic {
  Poly d1, d2, nfb, dfb;
  double m1, m2, z1sq, z2;
  double k_num;  // 2 hbar g^2 n Delta
  double kappa, delta;
  double k0, adiabatic_slope;  // k(s) ~ k0 (1 + adiabatic_slope s)

  // Characteristic polynomial with the adiabatic spring.
  Poly adiabatic() const {
    const Poly spring{k0, k0 * adiabatic_slope};
    Poly p = poly_scale(poly_mul(poly_mul(d1, d2), dfb), m1 * m2);
    p = poly_add(p, poly_scale(poly_mul(poly_mul(d2, dfb), spring), z1sq * m2));
    p = poly_add(p, poly_scale(poly_mul(d1, nfb), z2 * m1));
    return p;
  }

  // Same function with the full cavity response of the spring; shares the
  // mechanical poles' clearing factor, so its zeros are the closed-loop poles.
  cplx full(cplx s) const {
    const cplx ks = s + kappa;
    const cplx k = k_num / (ks * ks + delta * delta);
    const cplx D1 = poly_eval(d1, s), D2 = poly_eval(d2, s);
    const cplx Nf = poly_eval(nfb, s), Df = poly_eval(dfb, s);
    return m1 * m2 * D1 * D2 * Df + z1sq * m2 * D2 * Df * k + z2 * m1 * D1 * Nf;
  }
};

inline Characteristic characteristic(const SystemConfig& cfg, double gain) {
  Characteristic c;
  const auto& a = cfg.mirror1;
  const auto& b = cfg.mirror2;
  const auto& cav = cfg.cavity;
  c.d1 = {a.omega0 * a.omega0, a.gamma0, 1.0};
  c.d2 = {b.omega0 * b.omega0, b.gamma0, 1.0};
  std::tie(c.nfb, c.dfb) = servo_polys(cfg.servo, gain);
  c.m1 = a.mass;
  c.m2 = b.mass;
  c.z1sq = cav.zeta1 * cav.zeta1;
  c.z2 = cav.zeta2;
  c.k_num = 2.0 * kHbar * cav.g_pull * cav.g_pull * intracavity_photons(cav) * cav.detuning;
  c.kappa = cav.kappa;
  c.delta = cav.detuning;
  c.k0 = static_spring(cav);
  c.adiabatic_slope = -2.0 * cav.kappa / (cav.kappa * cav.kappa + cav.detuning * cav.detuning);
  return c;
}

/// Roots of an ascending real polynomial after rescaling s = scale z.
inline std::vector<cplx> poly_roots(Poly p, double scale) {
  double sk = 1.0;
  for (auto& c : p) {
    c *= sk;
    sk *= scale;
  }
  while (p.size() > 1 && p.back() == 0.0) p.pop_back();
  double big = 0.0;
  for (double c : p) big = std::max(big, std::abs(c));
  if (p.size() < 2 || big == 0.0) return {};
  // Drop leading coefficients that are pure round-off relative to the rest.
  while (p.size() > 2 && std::abs(p.back()) < 1e-300) p.pop_back();
  Eigen::VectorXd coeffs(static_cast<Eigen::Index>(p.size()));
  for (std::size_t i = 0; i < p.size(); ++i) coeffs[static_cast<Eigen::Index>(i)] = p[i] / big;
  Eigen::PolynomialSolver<double, Eigen::Dynamic> solver(coeffs);
  std::vector<cplx> roots;
  for (Eigen::Index i = 0; i < solver.roots().size(); ++i) roots.push_back(solver.roots()[i] * scale);
  return roots;
}

}  // namespace detail

/// Closed-loop trapped-mode pole for an explicit differentiator gain.
///
/// The characteristic function 1 + zeta1^2 chi1 k_opt + zeta2 chi2 chi_fb is
/// cleared of its mechanical and servo denominators; with the spring in its
/// adiabatic form this is a real polynomial (a quartic for the bare
/// differentiator) whose roots come from a companion-matrix eigen solve. The
/// trapped-mode root is then polished by Newton iteration on the same function
/// with the full cavity response.
inline EffectiveMode extract_mode_with_gain(const SystemConfig& cfg, double gain) {
  const auto ch = detail::characteristic(cfg, gain);
  const double w_ref = reference_frequency(cfg);
  const double scale = std::max({w_ref, cfg.mirror1.omega0, cfg.mirror2.omega0});
  const auto roots = detail::poly_roots(ch.adiabatic(), scale);
  if (roots.empty()) throw ConvergenceError("characteristic polynomial has no roots");

  // Trapped-mode branch: |Im| nearest the reference frequency, larger |Im| on ties.
  std::size_t best = 0;
  for (std::size_t i = 1; i < roots.size(); ++i) {
    const double di = std::abs(std::abs(roots[i].imag()) - w_ref);
    const double db = std::abs(std::abs(roots[best].imag()) - w_ref);
    if (di < db - 1e-12 * scale ||
        (std::abs(di - db) <= 1e-12 * scale && std::abs(roots[i].imag()) > std::abs(roots[best].imag()))) {
      best = i;
    }
  }
  cplx guess = roots[best];
  if (guess.imag() < 0.0) guess = std::conj(guess);

  EffectiveMode mode;
  for (std::size_t i = 0; i < roots.size(); ++i) {
    if (i == best || std::abs(roots[i] - std::conj(roots[best])) < 1e-9 * scale) continue;
    if (roots[i].imag() < 0.0) continue;
    if (std::abs(roots[i] - guess) < 0.01 * std::abs(guess)) {
      mode.warnings.push_back("ambiguous branch: two closed-loop poles within 1%");
      break;
    }
  }

  // Newton polish on the full rational characteristic function.
  cplx s = guess;
  std::ostringstream trace;
  bool converged = false;
  for (int it = 0; it < 60; ++it) {
    const double h = 1e-7 * std::max(std::abs(s), scale * 1e-3);
    const cplx f = ch.full(s);
    const cplx df = (ch.full(s + h) - ch.full(s - h)) / (2.0 * h);
    trace << "  it " << it << ": s = " << s << ", |f| = " << std::abs(f) << "\n";
    if (f == 0.0) {
      converged = true;
      break;
    }
    if (df == 0.0 || !std::isfinite(std::abs(df))) break;
    const cplx step = f / df;
    s -= step;
    if (!std::isfinite(s.real()) || !std::isfinite(s.imag())) break;
    if (std::abs(step) <= 1e-13 * std::max(std::abs(s), 1e-300)) {
      converged = true;
      break;
    }
  }
  if (!converged) {
    throw ConvergenceError("pole polishing did not converge from " + [&] {
      std::ostringstream g;
      g << guess;
      return g.str();
    }() + "\n" + trace.str());
  }
  if (std::abs(s - guess) > 0.01 * std::abs(guess)) {
    mode.warnings.push_back("ambiguous branch: polished pole differs from adiabatic root by > 1%");
  }
  if (s.imag() < 0.0) s = std::conj(s);

  mode.pole = s;
  mode.omega_eff = std::abs(s.imag());
  mode.gamma_eff = -2.0 * s.real();
  bool others_stable = true;
  for (std::size_t i = 0; i < roots.size(); ++i) {
    if (i == best || std::abs(roots[i] - std::conj(roots[best])) < 1e-9 * scale) continue;
    if (!(roots[i].real() < 0.0)) others_stable = false;
  }
  mode.stable = mode.gamma_eff > 0.0 && others_stable;
  return mode;
}

/// Trapped-mode pole for the given servo state.
inline EffectiveMode extract_mode(const SystemConfig& cfg, ServoState state = ServoState::on) {
  return extract_mode_with_gain(cfg, servo_gain(cfg, state));
}

/// One cell of a parametric stability map.
struct MapCell {
  double detuning = 0.0;  // rad/s
  double gain = 0.0;      // N s / m
  EffectiveMode mode;
  bool ok = true;
  std::string error;
};

/// Effective modes on the (detuning, gain) grid, detuning-major order.
inline std::vector<MapCell> stability_map(const SystemConfig& cfg, std::span<const double> detunings,
                                          std::span<const double> gains, unsigned threads = 1) {
  if (detunings.empty() || gains.empty()) throw ValidationError("stability map: ranges must be nonempty");
  std::vector<MapCell> cells(detunings.size() * gains.size());
  parallel_for(cells.size(), threads, [&](std::size_t idx) {
    MapCell& cell = cells[idx];
    cell.detuning = detunings[idx / gains.size()];
    cell.gain = gains[idx % gains.size()];
    try {
      cell.mode = extract_mode_with_gain(cfg.with_detuning(cell.detuning), cell.gain);
    } catch (const Error& e) {
      cell.ok = false;
      cell.error = e.what();
    }
  });
  return cells;
}

/// Blue detuning on the rising branch (below the spring maximum) at which the
/// adiabatic reference frequency equals omega_target.
inline double detuning_for_frequency(const SystemConfig& cfg, double omega_target) {
  const double kappa = cfg.cavity.kappa;
  const double peak = cfg.cavity.n_cav_fixed ? kappa : kappa / std::sqrt(3.0);
  auto freq = [&](double d) { return reference_frequency(cfg.with_detuning(d)); };
  if (!(omega_target > cfg.mirror1.omega0) || omega_target > freq(peak)) {
    std::ostringstream os;
    os << "target frequency " << to_hz(omega_target) << " Hz outside the reachable range ("
       << to_hz(cfg.mirror1.omega0) << ", " << to_hz(freq(peak)) << ") Hz";
    throw ValidationError(os.str());
  }
  double lo = 0.0, hi = peak;
  for (int i = 0; i < 200 && hi - lo > 1e-15 * peak; ++i) {
    const double mid = 0.5 * (lo + hi);
    (freq(mid) < omega_target ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace optospring
