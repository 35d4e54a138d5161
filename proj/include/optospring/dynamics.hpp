#pragma once

// Time-domain Langevin simulation of the trapped light mirror with the
// cooling servo switched by a square wave, ensemble phonon statistics and
// decoherence-rate extraction.
//
// Each servo state is reduced to the trapped-mode pole p of the closed loop:
//   m1 x'' = -K x - C x' + F_th(t) + F_freq(t),  K = m1 |p|^2,  C = -2 m1 Re p,
// with K = m1 omega1^2 + zeta1^2 k0 + k_fb and C = m1 gamma1 + c_opt + c_fb.
// F_th is white with one-sided PSD 4 k_B T gamma1 m1 (only the intrinsic
// damping is warm). F_freq has one-sided PSD 4 m1^2 omega_r^4 S_phidot(f) / g^2,
// omega_r being the released-mode frequency, generated as an
// Ornstein-Uhlenbeck force with corner omega_r / 50 so that it follows the
// 1/f^2 model within 5% over [omega_r/10, 10 omega_r].

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "optospring/constants.hpp"
#include "optospring/error.hpp"
#include "optospring/model.hpp"
#include "optospring/parallel.hpp"
#include "optospring/rate_law.hpp"
#include "optospring/response.hpp"

namespace optospring {

// ---------------------------------------------------------------------------
// Random streams

/// SplitMix64 finalizer.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

/// Seed of trajectory `index` under `master_seed`; streams for different
/// indices are decorrelated by two rounds of SplitMix64.
constexpr std::uint64_t stream_seed(std::uint64_t master_seed, std::uint64_t index) {
  return splitmix64(splitmix64(master_seed) ^ splitmix64(index + 0x632be59bd9b4e019ull));
}

class NormalStream {
 public:
  explicit NormalStream(std::uint64_t seed) : engine_(seed) {}
  double operator()() { return dist_(engine_); }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> dist_;
};

// ---------------------------------------------------------------------------
// Model

struct PhaseCoefficients {
  EffectiveMode mode;
  double gain = 0.0;       // differentiator gain in this state
  double stiffness = 0.0;  // K, N/m
  double damping = 0.0;    // C, N s/m
  double k_fb = 0.0;       // servo share of K
  double c_fb = 0.0;       // servo share of C
};

struct LangevinModel {
  double mass = 0.0;
  double omega_ref = 0.0;  // phonon reference: released (servo-off) trapped mode
  double intrinsic_stiffness = 0.0;  // m1 omega1^2
  double intrinsic_damping = 0.0;    // m1 gamma1
  double spring_stiffness = 0.0;     // zeta1^2 k0
  double optical_damping = 0.0;      // c_opt
  PhaseCoefficients on, off;
  double thermal_intensity = 0.0;  // two-sided, N^2 s: <F(t)F(t')> = q delta(t-t')
  double freq_force_variance = 0.0;  // N^2
  double freq_corner = 0.0;          // rad/s
  double switch_frequency = 1.0;     // Hz
  double position_scale = 0.0;       // m, thermal RMS used by the blow-up guard
};

namespace dyn_detail {

inline PhaseCoefficients phase(const SystemConfig& cfg, double gain, double base_k, double base_c) {
  PhaseCoefficients p;
  p.gain = gain;
  p.mode = extract_mode_with_gain(cfg, gain);
  const double m = cfg.mirror1.mass;
  p.stiffness = m * std::norm(p.mode.pole);
  p.damping = m * p.mode.gamma_eff;
  p.k_fb = p.stiffness - base_k;
  p.c_fb = p.damping - base_c;
  return p;
}

}  // namespace dyn_detail

/// Reduces a configuration to the two-state Langevin model.
inline LangevinModel build_langevin_model(const SystemConfig& cfg, const NoiseEnv& noise) {
  cfg.validate();
  noise.validate();
  LangevinModel lm;
  const auto& m1 = cfg.mirror1;
  lm.mass = m1.mass;
  lm.intrinsic_stiffness = m1.mass * m1.omega0 * m1.omega0;
  lm.intrinsic_damping = m1.mass * m1.gamma0;
  lm.spring_stiffness = cfg.cavity.zeta1 * cfg.cavity.zeta1 * static_spring(cfg.cavity);
  lm.optical_damping = optical_damping(cfg.cavity);
  const double base_k = lm.intrinsic_stiffness + lm.spring_stiffness;
  const double base_c = lm.intrinsic_damping + lm.optical_damping;
  lm.on = dyn_detail::phase(cfg, servo_gain(cfg, ServoState::on), base_k, base_c);
  lm.off = dyn_detail::phase(cfg, servo_gain(cfg, ServoState::off), base_k, base_c);
  lm.omega_ref = lm.off.mode.omega_eff;
  if (!(lm.omega_ref > 0.0)) throw ValidationError("released trapped mode has zero frequency");
  lm.switch_frequency = cfg.servo.switch_frequency;

  const double kt = kBoltzmann * noise.temperature;
  lm.thermal_intensity = 2.0 * kt * m1.gamma0 * m1.mass;
  if (!noise.silent()) {
    const double g = cfg.cavity.g_pull;
    if (!(g > 0.0)) throw ValidationError("frequency noise needs g_pull > 0");
    const double f_ref = to_hz(lm.omega_ref);
    const double amp2 = noise.psd(f_ref) * f_ref * f_ref;  // local 1/f^2 amplitude
    const double f_corner = f_ref / 50.0;
    const double w4 = std::pow(lm.omega_ref, 4);
    lm.freq_corner = kTwoPi * f_corner;
    lm.freq_force_variance = 4.0 * m1.mass * m1.mass * w4 * amp2 / (g * g) * kPi / (2.0 * f_corner);
  }
  lm.position_scale = std::sqrt(std::max(kt, kHbar * lm.omega_ref) / (m1.mass * lm.omega_ref * lm.omega_ref));
  return lm;
}

/// One-sided PSD of the shaped frequency-noise force at f (Hz).
inline double freq_force_psd(const LangevinModel& lm, double f_hz) {
  if (lm.freq_force_variance == 0.0) return 0.0;
  const double fc = to_hz(lm.freq_corner);
  return lm.freq_force_variance * lm.freq_corner / (kPi * kPi) / (f_hz * f_hz + fc * fc);
}

/// Phonon number of the released mode: E / (hbar omega_ref) - 1/2.
inline double phonon_number(const LangevinModel& lm, double x, double v) {
  const double w = lm.omega_ref;
  return 0.5 * lm.mass * (v * v + w * w * x * x) / (kHbar * w) - 0.5;
}

// ---------------------------------------------------------------------------
// Plan

enum class Schedule { square_wave, always_on, always_off };

/// Simulation protocol. Each trajectory runs `duration` seconds of the
/// schedule (square wave starts with the cooling on); every off half-period
/// of every trajectory is one relaxation segment.
struct SimPlan {
  double dt = 0.0;        // s; 0 selects 1 / (200 f_eff)
  double duration = 0.0;  // s; 0 selects one switch period
  std::size_t n_trajectories = 100;
  std::uint64_t master_seed = 1;
  std::size_t record_stride = 10;
  Schedule schedule = Schedule::square_wave;
  unsigned threads = 1;
};

/// Fills dt and duration defaults and checks the plan against the model.
inline SimPlan resolve_plan(SimPlan plan, const LangevinModel& lm) {
  const double w_max = std::max(std::abs(lm.on.mode.pole), std::abs(lm.off.mode.pole));
  if (plan.dt == 0.0) plan.dt = kTwoPi / (200.0 * w_max);
  const double period = 1.0 / lm.switch_frequency;
  if (plan.duration == 0.0) plan.duration = period;
  if (!(plan.dt > 0.0)) throw ValidationError("invariant violated: plan: dt > 0");
  if (!(plan.dt * w_max < 0.1)) throw ValidationError("invariant violated: plan: dt * omega_eff < 0.1");
  if (plan.n_trajectories < 1) throw ValidationError("invariant violated: plan: n_trajectories >= 1");
  if (plan.record_stride < 1) throw ValidationError("invariant violated: plan: record_stride >= 1");
  if (plan.schedule == Schedule::square_wave && plan.duration < period * (1.0 - 1e-12)) {
    throw ValidationError("invariant violated: plan: duration covers >= 1 full switch period");
  }
  return plan;
}

// ---------------------------------------------------------------------------
// Integrator

struct OscillatorState {
  double x = 0.0;
  double v = 0.0;
  double force = 0.0;  // frequency-noise force
};

/// BAOAB splitting: half kicks from the spring and the (frozen) colored force,
/// half drifts, and an exact Ornstein-Uhlenbeck velocity update for the
/// damping and white thermal force. The colored force itself is advanced by
/// its exact OU transition after each step.
class LangevinStepper {
 public:
  LangevinStepper(const LangevinModel& lm, const PhaseCoefficients& ph, double dt) : dt_(dt) {
    const double m = lm.mass;
    k_over_m_ = ph.stiffness / m;
    const double gamma = ph.damping / m;
    decay_ = std::exp(-gamma * dt);
    // Var of the OU kick: (q/m^2) (1 - e^{-2 gamma dt}) / (2 gamma).
    const double q_m2 = lm.thermal_intensity / (m * m);
    const double spread = gamma == 0.0 ? dt : -std::expm1(-2.0 * gamma * dt) / (2.0 * gamma);
    kick_ = std::sqrt(std::max(0.0, q_m2 * spread));
    inv_m_ = 1.0 / m;
    const double a = std::exp(-lm.freq_corner * dt);
    force_decay_ = a;
    force_kick_ = std::sqrt(lm.freq_force_variance * std::max(0.0, -std::expm1(-2.0 * lm.freq_corner * dt)));
  }

  void step(OscillatorState& s, NormalStream& rng) const {
    const double h = 0.5 * dt_;
    s.v += h * (-k_over_m_ * s.x + s.force * inv_m_);
    s.x += h * s.v;
    s.v = decay_ * s.v + (kick_ != 0.0 ? kick_ * rng() : 0.0);
    s.x += h * s.v;
    s.v += h * (-k_over_m_ * s.x + s.force * inv_m_);
    if (force_kick_ != 0.0) s.force = force_decay_ * s.force + force_kick_ * rng();
  }

 private:
  double dt_, k_over_m_, decay_, kick_, inv_m_, force_decay_, force_kick_;
};

/// Stationary sample of the given state (thermal force only for x and v).
inline OscillatorState stationary_sample(const LangevinModel& lm, const PhaseCoefficients& ph, NormalStream& rng) {
  OscillatorState s;
  const double q = lm.thermal_intensity;
  if (q > 0.0 && ph.damping > 0.0 && ph.stiffness > 0.0) {
    const double var_x = q / (2.0 * ph.stiffness * ph.damping);
    const double var_v = q / (2.0 * lm.mass * ph.damping);
    s.x = std::sqrt(var_x) * rng();
    s.v = std::sqrt(var_v) * rng();
  }
  if (lm.freq_force_variance > 0.0) s.force = std::sqrt(lm.freq_force_variance) * rng();
  return s;
}

struct Trajectory {
  std::vector<double> t, x, v, n;
  std::vector<std::uint8_t> servo_on;
};

namespace dyn_detail {

struct Timing {
  long long half_steps = 0;   // steps per half period
  long long total_steps = 0;
  long long warmup_steps = 0;
};

inline Timing timing(const LangevinModel& lm, const SimPlan& plan, bool has_initial) {
  Timing t;
  t.half_steps = std::max(1LL, std::llround(0.5 / (lm.switch_frequency * plan.dt)));
  if (plan.schedule == Schedule::square_wave) {
    const long long halves = std::max(2LL, std::llround(2.0 * plan.duration * lm.switch_frequency));
    t.total_steps = halves * t.half_steps;
  } else {
    t.total_steps = std::llround(plan.duration / plan.dt);
  }
  if (!has_initial && plan.schedule != Schedule::always_off) {
    if (!(lm.on.damping > 0.0)) throw InstabilityError("cooled state is unstable; no stationary start");
    const auto settle = static_cast<long long>(std::ceil(10.0 * lm.mass / lm.on.damping / plan.dt));
    const long long before_first_off = plan.schedule == Schedule::square_wave ? t.half_steps : 0;
    t.warmup_steps = std::max(0LL, settle - before_first_off);
  }
  return t;
}

inline bool is_on(const SimPlan& plan, const Timing& tm, long long step) {
  switch (plan.schedule) {
    case Schedule::always_on: return true;
    case Schedule::always_off: return false;
    case Schedule::square_wave: return (step / tm.half_steps) % 2 == 0;
  }
  return true;
}

/// Drives one trajectory and calls visit(step, on, state) before every step
/// and once after the last (step == total_steps).
template <class Visit>
void drive(const LangevinModel& lm, const SimPlan& plan, std::size_t index,
           std::optional<OscillatorState> initial, Visit&& visit) {
  const Timing tm = timing(lm, plan, initial.has_value());
  NormalStream rng(stream_seed(plan.master_seed, index));
  const LangevinStepper on(lm, lm.on, plan.dt);
  const LangevinStepper off(lm, lm.off, plan.dt);
  OscillatorState s;
  if (initial) {
    s = *initial;
  } else {
    s = stationary_sample(lm, plan.schedule == Schedule::always_off ? lm.off : lm.on, rng);
    for (long long i = 0; i < tm.warmup_steps; ++i) on.step(s, rng);
  }
  const double limit = 1e6 * std::max({lm.position_scale, std::abs(s.x), 1e-300});
  for (long long i = 0; i <= tm.total_steps; ++i) {
    const bool state_on = is_on(plan, tm, i);
    visit(i, state_on, s);
    if (i == tm.total_steps) break;
    (state_on ? on : off).step(s, rng);
    if (!(std::abs(s.x) < limit)) {
      throw InstabilityError("trajectory " + std::to_string(index) + " blew up at t = " +
                             std::to_string(static_cast<double>(i + 1) * plan.dt) + " s (|x| = " +
                             std::to_string(std::abs(s.x)) + " m, limit " + std::to_string(limit) +
                             " m); servo " + (state_on ? "on" : "off") + ", gamma_eff = " +
                             std::to_string((state_on ? lm.on : lm.off).mode.gamma_eff) + " rad/s");
    }
  }
}

}  // namespace dyn_detail

/// Records t, x, v, n every `record_stride` steps.
inline Trajectory simulate_trajectory(const LangevinModel& lm, const SimPlan& plan_in, std::size_t index,
                                      std::optional<OscillatorState> initial = std::nullopt) {
  const SimPlan plan = resolve_plan(plan_in, lm);
  Trajectory tr;
  dyn_detail::drive(lm, plan, index, initial, [&](long long i, bool on, const OscillatorState& s) {
    if (i % static_cast<long long>(plan.record_stride) != 0) return;
    tr.t.push_back(static_cast<double>(i) * plan.dt);
    tr.x.push_back(s.x);
    tr.v.push_back(s.v);
    tr.n.push_back(phonon_number(lm, s.x, s.v));
    tr.servo_on.push_back(on ? 1 : 0);
  });
  return tr;
}

inline Trajectory simulate_trajectory(const SystemConfig& cfg, const NoiseEnv& noise, const SimPlan& plan,
                                      std::size_t index) {
  return simulate_trajectory(build_langevin_model(cfg, noise), plan, index);
}

// ---------------------------------------------------------------------------
// Fits

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double slope_error = 0.0;
  std::size_t points = 0;
};

/// Ordinary least squares with the slope's standard error from the residuals.
inline LinearFit fit_line(std::span<const double> t, std::span<const double> y) {
  const std::size_t n = t.size();
  if (n < 3 || y.size() != n) throw InsufficientDataError("line fit needs >= 3 points");
  double tm = 0.0, ym = 0.0;
  for (std::size_t i = 0; i < n; ++i) tm += t[i], ym += y[i];
  tm /= static_cast<double>(n);
  ym /= static_cast<double>(n);
  double stt = 0.0, sty = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    stt += (t[i] - tm) * (t[i] - tm);
    sty += (t[i] - tm) * (y[i] - ym);
  }
  LinearFit f;
  f.points = n;
  f.slope = sty / stt;
  f.intercept = ym - f.slope * tm;
  double rss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = y[i] - f.intercept - f.slope * t[i];
    rss += r * r;
  }
  f.slope_error = std::sqrt(rss / static_cast<double>(n - 2) / stt);
  return f;
}

/// Points in the initial-slope window: the first 5% of the relaxation or the
/// first 50 points, whichever is larger.
inline std::size_t initial_window(std::size_t points) {
  const auto five = static_cast<std::size_t>(std::ceil(0.05 * static_cast<double>(points)));
  return std::min(points, std::max<std::size_t>(five, 50));
}

struct RelaxationFit {
  double n0 = 0.0, n_inf = 0.0, gamma = 0.0;
  double rms_residual = 0.0;
};

/// Least-squares n0 e^{-gamma t} + n_inf (1 - e^{-gamma t}). The model is linear
/// in (n0, n_inf) for fixed gamma, so gamma is found by a log-spaced scan
/// followed by golden-section refinement of the projected residual.
inline RelaxationFit fit_relaxation(std::span<const double> t, std::span<const double> y) {
  const std::size_t n = t.size();
  if (n < 4) throw InsufficientDataError("relaxation fit needs >= 4 points");
  const double span = t.back() - t.front();
  if (!(span > 0.0)) throw InsufficientDataError("relaxation fit needs a time span");
  auto solve = [&](double gamma, double& a, double& b) {
    // basis e = exp(-gamma t), 1 - e
    double s11 = 0, s12 = 0, s22 = 0, r1 = 0, r2 = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double e = std::exp(-gamma * (t[i] - t.front()));
      const double u = e, w = 1.0 - e;
      s11 += u * u, s12 += u * w, s22 += w * w, r1 += u * y[i], r2 += w * y[i];
    }
    const double det = s11 * s22 - s12 * s12;
    if (!(std::abs(det) > 0.0)) return std::numeric_limits<double>::infinity();
    a = (r1 * s22 - r2 * s12) / det;
    b = (s11 * r2 - s12 * r1) / det;
    double rss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double e = std::exp(-gamma * (t[i] - t.front()));
      const double r = y[i] - a * e - b * (1.0 - e);
      rss += r * r;
    }
    return rss;
  };
  const double lg_lo = std::log(1e-3 / span), lg_hi = std::log(1e3 / span);
  constexpr int kScan = 240;
  double best_lg = lg_lo, best = std::numeric_limits<double>::infinity();
  double a = 0, b = 0;
  for (int i = 0; i <= kScan; ++i) {
    const double lg = lg_lo + (lg_hi - lg_lo) * i / kScan;
    const double r = solve(std::exp(lg), a, b);
    if (r < best) best = r, best_lg = lg;
  }
  const double h = (lg_hi - lg_lo) / kScan;
  double lo = best_lg - h, hi = best_lg + h;
  const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
  double c = hi - phi * (hi - lo), d = lo + phi * (hi - lo);
  double fc = solve(std::exp(c), a, b), fd = solve(std::exp(d), a, b);
  for (int it = 0; it < 100 && hi - lo > 1e-12; ++it) {
    if (fc < fd) {
      hi = d, d = c, fd = fc, c = hi - phi * (hi - lo), fc = solve(std::exp(c), a, b);
    } else {
      lo = c, c = d, fc = fd, d = lo + phi * (hi - lo), fd = solve(std::exp(d), a, b);
    }
  }
  RelaxationFit fit;
  fit.gamma = std::exp(0.5 * (lo + hi));
  const double rss = solve(fit.gamma, fit.n0, fit.n_inf);
  if (!std::isfinite(rss)) {
    throw ConvergenceError("relaxation fit failed: residual sum of squares is not finite");
  }
  fit.rms_residual = std::sqrt(rss / static_cast<double>(n));
  return fit;
}

// ---------------------------------------------------------------------------
// Ensembles

struct EnsembleResult {
  std::vector<double> time_grid;    // s after the off switch
  std::vector<double> mean_phonon;  // <n(t)>
  std::vector<double> per_trajectory_n0;  // n at the off switch, one per segment
  std::vector<double> segment_slopes;     // initial-window slope per segment
  double fitted_rate = 0.0;        // phonons/s
  double fitted_rate_error = 0.0;  // standard error
  double fitted_intercept = 0.0;
  double fitted_gamma_eff = 0.0;   // rad/s, from the exponential fit
  double fitted_n0 = 0.0, fitted_n_inf = 0.0;
  double n_osc = 0.0;
  double omega_ref = 0.0;
  std::size_t window_points = 0;
  std::size_t segments = 0;
  double dt = 0.0;
};

/// Initial-slope fit of the ensemble mean. The slope is the OLS slope of
/// <n(t)> over the window; its error is the spread of the per-segment slopes
/// over sqrt(N) when there are several segments, else the OLS error.
inline LinearFit fit_decoherence_rate(const EnsembleResult& r) {
  const std::size_t w = initial_window(r.mean_phonon.size());
  if (w < 10) throw InsufficientDataError("decoherence-rate fit needs >= 10 points in the initial window");
  LinearFit f = fit_line(std::span(r.time_grid).first(w), std::span(r.mean_phonon).first(w));
  const std::size_t k = r.segment_slopes.size();
  if (k >= 2) {
    double mean = 0.0;
    for (double s : r.segment_slopes) mean += s;
    mean /= static_cast<double>(k);
    double var = 0.0;
    for (double s : r.segment_slopes) var += (s - mean) * (s - mean);
    var /= static_cast<double>(k - 1);
    f.slope_error = std::sqrt(var / static_cast<double>(k));
  }
  return f;
}

namespace dyn_detail {

/// Neumaier-compensated running sum.
struct CompensatedSum {
  double sum = 0.0, c = 0.0;
  void add(double x) {
    const double t = sum + x;
    c += std::abs(sum) >= std::abs(x) ? (sum - t) + x : (x - t) + sum;
    sum = t;
  }
  double value() const { return sum + c; }
};

}  // namespace dyn_detail

/// Runs the trajectories in parallel, cuts every off half-period into a
/// segment aligned at its switch instant and averages the phonon number.
/// Results depend only on (model, plan) and not on the thread count.
inline EnsembleResult run_ensemble(const LangevinModel& lm, const SimPlan& plan_in) {
  const SimPlan plan = resolve_plan(plan_in, lm);
  if (plan.schedule != Schedule::square_wave) {
    throw ValidationError("run_ensemble needs the square-wave schedule");
  }
  const auto tm = dyn_detail::timing(lm, plan, false);
  const auto stride = static_cast<long long>(plan.record_stride);
  const std::size_t per_segment = static_cast<std::size_t>(tm.half_steps / stride) + 1;

  std::vector<std::vector<std::vector<double>>> segs(plan.n_trajectories);
  parallel_for(plan.n_trajectories, plan.threads, [&](std::size_t traj) {
    auto& mine = segs[traj];
    std::vector<double>* current = nullptr;
    long long seg_start = -1;
    dyn_detail::drive(lm, plan, traj, std::nullopt, [&](long long i, bool on, const OscillatorState& s) {
      const bool period_boundary = i % tm.half_steps == 0;
      if (!on && period_boundary && i + tm.half_steps <= tm.total_steps) {
        mine.emplace_back();
        mine.back().reserve(per_segment);
        current = &mine.back();
        seg_start = i;
      }
      if (current) {
        const long long rel = i - seg_start;
        if (rel % stride == 0 && current->size() < per_segment) current->push_back(phonon_number(lm, s.x, s.v));
        if (rel >= tm.half_steps) current = nullptr;
      }
    });
  });

  EnsembleResult r;
  r.dt = plan.dt;
  r.omega_ref = lm.omega_ref;
  r.time_grid.resize(per_segment);
  for (std::size_t j = 0; j < per_segment; ++j) r.time_grid[j] = static_cast<double>(j) * plan.dt * plan.record_stride;
  std::vector<dyn_detail::CompensatedSum> acc(per_segment);
  const std::size_t w = initial_window(per_segment);
  for (const auto& traj : segs) {
    for (const auto& seg : traj) {
      if (seg.size() != per_segment) continue;
      for (std::size_t j = 0; j < per_segment; ++j) acc[j].add(seg[j]);
      r.per_trajectory_n0.push_back(seg.front());
      if (w >= 3) r.segment_slopes.push_back(fit_line(std::span(r.time_grid).first(w), std::span(seg).first(w)).slope);
      ++r.segments;
    }
  }
  if (r.segments == 0) throw InsufficientDataError("no complete relaxation segment in the plan");
  r.mean_phonon.resize(per_segment);
  for (std::size_t j = 0; j < per_segment; ++j) r.mean_phonon[j] = acc[j].value() / static_cast<double>(r.segments);

  const LinearFit lf = fit_decoherence_rate(r);
  r.window_points = lf.points;
  r.fitted_rate = lf.slope;
  r.fitted_rate_error = lf.slope_error;
  r.fitted_intercept = lf.intercept;
  const RelaxationFit ef = fit_relaxation(r.time_grid, r.mean_phonon);
  r.fitted_gamma_eff = ef.gamma;
  r.fitted_n0 = ef.n0;
  r.fitted_n_inf = ef.n_inf;
  r.n_osc = r.fitted_rate > 0.0 ? lm.omega_ref / (kTwoPi * r.fitted_rate) : std::numeric_limits<double>::infinity();
  return r;
}

inline EnsembleResult run_ensemble(const SystemConfig& cfg, const NoiseEnv& noise, const SimPlan& plan) {
  return run_ensemble(build_langevin_model(cfg, noise), plan);
}

// ---------------------------------------------------------------------------
// Predictions and scans

/// Decoherence-rate law at the given released mode.
inline RateTerms predicted_rate(const SystemConfig& cfg, const NoiseEnv& noise, const EffectiveMode& mode) {
  const auto& m1 = cfg.mirror1;
  return decoherence_rate(noise.temperature, m1.mass, m1.omega0, m1.gamma0, mode.omega_eff,
                          noise.psd_at(mode.omega_eff), cfg.cavity.g_pull);
}

struct ScanRow {
  double detuning = 0.0;  // rad/s
  double omega_eff = 0.0;
  double rate_measured = std::numeric_limits<double>::quiet_NaN();
  double rate_error = std::numeric_limits<double>::quiet_NaN();
  RateTerms predicted;
  double n_osc = 0.0;  // from the measured rate, or the predicted one without Monte Carlo
  bool ok = true;
  std::string error;
};

/// Full pipeline per detuning. With `plan` empty only the predicted rates are
/// computed. Failures are recorded per row and the scan continues.
inline std::vector<ScanRow> detuning_scan(const SystemConfig& cfg, const NoiseEnv& noise,
                                          const std::optional<SimPlan>& plan, std::span<const double> detunings) {
  std::vector<ScanRow> rows;
  for (double delta : detunings) {
    ScanRow row;
    row.detuning = delta;
    try {
      const SystemConfig c = cfg.with_detuning(delta);
      const EffectiveMode released = extract_mode(c, ServoState::off);
      row.omega_eff = released.omega_eff;
      row.predicted = predicted_rate(c, noise, released);
      if (plan) {
        const EnsembleResult er = run_ensemble(c, noise, *plan);
        row.rate_measured = er.fitted_rate;
        row.rate_error = er.fitted_rate_error;
        row.n_osc = er.n_osc;
      } else {
        row.n_osc = row.omega_eff / (kTwoPi * row.predicted.total);
      }
    } catch (const Error& e) {
      row.ok = false;
      row.error = e.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace optospring
