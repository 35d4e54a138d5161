// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <string>
#include <thread>

#include "../support.hpp"

namespace os = optospring;
using cplx = std::complex<double>;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

int failures = 0;

void criterion(int id, const char* name, double limit_s, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (dt > limit_s) {
    o.pass = false;
    o.detail += fmt(" [over time budget %.0f s]", limit_s);
  }
  if (!o.pass) ++failures;
  std::printf("%s %d %s: %s (%.2f s)\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str(), dt);
  std::fflush(stdout);
}

// Three-node signal-flow graph of the two mirrors and the cavity length,
// solved as a dense linear system.
cplx linear_solve_chi_eff(const os::LoopPoint& p, double z1, double z2) {
  Eigen::Matrix3cd a;
  a << 1.0, 0.0, p.chi1 * z1 * p.k_opt,
       0.0, 1.0, p.chi2 * p.chi_fb,
       -z1, -z2, 1.0;
  Eigen::Vector3cd b(p.chi1, 0.0, 0.0);
  return a.fullPivLu().solve(b)[0];
}

Outcome budget_coefficients() {
  const auto b = os::feasibility_budget(5e-6, os::to_angular(1000.0), 4e-3, 0.05, 5e7, os::to_angular(1.0), 300.0);
  const bool ok = std::abs(b.inv_n_osc_thermal - 0.80) <= 0.04 && b.inv_n_osc_trap >= 0.05 && b.inv_n_osc_trap <= 0.15;
  return {ok, fmt("thermal=%.4f trap=%.4f n_osc=%.3f", b.inv_n_osc_thermal, b.inv_n_osc_trap, b.n_osc)};
}

Outcome sixty_fold_reduction() {
  const auto cfg = os::testing::preset("baseline");
  const double w1 = cfg.mirror1.omega0, g1 = cfg.mirror1.gamma0;
  // Arithmetic oracle for the bare rate.
  const double bare = os::kBoltzmann * cfg.noise.temperature / (os::kHbar * w1) * g1;
  std::vector<double> deltas;
  for (int i = 1; i <= 600; ++i) deltas.push_back(cfg.cavity.kappa * 3.0 * i / 600.0);
  const auto rows = os::detuning_scan(cfg, cfg.noise, std::nullopt, deltas);
  double best = std::numeric_limits<double>::infinity(), best_f = 0.0;
  for (const auto& r : rows) {
    if (r.ok && r.predicted.total < best) {
      best = r.predicted.total;
      best_f = os::to_hz(r.omega_eff);
    }
  }
  const double ratio = best / bare;
  const bool ok = ratio >= 1.0 / 120.0 && ratio <= 1.0 / 30.0 && std::abs(bare / 2.2e11 - 1.0) <= 0.10 &&
                  best >= 3.5e9 / 2.0 && best <= 3.5e9 * 2.0;
  return {ok, fmt("bare=%.4g/s min=%.4g/s at f_eff=%.0f Hz ratio=1/%.1f", bare, best, best_f, 1.0 / ratio)};
}

Outcome monte_carlo_rate() {
  // Moderate cooling gain: the early slope is then free of the force/velocity
  // correlation a very broad cooled response leaves behind.
  auto cfg = os::testing::preset("baseline").with_gain(30.0);
  cfg.cavity.detuning = os::detuning_for_frequency(cfg, os::to_angular(950.0));
  const auto lm = os::build_langevin_model(cfg, cfg.noise);
  os::SimPlan plan;
  plan.n_trajectories = 100;
  plan.duration = 6.0;
  plan.master_seed = 2024;
  plan.threads = std::max(1u, std::thread::hardware_concurrency());
  const auto r = os::run_ensemble(lm, plan);
  const double pred = os::predicted_rate(cfg, cfg.noise, lm.off.mode).total;
  const double dev = r.fitted_rate / pred - 1.0;
  return {std::abs(dev) <= 0.15,
          fmt("f_eff=%.1f Hz measured=%.4g+-%.2g/s predicted=%.4g/s", os::to_hz(lm.omega_ref), r.fitted_rate,
              r.fitted_rate_error, pred) +
              fmt(" deviation=%+.1f%% over %.0f segments", 100.0 * dev, static_cast<double>(r.segments))};
}

Outcome equipartition() {
  const auto cfg = os::testing::preset("baseline");
  const auto mode = os::extract_mode(cfg, os::ServoState::off);
  const auto grid = os::frequency_grid_for(mode);
  const auto loop = os::loop_responses(cfg, grid, os::ServoState::off);
  const auto th = os::thermal_spectrum(cfg.noise.temperature, cfg.mirror1, loop.chi_eff);
  const double var = os::integrate(th);
  const double expect = os::kBoltzmann * cfg.noise.temperature / (cfg.mirror1.mass * mode.omega_eff * mode.omega_eff);
  const double dev = var / expect - 1.0;
  return {std::abs(dev) < 0.01, fmt("<x^2>=%.4g m^2 kT/(m w^2)=%.4g m^2 deviation=%+.3f%%", var, expect, 100.0 * dev)};
}

Outcome mason_equivalence() {
  os::testing::Gen gen(77);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const auto cfg = gen.config();
    const double w = os::to_angular(gen.log_uniform(0.1, 1e5));
    const auto p = os::loop_point(cfg, w, gen.integer(0, 1) ? os::ServoState::on : os::ServoState::off);
    const cplx direct = linear_solve_chi_eff(p, cfg.cavity.zeta1, cfg.cavity.zeta2);
    worst = std::max(worst, std::abs(p.chi_eff - direct) / std::abs(direct));
  }
  return {worst < 1e-10, fmt("worst relative error %.2g over 100 draws", worst)};
}

Outcome stability_boundaries() {
  const auto cfg = os::testing::preset("spring_map");
  const double kappa = cfg.cavity.kappa;
  const double gc = os::cancellation_gain(cfg.with_detuning(kappa), os::reference_frequency(cfg.with_detuning(kappa)));
  std::vector<double> deltas, gains;
  for (int i = 0; i <= 20; ++i) deltas.push_back(2.0 * kappa * i / 20.0);
  for (int i = 0; i <= 20; ++i) gains.push_back(2.0 * gc * i / 20.0);
  const auto cells = os::stability_map(cfg, deltas, gains, std::max(1u, std::thread::hardware_concurrency()));
  const auto at = [&](std::size_t d, std::size_t g) -> const os::MapCell& { return cells[d * gains.size() + g]; };

  double worst_intrinsic = 0.0;
  for (std::size_t g = 0; g < gains.size(); ++g) {
    const auto& c = at(0, g);
    if (!c.ok) return {false, "Delta = 0 cell failed: " + c.error};
    worst_intrinsic = std::max({worst_intrinsic, std::abs(c.mode.omega_eff / cfg.mirror1.omega0 - 1.0),
                                std::abs(c.mode.gamma_eff / cfg.mirror1.gamma0 - 1.0)});
  }
  std::size_t zero_gain_stable = 0;
  for (std::size_t d = 1; d < deltas.size(); ++d) {
    if (!at(d, 0).ok || at(d, 0).mode.stable) ++zero_gain_stable;
  }
  // Sign flip of gamma_eff along the gain axis at Delta = kappa.
  const std::size_t dk = 10;
  double g_neg = -1.0, g_pos = -1.0;
  for (std::size_t g = 0; g + 1 < gains.size(); ++g) {
    const auto &a = at(dk, g), &b = at(dk, g + 1);
    if (a.ok && b.ok && a.mode.gamma_eff < 0.0 && b.mode.gamma_eff > 0.0) {
      g_neg = a.gain;
      g_pos = b.gain;
      break;
    }
  }
  const double h = gains[1] - gains[0];
  const bool flip_ok = g_neg >= 0.0 && gc >= g_neg - h && gc <= g_pos + h;
  const bool ok = worst_intrinsic < 1e-3 && zero_gain_stable == 0 && flip_ok;
  return {ok, fmt("Delta=0 worst deviation %.2g; stable g_el=0 cells %.0f; flip in [%.3f, %.3f] g_c",
                  worst_intrinsic, static_cast<double>(zero_gain_stable), g_neg / gc, g_pos / gc)};
}

Outcome calibration_identity() {
  const auto cfg = os::testing::preset("baseline");
  const auto mode = os::extract_mode(cfg, os::ServoState::on);
  const auto grid = os::frequency_grid_for(mode);
  const auto loop = os::loop_responses(cfg, grid, os::ServoState::on);
  const auto sx = os::add(os::thermal_spectrum(cfg.noise.temperature, cfg.mirror1, loop.chi_eff),
                          os::freqnoise_spectrum(cfg.noise, cfg, loop));
  const auto back = os::voltage_to_displacement(os::displacement_to_voltage(sx, cfg, mode.omega_eff, cfg.eta), cfg,
                                                mode.omega_eff, cfg.eta);
  double worst = 0.0;
  for (std::size_t i = 0; i < sx.value.size(); ++i) {
    if (sx.value[i] > 0.0) worst = std::max(worst, std::abs(back.value[i] / sx.value[i] - 1.0));
  }
  return {worst <= 1e-12, fmt("worst relative deviation %.2g over %.0f bins", worst, static_cast<double>(sx.value.size()))};
}

Outcome temperature_pipeline() {
  auto cfg = os::testing::preset("baseline").with_gain(10.0);
  cfg.noise.freq_noise_amp = 0.0;
  const auto lm = os::build_langevin_model(cfg, cfg.noise);
  os::SimPlan plan;
  plan.schedule = os::Schedule::always_on;
  plan.duration = 120.0;
  plan.record_stride = 10;
  plan.master_seed = 11;
  const auto tr = os::simulate_trajectory(lm, plan, 0);
  const double dt_rec = tr.t[1] - tr.t[0];
  const auto s = os::welch_psd(tr.x, dt_rec, 32768);
  const auto& mode = lm.on.mode;
  const auto mt = os::mode_temperature(s, mode.omega_eff, mode.gamma_eff, cfg.mirror1);
  const double expect = cfg.noise.temperature * cfg.mirror1.gamma0 / mode.gamma_eff;
  const double dev = mt.temperature / expect - 1.0;
  return {std::abs(dev) <= 0.10, fmt("T_eff=%.4g K analytic=%.4g K deviation=%+.1f%% (Q_on=%.0f)", mt.temperature,
                                     expect, 100.0 * dev, mode.omega_eff / mode.gamma_eff)};
}

std::string ensemble_csv(const os::EnsembleResult& r) {
  os::CsvTable t({"t_s", "mean_n"});
  t.comment("rate " + os::config_detail::format_double(r.fitted_rate));
  for (std::size_t i = 0; i < r.time_grid.size(); ++i) t.row({r.time_grid[i], r.mean_phonon[i]});
  for (double n0 : r.per_trajectory_n0) t.comment("n0 " + os::config_detail::format_double(n0));
  return t.str();
}

Outcome determinism() {
  const auto cfg = os::testing::preset("baseline");
  const auto lm = os::build_langevin_model(cfg, cfg.noise);
  os::SimPlan plan;
  plan.n_trajectories = 16;
  plan.duration = 2.0;
  plan.master_seed = 99;
  plan.threads = 1;
  const auto one = ensemble_csv(os::run_ensemble(lm, plan));
  const unsigned n = std::max(4u, std::thread::hardware_concurrency());
  plan.threads = n;
  const auto many = ensemble_csv(os::run_ensemble(lm, plan));
  return {one == many, fmt("%.0f bytes, 1 vs %.0f threads ", static_cast<double>(one.size()), n) +
                           (one == many ? "identical" : "differ")};
}

}  // namespace

int main() {
  criterion(1, "budget coefficients", 1.0, budget_coefficients);
  criterion(2, "sixty-fold reduction", 10.0, sixty_fold_reduction);
  criterion(3, "Monte Carlo vs rate law", 300.0, monte_carlo_rate);
  criterion(4, "equipartition", 1.0, equipartition);
  criterion(5, "Mason vs linear solve", 1.0, mason_equivalence);
  criterion(6, "stability map boundaries", 10.0, stability_boundaries);
  criterion(7, "calibration identity", 1.0, calibration_identity);
  criterion(8, "temperature pipeline", 120.0, temperature_pipeline);
  criterion(9, "thread determinism", 300.0, determinism);
  std::printf("summary: %d of 9 criteria failed\n", failures);
  return failures ? 1 : 0;
}
