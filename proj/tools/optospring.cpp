// optospring: batch front end for the optical-spring toolkit.
//
// Every command writes its tables into --out-dir together with a
// <command>.manifest.json recording the arguments, the resolved
// configuration and its hash, the seed, the plan and the outputs. Passing a
// manifest to --replay re-runs the command with the same arguments.
//
// Exit codes: 0 success, 1 runtime or numerical failure, 2 usage or validation.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "optospring.hpp"

#ifndef OPTOSPRING_VERSION
#define OPTOSPRING_VERSION "unknown"
#endif

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace optospring;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string num(double v) { return config_detail::format_double(v); }

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// "start:stop:count", evenly spaced and inclusive; count 1 gives {start}.
std::vector<double> parse_range(const std::string& text, const std::string& flag) {
  const auto a = text.find(':');
  const auto b = a == std::string::npos ? a : text.find(':', a + 1);
  if (a == std::string::npos || b == std::string::npos) {
    throw UsageError(flag + ": expected start:stop:count, got '" + text + "'");
  }
  const auto start = config_detail::to_double(config_detail::trim(text.substr(0, a)));
  const auto stop = config_detail::to_double(config_detail::trim(text.substr(a + 1, b - a - 1)));
  const auto count = config_detail::to_double(config_detail::trim(text.substr(b + 1)));
  if (!start || !stop || !count || !std::isfinite(*start) || !std::isfinite(*stop)) {
    throw UsageError(flag + ": bad number in '" + text + "'");
  }
  if (*count != std::floor(*count) || *count < 0) throw UsageError(flag + ": count must be a non-negative integer");
  if (*count == 0) throw UsageError(flag + ": empty range");
  const auto n = static_cast<std::size_t>(*count);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = n == 1 ? *start : *start + (*stop - *start) * static_cast<double>(i) / static_cast<double>(n - 1);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Shared run state

struct Globals {
  std::string config = "baseline";
  std::string out_dir = ".";
  std::uint64_t seed = 1;
  unsigned threads = 0;
  std::string replay;
};

struct PlanFlags {
  std::string plan_file;
  std::optional<std::size_t> n_trajectories;
  std::optional<double> duration, dt;
  std::optional<std::size_t> record_stride;

  void add(CLI::App* cmd) {
    cmd->add_option("--plan", plan_file, "JSON file with dt_s, duration_s, n_trajectories, record_stride");
    cmd->add_option("--n-trajectories", n_trajectories, "Independent trajectories (default 100)");
    cmd->add_option("--duration", duration, "Seconds per trajectory (default one switch period)");
    cmd->add_option("--dt", dt, "Time step in s (default 1/(200 f_eff))");
    cmd->add_option("--record-stride", record_stride, "Steps between recorded samples (default 10)");
  }

  SimPlan resolve(const Globals& g) const {
    SimPlan p;
    if (!plan_file.empty()) {
      const json j = json::parse(read_file(plan_file));
      for (const auto& [key, _] : j.items()) {
        if (key != "dt_s" && key != "duration_s" && key != "n_trajectories" && key != "record_stride") {
          throw UsageError("--plan: unknown key '" + key + "'");
        }
      }
      p.dt = j.value("dt_s", p.dt);
      p.duration = j.value("duration_s", p.duration);
      p.n_trajectories = j.value("n_trajectories", p.n_trajectories);
      p.record_stride = j.value("record_stride", p.record_stride);
    }
    if (n_trajectories) p.n_trajectories = *n_trajectories;
    if (duration) p.duration = *duration;
    if (dt) p.dt = *dt;
    if (record_stride) p.record_stride = *record_stride;
    p.master_seed = g.seed;
    p.threads = g.threads;
    return p;
  }
};

json plan_json(const SimPlan& p) {
  return {{"dt_s", p.dt}, {"duration_s", p.duration}, {"n_trajectories", p.n_trajectories},
          {"record_stride", p.record_stride}, {"master_seed", p.master_seed}};
}

class Run {
 public:
  Run(std::string command, std::vector<std::string> argv, const Globals& g)
      : command_(std::move(command)), argv_(std::move(argv)), g_(g), started_(utc_now()) {
    fs::create_directories(g_.out_dir);
  }

  SystemConfig load() {
    const auto path = resolve_config_path(g_.config);
    cfg_ = load_config(path);
    for (const auto& w : cfg_->warnings) std::cerr << "warning: " << w << "\n";
    return *cfg_;
  }

  fs::path path(const std::string& name) const { return fs::path(g_.out_dir) / name; }

  void save(const CsvTable& t, const std::string& name) {
    const auto p = path(name);
    t.save(p);
    outputs_.push_back({{"path", p.string()}, {"fnv1a64", fnv1a_hex(t.str())}});
  }

  void save_text(const std::string& text, const std::string& name) {
    const auto p = path(name);
    std::ofstream(p, std::ios::binary) << text;
    outputs_.push_back({{"path", p.string()}, {"fnv1a64", fnv1a_hex(text)}});
  }

  void set_plan(const SimPlan& p) { plan_ = plan_json(p); }

  /// Header comments common to every table.
  void stamp(CsvTable& t) const {
    t.comment("optospring " + std::string(OPTOSPRING_VERSION) + " " + command_);
    if (cfg_) t.comment("config_hash " + config_hash(*cfg_));
    t.comment("seed " + std::to_string(g_.seed));
  }

  void finish() const {
    json m;
    m["command"] = command_;
    m["argv"] = argv_;
    m["version"] = OPTOSPRING_VERSION;
    m["master_seed"] = g_.seed;
    m["threads"] = g_.threads;
    if (cfg_) {
      m["config_source"] = g_.config;
      m["config_hash"] = config_hash(*cfg_);
      m["config"] = save_config(*cfg_);
    }
    if (!plan_.is_null()) m["plan"] = plan_;
    m["outputs"] = outputs_;
    m["started_utc"] = started_;
    m["finished_utc"] = utc_now();
    std::ofstream(path(command_ + ".manifest.json"), std::ios::binary) << m.dump(2) << "\n";
  }

 private:
  std::string command_;
  std::vector<std::string> argv_;
  Globals g_;
  std::string started_;
  std::optional<SystemConfig> cfg_;
  json plan_;
  json outputs_ = json::array();
};

// ---------------------------------------------------------------------------
// Commands

struct MapArgs {
  std::string delta_range, gel_range, out = "map.csv";
};

int cmd_map(Run& run, const MapArgs& a, const Globals& g) {
  const auto cfg = run.load();
  const double kappa = cfg.cavity.kappa;
  std::vector<double> deltas_hz;
  if (a.delta_range.empty()) {
    deltas_hz = parse_range("0:" + num(to_hz(2.0 * kappa)) + ":21", "--delta-range");
  } else {
    deltas_hz = parse_range(a.delta_range, "--delta-range");
  }
  std::vector<double> gains;
  if (a.gel_range.empty()) {
    // Centered on the nominal cancellation gain at Delta = kappa.
    const auto at_kappa = cfg.with_detuning(kappa);
    const double gc = cancellation_gain(at_kappa, reference_frequency(at_kappa));
    gains = parse_range("0:" + num(2.0 * gc) + ":21", "--gel-range");
  } else {
    gains = parse_range(a.gel_range, "--gel-range");
  }
  std::vector<double> deltas(deltas_hz.size());
  std::transform(deltas_hz.begin(), deltas_hz.end(), deltas.begin(), to_angular);
  const auto cells = stability_map(cfg, deltas, gains, g.threads);

  CsvTable t({"delta_Hz", "gel", "f_eff_Hz", "gamma_eff_Hz", "stable"});
  run.stamp(t);
  t.comment("delta_Hz: detuning / 2pi [Hz]; gel: differentiator gain [N s/m]");
  t.comment("f_eff_Hz: omega_eff / 2pi [Hz]; gamma_eff_Hz: gamma_eff / 2pi [Hz]; stable: 1 if all poles decay");
  std::size_t failed = 0;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const auto& c = cells[i];
    const double d_hz = deltas_hz[i / gains.size()];
    if (!c.ok) {
      ++failed;
      t.comment("cell delta_Hz=" + num(d_hz) + " gel=" + num(c.gain) + " failed: " + c.error.substr(0, c.error.find('\n')));
      t.row_cells({num(d_hz), num(c.gain), "nan", "nan", "0"});
      continue;
    }
    t.row_cells({num(d_hz), num(c.gain), num(to_hz(c.mode.omega_eff)), num(to_hz(c.mode.gamma_eff)),
                 c.mode.stable ? "1" : "0"});
  }
  run.save(t, a.out);
  if (failed) std::cerr << failed << " map cells failed; see comments in " << a.out << "\n";
  return 0;
}

struct SpectrumArgs {
  std::optional<double> temperature;
  std::string noise_model = "config";
  std::string state = "on";
  std::string out = "spectrum";
  bool calibrate_then_invert = false;
};

NoiseEnv noise_from_model(const std::string& model, NoiseEnv base) {
  if (model == "config") return base;
  base.freq_noise_table.clear();
  base.freq_noise_amp = 0.0;
  if (model == "none") return base;
  if (model.rfind("1/f:", 0) == 0) {
    const auto a = config_detail::to_double(model.substr(4));
    if (!a || *a < 0) throw UsageError("--noise-model 1/f:<A> needs a non-negative amplitude");
    base.freq_noise_amp = *a;
    return base;
  }
  if (model.rfind("table:", 0) == 0) {
    try {
      base.freq_noise_table = config_detail::parse_table(model.substr(6));
    } catch (const ParseError& e) {
      throw UsageError(std::string("--noise-model: ") + e.what());
    }
    return base;
  }
  throw UsageError("--noise-model must be config, none, 1/f:<A> or table:<f:asd,...>");
}

ServoState parse_state(const std::string& s) {
  if (s == "on") return ServoState::on;
  if (s == "off") return ServoState::off;
  throw UsageError("--state must be on or off");
}

CsvTable spectrum_table(const Run& run, const Spectrum& s, const std::string& what) {
  CsvTable t({"f_Hz", "value", "unit"});
  run.stamp(t);
  t.comment("kind " + std::string(to_string(s.kind)) + " (" + what + ")");
  t.comment("normalization one-sided PSD: integral over f_Hz equals the variance");
  const std::string unit = unit_of(s.kind);
  for (std::size_t i = 0; i < s.freq.size(); ++i) t.row_cells({num(s.freq[i]), num(s.value[i]), unit});
  return t;
}

int cmd_spectrum(Run& run, const SpectrumArgs& a) {
  auto cfg = run.load();
  NoiseEnv noise = noise_from_model(a.noise_model, cfg.noise);
  if (a.temperature) noise.temperature = *a.temperature;
  noise.validate();
  const auto state = parse_state(a.state);
  const auto mode = extract_mode(cfg, state);
  const auto grid = frequency_grid_for(mode);
  const auto loop = loop_responses(cfg, grid, state);
  const auto th = thermal_spectrum(noise.temperature, cfg.mirror1, loop.chi_eff);
  const auto fr = freqnoise_spectrum(noise, cfg, loop);
  const auto total = add(th, fr);
  const auto volts = displacement_to_voltage(total, cfg, mode.omega_eff, cfg.eta);
  run.save(spectrum_table(run, th, "thermal"), a.out + "_thermal.csv");
  run.save(spectrum_table(run, fr, "laser frequency noise"), a.out + "_freq.csv");
  run.save(spectrum_table(run, total, "total"), a.out + "_total.csv");
  run.save(spectrum_table(run, volts, "total, detector calibrated"), a.out + "_total_voltage.csv");
  if (a.calibrate_then_invert) {
    const auto back = voltage_to_displacement(volts, cfg, mode.omega_eff, cfg.eta);
    double worst = 0.0;
    for (std::size_t i = 0; i < back.value.size(); ++i) {
      if (total.value[i] != 0.0) worst = std::max(worst, std::abs(back.value[i] / total.value[i] - 1.0));
    }
    run.save(spectrum_table(run, back, "total, calibrated then inverted"), a.out + "_roundtrip.csv");
    std::cout << "calibration round trip: max relative deviation " << num(worst) << "\n";
    if (!(worst <= 1e-12)) return 1;
  }
  std::cout << "f_eff " << num(to_hz(mode.omega_eff)) << " Hz, gamma_eff " << num(mode.gamma_eff)
            << " rad/s, stable " << mode.stable << "\n";
  return 0;
}

struct CoolArgs {
  std::string gel_range, out = "cool.csv";
};

int cmd_cool(Run& run, const CoolArgs& a) {
  const auto cfg = run.load();
  const auto gains = a.gel_range.empty() ? std::vector<double>{cfg.servo.g_el} : parse_range(a.gel_range, "--gel-range");
  CsvTable t({"gel", "f_eff_Hz", "gamma_eff_Hz", "T_eff_K", "n_th_prime", "n_freq"});
  run.stamp(t);
  t.comment("gel [N s/m]; f_eff_Hz, gamma_eff_Hz: trapped mode / 2pi [Hz]");
  t.comment("T_eff_K: spectral mode temperature of the thermal displacement [K]");
  t.comment("n_th_prime: k_B T gamma1 / (hbar omega_eff gamma_eff); n_freq: m1 omega_eff <x^2>_freq / hbar");
  for (double gel : gains) {
    const auto c = cfg.with_gain(gel);
    try {
      const auto mode = extract_mode(c, ServoState::on);
      if (!mode.stable) throw InstabilityError("cooled mode is unstable at this gain");
      const auto grid = frequency_grid_for(mode);
      const auto loop = loop_responses(c, grid, ServoState::on);
      const auto th = thermal_spectrum(c.noise.temperature, c.mirror1, loop.chi_eff);
      const auto fr = freqnoise_spectrum(c.noise, c, loop);
      const auto mt = mode_temperature(th, mode.omega_eff, mode.gamma_eff, c.mirror1);
      const auto occ = occupations(c, c.noise, mode, fr);
      t.row({gel, to_hz(mode.omega_eff), to_hz(mode.gamma_eff), mt.temperature, occ.n_th_prime, occ.n_freq});
    } catch (const Error& e) {
      t.comment("gel=" + num(gel) + " failed: " + std::string(e.what()).substr(0, std::string(e.what()).find('\n')));
      t.row_cells({num(gel), "nan", "nan", "nan", "nan", "nan"});
    }
  }
  run.save(t, a.out);
  return 0;
}

struct RethermArgs {
  PlanFlags plan;
  std::optional<double> target_f_eff;
  std::string out = "retherm.csv";
};

int cmd_retherm(Run& run, const RethermArgs& a, const Globals& g) {
  auto cfg = run.load();
  if (a.target_f_eff) cfg.cavity.detuning = detuning_for_frequency(cfg, to_angular(*a.target_f_eff));
  const auto lm = build_langevin_model(cfg, cfg.noise);
  const auto plan = resolve_plan(a.plan.resolve(g), lm);
  run.set_plan(plan);
  const auto r = run_ensemble(lm, plan);
  const auto pred = predicted_rate(cfg, cfg.noise, lm.off.mode);

  CsvTable t({"t_s", "mean_n"});
  run.stamp(t);
  t.comment("t_s: time after the servo is switched off [s]; mean_n: ensemble-averaged phonon number");
  t.comment("f_eff_Hz " + num(to_hz(lm.omega_ref)) + " segments " + std::to_string(r.segments));
  t.comment("rate_measured " + num(r.fitted_rate) + " +- " + num(r.fitted_rate_error) + " phonons/s over " +
            std::to_string(r.window_points) + " points");
  t.comment("rate_predicted " + num(pred.total) + " (thermal " + num(pred.thermal) + ", trap " + num(pred.trap) + ")");
  t.comment("gamma_fit " + num(r.fitted_gamma_eff) + " rad/s; n0 " + num(r.fitted_n0) + "; n_inf " + num(r.fitted_n_inf));
  t.comment("n_osc " + num(r.n_osc));
  for (std::size_t i = 0; i < r.time_grid.size(); ++i) t.row({r.time_grid[i], r.mean_phonon[i]});
  run.save(t, a.out);
  std::cout << "rate " << num(r.fitted_rate) << " +- " << num(r.fitted_rate_error) << " /s, predicted "
            << num(pred.total) << " /s, n_osc " << num(r.n_osc) << "\n";
  return 0;
}

struct ScanArgs {
  PlanFlags plan;
  std::string deltas, f_eff_range;
  bool predict_only = false;
  std::string out = "scan.csv";
};

int cmd_scan(Run& run, const ScanArgs& a, const Globals& g) {
  const auto cfg = run.load();
  if (a.deltas.empty() == a.f_eff_range.empty()) throw UsageError("give exactly one of --deltas and --f-eff-range");
  std::vector<double> deltas;
  if (!a.deltas.empty()) {
    for (double d : parse_range(a.deltas, "--deltas")) deltas.push_back(to_angular(d));
  } else {
    for (double f : parse_range(a.f_eff_range, "--f-eff-range")) {
      try {
        deltas.push_back(detuning_for_frequency(cfg, to_angular(f)));
      } catch (const ValidationError& e) {
        throw UsageError(std::string("--f-eff-range: ") + e.what());
      }
    }
  }
  std::optional<SimPlan> plan;
  if (!a.predict_only) {
    plan = a.plan.resolve(g);
    run.set_plan(*plan);
  }
  const auto rows = detuning_scan(cfg, cfg.noise, plan, deltas);
  CsvTable t({"delta_Hz", "f_eff_Hz", "rate_measured", "rate_predicted", "rate_err", "n_osc"});
  run.stamp(t);
  t.comment("delta_Hz: detuning / 2pi [Hz]; f_eff_Hz: released trapped mode [Hz]");
  t.comment("rates in phonons/s; rate_err: standard error of rate_measured; n_osc = omega_eff / (2 pi rate)");
  if (a.predict_only) t.comment("predict-only: n_osc from rate_predicted");
  std::size_t failed = 0;
  for (const auto& r : rows) {
    if (!r.ok) {
      ++failed;
      t.comment("delta_Hz=" + num(to_hz(r.detuning)) + " failed: " + r.error.substr(0, r.error.find('\n')));
      t.row_cells({num(to_hz(r.detuning)), "nan", "nan", "nan", "nan", "nan"});
      continue;
    }
    t.row({to_hz(r.detuning), to_hz(r.omega_eff), r.rate_measured, r.predicted.total, r.rate_error, r.n_osc});
  }
  run.save(t, a.out);
  if (failed) std::cerr << failed << " of " << rows.size() << " detunings failed; see " << a.out << "\n";
  return 0;
}

struct CheckArgs {
  std::optional<double> m1_mg, f_eff_hz, asd, l_cm, q1, f1_hz;
  double temperature = 300.0;
  double laser_thz = 300.0;
  std::string out = "check.json";
};

int cmd_check(Run& run, const CheckArgs& a, bool explicit_scalars) {
  double m1, w_eff, asd, L, q1, w1, T, w_laser;
  if (explicit_scalars) {
    std::vector<std::string> missing;
    if (!a.m1_mg) missing.push_back("--m1-mg");
    if (!a.f_eff_hz) missing.push_back("--f-eff-Hz");
    if (!a.asd) missing.push_back("--asd");
    if (!a.l_cm) missing.push_back("--L-cm");
    if (!a.q1) missing.push_back("--Q1");
    if (!a.f1_hz) missing.push_back("--f1-Hz");
    if (!missing.empty()) {
      std::string list;
      for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
      throw UsageError("check: missing required scalar(s): " + list);
    }
    m1 = *a.m1_mg * 1e-6;
    w_eff = to_angular(*a.f_eff_hz);
    asd = *a.asd;
    L = *a.l_cm * 1e-2;
    q1 = *a.q1;
    w1 = to_angular(*a.f1_hz);
    T = a.temperature;
    w_laser = kTwoPi * a.laser_thz * 1e12;
  } else {
    const auto cfg = run.load();
    const auto mode = extract_mode(cfg, ServoState::off);
    m1 = cfg.mirror1.mass;
    w_eff = mode.omega_eff;
    asd = cfg.noise.asd(to_hz(w_eff));
    L = cfg.cavity.round_trip_length;
    q1 = cfg.mirror1.quality();
    w1 = cfg.mirror1.omega0;
    T = cfg.noise.temperature;
    w_laser = cfg.cavity.omega_laser;
  }
  const auto b = feasibility_budget(m1, w_eff, asd, L, q1, w1, T, w_laser);
  const bool condition = b.condition_margin < 1.0;
  const bool achievable = condition && b.n_osc > 1.0;
  json j = {{"f_eff_Hz", to_hz(w_eff)},          {"inv_n_osc_thermal", b.inv_n_osc_thermal},
            {"inv_n_osc_trap", b.inv_n_osc_trap}, {"n_osc", b.n_osc},
            {"g0_rad_s", b.g0},                   {"condition_margin", b.condition_margin},
            {"condition_satisfied", condition},   {"rate_total", b.rate.total},
            {"rate_thermal", b.rate.thermal},     {"rate_trap", b.rate.trap},
            {"verdict", achievable ? "achievable" : "not achievable"}};
  run.save_text(j.dump(2) + "\n", a.out);
  char line[256];
  std::snprintf(line, sizeof line, "n_osc=%.3g 1/n_osc=%.3g+%.3g margin=%.3g verdict=%s", b.n_osc, b.inv_n_osc_thermal,
                b.inv_n_osc_trap, b.condition_margin, achievable ? "achievable" : "not-achievable");
  std::cout << line << "\n";
  return 0;
}

int run_cli(std::vector<std::string> args);

int replay(const Globals& g, const std::vector<std::string>& args) {
  const json m = json::parse(read_file(g.replay));
  std::vector<std::string> argv = m.at("argv").get<std::vector<std::string>>();
  // A different --out-dir may be given next to --replay.
  const bool out_dir_given = std::find(args.begin(), args.end(), "--out-dir") != args.end();
  if (out_dir_given) {
    for (std::size_t i = 0; i < argv.size();) {
      if (argv[i] == "--out-dir" && i + 1 < argv.size()) {
        argv.erase(argv.begin() + static_cast<std::ptrdiff_t>(i), argv.begin() + static_cast<std::ptrdiff_t>(i) + 2);
      } else if (argv[i].rfind("--out-dir=", 0) == 0) {
        argv.erase(argv.begin() + static_cast<std::ptrdiff_t>(i));
      } else {
        ++i;
      }
    }
    argv.push_back("--out-dir");
    argv.push_back(g.out_dir);
  }
  if (m.contains("config_hash")) {
    Globals probe;
    for (std::size_t i = 0; i + 1 < argv.size(); ++i) {
      if (argv[i] == "--config") probe.config = argv[i + 1];
    }
    const auto cfg = load_config(resolve_config_path(probe.config));
    if (config_hash(cfg) != m["config_hash"].get<std::string>()) {
      throw ValidationError("configuration '" + probe.config + "' changed since the manifest was written (hash " +
                            config_hash(cfg) + " vs " + m["config_hash"].get<std::string>() + ")");
    }
  }
  return run_cli(argv);
}

int run_cli(std::vector<std::string> args) {
  CLI::App app{"Optical-spring trapping, feedback cooling and thermal-decoherence toolkit"};
  app.set_version_flag("--version", OPTOSPRING_VERSION);
  app.require_subcommand(0, 1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "Config file or preset name")->capture_default_str();
  app.add_option("--out-dir", g.out_dir, "Output directory")->capture_default_str();
  app.add_option("--seed", g.seed, "Master seed")->capture_default_str();
  app.add_option("--threads", g.threads, "Worker cap (0 = all cores)")->capture_default_str();
  app.add_option("--replay", g.replay, "Re-run the command recorded in a manifest");

  MapArgs map;
  auto* c_map = app.add_subcommand("map", "Trapped-mode stability map over detuning and servo gain");
  c_map->add_option("--delta-range", map.delta_range, "Detuning/2pi start:stop:count [Hz] (default 0:2kappa:21)");
  c_map->add_option("--gel-range", map.gel_range, "Gain start:stop:count [N s/m] (default 0:2g_c:21)");
  c_map->add_option("--out", map.out)->capture_default_str();

  SpectrumArgs spec;
  auto* c_spec = app.add_subcommand("spectrum", "Thermal, frequency-noise and total displacement spectra");
  c_spec->add_option("--temperature", spec.temperature, "Bath temperature override [K]");
  c_spec->add_option("--noise-model", spec.noise_model, "config | none | 1/f:<A> | table:<f:asd,...>")
      ->capture_default_str();
  c_spec->add_option("--state", spec.state, "Servo state: on | off")->capture_default_str();
  c_spec->add_option("--out", spec.out, "Output file prefix")->capture_default_str();
  c_spec->add_flag("--calibrate-then-invert", spec.calibrate_then_invert, "Also write the calibration round trip");

  CoolArgs cool;
  auto* c_cool = app.add_subcommand("cool", "Mode temperature and occupations versus cooling gain");
  c_cool->add_option("--gel-range", cool.gel_range, "Gain start:stop:count [N s/m] (default: config gain)");
  c_cool->add_option("--out", cool.out)->capture_default_str();

  RethermArgs re;
  auto* c_re = app.add_subcommand("retherm", "Monte Carlo rethermalization after switching the servo off");
  re.plan.add(c_re);
  c_re->add_option("--target-f-eff", re.target_f_eff, "Trapped frequency to tune the detuning to [Hz]");
  c_re->add_option("--out", re.out)->capture_default_str();

  ScanArgs scan;
  auto* c_scan = app.add_subcommand("scan", "Decoherence rate versus detuning, measured and predicted");
  scan.plan.add(c_scan);
  c_scan->add_option("--deltas", scan.deltas, "Detuning/2pi start:stop:count [Hz]");
  c_scan->add_option("--f-eff-range", scan.f_eff_range, "Trapped frequencies start:stop:count [Hz]");
  c_scan->add_flag("--predict-only", scan.predict_only, "Skip the Monte Carlo");
  c_scan->add_option("--out", scan.out)->capture_default_str();

  CheckArgs check;
  auto* c_check = app.add_subcommand("check", "Coherence condition and oscillation-number budget");
  c_check->add_option("--m1-mg", check.m1_mg, "Light mirror mass [mg]");
  c_check->add_option("--f-eff-Hz", check.f_eff_hz, "Trapped frequency [Hz]");
  c_check->add_option("--asd", check.asd, "sqrt(S_phidot) at f_eff [Hz/sqrt(Hz)]");
  c_check->add_option("--L-cm", check.l_cm, "Cavity length [cm]");
  c_check->add_option("--Q1", check.q1, "Pendulum quality factor");
  c_check->add_option("--f1-Hz", check.f1_hz, "Pendulum frequency [Hz]");
  c_check->add_option("--T-K", check.temperature, "Temperature [K]")->capture_default_str();
  c_check->add_option("--laser-THz", check.laser_thz, "Laser frequency [THz]")->capture_default_str();
  c_check->add_option("--out", check.out)->capture_default_str();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  if (!g.replay.empty()) return replay(g, args);

  CLI::App* chosen = nullptr;
  for (auto* c : {c_map, c_spec, c_cool, c_re, c_scan, c_check}) {
    if (c->parsed()) chosen = c;
  }
  if (!chosen) {
    std::cerr << app.help();
    return 2;
  }
  Run run(chosen->get_name(), args, g);
  int rc = 0;
  if (chosen == c_map) rc = cmd_map(run, map, g);
  if (chosen == c_spec) rc = cmd_spectrum(run, spec);
  if (chosen == c_cool) rc = cmd_cool(run, cool);
  if (chosen == c_re) rc = cmd_retherm(run, re, g);
  if (chosen == c_scan) rc = cmd_scan(run, scan, g);
  if (chosen == c_check) {
    const bool explicit_scalars = check.m1_mg || check.f_eff_hz || check.asd || check.l_cm || check.q1 || check.f1_hz;
    rc = cmd_check(run, check, explicit_scalars);
  }
  run.finish();
  return rc;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    return run_cli(args);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const ParseError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
