#pragma once

// Flat key = value configuration files.
//
//   # comment
//   m1_mg = 5
//   kappa_over_2pi_Hz = 0.84e6
//
// Keys carry their unit. Most quantities also accept an SI spelling
// (m1_kg, omega1_rad_s, ...); save_config() uses the friendly spelling when
// the value survives the unit conversion bit-exactly and the SI one otherwise.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "optospring/constants.hpp"
#include "optospring/error.hpp"
#include "optospring/model.hpp"
#include "optospring/response.hpp"

namespace optospring {

namespace config_detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::optional<double> to_double(const std::string& s) {
  if (s.empty()) return std::nullopt;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size()) return std::nullopt;
  return v;
}

/// Shortest decimal text that parses back to exactly `v`.
inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

struct Entry {
  std::string value;
  int line = 0;
};

class KeyValues {
 public:
  explicit KeyValues(const std::string& text) {
    std::istringstream in(text);
    std::string raw;
    int line = 0;
    while (std::getline(in, raw)) {
      ++line;
      if (const auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
      const std::string t = trim(raw);
      if (t.empty()) continue;
      const auto eq = t.find('=');
      if (eq == std::string::npos) {
        throw ParseError("line " + std::to_string(line) + ": expected 'key = value', got '" + t + "'");
      }
      const std::string key = trim(std::string_view(t).substr(0, eq));
      const std::string value = trim(std::string_view(t).substr(eq + 1));
      if (key.empty()) throw ParseError("line " + std::to_string(line) + ": empty key");
      if (value.empty()) throw ParseError("line " + std::to_string(line) + ": empty value for '" + key + "'");
      if (entries_.count(key)) throw ParseError("line " + std::to_string(line) + ": duplicate key '" + key + "'");
      entries_[key] = {value, line};
    }
  }

  bool has(const std::string& key) const { return entries_.count(key) != 0; }

  std::optional<std::string> text(const std::string& key) {
    auto it = entries_.find(key);
    if (it == entries_.end()) return std::nullopt;
    used_.insert(key);
    return it->second.value;
  }

  std::optional<double> number(const std::string& key) {
    auto it = entries_.find(key);
    if (it == entries_.end()) return std::nullopt;
    used_.insert(key);
    auto v = to_double(it->second.value);
    if (!v) {
      throw ParseError("line " + std::to_string(it->second.line) + ": '" + key +
                       "' expects a number, got '" + it->second.value + "'");
    }
    return v;
  }

  /// First of several alternative spellings, each with a factor to SI.
  std::optional<double> quantity(std::initializer_list<std::pair<const char*, double>> spellings) {
    std::optional<double> found;
    std::string first;
    for (const auto& [key, factor] : spellings) {
      if (auto v = number(key)) {
        if (found) throw ParseError("'" + first + "' and '" + key + "' both given");
        found = *v * factor;
        first = key;
      }
    }
    return found;
  }

  void reject_unused() const {
    for (const auto& [key, e] : entries_) {
      if (!used_.count(key)) throw ParseError("line " + std::to_string(e.line) + ": unknown key '" + key + "'");
    }
  }

 private:
  std::map<std::string, Entry> entries_;
  std::set<std::string> used_;
};

inline std::vector<FilterSection> parse_sections(const std::string& spec) {
  // "highpass@10, lowpass@5000, gain@2" (corners in Hz, or rad/s with a
  // "rad_s" suffix)
  std::vector<FilterSection> out;
  std::istringstream in(spec);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (item.empty() || item == "none") continue;
    const auto at = item.find('@');
    if (at == std::string::npos) throw ParseError("servo_sections: expected kind@value, got '" + item + "'");
    const std::string kind = trim(std::string_view(item).substr(0, at));
    std::string number = trim(std::string_view(item).substr(at + 1));
    const bool angular = number.ends_with("rad_s");
    if (angular) number = trim(std::string_view(number).substr(0, number.size() - 5));
    const auto value = to_double(number);
    if (!value) throw ParseError("servo_sections: bad number in '" + item + "'");
    const double corner = angular ? *value : to_angular(*value);
    FilterSection s;
    if (kind == "highpass") {
      s = {SectionKind::highpass, corner};
    } else if (kind == "lowpass") {
      s = {SectionKind::lowpass, corner};
    } else if (kind == "gain") {
      s = {SectionKind::gain, *value};
    } else {
      throw ParseError("servo_sections: unknown section kind '" + kind + "'");
    }
    out.push_back(s);
  }
  return out;
}

inline std::vector<std::pair<double, double>> parse_table(const std::string& spec) {
  // "10:1000, 100:100" as f_Hz:sqrtS pairs
  std::vector<std::pair<double, double>> out;
  std::istringstream in(spec);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw ParseError("freq_noise_table: expected f:value, got '" + item + "'");
    const auto f = to_double(trim(std::string_view(item).substr(0, colon)));
    const auto v = to_double(trim(std::string_view(item).substr(colon + 1)));
    if (!f || !v) throw ParseError("freq_noise_table: bad number in '" + item + "'");
    out.emplace_back(*f, *v);
  }
  return out;
}

// Writes `si` under the friendly key if it round-trips through `factor`
// exactly, otherwise under the SI key.
inline void put_quantity(std::ostream& os, const char* friendly, double factor, const char* si_key,
                         double si) {
  const double shown = si / factor;
  const auto text = format_double(shown);
  if (to_double(text).value() * factor == si) {
    os << friendly << " = " << text << "\n";
  } else {
    os << si_key << " = " << format_double(si) << "\n";
  }
}

}  // namespace config_detail

/// Relative mismatch above which kappa and finesse are reported inconsistent.
inline constexpr double kFinesseTolerance = 0.10;

/// Parses configuration text; all invariants are validated and derived
/// quantities resolved. Inconsistencies that are not fatal land in `warnings`.
inline SystemConfig parse_config(const std::string& text) {
  using config_detail::KeyValues;
  KeyValues kv(text);
  SystemConfig cfg;

  auto required = [](std::optional<double> v, const char* what) {
    if (!v) throw ValidationError(std::string("missing required parameter: ") + what);
    return *v;
  };

  auto read_mirror = [&](MirrorParams& m, int idx, double mass_factor, const char* mass_key,
                         const char* default_label) {
    const std::string i = std::to_string(idx);
    m.label = kv.text("label" + i).value_or(default_label);
    m.mass = required(kv.quantity({{mass_key, mass_factor}, {("m" + i + "_kg").c_str(), 1.0}}),
                      mass_key);
    m.omega0 = required(kv.quantity({{("f" + i + "_Hz").c_str(), kTwoPi},
                                     {("omega" + i + "_rad_s").c_str(), 1.0}}),
                        ("f" + i + "_Hz").c_str());
    auto gamma = kv.quantity({{("gamma" + i + "_over_2pi_Hz").c_str(), kTwoPi},
                              {("gamma" + i + "_rad_s").c_str(), 1.0}});
    if (auto q = kv.number("Q" + i)) {
      if (gamma) throw ParseError("Q" + i + " and gamma" + i + " both given");
      gamma = m.omega0 / *q;
    }
    m.gamma0 = required(gamma, ("gamma" + i + "_over_2pi_Hz").c_str());
  };
  read_mirror(cfg.mirror1, 1, 1e-6, "m1_mg", "light");
  read_mirror(cfg.mirror2, 2, 1e-3, "m2_g", "heavy");

  auto& cav = cfg.cavity;
  cav.round_trip_length = required(kv.quantity({{"L_cm", 1e-2}, {"L_m", 1.0}}), "L_cm");
  cav.finesse = required(kv.number("finesse"), "finesse");
  const auto kappa = kv.quantity({{"kappa_over_2pi_Hz", kTwoPi}, {"kappa_rad_s", 1.0}});
  const double kappa_geo = kappa_from_finesse(cav.round_trip_length, cav.finesse);
  cav.kappa = kappa.value_or(kappa_geo);
  if (kappa && std::abs(*kappa / kappa_geo - 1.0) > kFinesseTolerance) {
    std::ostringstream os;
    os << "kappa/2pi = " << to_hz(*kappa) << " Hz disagrees with pi c/(L F)/2pi = " << to_hz(kappa_geo)
       << " Hz by more than " << kFinesseTolerance * 100 << "%";
    cfg.warnings.push_back(os.str());
  }
  cav.kappa_in_ratio = required(kv.number("kappa_in_ratio"), "kappa_in_ratio");
  cav.omega_laser = required(kv.quantity({{"laser_freq_THz", kTwoPi * 1e12}, {"omega_laser_rad_s", 1.0}}),
                             "laser_freq_THz");
  cav.input_power = kv.quantity({{"input_power_mW", 1e-3}, {"input_power_W", 1.0}}).value_or(0.0);
  cav.cos_beta = kv.number("cos_beta").value_or(1.0);
  cav.zeta1 = kv.number("zeta1").value_or(2.0 * cav.cos_beta);
  cav.zeta2 = kv.number("zeta2").value_or(1.0);
  if (auto conv = kv.text("g_pull_convention")) {
    if (*conv == "round_trip") {
      cav.pull = PullConvention::round_trip;
    } else if (*conv == "geometric") {
      cav.pull = PullConvention::geometric;
    } else {
      throw ParseError("g_pull_convention must be round_trip or geometric, got '" + *conv + "'");
    }
  }
  cav.g_pull = kv.number("g_pull_rad_s_per_m")
                   .value_or(pull_coefficient(cav.pull, cav.omega_laser, cav.round_trip_length, cav.zeta1));
  cav.pressure = kv.number("pressure_Pa").value_or(0.0);
  cav.n_cav_fixed = kv.number("n_cav");
  cav.n_cav_peak = kv.number("n_cav_peak").value_or(
      resonant_photon_number(cav.input_power, cav.omega_laser, cav.kappa, cav.kappa_in_ratio));

  auto& servo = cfg.servo;
  servo.g_el = kv.number("g_el_N_s_per_m").value_or(0.0);
  if (auto off = kv.text("off_gain_N_s_per_m"); off && *off != "cancel") {
    servo.off_gain = kv.number("off_gain_N_s_per_m");
  }
  servo.switch_frequency = kv.number("switch_frequency_Hz").value_or(1.0);
  if (auto sections = kv.text("servo_sections")) servo.sections = config_detail::parse_sections(*sections);
  servo.g_f = kv.number("g_f_N_per_m_per_Hz");

  auto& noise = cfg.noise;
  noise.temperature = kv.number("temperature_K").value_or(300.0);
  noise.freq_noise_amp = kv.number("freq_noise_amp_Hz2_per_rtHz").value_or(0.0);
  if (auto table = kv.text("freq_noise_table")) noise.freq_noise_table = config_detail::parse_table(*table);

  cfg.eta = kv.number("eta_V_per_W").value_or(1.0);

  // Detuning last: a target trapped-mode frequency needs the rest resolved.
  const auto delta = kv.quantity({{"detuning_over_2pi_Hz", kTwoPi}, {"detuning_rad_s", 1.0}});
  const auto delta_rel = kv.number("detuning_over_kappa");
  const auto target = kv.number("target_f_eff_Hz");
  if ((delta.has_value() + delta_rel.has_value() + target.has_value()) > 1) {
    throw ParseError("give only one of detuning_over_2pi_Hz, detuning_over_kappa, target_f_eff_Hz");
  }
  kv.reject_unused();

  cav.detuning = delta.value_or(delta_rel ? *delta_rel * cav.kappa : 0.0);
  cfg.validate();
  if (target) cav.detuning = detuning_for_frequency(cfg, to_angular(*target));
  return cfg;
}

inline SystemConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open config file '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config(ss.str());
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

/// Resolved configuration as text. parse_config(save_config(c)) reproduces
/// every field of c bit-exactly.
inline std::string save_config(const SystemConfig& cfg) {
  using config_detail::format_double;
  using config_detail::put_quantity;
  std::ostringstream os;
  auto mirror = [&](const MirrorParams& m, int i, const char* mass_key, double mass_factor) {
    const std::string n = std::to_string(i);
    os << "label" << n << " = " << m.label << "\n";
    put_quantity(os, mass_key, mass_factor, ("m" + n + "_kg").c_str(), m.mass);
    put_quantity(os, ("f" + n + "_Hz").c_str(), kTwoPi, ("omega" + n + "_rad_s").c_str(), m.omega0);
    put_quantity(os, ("gamma" + n + "_over_2pi_Hz").c_str(), kTwoPi, ("gamma" + n + "_rad_s").c_str(),
                 m.gamma0);
  };
  os << "# mirrors\n";
  mirror(cfg.mirror1, 1, "m1_mg", 1e-6);
  mirror(cfg.mirror2, 2, "m2_g", 1e-3);
  const auto& c = cfg.cavity;
  os << "# cavity\n";
  put_quantity(os, "L_cm", 1e-2, "L_m", c.round_trip_length);
  os << "finesse = " << format_double(c.finesse) << "\n";
  put_quantity(os, "kappa_over_2pi_Hz", kTwoPi, "kappa_rad_s", c.kappa);
  os << "kappa_in_ratio = " << format_double(c.kappa_in_ratio) << "\n";
  put_quantity(os, "detuning_over_2pi_Hz", kTwoPi, "detuning_rad_s", c.detuning);
  put_quantity(os, "laser_freq_THz", kTwoPi * 1e12, "omega_laser_rad_s", c.omega_laser);
  put_quantity(os, "input_power_mW", 1e-3, "input_power_W", c.input_power);
  os << "n_cav_peak = " << format_double(c.n_cav_peak) << "\n";
  if (c.n_cav_fixed) os << "n_cav = " << format_double(*c.n_cav_fixed) << "\n";
  os << "cos_beta = " << format_double(c.cos_beta) << "\n";
  os << "zeta1 = " << format_double(c.zeta1) << "\n";
  os << "zeta2 = " << format_double(c.zeta2) << "\n";
  os << "g_pull_convention = " << to_string(c.pull) << "\n";
  os << "g_pull_rad_s_per_m = " << format_double(c.g_pull) << "\n";
  os << "pressure_Pa = " << format_double(c.pressure) << "\n";
  const auto& s = cfg.servo;
  os << "# servo\n";
  os << "g_el_N_s_per_m = " << format_double(s.g_el) << "\n";
  os << "off_gain_N_s_per_m = " << (s.off_gain ? format_double(*s.off_gain) : std::string("cancel")) << "\n";
  os << "switch_frequency_Hz = " << format_double(s.switch_frequency) << "\n";
  if (!s.sections.empty()) {
    os << "servo_sections = ";
    for (std::size_t i = 0; i < s.sections.size(); ++i) {
      const auto& sec = s.sections[i];
      std::string shown = format_double(sec.value);
      if (sec.kind != SectionKind::gain) {
        const std::string hz = format_double(to_hz(sec.value));
        shown = to_angular(config_detail::to_double(hz).value()) == sec.value ? hz : shown + " rad_s";
      }
      os << (i ? ", " : "") << to_string(sec.kind) << "@" << shown;
    }
    os << "\n";
  }
  if (s.g_f) os << "g_f_N_per_m_per_Hz = " << format_double(*s.g_f) << "\n";
  const auto& n = cfg.noise;
  os << "# noise\n";
  os << "temperature_K = " << format_double(n.temperature) << "\n";
  os << "freq_noise_amp_Hz2_per_rtHz = " << format_double(n.freq_noise_amp) << "\n";
  if (!n.freq_noise_table.empty()) {
    os << "freq_noise_table = ";
    for (std::size_t i = 0; i < n.freq_noise_table.size(); ++i) {
      os << (i ? ", " : "") << format_double(n.freq_noise_table[i].first) << ":"
         << format_double(n.freq_noise_table[i].second);
    }
    os << "\n";
  }
  os << "# detector\n";
  os << "eta_V_per_W = " << format_double(cfg.eta) << "\n";
  return os.str();
}

/// 64-bit FNV-1a of a byte string, as 16 hex digits.
inline std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// Hash of the resolved configuration.
inline std::string config_hash(const SystemConfig& cfg) { return fnv1a_hex(save_config(cfg)); }

#ifndef OPTOSPRING_DEFAULT_PRESET_DIR
#define OPTOSPRING_DEFAULT_PRESET_DIR "presets"
#endif

/// Resolves a --config argument: an existing path is used as is; otherwise
/// `<name>.cfg` is looked up in $OPTOSPRING_PRESET_DIR and then in the
/// installed preset directory.
inline std::filesystem::path resolve_config_path(const std::string& name_or_path) {
  namespace fs = std::filesystem;
  if (fs::exists(name_or_path)) return name_or_path;
  std::vector<fs::path> dirs;
  if (const char* env = std::getenv("OPTOSPRING_PRESET_DIR")) dirs.emplace_back(env);
  dirs.emplace_back(OPTOSPRING_DEFAULT_PRESET_DIR);
  for (const auto& d : dirs) {
    for (const auto& candidate : {d / name_or_path, d / (name_or_path + ".cfg")}) {
      if (fs::exists(candidate)) return candidate;
    }
  }
  throw ParseError("no config file or preset named '" + name_or_path + "'");
}

}  // namespace optospring
