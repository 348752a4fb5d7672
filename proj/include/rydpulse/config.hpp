#pragma once

// Scenario configuration: INI ingestion with unit-annotated quantities,
// validation, and a resolved manifest that re-reads to the same values.
//
// Quantities accept an optional unit suffix. Times: none (1/Gamma), "ns",
// "us". Rates: none (Gamma), "MHz" (f = omega / 2pi). Lists are comma
// separated.

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>

#include "rydpulse/counting.hpp"

namespace rydpulse {

enum class ScenarioKind { spectrum, propagate, turnon_scan, turnoff_scan, experiment_replica, window_scan, storage,
                          dlcz, emulate_hbt };

inline const std::vector<std::pair<ScenarioKind, std::string>>& scenario_names() {
  static const std::vector<std::pair<ScenarioKind, std::string>> names{
      {ScenarioKind::spectrum, "spectrum"},
      {ScenarioKind::propagate, "propagate"},
      {ScenarioKind::turnon_scan, "turnon_scan"},
      {ScenarioKind::turnoff_scan, "turnoff_scan"},
      {ScenarioKind::experiment_replica, "experiment_replica"},
      {ScenarioKind::window_scan, "window_scan"},
      {ScenarioKind::storage, "storage"},
      {ScenarioKind::dlcz, "dlcz"},
      {ScenarioKind::emulate_hbt, "emulate_hbt"}};
  return names;
}

inline std::string to_string(ScenarioKind k) {
  for (const auto& [kind, name] : scenario_names())
    if (kind == k) return name;
  return "?";
}

inline ScenarioKind parse_kind(const std::string& s) {
  for (const auto& [kind, name] : scenario_names())
    if (name == s) return kind;
  throw ConfigError("unknown scenario kind '" + s + "'");
}

inline std::string to_string(PulseShape s) {
  switch (s) {
    case PulseShape::square: return "square";
    case PulseShape::triangular_neg: return "triangular_neg";
    case PulseShape::triangular_pos: return "triangular_pos";
    case PulseShape::gaussian: return "gaussian";
  }
  return "?";
}
inline PulseShape parse_shape(const std::string& s) {
  for (auto x : {PulseShape::square, PulseShape::triangular_neg, PulseShape::triangular_pos, PulseShape::gaussian})
    if (to_string(x) == s) return x;
  throw ConfigError("unknown pulse shape '" + s + "'");
}

inline std::string to_string(BlockadeMode m) {
  switch (m) {
    case BlockadeMode::none: return "none";
    case BlockadeMode::fully_blockaded: return "fully_blockaded";
    case BlockadeMode::power_law: return "power_law";
  }
  return "?";
}
inline BlockadeMode parse_blockade(const std::string& s) {
  for (auto x : {BlockadeMode::none, BlockadeMode::fully_blockaded, BlockadeMode::power_law})
    if (to_string(x) == s) return x;
  throw ConfigError("unknown blockade mode '" + s + "'");
}

inline Occupancy parse_occupancy(const std::string& s) {
  if (s == "hard_core") return Occupancy::hard_core;
  if (s == "bosonic") return Occupancy::bosonic;
  throw ConfigError("unknown occupancy '" + s + "'");
}

inline std::string to_string(Placement p) { return p == Placement::uniform ? "uniform" : "jittered"; }
inline Placement parse_placement(const std::string& s) {
  if (s == "uniform") return Placement::uniform;
  if (s == "jittered") return Placement::jittered;
  throw ConfigError("unknown placement '" + s + "'");
}

// ---------------------------------------------------------------------------
struct ScenarioConfig {
  ScenarioKind kind = ScenarioKind::propagate;
  std::uint64_t seed = 1;
  int threads = 1;

  // model
  double gamma_mhz = 6.0;
  double ratio = 0.2;  // Gamma_1D / Gamma'
  double optical_depth = 3.6;
  int n_atoms = 0;     // > 0 overrides optical_depth
  double omega_c = 0.5;
  double gamma_r = 0.0;
  double delta_e = 0.0;
  double delta_2 = 0.0;
  Placement placement = Placement::uniform;
  std::uint64_t placement_seed = 0;
  double k_p = 0.0;

  // blockade
  BlockadeMode blockade = BlockadeMode::fully_blockaded;
  double d_b = 0.9;
  double v_cap = 1e3;
  Occupancy occupancy = Occupancy::hard_core;

  // pulse
  PulseShape shape = PulseShape::square;
  double pulse_start = 0.0;
  double duration = 60.0;
  double rise_time = 0.0;
  double fwhm = 0.0;
  double n_in = 1.0;

  // control: "constant" or "storage" (off during [t_off, t_off + t_store))
  std::string control = "constant";
  double t_off = 0.0;
  double t_store = 0.0;

  // integration and output
  double dt = 0.0;  // <= 0: automatic
  double dt_out = 0.05;
  double t_end = 0.0;  // <= 0: pulse end + tail
  double tail = 40.0;
  double g2_floor = 1e-4;

  // scans
  std::vector<double> d_list{1.8, 3.6, 9.1};
  std::vector<double> omega_list{0.05, 0.25, 0.5};
  bool pairs = true;
  double initial_factor = 8.0;  // first pulse duration in units of tau_EIT
  double cap_factor = 100.0;    // longest pulse in units of tau_EIT
  double min_duration = 60.0;
  double tail_factor = 3.0;     // post-shutoff tail in units of tau_EIT (at least `tail`)
  double fit_start = 5.0;       // envelope fit range after shutoff
  double fit_end = 60.0;
  double flash_window = 5.0;

  // spectrum
  double delta_min = -1.0;
  double delta_max = 1.0;
  int delta_points = 2001;

  // window scan
  double window_end = 0.0;
  std::vector<double> window_widths;
  double gaussian_fwhm = 0.0;
  double gaussian_duration = 0.0;
  double storage_window = 0.0;  // retrieval window length (storage)
  long mc_trials = 0;           // Monte Carlo cross-check trials per curve, 0 = off

  // hbt
  long n_trials = 100000;
  EfficiencyBudget budget{};
  std::vector<Window> windows;  // pairs (t, width)
  int baseline_min = 5;
  int baseline_max = 20;

  // dlcz
  double p = 0.025;
  double eta_d = 1.0;
  double eta_r = 1.0;

  Units units() const { return Units{gamma_mhz}; }
};

// Defaults for the experiment-like scenarios: D ~ 10, 2 Omega_c = 2pi x 6.4
// MHz, gamma_r = 2pi x 0.8 MHz, D_b ~ 0.9, 1 us square pulse with 1.5 photons.
inline ScenarioConfig replica_defaults(ScenarioKind kind) {
  ScenarioConfig c;
  c.kind = kind;
  const Units u = c.units();
  c.optical_depth = 10.0;
  c.omega_c = u.rate_from_mhz(3.2);
  c.gamma_r = u.rate_from_mhz(0.8);
  c.blockade = BlockadeMode::power_law;
  c.d_b = 0.9;
  c.shape = PulseShape::square;
  c.duration = u.time_from_ns(1000.0);
  c.rise_time = u.time_from_ns(10.0);
  c.n_in = 1.5;
  c.dt_out = u.time_from_ns(2.0);
  c.t_end = u.time_from_ns(1700.0);
  c.window_end = u.time_from_ns(1700.0);
  for (double w = 100.0; w <= 1700.0 + 1e-9; w += 100.0) c.window_widths.push_back(u.time_from_ns(w));
  c.gaussian_fwhm = u.time_from_ns(600.0);
  c.gaussian_duration = u.time_from_ns(1500.0);
  c.delta_min = u.rate_from_mhz(-6.0);
  c.delta_max = u.rate_from_mhz(6.0);
  c.windows = {{0.0, u.time_from_ns(1700.0)}, {u.time_from_ns(1000.0), u.time_from_ns(700.0)}};
  return c;
}

inline ScenarioConfig default_config(ScenarioKind kind) {
  ScenarioConfig c;
  switch (kind) {
    case ScenarioKind::experiment_replica:
    case ScenarioKind::window_scan:
    case ScenarioKind::emulate_hbt:
      c = replica_defaults(kind);
      break;
    case ScenarioKind::storage: {
      c = replica_defaults(kind);
      const Units u = c.units();
      c.control = "storage";
      c.t_off = c.duration;
      c.t_store = u.time_from_ns(500.0);
      c.storage_window = u.time_from_ns(700.0);
      c.t_end = c.t_off + c.t_store + c.storage_window;
      break;
    }
    case ScenarioKind::spectrum:
      c = replica_defaults(kind);
      break;
    case ScenarioKind::turnoff_scan:
      c.kind = kind;
      c.d_list = {9.1, 18.2, 27.3};
      c.omega_list = {0.05, 0.2, 0.5};
      c.pairs = false;
      c.dt_out = 0.02;
      break;
    default:
      c.kind = kind;
      break;
  }
  c.kind = kind;
  return c;
}

// ---------------------------------------------------------------------------
namespace detail {

inline std::string trim(std::string s) {
  auto ws = [](unsigned char ch) { return std::isspace(ch) != 0; };
  while (!s.empty() && ws(static_cast<unsigned char>(s.back()))) s.pop_back();
  std::size_t i = 0;
  while (i < s.size() && ws(static_cast<unsigned char>(s[i]))) ++i;
  return s.substr(i);
}

inline std::pair<double, std::string> split_quantity(const std::string& raw, const std::string& key) {
  const std::string s = trim(raw);
  std::size_t pos = 0;
  double v = 0;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    throw ConfigError(fmt::format("'{}': '{}' is not a number", key, raw));
  }
  return {v, trim(s.substr(pos))};
}

}  // namespace detail

enum class QuantityKind { plain, time, rate };

inline double parse_quantity(const std::string& raw, QuantityKind q, const Units& u, const std::string& key) {
  const auto [v, unit] = detail::split_quantity(raw, key);
  if (!std::isfinite(v)) throw ConfigError(fmt::format("'{}' must be finite", key));
  if (unit.empty()) return v;
  if (q == QuantityKind::time) {
    if (unit == "ns") return u.time_from_ns(v);
    if (unit == "us") return u.time_from_ns(1e3 * v);
    if (unit == "1/Gamma") return v;
  } else if (q == QuantityKind::rate) {
    if (unit == "MHz") return u.rate_from_mhz(v);
    if (unit == "Gamma") return v;
  }
  throw ConfigError(fmt::format("'{}': unit '{}' not accepted here", key, unit));
}

inline std::vector<double> parse_list(const std::string& raw, QuantityKind q, const Units& u, const std::string& key) {
  std::vector<double> out;
  std::stringstream ss(raw);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (detail::trim(item).empty()) continue;
    out.push_back(parse_quantity(item, q, u, key));
  }
  return out;
}

// "t:width, t:width, ..."
inline std::vector<Window> parse_windows(const std::string& raw, const Units& u, const std::string& key) {
  std::vector<Window> out;
  std::stringstream ss(raw);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (detail::trim(item).empty()) continue;
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw ConfigError(fmt::format("'{}': window '{}' is not t:width", key, item));
    out.push_back({parse_quantity(item.substr(0, colon), QuantityKind::time, u, key),
                   parse_quantity(item.substr(colon + 1), QuantityKind::time, u, key)});
  }
  return out;
}

inline bool parse_bool(const std::string& raw, const std::string& key) {
  const auto s = detail::trim(raw);
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError(fmt::format("'{}': '{}' is not a boolean", key, raw));
}

template <class Int>
Int parse_int(const std::string& raw, const std::string& key) {
  const auto s = detail::trim(raw);
  std::size_t pos = 0;
  long long v = 0;
  try {
    v = std::stoll(s, &pos);
  } catch (const std::exception&) {
    throw ConfigError(fmt::format("'{}': '{}' is not an integer", key, raw));
  }
  if (pos != s.size()) throw ConfigError(fmt::format("'{}': '{}' is not an integer", key, raw));
  return static_cast<Int>(v);
}

// ---------------------------------------------------------------------------
// Key table shared by the reader and the manifest writer.
struct ConfigField {
  std::string section;
  std::string key;
  std::function<void(ScenarioConfig&, const std::string&, const Units&)> set;
  std::function<std::string(const ScenarioConfig&)> get;
};

inline std::string fmt_exact(double x) { return fmt::format("{:.17g}", x); }

inline std::string fmt_list(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + fmt_exact(v[i]);
  return s;
}

inline const std::vector<ConfigField>& config_fields() {
  using C = ScenarioConfig;
  using Q = QuantityKind;
  static const std::vector<ConfigField> fields = [] {
    std::vector<ConfigField> f;
    auto num = [&f](std::string sec, std::string key, double C::*m, Q q) {
      const std::string name = sec + "." + key;
      f.push_back({sec, key, [m, q, name](C& c, const std::string& v, const Units& u) { c.*m = parse_quantity(v, q, u, name); },
                   [m](const C& c) { return fmt_exact(c.*m); }});
    };
    auto list = [&f](std::string sec, std::string key, std::vector<double> C::*m, Q q) {
      const std::string name = sec + "." + key;
      f.push_back({sec, key, [m, q, name](C& c, const std::string& v, const Units& u) { c.*m = parse_list(v, q, u, name); },
                   [m](const C& c) { return fmt_list(c.*m); }});
    };
    auto integer = [&f](std::string sec, std::string key, auto C::*m) {
      const std::string name = sec + "." + key;
      f.push_back({sec, key,
                   [m, name](C& c, const std::string& v, const Units&) {
                     c.*m = parse_int<std::remove_reference_t<decltype(c.*m)>>(v, name);
                   },
                   [m](const C& c) { return fmt::format("{}", c.*m); }});
    };
    f.push_back({"scenario", "kind", [](C& c, const std::string& v, const Units&) { c.kind = parse_kind(detail::trim(v)); },
                 [](const C& c) { return to_string(c.kind); }});
    f.push_back({"scenario", "seed",
                 [](C& c, const std::string& v, const Units&) {
                   const auto s = detail::trim(v);
                   std::size_t pos = 0;
                   try {
                     c.seed = std::stoull(s, &pos);
                   } catch (const std::exception&) {
                     pos = 0;
                   }
                   if (pos == 0 || pos != s.size()) throw ConfigError("'scenario.seed' must be an unsigned integer");
                 },
                 [](const C& c) { return fmt::format("{}", c.seed); }});
    integer("scenario", "threads", &C::threads);

    num("model", "gamma_mhz", &C::gamma_mhz, Q::plain);
    num("model", "ratio", &C::ratio, Q::plain);
    num("model", "optical_depth", &C::optical_depth, Q::plain);
    integer("model", "n_atoms", &C::n_atoms);
    num("model", "omega_c", &C::omega_c, Q::rate);
    num("model", "gamma_r", &C::gamma_r, Q::rate);
    num("model", "delta_e", &C::delta_e, Q::rate);
    num("model", "delta_2", &C::delta_2, Q::rate);
    f.push_back({"model", "placement",
                 [](C& c, const std::string& v, const Units&) { c.placement = parse_placement(detail::trim(v)); },
                 [](const C& c) { return to_string(c.placement); }});
    integer("model", "placement_seed", &C::placement_seed);
    num("model", "k_p", &C::k_p, Q::plain);

    f.push_back({"blockade", "mode", [](C& c, const std::string& v, const Units&) { c.blockade = parse_blockade(detail::trim(v)); },
                 [](const C& c) { return to_string(c.blockade); }});
    num("blockade", "d_b", &C::d_b, Q::plain);
    num("blockade", "v_cap", &C::v_cap, Q::rate);
    f.push_back({"blockade", "occupancy",
                 [](C& c, const std::string& v, const Units&) { c.occupancy = parse_occupancy(detail::trim(v)); },
                 [](const C& c) { return to_occupancy_name(c.occupancy); }});

    f.push_back({"pulse", "shape", [](C& c, const std::string& v, const Units&) { c.shape = parse_shape(detail::trim(v)); },
                 [](const C& c) { return to_string(c.shape); }});
    num("pulse", "t_start", &C::pulse_start, Q::time);
    num("pulse", "duration", &C::duration, Q::time);
    num("pulse", "rise_time", &C::rise_time, Q::time);
    num("pulse", "fwhm", &C::fwhm, Q::time);
    num("pulse", "n_in", &C::n_in, Q::plain);

    f.push_back({"control", "mode", [](C& c, const std::string& v, const Units&) { c.control = detail::trim(v); },
                 [](const C& c) { return c.control; }});
    num("control", "t_off", &C::t_off, Q::time);
    num("control", "t_store", &C::t_store, Q::time);

    num("integration", "dt", &C::dt, Q::time);
    num("integration", "dt_out", &C::dt_out, Q::time);
    num("integration", "t_end", &C::t_end, Q::time);
    num("integration", "tail", &C::tail, Q::time);
    num("integration", "g2_floor", &C::g2_floor, Q::plain);

    list("scan", "d_list", &C::d_list, Q::plain);
    list("scan", "omega_c_list", &C::omega_list, Q::rate);
    f.push_back({"scan", "pairs", [](C& c, const std::string& v, const Units&) { c.pairs = parse_bool(v, "scan.pairs"); },
                 [](const C& c) { return std::string(c.pairs ? "true" : "false"); }});
    num("scan", "initial_factor", &C::initial_factor, Q::plain);
    num("scan", "cap_factor", &C::cap_factor, Q::plain);
    num("scan", "min_duration", &C::min_duration, Q::time);
    num("scan", "tail_factor", &C::tail_factor, Q::plain);
    num("scan", "fit_start", &C::fit_start, Q::time);
    num("scan", "fit_end", &C::fit_end, Q::time);
    num("scan", "flash_window", &C::flash_window, Q::time);

    num("spectrum", "delta_min", &C::delta_min, Q::rate);
    num("spectrum", "delta_max", &C::delta_max, Q::rate);
    integer("spectrum", "points", &C::delta_points);

    num("window_scan", "end_time", &C::window_end, Q::time);
    list("window_scan", "widths", &C::window_widths, Q::time);
    num("window_scan", "gaussian_fwhm", &C::gaussian_fwhm, Q::time);
    num("window_scan", "gaussian_duration", &C::gaussian_duration, Q::time);
    num("window_scan", "storage_window", &C::storage_window, Q::time);
    integer("window_scan", "mc_trials", &C::mc_trials);

    integer("hbt", "n_trials", &C::n_trials);
    f.push_back({"hbt", "eta_path", [](C& c, const std::string& v, const Units& u) { c.budget.eta_path = parse_quantity(v, Q::plain, u, "hbt.eta_path"); },
                 [](const C& c) { return fmt_exact(c.budget.eta_path); }});
    f.push_back({"hbt", "eta1", [](C& c, const std::string& v, const Units& u) { c.budget.eta1 = parse_quantity(v, Q::plain, u, "hbt.eta1"); },
                 [](const C& c) { return fmt_exact(c.budget.eta1); }});
    f.push_back({"hbt", "eta2", [](C& c, const std::string& v, const Units& u) { c.budget.eta2 = parse_quantity(v, Q::plain, u, "hbt.eta2"); },
                 [](const C& c) { return fmt_exact(c.budget.eta2); }});
    f.push_back({"hbt", "split", [](C& c, const std::string& v, const Units& u) { c.budget.split = parse_quantity(v, Q::plain, u, "hbt.split"); },
                 [](const C& c) { return fmt_exact(c.budget.split); }});
    f.push_back({"hbt", "windows", [](C& c, const std::string& v, const Units& u) { c.windows = parse_windows(v, u, "hbt.windows"); },
                 [](const C& c) {
                   std::string s;
                   for (std::size_t i = 0; i < c.windows.size(); ++i)
                     s += (i ? ", " : "") + fmt_exact(c.windows[i].t) + ":" + fmt_exact(c.windows[i].width);
                   return s;
                 }});
    integer("hbt", "baseline_min", &C::baseline_min);
    integer("hbt", "baseline_max", &C::baseline_max);

    num("dlcz", "p", &C::p, Q::plain);
    num("dlcz", "eta_d", &C::eta_d, Q::plain);
    num("dlcz", "eta_r", &C::eta_r, Q::plain);
    return f;
  }();
  return fields;
}

// Sections a manifest may carry besides the configuration itself.
inline bool informational_section(const std::string& s) { return s == "manifest"; }

inline void validate(const ScenarioConfig& c) {
  auto positive = [](double x, const char* what) {
    if (!(x > 0) || !std::isfinite(x)) throw ConfigError(fmt::format("{} must be positive", what));
  };
  positive(c.gamma_mhz, "model.gamma_mhz");
  positive(c.ratio, "model.ratio");
  if (c.n_atoms < 0) throw ConfigError("model.n_atoms must be >= 0");
  if (c.n_atoms == 0) positive(c.optical_depth, "model.optical_depth");
  if (c.omega_c < 0 || c.gamma_r < 0) throw ConfigError("rates must be non-negative");
  positive(c.v_cap, "blockade.v_cap");
  if (c.blockade == BlockadeMode::power_law) positive(c.d_b, "blockade.d_b");
  if (c.occupancy == Occupancy::bosonic && c.blockade != BlockadeMode::none)
    throw ConfigError("bosonic occupancy is only meaningful without blockade");
  positive(c.duration, "pulse.duration");
  if (!(c.pulse_start >= 0)) throw ConfigError("pulse.t_start must be >= 0");
  if (!(c.n_in >= 0)) throw ConfigError("pulse.n_in must be >= 0");
  if (c.shape == PulseShape::gaussian) positive(c.fwhm, "pulse.fwhm");
  if (c.control != "constant" && c.control != "storage") throw ConfigError("control.mode must be constant or storage");
  if (c.control == "storage") {
    positive(c.t_store, "control.t_store");
    if (!(c.t_off > c.pulse_start)) throw ConfigError("control.t_off must lie after the pulse start");
  }
  if (c.dt < 0) throw ConfigError("integration.dt must be >= 0");
  positive(c.dt_out, "integration.dt_out");
  if (c.tail < 0) throw ConfigError("integration.tail must be >= 0");
  if (!(c.g2_floor > 0)) throw ConfigError("integration.g2_floor must be positive");
  if (c.threads < 1) throw ConfigError("scenario.threads must be >= 1");
  if (c.kind == ScenarioKind::turnon_scan || c.kind == ScenarioKind::turnoff_scan) {
    if (c.d_list.size() < 2 || c.omega_list.size() < 2) throw ConfigError("every scan axis needs at least 2 points");
    for (double d : c.d_list) positive(d, "scan.d_list entries");
    for (double w : c.omega_list) positive(w, "scan.omega_c_list entries");
    positive(c.initial_factor, "scan.initial_factor");
    if (!(c.cap_factor >= c.initial_factor)) throw ConfigError("scan.cap_factor must be >= scan.initial_factor");
    if (!(c.fit_end > c.fit_start)) throw ConfigError("scan.fit_end must exceed scan.fit_start");
  }
  if (c.kind == ScenarioKind::spectrum || c.kind == ScenarioKind::experiment_replica) {
    if (c.delta_points < 3) throw ConfigError("spectrum.points must be >= 3");
    if (!(c.delta_max > c.delta_min)) throw ConfigError("spectrum.delta_max must exceed delta_min");
  }
  if (c.kind == ScenarioKind::window_scan) {
    if (c.window_widths.size() < 2) throw ConfigError("window_scan.widths needs at least 2 points");
    positive(c.window_end, "window_scan.end_time");
    for (double w : c.window_widths) positive(w, "window_scan.widths entries");
    positive(c.gaussian_fwhm, "window_scan.gaussian_fwhm");
    positive(c.gaussian_duration, "window_scan.gaussian_duration");
  }
  if (c.kind == ScenarioKind::storage) {
    if (c.control != "storage") throw ConfigError("storage scenario needs control.mode = storage");
    positive(c.storage_window, "window_scan.storage_window");
  }
  if (c.kind == ScenarioKind::emulate_hbt) {
    if (c.n_trials <= c.baseline_max) throw ConfigError("hbt.n_trials must exceed the largest baseline offset");
    if (c.windows.empty()) throw ConfigError("hbt.windows must list at least one window");
    if (c.baseline_min < 1 || c.baseline_max < c.baseline_min) throw ConfigError("invalid hbt baseline offsets");
    c.budget.validate();
  }
  if (c.kind == ScenarioKind::dlcz) {
    if (!(c.p >= 0 && c.p <= 1)) throw ConfigError("dlcz.p must lie in [0, 1]");
    for (double e : {c.eta_d, c.eta_r})
      if (!(e >= 0 && e <= 1)) throw ConfigError("dlcz efficiencies must lie in [0, 1]");
  }
}

// Applies the INI tree on top of `base`. Unknown sections or keys are errors.
inline ScenarioConfig apply_ini(const boost::property_tree::ptree& tree, ScenarioConfig base) {
  std::map<std::string, std::map<std::string, const ConfigField*>> table;
  for (const auto& f : config_fields()) table[f.section][f.key] = &f;
  // gamma_mhz first so that unit conversions of every other key use it
  if (auto m = tree.get_child_optional("model"))
    if (auto g = m->get_optional<std::string>("gamma_mhz"))
      table["model"]["gamma_mhz"]->set(base, *g, base.units());
  for (const auto& [section, body] : tree) {
    if (informational_section(section)) continue;
    auto sec = table.find(section);
    if (sec == table.end()) throw ConfigError("unknown config section [" + section + "]");
    if (!body.data().empty()) throw ConfigError("value outside a section: " + section);
    for (const auto& [key, value] : body) {
      auto it = sec->second.find(key);
      if (it == sec->second.end()) throw ConfigError("unknown key '" + key + "' in [" + section + "]");
      it->second->set(base, value.data(), base.units());
    }
  }
  return base;
}

inline boost::property_tree::ptree read_ini_file(const std::string& path) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(path, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(fmt::format("cannot parse config {}: {}", path, e.message()));
  }
  return tree;
}

inline ScenarioConfig load_config(const std::string& path, ScenarioKind kind) {
  const auto tree = read_ini_file(path);
  if (auto k = tree.get_optional<std::string>("scenario.kind"))
    if (parse_kind(detail::trim(*k)) != kind)
      throw ConfigError(fmt::format("config is for scenario '{}' but '{}' was requested", detail::trim(*k), to_string(kind)));
  auto c = apply_ini(tree, default_config(kind));
  c.kind = kind;
  return c;
}

inline std::string write_config_ini(const ScenarioConfig& c) {
  std::string out;
  std::string section;
  for (const auto& f : config_fields()) {
    if (f.section != section) {
      out += fmt::format("{}[{}]\n", section.empty() ? "" : "\n", f.section);
      section = f.section;
    }
    out += fmt::format("{} = {}\n", f.key, f.get(c));
  }
  return out;
}

inline ScenarioConfig parse_config_string(const std::string& text, ScenarioKind kind) {
  std::istringstream is(text);
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(is, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(fmt::format("cannot parse config: {}", e.message()));
  }
  auto c = apply_ini(tree, default_config(kind));
  c.kind = kind;
  return c;
}

}  // namespace rydpulse
