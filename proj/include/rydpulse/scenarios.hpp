#pragma once

// End-to-end scenario runners. Every runner returns a ResultBundle holding
// the resolved configuration and the CSV payloads in memory; writing them is
// left to the caller so that a failed run leaves nothing behind.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "rydpulse/config.hpp"

namespace rydpulse {

inline constexpr const char* kVersionTag = "rydpulse 0.1.0";

struct Scalar {
  std::string name;
  double value = kNaN;
  double stderr_ = kNaN;
  std::string unit;
};

struct ResultBundle {
  ScenarioConfig config;
  std::vector<std::pair<std::string, std::string>> files;  // name -> content, in emission order
  std::vector<Scalar> scalars;
  std::vector<std::string> notes;
  double wall_time = 0.0;  // seconds

  const std::string& file(const std::string& name) const {
    for (const auto& [n, content] : files)
      if (n == name) return content;
    throw ConfigError("bundle has no file " + name);
  }
  double scalar(const std::string& name) const {
    for (const auto& s : scalars)
      if (s.name == name) return s.value;
    throw ConfigError("bundle has no scalar " + name);
  }
  void add(std::string name, double value, std::string unit, double err = kNaN) {
    scalars.push_back({std::move(name), value, err, std::move(unit)});
  }
};

inline std::string sanitize(std::string s) {
  for (auto& ch : s)
    if (ch == ',' || ch == '\n' || ch == '\r') ch = ';';
  return s;
}

inline std::string summary_csv(const ResultBundle& b) {
  std::string out = "name,value,stderr,unit\n";
  for (const auto& s : b.scalars) out += fmt::format("{},{},{},{}\n", s.name, csv_num(s.value), csv_num(s.stderr_), s.unit);
  return out;
}

// Resolved configuration plus run metadata. Reading it back with
// load_config() ignores the [manifest] section.
inline std::string manifest_ini(const ResultBundle& b, const std::string& subcommand) {
  const Units u = b.config.units();
  std::string out = write_config_ini(b.config);
  out += "\n[manifest]\n";
  out += fmt::format("version = {}\n", kVersionTag);
  out += fmt::format("subcommand = {}\n", subcommand);
  out += "time_unit = 1/Gamma\nrate_unit = Gamma\n";
  out += fmt::format("gamma_mhz = {}\n", fmt_exact(u.gamma_mhz));
  out += fmt::format("ns_per_gamma_unit = {}\n", fmt_exact(u.ns_per_unit()));
  out += fmt::format("wall_time_s = {:.3f}\n", b.wall_time);
  std::string names;
  for (const auto& [n, content] : b.files) names += (names.empty() ? "" : " ") + n;
  out += fmt::format("files = {}\n", names);
  for (std::size_t i = 0; i < b.notes.size(); ++i) out += fmt::format("note_{} = {}\n", i + 1, sanitize(b.notes[i]));
  return out;
}

// ---------------------------------------------------------------------------
namespace detail {

inline double snap_up(double t, double h) { return std::ceil(t / h - 1e-9) * h; }
inline double snap(double t, double h) { return std::round(t / h) * h; }

// Runs f(i) for i in [0, n) on up to `threads` workers. Results land in
// caller-owned slots, so the output order is the index order.
template <class F>
void parallel_for(std::size_t n, int threads, F&& f) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, threads)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr first;
  std::mutex m;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < n;) {
        try {
          f(i);
        } catch (...) {
          std::lock_guard lk(m);
          if (!first) first = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (first) std::rethrow_exception(first);
}

}  // namespace detail

// Physical setup of one simulation.
struct Setup {
  PhysicalParams params;
  AtomChain chain;
  BlockadeConfig blockade;
  PulseEnvelope envelope;
  ControlSchedule schedule;
  Occupancy occupancy = Occupancy::hard_core;
  double d = 0.0;
  double t_end = 0.0;

  Generator generator() const {
    return Generator(params, chain, blockade, schedule, envelope, build_index(chain, blockade, occupancy));
  }
  double tau_eit() const { return eit_traversal_time(d, params); }
};

inline PhysicalParams make_params(const ScenarioConfig& c, double omega) {
  auto p = PhysicalParams::with_ratio(c.ratio, omega, c.gamma_r, c.delta_e, c.delta_2);
  p.units = c.units();
  return p;
}

// Envelope shape from the config with the given duration; t_end <= 0 picks
// the config's end time (or pulse end plus tail), snapped up to the output grid.
inline Setup make_setup(const ScenarioConfig& c, double d_target, double omega, double duration,
                        PulseShape shape, double fwhm, double t_end = 0.0) {
  Setup s;
  s.params = make_params(c, omega);
  const int n = c.n_atoms > 0 ? c.n_atoms : atoms_for_optical_depth(d_target, s.params);
  s.chain = build_chain(n, 1.0, c.k_p, c.placement, c.placement_seed);
  s.d = optical_depth(n, s.params);
  switch (c.blockade) {
    case BlockadeMode::none: s.blockade = BlockadeConfig::none(); break;
    case BlockadeMode::fully_blockaded: s.blockade = BlockadeConfig::fully_blockaded(); break;
    case BlockadeMode::power_law:
      s.blockade = BlockadeConfig::power_law_from_db(c.d_b, s.d, 1.0, s.params, c.v_cap);
      break;
  }
  s.occupancy = c.occupancy;
  s.envelope.shape = shape;
  s.envelope.t_start = c.pulse_start;
  s.envelope.duration = duration;
  s.envelope.rise_time = c.rise_time;
  s.envelope.fwhm = fwhm;
  s.envelope.n_in = c.n_in;
  s.envelope.validate();
  double end = t_end > 0 ? t_end : (c.t_end > 0 ? c.t_end : s.envelope.t_end() + c.tail);
  s.t_end = detail::snap_up(end, c.dt_out);
  if (c.control == "storage")
    s.schedule = ControlSchedule::storage(omega, c.t_off, c.t_store, 0.0);
  else
    s.schedule = ControlSchedule::constant(omega, 0.0, std::max(s.t_end, 1.0));
  return s;
}

inline Setup make_setup(const ScenarioConfig& c) {
  return make_setup(c, c.optical_depth, c.omega_c, c.duration, c.shape, c.fwhm);
}

inline SimulationOptions sim_options(const ScenarioConfig& c, bool pairs, bool conditioned = false) {
  SimulationOptions o;
  o.dt = c.dt;
  o.dt_out = c.dt_out;
  o.singles_only = !pairs;
  o.keep_conditioned = conditioned;
  o.g2_floor = c.g2_floor;
  return o;
}

inline double trace_integral(const ObservableTrace& tr) {
  double s = 0;
  for (std::size_t k = 0; k + 1 < tr.size(); ++k) s += 0.5 * (tr.intensity[k] + tr.intensity[k + 1]) * (tr.t[k + 1] - tr.t[k]);
  return s;
}

// ---------------------------------------------------------------------------
// One equilibrated scan point.
enum class PointMode { turn_on, turn_off };

struct PointResult {
  double d_target = kNaN;
  int n_atoms = 0;
  double d = kNaN;
  double omega = kNaN;
  double tau_eit = kNaN;
  double tau_eit_literal = kNaN;
  double duration = kNaN;
  SteadyState ss;
  double tau_0 = kNaN;
  double tau_I = kNaN;
  double tau_II = kNaN;
  double i_plus = kNaN;
  double g2_pair_plus = kNaN;  // G~2 at t_off+
  double flash = kNaN;         // max I~ on (t_off, t_off + flash_window]
  double tail_rate = kNaN;     // decay rate of the G~2 envelope
  double g2_high_depth = kNaN;
  std::vector<std::string> errors;
  ObservableTrace trace;  // kept on request

  bool ok() const { return errors.empty(); }
  std::string status() const {
    if (errors.empty()) return "ok";
    std::string s;
    for (const auto& e : errors) s += (s.empty() ? "" : "; ") + e;
    return sanitize(s);
  }
};

// The pulse starts at t = 0 and is lengthened (doubling, from
// initial_factor * tau_EIT up to cap_factor * tau_EIT) until the on-interval
// observables are flat and, for the turn-on study, g2 has settled well
// before the shutoff.
inline PointResult run_point(const ScenarioConfig& c, double d_target, double omega, PointMode mode,
                             bool keep_trace = false) {
  PointResult r;
  r.d_target = d_target;
  r.omega = omega;
  try {
    ScenarioConfig pc = c;
    pc.pulse_start = 0.0;
    pc.t_end = 0.0;
    pc.control = "constant";
    auto probe = make_setup(pc, d_target, omega, 1.0, PulseShape::square, 0.0);
    r.n_atoms = probe.chain.n_atoms;
    r.d = probe.d;
    r.tau_eit = probe.tau_eit();
    r.tau_eit_literal = eit_traversal_time_literal(r.d, probe.params);
    r.g2_high_depth = g2_ss_high_depth(r.d, omega);
    const bool pairs = c.pairs;
    const double h = c.dt_out;
    double T = detail::snap_up(std::max(c.min_duration, c.initial_factor * r.tau_eit), h);
    const double cap = std::max(T, detail::snap_up(c.cap_factor * r.tau_eit, h));
    const double tail = mode == PointMode::turn_on
                            ? detail::snap_up(c.tail, h)
                            : detail::snap_up(std::max({c.tail, c.tail_factor * r.tau_eit, c.fit_end + h}), h);
    ObservableTrace tr;
    std::string settle_error;
    for (;;) {
      const auto s = make_setup(pc, d_target, omega, T, PulseShape::square, 0.0, T + tail);
      const auto gen = s.generator();
      tr = simulate(gen, 0.0, s.t_end, sim_options(c, pairs)).trace;
      r.ss = measure_steady_state(tr, s.envelope.plateau_start(), s.envelope.plateau_end());
      bool done = r.ss.flat;
      settle_error.clear();
      if (done && mode == PointMode::turn_on) {
        try {
          r.tau_0 = turn_on_time(tr, 0.0, T, r.ss.g2);
          if (!(r.tau_0 < 0.9 * T)) {
            done = false;
            settle_error = fmt::format("tau_0 = {:.4g} too close to shutoff", r.tau_0);
          }
        } catch (const ExtractionError& e) {
          done = false;
          r.tau_0 = kNaN;
          settle_error = e.what();
        }
      }
      if (done || T >= cap) break;
      T = std::min(2.0 * T, cap);
    }
    r.duration = T;
    if (!r.ss.flat)
      r.errors.push_back(fmt::format("not equilibrated at T = {:.4g} (max deviation {:.3g})", T, r.ss.max_deviation));
    if (mode == PointMode::turn_on) {
      if (!settle_error.empty()) r.errors.push_back(settle_error);
    } else {
      const std::size_t k0 = tr.index_of(T);
      r.i_plus = tr.intensity[k0];
      r.flash = 0.0;
      for (std::size_t k = k0 + 1; k < tr.size() && tr.t[k] <= T + c.flash_window + 1e-9; ++k)
        r.flash = std::max(r.flash, tr.intensity[k]);
      try {
        r.tau_I = turn_off_intensity_time(tr, T, r.ss.intensity);
      } catch (const ExtractionError& e) {
        r.errors.push_back(e.what());
      }
      if (pairs) {
        r.g2_pair_plus = tr.pair[k0];
        try {
          r.tau_II = turn_off_pair_time(tr, T);
        } catch (const ExtractionError& e) {
          r.errors.push_back(e.what());
        }
        try {
          r.tail_rate = fit_exponential_envelope(tr, T + c.fit_start, T + c.fit_end);
        } catch (const ExtractionError& e) {
          r.errors.push_back(std::string("tail fit: ") + e.what());
        }
      }
    }
    if (keep_trace) r.trace = std::move(tr);
  } catch (const std::exception& e) {
    r.errors.push_back(e.what());
  }
  return r;
}

inline std::vector<PointResult> run_scan(const ScenarioConfig& c, PointMode mode, bool keep_traces = false) {
  std::vector<std::pair<double, double>> grid;
  for (double d : c.d_list)
    for (double w : c.omega_list) grid.emplace_back(d, w);
  std::vector<PointResult> out(grid.size());
  detail::parallel_for(grid.size(), c.threads,
                       [&](std::size_t i) { out[i] = run_point(c, grid[i].first, grid[i].second, mode, keep_traces); });
  return out;
}

// ---------------------------------------------------------------------------
inline ResultBundle run_spectrum(const ScenarioConfig& c) {
  validate(c);
  ResultBundle b;
  b.config = c;
  const Units u = c.units();
  const auto s = make_setup(c);
  const auto sp = transmission_spectrum(s.params, s.chain, s.schedule,
                                        linspace(c.delta_min, c.delta_max, static_cast<std::size_t>(c.delta_points)));
  std::ostringstream os;
  write_spectrum_csv(os, sp, u);
  b.files.emplace_back("spectrum.csv", os.str());
  b.add("n_atoms", s.chain.n_atoms, "1");
  b.add("optical_depth", s.d, "1");
  try {
    const auto w = eit_window(sp);
    b.add("peak_transmission", w.peak, "1");
    b.add("fwhm", w.fwhm, "Gamma");
    b.add("fwhm_mhz", u.rate_to_mhz(w.fwhm), "MHz");
  } catch (const ExtractionError& e) {
    b.notes.push_back(std::string("window: ") + e.what());
  }
  b.files.emplace_back("summary.csv", summary_csv(b));
  return b;
}

inline ResultBundle run_propagate(const ScenarioConfig& c) {
  validate(c);
  ResultBundle b;
  b.config = c;
  const Units u = c.units();
  const auto s = make_setup(c);
  const auto gen = s.generator();
  const auto sim = simulate(gen, 0.0, s.t_end, sim_options(c, c.pairs));
  const auto& tr = sim.trace;
  std::ostringstream os;
  write_trace_csv(os, tr, u);
  b.files.emplace_back("trace.csv", os.str());
  b.add("n_atoms", s.chain.n_atoms, "1");
  b.add("optical_depth", s.d, "1");
  b.add("tau_eit", s.tau_eit(), "1/Gamma");
  b.add("tau_eit_literal", eit_traversal_time_literal(s.d, s.params), "1/Gamma");
  b.add("eta_out_over_in", trace_integral(tr) / s.envelope.shape_energy(), "1");
  const double t_on = s.envelope.t_start, t_off = s.envelope.t_end();
  try {
    const std::size_t k_on = tr.index_of(detail::snap_up(t_on, c.dt_out));
    if (k_on + 1 < tr.size()) b.add("g2_turn_on", tr.g2[k_on + 1], "1");
    const auto ss = measure_steady_state(tr, s.envelope.plateau_start(), s.envelope.plateau_end());
    b.add("I_ss", ss.intensity, "1");
    b.add("G2_ss", ss.pair, "1");
    b.add("g2_ss", ss.g2, "1");
    b.add("steady_flat", ss.flat ? 1.0 : 0.0, "bool");
    b.add("steady_max_deviation", ss.max_deviation, "1");
    const std::size_t k0 = tr.index_of(t_off);
    b.add("I_plus", tr.intensity[k0], "1");
    b.add("G2_plus", tr.pair[k0], "1");
    const auto tt = extract_transients(tr, t_on, t_off, s.d, s.params);
    b.add("tau_0", tt.tau_0 , "1/Gamma");
    b.add("tau_I", tt.tau_I, "1/Gamma");
    b.add("tau_II", tt.tau_II, "1/Gamma");
  } catch (const std::exception& e) {
    if (dynamic_cast<const NumericalError*>(&e)) throw;
    b.notes.push_back(std::string("extraction: ") + e.what());
  }
  b.files.emplace_back("summary.csv", summary_csv(b));
  return b;
}

inline std::string scan_csv(const std::vector<PointResult>& pts, PointMode mode, const Units& u) {
  std::string out =
      "D_target [1],n_atoms [1],D [1],omega_c [Gamma],omega_c_mhz [MHz],tau_eit [1/Gamma],tau_eit_ns [ns],"
      "tau_eit_literal [1/Gamma],pulse_duration [1/Gamma],pulse_duration_ns [ns],I_ss [1],G2_ss [1],g2_ss [1],"
      "g2_ss_high_depth [1],";
  if (mode == PointMode::turn_on)
    out += "tau_0 [1/Gamma],tau_0_ns [ns],tau_0_over_tau_eit [1],tau_0_over_tau_eit_literal [1],status\n";
  else
    out += "tau_I [1/Gamma],tau_I_ns [ns],tau_I_over_tau_eit [1],tau_II [1/Gamma],tau_II_ns [ns],I_plus [1],"
           "G2_plus [1],flash_peak [1],tail_rate [Gamma],status\n";
  for (const auto& p : pts) {
    out += fmt::format("{},{},{},{},{},{},{},{},{},{},{},{},{},{},", csv_num(p.d_target), p.n_atoms, csv_num(p.d),
                       csv_num(p.omega), csv_num(u.rate_to_mhz(p.omega)), csv_num(p.tau_eit),
                       csv_num(u.time_to_ns(p.tau_eit)), csv_num(p.tau_eit_literal), csv_num(p.duration),
                       csv_num(u.time_to_ns(p.duration)), csv_num(p.ss.intensity), csv_num(p.ss.pair),
                       csv_num(p.ss.g2), csv_num(p.g2_high_depth));
    if (mode == PointMode::turn_on)
      out += fmt::format("{},{},{},{},{}\n", csv_num(p.tau_0), csv_num(u.time_to_ns(p.tau_0)),
                         csv_num(p.tau_0 / p.tau_eit), csv_num(p.tau_0 / p.tau_eit_literal), p.status());
    else
      out += fmt::format("{},{},{},{},{},{},{},{},{},{}\n", csv_num(p.tau_I), csv_num(u.time_to_ns(p.tau_I)),
                         csv_num(p.tau_I / p.tau_eit), csv_num(p.tau_II), csv_num(u.time_to_ns(p.tau_II)),
                         csv_num(p.i_plus), csv_num(p.g2_pair_plus), csv_num(p.flash), csv_num(p.tail_rate),
                         p.status());
  }
  return out;
}

inline ResultBundle run_scan_bundle(const ScenarioConfig& c, PointMode mode, std::vector<PointResult>* points = nullptr) {
  validate(c);
  if (mode == PointMode::turn_on && !c.pairs) throw ConfigError("the turn-on scan needs scan.pairs = true");
  ResultBundle b;
  b.config = c;
  auto pts = run_scan(c, mode);
  b.files.emplace_back(mode == PointMode::turn_on ? "turnon_scan.csv" : "turnoff_scan.csv", scan_csv(pts, mode, c.units()));
  long failed = 0;
  for (const auto& p : pts) failed += p.ok() ? 0 : 1;
  b.add("points", static_cast<double>(pts.size()), "1");
  b.add("failed_points", static_cast<double>(failed), "1");
  b.files.emplace_back("summary.csv", summary_csv(b));
  if (points) *points = std::move(pts);
  return b;
}

// ---------------------------------------------------------------------------
// Pulse-integrated two-time correlation versus delay.
inline std::string g2_tau_csv(const CorrelationGrid& g, const Units& u) {
  std::string out = "tau [1/Gamma],tau_ns [ns],g2_tau [1],G2_sum [1],II_sum [1]\n";
  const std::size_t n = g.n();
  for (std::size_t k = 0; k < n; ++k) {
    double num = 0, den = 0;
    for (std::size_t i = 0; i + k < n; ++i) {
      num += g.at(i, i + k);
      den += g.intensity[i] * g.intensity[i + k];
    }
    const double tau = static_cast<double>(k) * g.dt();
    out += fmt::format("{},{},{},{},{}\n", csv_num(tau), csv_num(u.time_to_ns(tau)),
                       csv_num(den > 0 ? num / den : kNaN), csv_num(num), csv_num(den));
  }
  return out;
}

inline std::string pulse_csv(const ObservableTrace& tr, double n_in, double shape_energy, const Units& u) {
  std::string out = "t_gamma [1/Gamma],t_ns [ns],input_flux [photons Gamma],output_flux [photons Gamma],"
                    "output_flux_per_ns [photons/ns]\n";
  const double e0 = n_in / shape_energy;
  for (std::size_t k = 0; k < tr.size(); ++k) {
    const double out_flux = e0 * tr.intensity[k];
    out += fmt::format("{},{},{},{},{}\n", csv_num(tr.t[k]), csv_num(u.time_to_ns(tr.t[k])),
                       csv_num(e0 * tr.envelope[k] * tr.envelope[k]), csv_num(out_flux),
                       csv_num(out_flux / u.ns_per_unit()));
  }
  return out;
}

// Steady-state g2 of the replica drive: the configured pulse first, then
// longer pulses (doubling, capped at cap_factor * tau_EIT) until flat.
inline std::pair<SteadyState, double> replica_steady_state(const ScenarioConfig& c, const Setup& s,
                                                           const ObservableTrace& tr) {
  auto ss = measure_steady_state(tr, s.envelope.plateau_start(), s.envelope.plateau_end());
  double T = s.envelope.duration;
  const double cap = std::max(T, c.cap_factor * s.tau_eit());
  while (!ss.flat && T < cap) {
    T = std::min(2.0 * T, cap);
    T = detail::snap_up(T, c.dt_out);
    auto sl = make_setup(c, c.optical_depth, c.omega_c, T, PulseShape::square, 0.0, c.pulse_start + T + c.dt_out);
    const auto t2 = simulate(sl.generator(), 0.0, sl.t_end, sim_options(c, true)).trace;
    ss = measure_steady_state(t2, sl.envelope.plateau_start(), sl.envelope.plateau_end());
  }
  return {ss, T};
}

inline ResultBundle run_experiment_replica(const ScenarioConfig& c) {
  validate(c);
  ResultBundle b;
  b.config = c;
  const Units u = c.units();
  const auto s = make_setup(c);
  const auto gen = s.generator();

  const auto sp = transmission_spectrum(s.params, s.chain, s.schedule,
                                        linspace(c.delta_min, c.delta_max, static_cast<std::size_t>(c.delta_points)));
  std::ostringstream spec;
  write_spectrum_csv(spec, sp, u);
  b.files.emplace_back("spectrum.csv", spec.str());

  const auto sim = simulate(gen, 0.0, s.t_end, sim_options(c, true, true));
  const auto& tr = sim.trace;
  b.files.emplace_back("pulse.csv", pulse_csv(tr, c.n_in, s.envelope.shape_energy(), u));
  std::ostringstream g2s;
  write_trace_csv(g2s, tr, u);
  b.files.emplace_back("g2.csv", g2s.str());
  const auto grid = correlation_grid(gen, sim, 1, c.dt);
  b.files.emplace_back("g2_tau.csv", g2_tau_csv(grid, u));

  b.add("n_atoms", s.chain.n_atoms, "1");
  b.add("optical_depth", s.d, "1");
  b.add("omega_c", c.omega_c, "Gamma");
  b.add("gamma_r", c.gamma_r, "Gamma");
  b.add("max_interaction", gen.max_interaction(), "Gamma");
  b.add("tau_eit", s.tau_eit(), "1/Gamma");
  try {
    const auto w = eit_window(sp);
    b.add("peak_transmission", w.peak, "1");
    b.add("fwhm_mhz", u.rate_to_mhz(w.fwhm), "MHz");
  } catch (const ExtractionError& e) {
    b.notes.push_back(std::string("window: ") + e.what());
  }
  const auto [ss, t_ss] = replica_steady_state(c, s, tr);
  b.add("I_ss", ss.intensity, "1");
  b.add("g2_ss", ss.g2, "1");
  b.add("steady_flat", ss.flat ? 1.0 : 0.0, "bool");
  b.add("steady_pulse_duration_ns", u.time_to_ns(t_ss), "ns");
  const double t_off = s.envelope.t_end();
  const std::size_t k0 = tr.index_of(t_off);
  b.add("I_plus", tr.intensity[k0], "1");
  b.add("g2_plus", tr.g2[k0], "1");
  const double t400 = detail::snap(t_off + u.time_from_ns(400.0), c.dt_out);
  if (t400 <= tr.t.back() + 1e-9) {
    // direct ratio: the trace floor would hide this sparse-tail value
    const std::size_t k4 = tr.index_of(t400);
    b.add("I_400ns_after_shutoff", tr.intensity[k4], "1");
    if (tr.intensity[k4] > 0 && tr.has_pairs())
      b.add("g2_400ns_after_shutoff", tr.pair[k4] / (tr.intensity[k4] * tr.intensity[k4]), "1");
    if (tr.intensity[k4] < c.g2_floor)
      b.notes.push_back(fmt::format("I~ 400 ns after shutoff is {:.3g}, below the g2 floor {:g}", tr.intensity[k4],
                                    c.g2_floor));
    if (t400 < grid.t.back())
      b.add("g2_window_from_400ns_after_shutoff", windowed_g2(grid, t400, grid.t.back() - t400, t400,
                                                              grid.t.back() - t400, 1e-12), "1");
  }
  b.add("eta_out_over_in", trace_integral(tr) / s.envelope.shape_energy(), "1");
  b.add("g2_full_trace", windowed_g2(grid, grid.t.front(), grid.t.back() - grid.t.front()), "1");
  b.files.emplace_back("summary.csv", summary_csv(b));
  return b;
}

// ---------------------------------------------------------------------------
struct WindowPoint {
  double width = kNaN;
  double g2 = kNaN;
  double p_gen = kNaN;
  double mc_g2 = kNaN, mc_g2_se = kNaN, mc_p = kNaN, mc_p_se = kNaN;
  std::string status = "ok";
};

struct WindowCurve {
  std::string shape;
  std::vector<WindowPoint> points;
};

inline WindowCurve window_curve(const ScenarioConfig& c, const Setup& s, const std::string& label, std::uint64_t mc_seed) {
  WindowCurve curve;
  curve.shape = label;
  const auto gen = s.generator();
  const double end = detail::snap(c.window_end, c.dt_out);
  double wmax = 0;
  for (double w : c.window_widths) wmax = std::max(wmax, w);
  const double begin = std::max(0.0, detail::snap(end - wmax, c.dt_out));
  const auto sim = simulate(gen, 0.0, end, sim_options(c, true, true));
  const auto grid = correlation_grid(gen, sim, 1, c.dt, begin, end);
  const double se = s.envelope.shape_energy();
  std::optional<DetectionStream> mc;
  if (c.mc_trials > 0) mc = emulate_trials(grid, c.n_in, se, c.budget, c.mc_trials, mc_seed, c.threads);
  for (double w : c.window_widths) {
    WindowPoint p;
    p.width = w;
    try {
      const double wq = detail::snap(w, c.dt_out);
      const double t0 = end - wq;
      p.p_gen = generation_probability(grid, Window{t0, wq}, c.n_in, se);
      p.g2 = windowed_g2(grid, t0, wq);
      if (mc) {
        const Window win{t0 - 1e-9, wq + 2e-9};
        const auto est = estimate_g2(*mc, win, win, c.baseline_min, c.baseline_max);
        p.mc_g2 = est.value;
        p.mc_g2_se = est.stderr_;
        const auto pg = generation_probability(*mc, win, c.budget);
        p.mc_p = pg.value;
        p.mc_p_se = pg.stderr_;
      }
    } catch (const std::exception& e) {
      if (dynamic_cast<const NumericalError*>(&e)) throw;
      p.status = sanitize(e.what());
    }
    curve.points.push_back(p);
  }
  return curve;
}

// Linear interpolation of g2 at generation probability p along a curve
// ordered by p; NaN outside its range.
inline double g2_at_probability(const WindowCurve& curve, double p) {
  std::vector<std::pair<double, double>> pts;
  for (const auto& q : curve.points)
    if (q.status == "ok" && std::isfinite(q.g2)) pts.emplace_back(q.p_gen, q.g2);
  std::sort(pts.begin(), pts.end());
  for (std::size_t i = 0; i + 1 < pts.size(); ++i)
    if (p >= pts[i].first && p <= pts[i + 1].first) {
      const double f = pts[i + 1].first > pts[i].first ? (p - pts[i].first) / (pts[i + 1].first - pts[i].first) : 0.0;
      return pts[i].second + f * (pts[i + 1].second - pts[i].second);
    }
  return kNaN;
}

inline ResultBundle run_window_scan(const ScenarioConfig& c, std::vector<WindowCurve>* curves_out = nullptr) {
  validate(c);
  ResultBundle b;
  b.config = c;
  const Units u = c.units();
  const auto sq = make_setup(c, c.optical_depth, c.omega_c, c.duration, PulseShape::square, 0.0, c.window_end);
  const auto ga = make_setup(c, c.optical_depth, c.omega_c, c.gaussian_duration, PulseShape::gaussian,
                             c.gaussian_fwhm, c.window_end);
  std::vector<WindowCurve> curves(2);
  detail::parallel_for(2, std::min(c.threads, 2), [&](std::size_t i) {
    curves[i] = i == 0 ? window_curve(c, sq, "square", detail::block_seed(c.seed, 1u << 20))
                       : window_curve(c, ga, "gaussian", detail::block_seed(c.seed, (1u << 20) + 1));
  });
  std::string out =
      "shape,delta_t [1/Gamma],delta_t_ns [ns],inv_delta_t [1/us],g2_window [1],p_gen [1],mc_g2 [1],"
      "mc_g2_stderr [1],mc_p_gen [1],mc_p_gen_stderr [1],status\n";
  for (const auto& cv : curves)
    for (const auto& p : cv.points)
      out += fmt::format("{},{},{},{},{},{},{},{},{},{},{}\n", cv.shape, csv_num(p.width), csv_num(u.time_to_ns(p.width)),
                         csv_num(1e3 / u.time_to_ns(p.width)), csv_num(p.g2), csv_num(p.p_gen), csv_num(p.mc_g2),
                         csv_num(p.mc_g2_se), csv_num(p.mc_p), csv_num(p.mc_p_se), p.status);
  b.files.emplace_back("window_scan.csv", out);
  std::string matched = "p_gen [1],square_delta_t_ns [ns],square_g2 [1],gaussian_g2 [1],status\n";
  for (const auto& p : curves[0].points) {
    const double gg = p.status == "ok" ? g2_at_probability(curves[1], p.p_gen) : kNaN;
    matched += fmt::format("{},{},{},{},{}\n", csv_num(p.p_gen), csv_num(u.time_to_ns(p.width)), csv_num(p.g2),
                           csv_num(gg), std::isnan(gg) ? "outside gaussian range" : "ok");
  }
  b.files.emplace_back("matched.csv", matched);
  b.add("gaussian_fwhm_ns", u.time_to_ns(c.gaussian_fwhm), "ns");
  b.add("window_end_ns", u.time_to_ns(c.window_end), "ns");
  b.files.emplace_back("summary.csv", summary_csv(b));
  if (curves_out) *curves_out = std::move(curves);
  return b;
}

// ---------------------------------------------------------------------------
inline ResultBundle run_storage(const ScenarioConfig& c) {
  validate(c);
  ResultBundle b;
  b.config = c;
  const Units u = c.units();
  const auto s = make_setup(c);
  const auto gen = s.generator();
  const double t_ret = c.t_off + c.t_store;
  const double ret0 = detail::snap_up(t_ret, c.dt_out);
  const double ret1 = std::min(s.t_end, detail::snap(ret0 + c.storage_window, c.dt_out));
  // r-population at the storage start and end
  double r_off = kNaN, r_ret = kNaN;
  const double t_off_s = detail::snap(c.t_off, c.dt_out);
  Simulation sim;
  sim.trace.floor = c.g2_floor;
  sim.final_state = evolve_observed(gen, zero_state(gen.index_ptr()), 0.0, s.t_end, c.dt, c.dt_out,
                                    [&](double t, const TruncatedState& st) {
                                      sim.conditioned.emplace_back();
                                      record_sample(sim.trace, gen, st, t, &sim.conditioned.back());
                                      if (std::abs(t - t_off_s) < 1e-9 * std::max(1.0, t) ||
                                          std::abs(t - ret0) < 1e-9 * std::max(1.0, t)) {
                                        double rn = 0;
                                        for (int h = 0; h < s.chain.n_atoms; ++h)
                                          rn += std::norm(st.amp[static_cast<std::size_t>(st.index->r_mode(h))]);
                                        (std::abs(t - t_off_s) < 1e-9 * std::max(1.0, t) ? r_off : r_ret) = rn;
                                      }
                                    });
  std::ostringstream os;
  write_trace_csv(os, sim.trace, u);
  b.files.emplace_back("trace.csv", os.str());
  b.add("n_atoms", s.chain.n_atoms, "1");
  b.add("optical_depth", s.d, "1");
  b.add("t_off_ns", u.time_to_ns(c.t_off), "ns");
  b.add("t_store_ns", u.time_to_ns(c.t_store), "ns");
  b.add("r_population_at_off", r_off, "1");
  b.add("r_population_at_retrieval", r_ret, "1");
  if (!(ret1 > ret0)) throw ConfigError("retrieval window lies outside the simulated interval");
  const auto grid = correlation_grid(gen, sim, 1, c.dt, ret0, ret1);
  const Window w{ret0, ret1 - ret0};
  const double p = generation_probability(grid, w, c.n_in, s.envelope.shape_energy());
  b.add("retrieval_p_gen", p, "1");
  b.add("retrieval_efficiency", c.n_in > 0 ? p / c.n_in : kNaN, "1");
  try {
    b.add("retrieval_g2", windowed_g2(grid, w.t, w.width, w.t, w.width, 1e-14), "1");
  } catch (const UndefinedResultError& e) {
    b.add("retrieval_g2", kNaN, "1");
    b.notes.push_back(e.what());
  }
  b.files.emplace_back("summary.csv", summary_csv(b));
  return b;
}

// ---------------------------------------------------------------------------
inline ResultBundle run_dlcz(const ScenarioConfig& c) {
  validate(c);
  ResultBundle b;
  b.config = c;
  const auto r = dlcz_compare(c.p, c.eta_d, c.eta_r);
  if (!r.warning.empty()) b.notes.push_back(r.warning);
  b.add("p", c.p, "1");
  b.add("eta_d", c.eta_d, "1");
  b.add("eta_r", c.eta_r, "1");
  b.add("g2", r.g2, "1");
  b.add("p_gen", r.p_gen, "1");
  b.files.emplace_back("dlcz.csv", summary_csv(b));
  return b;
}

inline ResultBundle run_emulate_hbt(const ScenarioConfig& c) {
  validate(c);
  ResultBundle b;
  b.config = c;
  const Units u = c.units();
  const auto s = make_setup(c);
  const auto gen = s.generator();
  const auto sim = simulate(gen, 0.0, s.t_end, sim_options(c, true, true));
  const auto grid = correlation_grid(gen, sim, 1, c.dt);
  const double se = s.envelope.shape_energy();
  const auto stream = emulate_trials(grid, c.n_in, se, c.budget, c.n_trials, c.seed, c.threads);
  std::ostringstream ts;
  write_timestamps(ts, stream, u);
  b.files.emplace_back("timestamps.txt", ts.str());
  for (const auto& w : stream.warnings) b.notes.push_back(w);
  std::string out =
      "window_t [1/Gamma],window_t_ns [ns],width [1/Gamma],width_ns [ns],mc_g2 [1],mc_g2_stderr [1],"
      "coincidences [1],baseline [1],clicks1 [1],clicks2 [1],quadrature_g2 [1],quadrature_p_gen [1],"
      "mc_p_gen [1],mc_p_gen_stderr [1],status\n";
  for (const auto& w : c.windows) {
    G2Estimate est;
    double qg = kNaN, qp = kNaN;
    ProbabilityEstimate mp{kNaN, kNaN};
    std::string status = "ok";
    try {
      const Window win{w.t - 1e-9, w.width + 2e-9};
      qp = generation_probability(grid, w, c.n_in, se);
      qg = windowed_g2(grid, w.t, w.width);
      mp = generation_probability(stream, win, c.budget);
      est = estimate_g2(stream, win, win, c.baseline_min, c.baseline_max);
    } catch (const std::exception& e) {
      status = sanitize(e.what());
    }
    out += fmt::format("{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n", csv_num(w.t), csv_num(u.time_to_ns(w.t)),
                       csv_num(w.width), csv_num(u.time_to_ns(w.width)), csv_num(est.value), csv_num(est.stderr_),
                       est.coincidences, csv_num(est.baseline), est.clicks1, est.clicks2, csv_num(qg), csv_num(qp),
                       csv_num(mp.value), csv_num(mp.stderr_), status);
  }
  b.files.emplace_back("hbt.csv", out);
  b.add("n_trials", static_cast<double>(c.n_trials), "1");
  b.add("mean_emitted", stream.mean_emitted, "1");
  b.add("events", static_cast<double>(stream.events.size()), "1");
  b.files.emplace_back("summary.csv", summary_csv(b));
  return b;
}

// ---------------------------------------------------------------------------
inline ResultBundle run_scenario(const ScenarioConfig& c) {
  const auto t0 = std::chrono::steady_clock::now();
  ResultBundle b;
  switch (c.kind) {
    case ScenarioKind::spectrum: b = run_spectrum(c); break;
    case ScenarioKind::propagate: b = run_propagate(c); break;
    case ScenarioKind::turnon_scan: b = run_scan_bundle(c, PointMode::turn_on); break;
    case ScenarioKind::turnoff_scan: b = run_scan_bundle(c, PointMode::turn_off); break;
    case ScenarioKind::experiment_replica: b = run_experiment_replica(c); break;
    case ScenarioKind::window_scan: b = run_window_scan(c); break;
    case ScenarioKind::storage: b = run_storage(c); break;
    case ScenarioKind::dlcz: b = run_dlcz(c); break;
    case ScenarioKind::emulate_hbt: b = run_emulate_hbt(c); break;
  }
  b.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return b;
}

}  // namespace rydpulse
