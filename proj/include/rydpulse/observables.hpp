#pragma once

// Output-field observables reconstructed from the amplitude hierarchy:
// normalized intensity, equal-time and two-time pair correlations, window
// integrals, EIT spectra and transient timescales.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <fmt/ostream.h>

#include "rydpulse/dynamics.hpp"

namespace rydpulse {

class UndefinedResultError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class ExtractionError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
inline constexpr double kInf = std::numeric_limits<double>::infinity();

// ---------------------------------------------------------------------------
struct ObservableTrace {
  std::vector<double> t;
  std::vector<double> envelope;   // unit-peak input amplitude
  std::vector<double> omega;      // control Rabi frequency
  std::vector<double> intensity;  // I~
  std::vector<double> pair;       // G~2 (NaN when pairs were not propagated)
  std::vector<double> g2;         // G~2 / I~^2, NaN where I~ <= floor
  double floor = 1e-4;

  std::size_t size() const { return t.size(); }
  bool has_pairs() const { return !pair.empty() && !std::isnan(pair.front()); }
  double dt() const { return t.size() > 1 ? t[1] - t[0] : 0.0; }

  // Index of the grid sample at time `time`; throws when off-grid.
  std::size_t index_of(double time, double tol_frac = 1e-6) const {
    if (t.size() < 2) throw ConfigError("trace too short");
    const double h = dt();
    const double x = (time - t.front()) / h;
    const double k = std::round(x);
    if (std::abs(x - k) > tol_frac * std::max(1.0, std::abs(x)) || k < 0 || k >= static_cast<double>(t.size()))
      throw ConfigError(fmt::format("time {} is not on the output grid", time));
    return static_cast<std::size_t>(k);
  }
};

inline double g2_ratio(double pair, double intensity, double floor) {
  if (!(intensity > floor) || std::isnan(pair)) return kNaN;
  return pair / (intensity * intensity);
}

// f1(t) = s(t) ground - i g sum_h e^{-i k z_h} e_h.
inline cplx output_one_photon_amplitude(const Generator& gen, const TruncatedState& state, double t) {
  return output_amplitude(gen, state, t);
}

inline double output_intensity(const Generator& gen, const TruncatedState& state, double t) {
  return std::norm(output_amplitude(gen, state, t));
}

// |<0| E E |psi>|^2 per unit drive^4.
inline double equal_time_G2(const Generator& gen, const TruncatedState& state, double t) {
  if (!state.has_doubles()) throw ConfigError("equal_time_G2 needs the two-excitation block");
  return std::norm(output_amplitude(gen, apply_field(gen, state, t), t));
}

// G2(t1, t2) from the state at t1: condition on a detection at t1, evolve
// the conditioned state to t2 and detect again.
inline double two_time_G2(const Generator& gen, const TruncatedState& state_t1, double t1, double t2,
                          double dt = 0.0) {
  const auto c = apply_field(gen, state_t1, t1);
  const auto c2 = conditional_evolve(c, gen, t1, t2, dt);
  return std::norm(output_amplitude(gen, c2, t2));
}

// ---------------------------------------------------------------------------
struct SimulationOptions {
  double dt = 0.0;           // integration step; <= 0 picks the generator default
  double dt_out = 0.1;       // output grid
  bool singles_only = false; // skip the two-excitation block (no G~2)
  bool keep_conditioned = false;
  double g2_floor = 1e-4;
};

struct Simulation {
  ObservableTrace trace;
  std::vector<TruncatedState> conditioned;  // E|psi(t)> per output sample
  TruncatedState final_state;
};

inline void record_sample(ObservableTrace& tr, const Generator& gen, const TruncatedState& s, double t,
                          TruncatedState* conditioned_out = nullptr) {
  const double env = gen.drive(t);
  const cplx f1 = output_amplitude(gen, s, t);
  double pair = kNaN;
  if (s.has_doubles()) {
    auto c = apply_field(gen, s, t);
    pair = std::norm(output_amplitude(gen, c, t));
    if (conditioned_out) *conditioned_out = std::move(c);
  }
  const double i = std::norm(f1);
  tr.t.push_back(t);
  tr.envelope.push_back(env);
  tr.omega.push_back(gen.omega(t));
  tr.intensity.push_back(i);
  tr.pair.push_back(pair);
  tr.g2.push_back(g2_ratio(pair, i, tr.floor));
}

inline Simulation simulate(const Generator& gen, double t0, double t1, const SimulationOptions& opt) {
  Simulation sim;
  sim.trace.floor = opt.g2_floor;
  if (opt.keep_conditioned && opt.singles_only)
    throw ConfigError("conditioned states need the two-excitation block");
  sim.final_state = evolve_observed(gen, zero_state(gen.index_ptr(), opt.singles_only), t0, t1, opt.dt, opt.dt_out,
                                    [&](double t, const TruncatedState& s) {
                                      if (opt.keep_conditioned) {
                                        sim.conditioned.emplace_back();
                                        record_sample(sim.trace, gen, s, t, &sim.conditioned.back());
                                      } else {
                                        record_sample(sim.trace, gen, s, t);
                                      }
                                    });
  return sim;
}

inline ObservableTrace trace_from_trajectory(const Generator& gen, const StateTrajectory& traj,
                                             double floor = 1e-4) {
  ObservableTrace tr;
  tr.floor = floor;
  for (std::size_t k = 0; k < traj.times.size(); ++k) record_sample(tr, gen, traj.states[k], traj.times[k]);
  return tr;
}

// ---------------------------------------------------------------------------
struct CorrelationGrid {
  std::vector<double> t;
  std::vector<double> g2;         // row-major G2(t_i, t_j), symmetric
  std::vector<double> intensity;  // I~(t_i)

  std::size_t n() const { return t.size(); }
  double at(std::size_t i, std::size_t j) const { return g2[i * t.size() + j]; }
  double dt() const { return t.size() > 1 ? t[1] - t[0] : 0.0; }

  std::size_t index_of(double time, double tol_frac = 1e-6) const {
    if (t.size() < 2) throw ConfigError("correlation grid too short");
    const double x = (time - t.front()) / dt();
    const double k = std::round(x);
    if (std::abs(x - k) > tol_frac * std::max(1.0, std::abs(x)) || k < 0 || k >= static_cast<double>(t.size()))
      throw ConfigError(fmt::format("time {} is not on the correlation grid", time));
    return static_cast<std::size_t>(k);
  }
};

// Two-time grid over every `stride`-th sample of a simulation that kept its
// conditioned states. Each row is one no-jump propagation of E|psi(t_i)>.
// Restricted to samples in [t_begin, t_end] when given.
inline CorrelationGrid correlation_grid(const Generator& gen, const Simulation& sim, std::size_t stride = 1,
                                        double dt = 0.0, double t_begin = -kInf, double t_end = kInf) {
  if (sim.conditioned.size() != sim.trace.size())
    throw ConfigError("correlation grid needs a simulation with conditioned states");
  if (stride < 1) throw ConfigError("grid stride must be >= 1");
  std::vector<std::size_t> sel;
  const double tol = 1e-9 * std::max(1.0, std::abs(t_end));
  for (std::size_t k = 0; k < sim.trace.size(); ++k) {
    const double t = sim.trace.t[k];
    if (t < t_begin - tol || t > t_end + tol) continue;
    if (sel.empty() || k - sel.front() == stride * sel.size()) sel.push_back(k);
  }
  if (sel.size() < 2) throw ConfigError("correlation grid range holds fewer than 2 samples");
  CorrelationGrid g;
  const std::size_t n = sel.size();
  g.t.resize(n);
  g.intensity.resize(n);
  g.g2.assign(n * n, 0.0);
  for (std::size_t a = 0; a < n; ++a) {
    g.t[a] = sim.trace.t[sel[a]];
    g.intensity[a] = sim.trace.intensity[sel[a]];
  }
  for (std::size_t a = 0; a < n; ++a) {
    Propagator p(gen, sim.conditioned[sel[a]], g.t[a], dt);
    for (std::size_t b = a; b < n; ++b) {
      p.advance_to(g.t[b]);
      const double v = std::norm(output_amplitude(gen, p.state(), g.t[b]));
      g.g2[a * n + b] = v;
      g.g2[b * n + a] = v;
    }
  }
  return g;
}

// Trapezoid weights for [t, t + width] on a uniform grid.
inline std::vector<std::pair<std::size_t, double>> window_weights(const CorrelationGrid& g, double t, double width) {
  if (!(width > 0)) throw ConfigError("window width must be positive");
  const std::size_t i0 = g.index_of(t), i1 = g.index_of(t + width);
  std::vector<std::pair<std::size_t, double>> w;
  const double h = g.dt();
  for (std::size_t i = i0; i <= i1; ++i) w.emplace_back(i, (i == i0 || i == i1) ? 0.5 * h : h);
  return w;
}

inline double window_intensity(const CorrelationGrid& g, double t, double width) {
  double s = 0;
  for (auto [i, w] : window_weights(g, t, width)) s += w * g.intensity[i];
  return s;
}

inline double window_pairs(const CorrelationGrid& g, double t1, double w1, double t2, double w2) {
  const auto a = window_weights(g, t1, w1), b = window_weights(g, t2, w2);
  double s = 0;
  for (auto [i, wi] : a)
    for (auto [j, wj] : b) s += wi * wj * g.at(i, j);
  return s;
}

inline double windowed_g2(const CorrelationGrid& g, double t1, double w1, double t2, double w2,
                          double floor = 1e-8) {
  const double i1 = window_intensity(g, t1, w1), i2 = window_intensity(g, t2, w2);
  if (!(i1 > floor) || !(i2 > floor))
    throw UndefinedResultError(fmt::format("window intensity below floor ({:.3g}, {:.3g})", i1, i2));
  return window_pairs(g, t1, w1, t2, w2) / (i1 * i2);
}

// Same window for both detectors.
inline double windowed_g2(const CorrelationGrid& g, double t, double width) {
  return windowed_g2(g, t, width, t, width);
}

// ---------------------------------------------------------------------------
struct SpectrumPoint {
  double delta;
  double transmission;  // |t|^2
  cplx amplitude;
};

// Steady-state transmission of a CW probe at detuning delta (one- and
// two-photon detuning both equal delta) for the control value at the start
// of the schedule. Solves M1 c = -src directly.
inline std::vector<SpectrumPoint> transmission_spectrum(const PhysicalParams& params, const AtomChain& chain,
                                                        const ControlSchedule& schedule,
                                                        const std::vector<double>& delta_scan) {
  params.validate();
  chain.validate();
  schedule.validate();
  const int n = chain.n_atoms;
  const double g = params.coupling();
  const double omega = schedule.value(schedule.segments.front().t_start);
  std::vector<cplx> ph(n);
  for (int h = 0; h < n; ++h) ph[h] = std::polar(1.0, chain.k_p * chain.positions[h]);
  std::vector<SpectrumPoint> out;
  out.reserve(delta_scan.size());
  for (double delta : delta_scan) {
    const bool with_r = omega > 0;
    const int dim = with_r ? 2 * n : n;
    Eigen::MatrixXcd m = Eigen::MatrixXcd::Zero(dim, dim);
    Eigen::VectorXcd rhs(dim);
    rhs.setZero();
    for (int h = 0; h < n; ++h) {
      m(h, h) = cplx(-params.gamma_total / 2.0, delta);
      for (int j = 0; j < h; ++j) m(h, j) = -(g * g) * ph[h] * std::conj(ph[j]);
      rhs(h) = cplx(0, g) * ph[h];
      if (with_r) {
        m(h, n + h) = cplx(0, -omega);
        m(n + h, h) = cplx(0, -omega);
        m(n + h, n + h) = cplx(-params.gamma_r, delta);
      }
    }
    const Eigen::VectorXcd c = m.partialPivLu().solve(rhs);
    cplx t = 1.0;
    for (int h = 0; h < n; ++h) t += cplx(0, -g) * std::conj(ph[h]) * c(h);
    out.push_back({delta, std::norm(t), t});
  }
  return out;
}

inline std::vector<double> linspace(double a, double b, std::size_t n) {
  if (n < 2) throw ConfigError("linspace needs at least 2 points");
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = a + (b - a) * static_cast<double>(i) / static_cast<double>(n - 1);
  return v;
}

struct WindowShape {
  double peak;
  double fwhm;
};

// Transparency peak and full width at half of that peak, measured outward
// from the scan point closest to zero detuning.
inline WindowShape eit_window(const std::vector<SpectrumPoint>& sp) {
  if (sp.size() < 3) throw ExtractionError("spectrum too short");
  std::size_t c = 0;
  for (std::size_t i = 1; i < sp.size(); ++i)
    if (std::abs(sp[i].delta) < std::abs(sp[c].delta)) c = i;
  const double half = 0.5 * sp[c].transmission;
  auto cross = [&](int dir) {
    for (long i = static_cast<long>(c); i + dir >= 0 && i + dir < static_cast<long>(sp.size()); i += dir) {
      const auto& a = sp[static_cast<std::size_t>(i)];
      const auto& b = sp[static_cast<std::size_t>(i + dir)];
      if (b.transmission < half) {
        const double f = (a.transmission - half) / (a.transmission - b.transmission);
        return a.delta + f * (b.delta - a.delta);
      }
    }
    throw ExtractionError("transparency window does not fall to half maximum within the scan");
  };
  const double lo = cross(-1), hi = cross(+1);
  return {sp[c].transmission, hi - lo};
}

// ---------------------------------------------------------------------------
struct SteadyState {
  double intensity = kNaN;
  double pair = kNaN;
  double g2 = kNaN;
  double max_deviation = kNaN;  // largest relative deviation over the window
  bool flat = false;
};

// Averages over the last `fraction` of [t_on, t_off).
inline SteadyState measure_steady_state(const ObservableTrace& tr, double t_on, double t_off, double fraction = 0.1,
                                        double tolerance = 0.005) {
  const double w0 = t_off - fraction * (t_off - t_on);
  std::vector<std::size_t> idx;
  for (std::size_t k = 0; k < tr.size(); ++k)
    if (tr.t[k] >= w0 - 1e-9 && tr.t[k] < t_off - 1e-9) idx.push_back(k);
  if (idx.size() < 2) throw ExtractionError("steady-state window holds fewer than 2 samples");
  auto mean_of = [&](const std::vector<double>& v) {
    double s = 0;
    for (auto k : idx) s += v[k];
    return s / static_cast<double>(idx.size());
  };
  auto dev_of = [&](const std::vector<double>& v, double m) {
    double d = 0;
    for (auto k : idx) d = std::max(d, std::abs(v[k] - m) / std::abs(m));
    return d;
  };
  SteadyState ss;
  ss.intensity = mean_of(tr.intensity);
  ss.max_deviation = dev_of(tr.intensity, ss.intensity);
  if (tr.has_pairs()) {
    ss.pair = mean_of(tr.pair);
    ss.g2 = mean_of(tr.g2);
    ss.max_deviation = std::max({ss.max_deviation, dev_of(tr.pair, ss.pair), dev_of(tr.g2, ss.g2)});
  }
  ss.flat = ss.max_deviation < tolerance;
  return ss;
}

// ---------------------------------------------------------------------------
struct TransientTimes {
  double tau_eit = kNaN;
  double tau_eit_literal = kNaN;
  double tau_0 = kNaN;
  double tau_I = kNaN;
  double tau_II = kNaN;
};

namespace detail {
inline double lerp_cross(double ta, double tb, double ya, double yb, double level) {
  if (ya == yb) return tb;
  return ta + (level - ya) / (yb - ya) * (tb - ta);
}
}  // namespace detail

// Time after t_on beyond which |g2 - g2_ss| / g2_ss < tol holds at every
// sample up to t_off.
inline double turn_on_time(const ObservableTrace& tr, double t_on, double t_off, double g2_ss, double tol = 0.005) {
  if (!tr.has_pairs()) throw ExtractionError("turn-on time needs G~2");
  std::size_t first = tr.size();
  double dev_prev = kNaN;
  std::size_t k_on = tr.size(), k_last = 0;
  for (std::size_t k = 0; k < tr.size(); ++k) {
    if (tr.t[k] < t_on - 1e-9 || tr.t[k] >= t_off - 1e-9) continue;
    if (k_on == tr.size()) k_on = k;
    k_last = k;
  }
  if (k_on == tr.size()) throw ExtractionError("no samples inside the on-interval");
  for (std::size_t k = k_last + 1; k-- > k_on;) {
    const double dev = std::abs(tr.g2[k] - g2_ss) / std::abs(g2_ss);
    if (!(dev < tol)) {
      dev_prev = dev;
      break;
    }
    first = k;
  }
  if (first == tr.size() || first == k_last)
    throw ExtractionError(fmt::format("g2 never settles within {} of g2_ss = {:.6g} before t_off", tol, g2_ss));
  if (first == k_on) return 0.0;
  const double dev_first = std::abs(tr.g2[first] - g2_ss) / std::abs(g2_ss);
  return detail::lerp_cross(tr.t[first - 1], tr.t[first], dev_prev, dev_first, tol) - t_on;
}

// Time after t_off of the last downward crossing of level * I_ss.
inline double turn_off_intensity_time(const ObservableTrace& tr, double t_off, double i_ss, double level = 0.5) {
  const double target = level * i_ss;
  double found = kNaN;
  for (std::size_t k = 1; k < tr.size(); ++k) {
    if (tr.t[k - 1] < t_off - 1e-9) continue;
    if (tr.intensity[k - 1] >= target && tr.intensity[k] < target)
      found = detail::lerp_cross(tr.t[k - 1], tr.t[k], tr.intensity[k - 1], tr.intensity[k], target);
  }
  if (std::isnan(found)) {
    const std::size_t k0 = tr.index_of(t_off);
    if (tr.intensity[k0] < target) return 0.0;
    throw ExtractionError("intensity never drops to half its steady-state value after turn-off");
  }
  return found - t_off;
}

// Time after t_off at which G~2 first drops to half its value at t_off+.
inline double turn_off_pair_time(const ObservableTrace& tr, double t_off) {
  if (!tr.has_pairs()) throw ExtractionError("turn-off pair time needs G~2");
  const std::size_t k0 = tr.index_of(t_off);
  const double target = 0.5 * tr.pair[k0];
  for (std::size_t k = k0 + 1; k < tr.size(); ++k)
    if (tr.pair[k] < target) return detail::lerp_cross(tr.t[k - 1], tr.t[k], tr.pair[k - 1], tr.pair[k], target) - t_off;
  throw ExtractionError("G~2 never drops to half its post-shutoff value within the trace");
}

inline TransientTimes extract_transients(const ObservableTrace& tr, double t_on, double t_off, double d,
                                         const PhysicalParams& p) {
  TransientTimes tt;
  tt.tau_eit = eit_traversal_time(d, p);
  tt.tau_eit_literal = eit_traversal_time_literal(d, p);
  const auto ss = measure_steady_state(tr, t_on, t_off);
  if (!ss.flat)
    throw ExtractionError(fmt::format("observables not flat before turn-off (max deviation {:.3g})", ss.max_deviation));
  tt.tau_0 = turn_on_time(tr, t_on, t_off, ss.g2);
  tt.tau_I = turn_off_intensity_time(tr, t_off, ss.intensity);
  tt.tau_II = turn_off_pair_time(tr, t_off);
  return tt;
}

// Decay rate of the upper envelope of y(t) over [t_start, t_end]: a
// least-squares line through ln y at the local maxima. A strictly decreasing
// range is its own envelope.
inline double fit_exponential_envelope(const std::vector<double>& t, const std::vector<double>& y, double t_start,
                                       double t_end) {
  std::vector<std::size_t> in;
  for (std::size_t k = 0; k < t.size(); ++k)
    if (t[k] >= t_start - 1e-12 && t[k] <= t_end + 1e-12) in.push_back(k);
  std::vector<std::size_t> pts;
  for (std::size_t a = 1; a + 1 < in.size(); ++a) {
    const std::size_t k = in[a];
    if (y[k] >= y[in[a - 1]] && y[k] > y[in[a + 1]]) pts.push_back(k);
  }
  if (pts.size() < 3) {
    bool decreasing = in.size() >= 3;
    for (std::size_t a = 1; a < in.size() && decreasing; ++a) decreasing = y[in[a]] < y[in[a - 1]];
    if (!decreasing) throw ExtractionError("fewer than 3 envelope maxima in the fit range");
    pts = in;
  }
  double st = 0, sy = 0, stt = 0, sty = 0;
  for (auto k : pts) {
    if (!(y[k] > 0)) throw ExtractionError("non-positive value in the envelope fit");
    const double ly = std::log(y[k]);
    st += t[k];
    sy += ly;
    stt += t[k] * t[k];
    sty += t[k] * ly;
  }
  const double n = static_cast<double>(pts.size());
  const double slope = (n * sty - st * sy) / (n * stt - st * st);
  return -slope;
}

inline double fit_exponential_envelope(const ObservableTrace& tr, double t_start, double t_end) {
  if (!tr.has_pairs()) throw ExtractionError("envelope fit needs G~2");
  return fit_exponential_envelope(tr.t, tr.pair, t_start, t_end);
}

// High-optical-depth approximation of the blockaded steady-state g2.
inline double g2_ss_high_depth(double d, double omega_c) {
  const double w = 1.0 + omega_c * omega_c;
  return 4.0 * w / (std::numbers::pi * d) * std::exp(-d / w);
}

// ---------------------------------------------------------------------------
// CSV output. Numbers use a fixed 12-significant-digit format so reruns are
// byte-identical.
inline std::string csv_num(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  if (x == 0.0) return "0";
  return fmt::format("{:.12g}", x);
}

inline void write_trace_csv(std::ostream& os, const ObservableTrace& tr, const Units& u) {
  os << "t_gamma [1/Gamma],t_ns [ns],envelope [E_p0],omega_c [Gamma],I_tilde [1],G2_tilde [1],g2 [1]\n";
  for (std::size_t k = 0; k < tr.size(); ++k)
    fmt::print(os, "{},{},{},{},{},{},{}\n", csv_num(tr.t[k]), csv_num(u.time_to_ns(tr.t[k])), csv_num(tr.envelope[k]),
               csv_num(tr.omega[k]), csv_num(tr.intensity[k]), csv_num(tr.pair[k]), csv_num(tr.g2[k]));
}

inline void write_grid_csv(std::ostream& os, const CorrelationGrid& g, const Units& u) {
  os << "t1_gamma [1/Gamma],t2_gamma [1/Gamma],t1_ns [ns],t2_ns [ns],G2 [1]\n";
  for (std::size_t i = 0; i < g.n(); ++i)
    for (std::size_t j = 0; j < g.n(); ++j)
      fmt::print(os, "{},{},{},{},{}\n", csv_num(g.t[i]), csv_num(g.t[j]), csv_num(u.time_to_ns(g.t[i])),
                 csv_num(u.time_to_ns(g.t[j])), csv_num(g.at(i, j)));
}

inline void write_spectrum_csv(std::ostream& os, const std::vector<SpectrumPoint>& sp, const Units& u) {
  os << "delta [Gamma],delta_mhz [MHz],transmission [1],amp_re [1],amp_im [1]\n";
  for (const auto& p : sp)
    fmt::print(os, "{},{},{},{},{}\n", csv_num(p.delta), csv_num(u.rate_to_mhz(p.delta)), csv_num(p.transmission),
               csv_num(p.amplitude.real()), csv_num(p.amplitude.imag()));
}

}  // namespace rydpulse
