#pragma once

// Declarative description of a simulation: rates, atom chain, blockade,
// probe envelope and control schedule. Internal units: Gamma = 1, times in
// 1/Gamma, lengths in units of the medium length unless stated otherwise.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace rydpulse {

using cplx = std::complex<double>;

class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class NumericalError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Unit conversion between the internal Gamma = 1 system and lab units.
// Rates in the lab are quoted as f = omega / 2pi in MHz.
struct Units {
  double gamma_mhz = 6.0;  // Gamma = 2pi x gamma_mhz MHz

  double rate_from_mhz(double f_mhz) const { return f_mhz / gamma_mhz; }
  double rate_to_mhz(double rate) const { return rate * gamma_mhz; }
  // 1/Gamma in ns
  double ns_per_unit() const { return 1e3 / (2.0 * std::numbers::pi * gamma_mhz); }
  double time_from_ns(double t_ns) const { return t_ns / ns_per_unit(); }
  double time_to_ns(double t) const { return t * ns_per_unit(); }
};

// ---------------------------------------------------------------------------
struct PhysicalParams {
  double gamma_total = 1.0;
  double gamma_1d = 1.0 / 6.0;
  double gamma_prime = 5.0 / 6.0;
  double omega_c = 0.5;
  double gamma_r = 0.0;   // amplitude decay rate of every r slot
  double delta_e = 0.0;   // probe one-photon detuning
  double delta_2 = 0.0;   // two-photon detuning
  Units units{};

  // Build with Gamma = 1 split as Gamma_1D / Gamma' = ratio.
  static PhysicalParams with_ratio(double ratio, double omega_c, double gamma_r = 0.0,
                                   double delta_e = 0.0, double delta_2 = 0.0) {
    if (!(ratio > 0.0)) throw ConfigError("Gamma_1D/Gamma' ratio must be positive");
    PhysicalParams p;
    p.gamma_total = 1.0;
    p.gamma_prime = 1.0 / (1.0 + ratio);
    p.gamma_1d = 1.0 - p.gamma_prime;
    p.omega_c = omega_c;
    p.gamma_r = gamma_r;
    p.delta_e = delta_e;
    p.delta_2 = delta_2;
    p.validate();
    return p;
  }

  // Throws ConfigError unless Gamma = Gamma_1D + Gamma' and all rates >= 0.
  void validate() const {
    if (gamma_1d < 0 || gamma_prime < 0 || omega_c < 0 || gamma_r < 0)
      throw ConfigError("rates must be non-negative");
    if (!(gamma_prime > 0)) throw ConfigError("Gamma' must be positive");
    const double sum = gamma_1d + gamma_prime;
    if (std::abs(sum - gamma_total) > 1e-12 * std::max(1.0, gamma_total))
      throw ConfigError("Gamma must equal Gamma_1D + Gamma'");
    if (!(units.gamma_mhz > 0)) throw ConfigError("unit Gamma must be positive");
  }

  double ratio() const { return gamma_1d / gamma_prime; }
  double optical_depth_per_atom() const {
    return 2.0 * std::log((gamma_1d + gamma_prime) / gamma_prime);
  }
  // Field coupling sqrt(Gamma_1D / 2) of one atom to the probe mode.
  double coupling() const { return std::sqrt(gamma_1d / 2.0); }
};

// ---------------------------------------------------------------------------
struct AtomChain {
  int n_atoms = 0;
  std::vector<double> positions;
  double length = 1.0;
  double k_p = 0.0;

  void validate() const {
    if (n_atoms != static_cast<int>(positions.size()))
      throw ConfigError("atom count does not match positions");
    for (std::size_t i = 0; i < positions.size(); ++i) {
      if (positions[i] < 0 || positions[i] > length)
        throw ConfigError("atom position outside [0, L]");
      if (i > 0 && !(positions[i] > positions[i - 1]))
        throw ConfigError("atom positions must be strictly increasing");
    }
  }
};

enum class Placement { uniform, jittered };

// Uniform placement puts atom h (1-based) at (h - 1/2) L / N. Jitter adds a
// seeded uniform offset within +-L/(4N), which keeps the order strict.
inline AtomChain build_chain(int n_atoms, double length, double k_p,
                             Placement placement = Placement::uniform,
                             std::uint64_t seed = 0) {
  if (n_atoms < 1) throw ConfigError("n_atoms must be >= 1");
  if (!(length > 0)) throw ConfigError("chain length must be positive");
  AtomChain c;
  c.n_atoms = n_atoms;
  c.length = length;
  c.k_p = k_p;
  c.positions.resize(n_atoms);
  const double cell = length / n_atoms;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> jitter(-0.25 * cell, 0.25 * cell);
  for (int h = 0; h < n_atoms; ++h) {
    double z = (h + 0.5) * cell;
    if (placement == Placement::jittered) z += jitter(rng);
    c.positions[h] = z;
  }
  c.validate();
  return c;
}

// D = 2 N ln((Gamma_1D + Gamma') / Gamma').
inline double optical_depth(int n_atoms, const PhysicalParams& p) {
  return n_atoms * p.optical_depth_per_atom();
}
inline double optical_depth(const AtomChain& chain, const PhysicalParams& p) {
  return optical_depth(chain.n_atoms, p);
}

// Atom count whose optical depth is closest to the target.
inline int atoms_for_optical_depth(double target_d, const PhysicalParams& p) {
  const int n = static_cast<int>(std::lround(target_d / p.optical_depth_per_atom()));
  return std::max(n, 1);
}

// Medium traversal time at the EIT group velocity of the linear generator,
// D Gamma' / (4 Omega_c^2).
inline double eit_traversal_time(double d, const PhysicalParams& p) {
  if (!(p.omega_c > 0)) return std::numeric_limits<double>::infinity();
  return d * p.gamma_prime / (4.0 * p.omega_c * p.omega_c);
}

// The closed form 4 D Gamma' / Omega_c^2 as printed in the source literature,
// kept for side-by-side reporting.
inline double eit_traversal_time_literal(double d, const PhysicalParams& p) {
  if (!(p.omega_c > 0)) return std::numeric_limits<double>::infinity();
  return 4.0 * d * p.gamma_prime / (p.omega_c * p.omega_c);
}

// ---------------------------------------------------------------------------
enum class BlockadeMode { none, fully_blockaded, power_law };

struct BlockadeConfig {
  BlockadeMode mode = BlockadeMode::fully_blockaded;
  double r_b = 0.0;
  double v0 = 0.0;
  double v_cap = 1e3;
  double d_b = 0.0;

  static BlockadeConfig fully_blockaded() { return {}; }
  static BlockadeConfig none() {
    BlockadeConfig b;
    b.mode = BlockadeMode::none;
    return b;
  }
  // Single-atom bandwidth V0 = 2 Omega_c^2 [Gamma_1D (2 Gamma' + Gamma_1D)]^(-1/2).
  static double single_atom_bandwidth(const PhysicalParams& p) {
    return 2.0 * p.omega_c * p.omega_c /
           std::sqrt(p.gamma_1d * (2.0 * p.gamma_prime + p.gamma_1d));
  }
  // Power-law potential with the blockade radius fixed by the optical depth
  // per blockade radius: r_b = L d_b / D.
  static BlockadeConfig power_law_from_db(double d_b, double d_total, double length,
                                          const PhysicalParams& p, double v_cap = 1e3) {
    if (!(d_b > 0) || !(d_total > 0) || !(length > 0))
      throw ConfigError("power-law blockade needs positive D_b, D and L");
    BlockadeConfig b;
    b.mode = BlockadeMode::power_law;
    b.r_b = length * d_b / d_total;
    b.v0 = single_atom_bandwidth(p);
    b.v_cap = v_cap;
    b.d_b = d_b;
    return b;
  }
};

// Interaction rate for an rr pair at separation r. nullopt means the pair is
// blocked and its rr amplitude does not exist.
inline std::optional<double> interaction(const BlockadeConfig& b, double r) {
  switch (b.mode) {
    case BlockadeMode::none:
      return 0.0;
    case BlockadeMode::fully_blockaded:
      return std::nullopt;
    case BlockadeMode::power_law: {
      if (!(r > 0)) return std::nullopt;
      const double x = b.r_b / r;
      const double x3 = x * x * x;
      const double v = b.v0 * x3 * x3;
      if (!(std::abs(v) <= b.v_cap)) return std::nullopt;
      return v;
    }
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
enum class PulseShape { square, triangular_neg, triangular_pos, gaussian };

// Probe envelope. shape_value() has unit peak; amplitude() is scaled so that
// the integral of |E_p|^2 over time equals n_in. Triangular shapes are linear
// in intensity. The gaussian is centered on the support with intensity FWHM
// `fwhm` and truncated outside [t_start, t_start + duration].
struct PulseEnvelope {
  PulseShape shape = PulseShape::square;
  double t_start = 0.0;
  double duration = 1.0;
  double rise_time = 0.0;
  double fwhm = 0.0;
  double n_in = 1.0;

  double t_end() const { return t_start + duration; }
  // flat top of a square pulse; the whole pulse for other shapes
  double plateau_start() const { return shape == PulseShape::square ? t_start + rise_time : t_start; }
  double plateau_end() const { return shape == PulseShape::square ? t_end() - rise_time : t_end(); }

  void validate() const {
    if (!(duration > 0)) throw ConfigError("pulse duration must be positive");
    if (!(n_in >= 0)) throw ConfigError("n_in must be non-negative");
    if (shape == PulseShape::square && (rise_time < 0 || 2.0 * rise_time > duration))
      throw ConfigError("square rise_time must lie in [0, duration/2]");
    if (shape == PulseShape::gaussian && !(fwhm > 0))
      throw ConfigError("gaussian pulse needs a positive fwhm");
  }

  // Unit-peak shape; right-continuous at discontinuities.
  double shape_value(double t) const { return shape_at(t, false); }
  // Limit from the left.
  double shape_left(double t) const { return shape_at(t, true); }

  // Integral of shape_value^2 over all time (closed form).
  double shape_energy() const {
    switch (shape) {
      case PulseShape::square:
        return duration - 4.0 * rise_time / 3.0;
      case PulseShape::triangular_neg:
      case PulseShape::triangular_pos:
        return 0.5 * duration;
      case PulseShape::gaussian: {
        const double a = 4.0 * std::numbers::ln2 / (fwhm * fwhm);
        return std::sqrt(std::numbers::pi / a) * std::erf(0.5 * duration * std::sqrt(a));
      }
    }
    return 0.0;
  }

  // Peak amplitude E_p0 in sqrt(photons / time).
  double peak_amplitude() const { return std::sqrt(n_in / shape_energy()); }

  cplx amplitude(double t) const { return peak_amplitude() * shape_value(t); }

  // Times at which the envelope or its slope is discontinuous.
  std::vector<double> breakpoints() const {
    std::vector<double> bp{t_start, t_end()};
    if (shape == PulseShape::square && rise_time > 0) {
      bp.push_back(t_start + rise_time);
      bp.push_back(t_end() - rise_time);
    }
    std::sort(bp.begin(), bp.end());
    bp.erase(std::unique(bp.begin(), bp.end()), bp.end());
    return bp;
  }

private:
  double shape_at(double t, bool left) const {
    const double t1 = t_end();
    const bool inside = left ? (t > t_start && t <= t1) : (t >= t_start && t < t1);
    if (!inside) return 0.0;
    const double x = t - t_start;
    switch (shape) {
      case PulseShape::square:
        if (rise_time > 0) {
          if (x < rise_time) return x / rise_time;
          if (x > duration - rise_time) return (duration - x) / rise_time;
        }
        return 1.0;
      case PulseShape::triangular_neg:
        return std::sqrt(std::max(0.0, 1.0 - x / duration));
      case PulseShape::triangular_pos:
        return std::sqrt(std::max(0.0, x / duration));
      case PulseShape::gaussian: {
        const double y = x - 0.5 * duration;
        return std::exp(-2.0 * std::numbers::ln2 * y * y / (fwhm * fwhm));
      }
    }
    return 0.0;
  }
};

inline cplx eval_envelope(const PulseEnvelope& p, double t) { return p.amplitude(t); }

// ---------------------------------------------------------------------------
struct ControlSegment {
  double t_start;
  double t_end;
  double value_start;
  double value_end;
};

// Piecewise-linear Omega_c(t). Outside the covered range the value of the
// nearest segment end is used.
struct ControlSchedule {
  std::vector<ControlSegment> segments;

  static ControlSchedule constant(double omega, double t0 = 0.0, double t1 = 1.0) {
    ControlSchedule s;
    s.segments.push_back({t0, t1, omega, omega});
    s.validate();
    return s;
  }
  // Control on, off during [t_off, t_off + t_store), on again afterwards.
  static ControlSchedule storage(double omega, double t_off, double t_store, double t0 = 0.0) {
    if (!(t_off > t0) || !(t_store > 0)) throw ConfigError("storage schedule needs t_off > t0 and t_store > 0");
    ControlSchedule s;
    s.segments.push_back({t0, t_off, omega, omega});
    s.segments.push_back({t_off, t_off + t_store, 0.0, 0.0});
    s.segments.push_back({t_off + t_store, t_off + t_store + 1.0, omega, omega});
    s.validate();
    return s;
  }
  static ControlSchedule ramp(double from, double to, double t0, double t1) {
    ControlSchedule s;
    s.segments.push_back({t0, t1, from, to});
    s.validate();
    return s;
  }

  void validate() const {
    if (segments.empty()) throw ConfigError("control schedule has no segments");
    for (std::size_t i = 0; i < segments.size(); ++i) {
      const auto& sg = segments[i];
      if (!(sg.t_end > sg.t_start)) throw ConfigError("control segment with non-positive length");
      if (sg.value_start < 0 || sg.value_end < 0) throw ConfigError("control Omega_c must be >= 0");
      if (i > 0 && std::abs(sg.t_start - segments[i - 1].t_end) > 1e-12 * std::max(1.0, std::abs(sg.t_start)))
        throw ConfigError("control segments must be contiguous");
    }
  }

  // Right-continuous evaluation.
  double value(double t) const { return value_at(t, false); }
  double value_left(double t) const { return value_at(t, true); }

  double max_value() const {
    double m = 0.0;
    for (const auto& sg : segments) m = std::max({m, sg.value_start, sg.value_end});
    return m;
  }

  std::vector<double> breakpoints() const {
    std::vector<double> bp;
    for (const auto& sg : segments) {
      bp.push_back(sg.t_start);
      bp.push_back(sg.t_end);
    }
    std::sort(bp.begin(), bp.end());
    bp.erase(std::unique(bp.begin(), bp.end()), bp.end());
    return bp;
  }

private:
  double value_at(double t, bool left) const {
    const auto& first = segments.front();
    const auto& last = segments.back();
    if (t < first.t_start || (left && t == first.t_start)) return first.value_start;
    if (t > last.t_end || (!left && t == last.t_end)) return last.value_end;
    for (const auto& sg : segments) {
      const bool in = left ? (t > sg.t_start && t <= sg.t_end) : (t >= sg.t_start && t < sg.t_end);
      if (in) {
        const double f = (t - sg.t_start) / (sg.t_end - sg.t_start);
        return sg.value_start + f * (sg.value_end - sg.value_start);
      }
    }
    return last.value_end;
  }
};

inline double eval_control(const ControlSchedule& s, double t) { return s.value(t); }

}  // namespace rydpulse
