#pragma once

// Linear generator of the weak-drive amplitude hierarchy and its fixed-step
// time integration.
//
// Single-excitation block (modes e_h, r_h), unit-peak envelope s(t):
//   de_h/dt = (i delta_e - Gamma/2) e_h - i Omega r_h - i g s(t) e^{i k z_h} ground
//             - g^2 sum_{j<h} e^{i k (z_h - z_j)} e_j
//   dr_h/dt = (i delta_2 - gamma_r) r_h - i Omega e_h
// with g = sqrt(Gamma_1D / 2). The exchange term is forward-only (cascaded).
// Output field: E = s(t) ground - i g sum_h e^{-i k z_h} e_h.
//
// Two-excitation block, stored as a symmetric tensor C over mode pairs:
//   dC/dt = M1 C + C M1^T + src c^T + c src^T - i V o C
// restricted to the slots present in the ExcitationIndex (absent slots are
// identically zero). The doubles do not feed back into the singles.

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "rydpulse/model.hpp"
#include "rydpulse/statespace.hpp"

namespace rydpulse {

class Generator {
public:
  Generator(PhysicalParams params, AtomChain chain, BlockadeConfig blockade, ControlSchedule schedule,
            PulseEnvelope envelope, IndexPtr index, double drive_scale = 1.0)
      : params_(std::move(params)),
        chain_(std::move(chain)),
        blockade_(std::move(blockade)),
        schedule_(std::move(schedule)),
        envelope_(std::move(envelope)),
        index_(std::move(index)),
        drive_scale_(drive_scale) {
    params_.validate();
    chain_.validate();
    schedule_.validate();
    envelope_.validate();
    if (!index_ || index_->n_atoms() != chain_.n_atoms)
      throw ConfigError("excitation index does not match the atom chain");
    const int n = chain_.n_atoms;
    const double g = params_.coupling();
    phase_.resize(n);
    source_.assign(index_->n_modes(), cplx{});
    out_.assign(index_->n_modes(), cplx{});
    for (int h = 0; h < n; ++h) {
      phase_[h] = std::polar(1.0, chain_.k_p * chain_.positions[h]);
      source_[h] = cplx(0, -g) * phase_[h];
      out_[h] = cplx(0, -g) * std::conj(phase_[h]);
    }
    exchange_ = params_.gamma_1d / 2.0;

    const cplx de(-params_.gamma_total / 2.0, params_.delta_e);
    const cplx dr(-params_.gamma_r, params_.delta_2);
    diag_.resize(index_->dim());
    for (int m = 0; m < index_->n_modes(); ++m) diag_[m] = index_->is_e_mode(m) ? de : dr;
    max_v_ = 0.0;
    for (std::size_t k = 0; k < index_->n_doubles(); ++k) {
      const auto [m, q] = index_->pair_modes(k);
      cplx d = diag_[m] + diag_[q];
      if (!index_->is_e_mode(m) && !index_->is_e_mode(q)) {
        const int h = index_->atom_of(m), j = index_->atom_of(q);
        const auto v = interaction(blockade_, std::abs(chain_.positions[j] - chain_.positions[h]));
        if (!v) throw ConfigError("excitation index keeps an rr pair that the blockade forbids");
        d += cplx(0, -*v);
        max_v_ = std::max(max_v_, std::abs(*v));
      }
      diag_[index_->n_singles() + k] = d;
    }
  }

  const PhysicalParams& params() const { return params_; }
  const AtomChain& chain() const { return chain_; }
  const BlockadeConfig& blockade() const { return blockade_; }
  const ControlSchedule& schedule() const { return schedule_; }
  const PulseEnvelope& envelope() const { return envelope_; }
  const IndexPtr& index_ptr() const { return index_; }
  const ExcitationIndex& index() const { return *index_; }
  double drive_scale() const { return drive_scale_; }
  double max_interaction() const { return max_v_; }

  double drive(double t) const { return drive_scale_ * envelope_.shape_value(t); }
  double drive_left(double t) const { return drive_scale_ * envelope_.shape_left(t); }
  double omega(double t) const { return schedule_.value(t); }
  double omega_left(double t) const { return schedule_.value_left(t); }

  // Output-field weights per mode: -i g e^{-i k z_h} on e modes, 0 on r modes.
  const std::vector<cplx>& output_weights() const { return out_; }
  const std::vector<cplx>& diagonal() const { return diag_; }

  // Largest rate the explicit part of the integrator has to resolve. The
  // diagonal (decay, detuning, interaction) is integrated exactly and is not
  // included; the collective forward emission rate Gamma D / 4 is.
  double max_rate() const {
    const double d = optical_depth(chain_, params_);
    return std::max({params_.gamma_total, schedule_.max_value(), std::abs(params_.delta_e),
                     std::abs(params_.delta_2), params_.gamma_total * d / 4.0});
  }
  double default_dt() const { return 0.05 / max_rate(); }

  std::vector<double> breakpoints() const {
    auto bp = envelope_.breakpoints();
    const auto cb = schedule_.breakpoints();
    bp.insert(bp.end(), cb.begin(), cb.end());
    std::sort(bp.begin(), bp.end());
    bp.erase(std::unique(bp.begin(), bp.end()), bp.end());
    return bp;
  }

  // Off-diagonal single-mode action x -> (M1 - diag) x.
  void apply_single_offdiag(double omega, const cplx* x, cplx* y) const {
    const int n = chain_.n_atoms;
    const cplx mi_om(0, -omega);
    cplx acc{};
    for (int h = 0; h < n; ++h) {
      const cplx xe = x[h], xr = x[n + h];
      y[h] = mi_om * xr - exchange_ * phase_[h] * acc;
      y[n + h] = mi_om * xe;
      acc += std::conj(phase_[h]) * xe;
    }
  }

  struct Workspace {
    std::vector<cplx> dense;
    std::vector<cplx> mapped;
  };

  // Off-diagonal right-hand side including sources. y holds singles followed
  // (optionally) by doubles; out has the same length.
  void offdiag_rhs(double env, double omega, cplx ground, std::span<const cplx> y, std::span<cplx> out,
                   Workspace& ws) const {
    const int nm = index_->n_modes();
    const std::size_t ns = index_->n_singles();
    apply_single_offdiag(omega, y.data(), out.data());
    const cplx gsrc = ground * env;
    if (gsrc != cplx{})
      for (int h = 0; h < chain_.n_atoms; ++h) out[h] += gsrc * source_[h];
    if (y.size() == ns) return;

    const auto nm2 = static_cast<std::size_t>(nm) * nm;
    ws.dense.assign(nm2, cplx{});
    ws.mapped.resize(nm2);
    const std::size_t nd = index_->n_doubles();
    for (std::size_t k = 0; k < nd; ++k) {
      const auto [m, q] = index_->pair_modes(k);
      const cplx v = y[ns + k];
      ws.dense[static_cast<std::size_t>(m) * nm + q] = v;
      ws.dense[static_cast<std::size_t>(q) * nm + m] = v;
    }
    // row q of `mapped` = M1off applied to column q of C (C is symmetric)
    for (int q = 0; q < nm; ++q)
      apply_single_offdiag(omega, ws.dense.data() + static_cast<std::size_t>(q) * nm,
                           ws.mapped.data() + static_cast<std::size_t>(q) * nm);
    const cplx* c = y.data();
    for (std::size_t k = 0; k < nd; ++k) {
      const auto [m, q] = index_->pair_modes(k);
      cplx v = ws.mapped[static_cast<std::size_t>(q) * nm + m] + ws.mapped[static_cast<std::size_t>(m) * nm + q];
      if (env != 0.0) v += env * (source_[m] * c[q] + source_[q] * c[m]);
      out[ns + k] = v;
    }
  }

private:
  PhysicalParams params_;
  AtomChain chain_;
  BlockadeConfig blockade_;
  ControlSchedule schedule_;
  PulseEnvelope envelope_;
  IndexPtr index_;
  double drive_scale_;
  std::vector<cplx> phase_;
  std::vector<cplx> source_;
  std::vector<cplx> out_;
  std::vector<cplx> diag_;
  double exchange_ = 0.0;
  double max_v_ = 0.0;
};

inline Generator assemble_generator(const PhysicalParams& params, const AtomChain& chain,
                                    const BlockadeConfig& blockade, const ControlSchedule& schedule,
                                    const PulseEnvelope& envelope,
                                    Occupancy occ = Occupancy::hard_core) {
  return Generator(params, chain, blockade, schedule, envelope, build_index(chain, blockade, occ));
}

// ---------------------------------------------------------------------------
inline const char* block_name(Block b) {
  switch (b) {
    case Block::e: return "e";
    case Block::r: return "r";
    case Block::ee: return "ee";
    case Block::er: return "er";
    case Block::rr: return "rr";
  }
  return "?";
}

// Fixed-step integrating-factor (Lawson) RK4: the constant diagonal is
// propagated exactly, the rest by classical RK4. Substeps never straddle an
// envelope or control breakpoint; one-sided limits are used at substep ends.
class Propagator {
public:
  Propagator(const Generator& gen, TruncatedState initial, double t0, double dt_max = 0.0)
      : gen_(&gen), state_(std::move(initial)), t_(t0), breakpoints_(gen.breakpoints()) {
    if (state_.index.get() != gen.index_ptr().get() && state_.index->dim() != gen.index().dim())
      throw ConfigError("state does not match the generator's excitation index");
    dt_max_ = dt_max > 0 ? dt_max : gen.default_dt();
    const std::size_t n = state_.amp.size();
    k1_.resize(n); k2_.resize(n); k3_.resize(n); k4_.resize(n); tmp_.resize(n); ay_.resize(n);
  }

  double time() const { return t_; }
  const TruncatedState& state() const { return state_; }
  TruncatedState& state() { return state_; }
  long steps_taken() const { return steps_; }
  double dt_max() const { return dt_max_; }

  void advance_to(double t_target) {
    if (t_target < t_) throw ConfigError("cannot propagate backwards in time");
    while (t_target - t_ > 1e-13 * std::max(1.0, std::abs(t_target))) {
      double seg_end = t_target;
      for (double b : breakpoints_)
        if (b > t_ + 1e-12 * std::max(1.0, std::abs(b)) && b < seg_end) {
          seg_end = b;
          break;
        }
      const double span = seg_end - t_;
      const long nsub = std::max(1L, static_cast<long>(std::ceil(span / dt_max_ - 1e-9)));
      const double h = span / static_cast<double>(nsub);
      prepare_factors(h);
      for (long s = 0; s < nsub; ++s) {
        const double a = t_ + static_cast<double>(s) * h;
        const double b = (s + 1 == nsub) ? seg_end : a + h;
        substep(a, b, h);
      }
      t_ = seg_end;
      check_finite();
    }
    t_ = t_target;
  }

private:
  void prepare_factors(double h) {
    if (h == cached_h_) return;
    const auto& d = gen_->diagonal();
    const std::size_t n = state_.amp.size();
    ehalf_.resize(n);
    efull_.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      ehalf_[i] = std::exp(d[i] * (0.5 * h));
      efull_[i] = ehalf_[i] * ehalf_[i];
    }
    cached_h_ = h;
  }

  void substep(double a, double b, double h) {
    auto& y = state_.amp;
    const std::size_t n = y.size();
    const cplx g0 = state_.ground;
    const double mid = 0.5 * (a + b);
    const double env_a = gen_->drive(a), env_m = gen_->drive(mid), env_b = gen_->drive_left(b);
    const double om_a = gen_->omega(a), om_m = gen_->omega(mid), om_b = gen_->omega_left(b);

    gen_->offdiag_rhs(env_a, om_a, g0, y, k1_, ws_);
    for (std::size_t i = 0; i < n; ++i) tmp_[i] = ehalf_[i] * (y[i] + 0.5 * h * k1_[i]);
    gen_->offdiag_rhs(env_m, om_m, g0, tmp_, k2_, ws_);
    for (std::size_t i = 0; i < n; ++i) {
      ay_[i] = ehalf_[i] * y[i];
      tmp_[i] = ay_[i] + 0.5 * h * k2_[i];
    }
    gen_->offdiag_rhs(env_m, om_m, g0, tmp_, k3_, ws_);
    for (std::size_t i = 0; i < n; ++i) tmp_[i] = ehalf_[i] * ay_[i] + h * ehalf_[i] * k3_[i];
    gen_->offdiag_rhs(env_b, om_b, g0, tmp_, k4_, ws_);
    const double h6 = h / 6.0;
    for (std::size_t i = 0; i < n; ++i)
      y[i] = efull_[i] * y[i] + h6 * (efull_[i] * k1_[i] + 2.0 * ehalf_[i] * (k2_[i] + k3_[i]) + k4_[i]);
    ++steps_;
  }

  void check_finite() const {
    const auto& y = state_.amp;
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (!std::isfinite(y[i].real()) || !std::isfinite(y[i].imag())) {
        const auto slot = state_.index->unpack(i);
        throw NumericalError("non-finite amplitude after step " + std::to_string(steps_) + " in block " +
                             block_name(slot.block) + " (flat index " + std::to_string(i) + ", t = " +
                             std::to_string(t_) + ")");
      }
    }
  }

  const Generator* gen_;
  TruncatedState state_;
  double t_;
  double dt_max_;
  std::vector<double> breakpoints_;
  long steps_ = 0;
  double cached_h_ = -1.0;
  std::vector<cplx> ehalf_, efull_;
  std::vector<cplx> k1_, k2_, k3_, k4_, tmp_, ay_;
  Generator::Workspace ws_;
};

// ---------------------------------------------------------------------------
struct StateTrajectory {
  std::vector<double> times;
  std::vector<TruncatedState> states;
  std::vector<double> envelope;  // unit-peak drive, right-continuous
  std::vector<double> control;
};

// Uniform output grid t0, t0 + dt_out, ..., up to t1 (inclusive when t1 lies on it).
inline std::vector<double> output_grid(double t0, double t1, double dt_out) {
  if (!(dt_out > 0) || !(t1 >= t0)) throw ConfigError("invalid output grid");
  const long k = static_cast<long>(std::floor((t1 - t0) / dt_out + 1e-9));
  std::vector<double> g(static_cast<std::size_t>(k) + 1);
  for (long i = 0; i <= k; ++i) g[static_cast<std::size_t>(i)] = t0 + static_cast<double>(i) * dt_out;
  return g;
}

using SampleObserver = std::function<void(double t, const TruncatedState& state)>;

// Streams samples on the output grid to the observer; returns the final state.
inline TruncatedState evolve_observed(const Generator& gen, TruncatedState initial, double t0, double t1,
                                      double dt, double dt_out, const SampleObserver& observer) {
  Propagator p(gen, std::move(initial), t0, dt);
  for (double t : output_grid(t0, t1, dt_out)) {
    p.advance_to(t);
    observer(t, p.state());
  }
  return p.state();
}

// From the ground state; dt <= 0 selects the generator's default.
inline StateTrajectory evolve(const Generator& gen, double t0, double t1, double dt, double dt_out,
                              bool singles_only = false) {
  StateTrajectory traj;
  evolve_observed(gen, zero_state(gen.index_ptr(), singles_only), t0, t1, dt, dt_out,
                  [&](double t, const TruncatedState& s) {
                    traj.times.push_back(t);
                    traj.states.push_back(s);
                    traj.envelope.push_back(gen.drive(t));
                    traj.control.push_back(gen.omega(t));
                  });
  return traj;
}

// Ground-state component of E|state>: s(t) ground + sum_m w_m c_m.
inline cplx output_amplitude(const Generator& gen, const TruncatedState& state, double t) {
  const auto& w = gen.output_weights();
  cplx f = gen.drive(t) * state.ground;
  const int n = gen.index().n_atoms();
  for (int h = 0; h < n; ++h) f += w[h] * state.amp[h];
  return f;
}

// E|state> truncated to <=1 excitation (singles only). Absent doubles are
// treated as zero.
inline TruncatedState apply_field(const Generator& gen, const TruncatedState& state, double t) {
  const auto& idx = gen.index();
  const auto& w = gen.output_weights();
  const double env = gen.drive(t);
  TruncatedState out;
  out.index = state.index;
  out.ground = output_amplitude(gen, state, t);
  out.amp.resize(idx.n_singles());
  for (std::size_t m = 0; m < idx.n_singles(); ++m) out.amp[m] = env * state.amp[m];
  const auto d = state.doubles();
  for (std::size_t k = 0; k < d.size(); ++k) {
    const auto [m, q] = idx.pair_modes(k);
    if (m == q) {
      out.amp[m] += w[m] * d[k];
    } else {
      out.amp[q] += w[m] * d[k];
      out.amp[m] += w[q] * d[k];
    }
  }
  return out;
}

// No-jump evolution of a field-conditioned state from t1 to t2, sourced by
// its ground component.
inline TruncatedState conditional_evolve(const TruncatedState& conditioned, const Generator& gen, double t1,
                                         double t2, double dt = 0.0) {
  if (t2 < t1) throw ConfigError("conditional_evolve needs t2 >= t1");
  Propagator p(gen, conditioned, t1, dt);
  p.advance_to(t2);
  return p.state();
}

}  // namespace rydpulse
