#include <gtest/gtest.h>

#include <cmath>

#include "rydpulse/dynamics.hpp"

using namespace rydpulse;

namespace {

PulseEnvelope square(double t0, double duration, double rise = 0.0) {
  PulseEnvelope p;
  p.shape = PulseShape::square;
  p.t_start = t0;
  p.duration = duration;
  p.rise_time = rise;
  return p;
}

PulseEnvelope gaussian(double t0, double duration, double fwhm) {
  PulseEnvelope p;
  p.shape = PulseShape::gaussian;
  p.t_start = t0;
  p.duration = duration;
  p.fwhm = fwhm;
  return p;
}

Generator make_gen(int n, double omega, BlockadeConfig b, PulseEnvelope env, double delta = 0.0,
                   Occupancy occ = Occupancy::hard_core, double k_p = 0.0, double drive_scale = 1.0) {
  auto p = PhysicalParams::with_ratio(0.2, omega, 0.0, delta, delta);
  auto chain = build_chain(n, 1.0, k_p);
  auto sched = ControlSchedule::constant(omega, 0.0, env.t_end() + 100.0);
  return Generator(p, chain, b, sched, env, build_index(chain, b, occ), drive_scale);
}

cplx f1_at(const Generator& g, double t) {
  Propagator pr(g, zero_state(g.index_ptr(), true), 0.0);
  pr.advance_to(t);
  return output_amplitude(g, pr.state(), t);
}

}  // namespace

TEST(Dynamics, IsolatedExcitedAtomDecaysAtGamma) {
  auto g = make_gen(1, 0.0, BlockadeConfig::fully_blockaded(), square(1000.0, 1.0));
  auto s = zero_state(g.index_ptr(), true);
  s.ground = 0.0;
  s.amp[0] = 1.0;
  Propagator pr(g, s, 0.0);
  for (double t : {0.5, 1.0, 3.0, 7.0}) {
    pr.advance_to(t);
    EXPECT_NEAR(std::norm(pr.state().amp[0]), std::exp(-t), 1e-10);
  }
}

TEST(Dynamics, SingleAtomTransmissionOracle) {
  for (double delta = -5.0; delta <= 5.0 + 1e-9; delta += 0.5) {
    auto g = make_gen(1, 0.0, BlockadeConfig::fully_blockaded(), square(0.0, 200.0), delta);
    const cplx t_num = f1_at(g, 80.0);
    const double g2 = (1.0 / 6.0) / 2.0;
    const cplx t_ref = 1.0 - g2 / cplx(0.5, -delta);
    EXPECT_NEAR(std::abs(t_num - t_ref), 0.0, 1e-9) << "delta " << delta;
  }
}

TEST(Dynamics, ResonantTransmissionIsExpMinusD) {
  for (int n : {5, 10, 25}) {
    auto g = make_gen(n, 0.0, BlockadeConfig::fully_blockaded(), square(0.0, 400.0));
    const double d = optical_depth(n, g.params());
    EXPECT_NEAR(std::norm(f1_at(g, 150.0)), std::exp(-d), 1e-6 * std::max(1.0, std::exp(-d)) + 1e-12);
  }
}

TEST(Dynamics, SingleAtomEitDarkState) {
  const double omega = 0.5;
  auto g = make_gen(1, omega, BlockadeConfig::fully_blockaded(), square(0.0, 400.0));
  Propagator pr(g, zero_state(g.index_ptr(), true), 0.0);
  pr.advance_to(300.0);
  const double gc = g.params().coupling();
  EXPECT_NEAR(std::abs(pr.state().amp[0]), 0.0, 1e-8);
  EXPECT_NEAR(std::abs(pr.state().amp[1] - cplx(-gc / omega, 0.0)), 0.0, 1e-8);
  EXPECT_NEAR(std::abs(output_amplitude(g, pr.state(), 300.0) - 1.0), 0.0, 1e-8);
}

TEST(Dynamics, ZeroEnvelopeGivesZeroTrajectory) {
  auto g = make_gen(4, 0.5, BlockadeConfig::fully_blockaded(), square(0.0, 5.0), 0.0, Occupancy::hard_core,
                    0.0, 0.0);
  auto tr = evolve(g, 0.0, 10.0, 0.0, 0.5);
  ASSERT_EQ(tr.times.size(), tr.states.size());
  for (const auto& s : tr.states)
    for (const auto& a : s.amp) EXPECT_EQ(a, cplx{});
}

TEST(Dynamics, LinearityInDriveScale) {
  const double alpha = 0.37;
  auto b = BlockadeConfig::power_law_from_db(1.0, 3.6, 1.0, PhysicalParams::with_ratio(0.2, 0.5));
  auto g1 = make_gen(6, 0.5, b, square(0.0, 8.0, 0.5));
  auto ga = make_gen(6, 0.5, b, square(0.0, 8.0, 0.5), 0.0, Occupancy::hard_core, 0.0, alpha);
  Propagator p1(g1, zero_state(g1.index_ptr()), 0.0), pa(ga, zero_state(ga.index_ptr()), 0.0);
  p1.advance_to(11.0);
  pa.advance_to(11.0);
  const auto& idx = g1.index();
  for (std::size_t k = 0; k < idx.dim(); ++k) {
    const double scale = k < idx.n_singles() ? alpha : alpha * alpha;
    EXPECT_NEAR(std::abs(pa.state().amp[k] - scale * p1.state().amp[k]), 0.0, 1e-12);
  }
}

TEST(Dynamics, DriveOffIsDissipative) {
  auto b = BlockadeConfig::power_law_from_db(1.0, 3.6, 1.0, PhysicalParams::with_ratio(0.2, 0.5));
  auto g = make_gen(10, 0.5, b, square(0.0, 10.0));
  double last = -1.0;
  evolve_observed(g, zero_state(g.index_ptr()), 0.0, 40.0, 0.0, 0.25, [&](double t, const TruncatedState& s) {
    if (t < 10.0) return;
    const double nrm = s.excited_norm2();
    if (last >= 0) {
      EXPECT_LE(nrm, last * (1.0 + 1e-12));
    }
    last = nrm;
  });
  EXPECT_GT(last, 0.0);
}

TEST(Dynamics, FourthOrderConvergence) {
  auto b = BlockadeConfig::power_law_from_db(1.0, 3.6, 1.0, PhysicalParams::with_ratio(0.2, 0.5));
  auto g = make_gen(6, 0.5, b, gaussian(0.0, 12.0, 3.0));
  auto run = [&](double dt) {
    Propagator p(g, zero_state(g.index_ptr()), 0.0, dt);
    p.advance_to(12.0);
    return p.state().amp;
  };
  const auto ref = run(0.005);
  auto err = [&](double dt) {
    const auto a = run(dt);
    double e = 0;
    for (std::size_t i = 0; i < a.size(); ++i) e = std::max(e, std::abs(a[i] - ref[i]));
    return e;
  };
  const double e1 = err(0.1), e2 = err(0.05);
  const double ratio = e1 / e2;
  EXPECT_GT(ratio, 11.0);
  EXPECT_LT(ratio, 22.0);
}

TEST(Dynamics, NonFiniteDriveIsReported) {
  auto g = make_gen(3, 0.5, BlockadeConfig::fully_blockaded(), square(0.0, 5.0), 0.0, Occupancy::hard_core,
                    0.0, std::nan(""));
  Propagator p(g, zero_state(g.index_ptr()), 0.0);
  try {
    p.advance_to(1.0);
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("block e"), std::string::npos);
  }
}

TEST(Dynamics, ApplyFieldOnGroundStateIsInputField) {
  auto g = make_gen(4, 0.5, BlockadeConfig::fully_blockaded(), square(0.0, 5.0));
  const auto c = apply_field(g, zero_state(g.index_ptr()), 2.0);
  EXPECT_EQ(c.ground, cplx(1.0));
  for (const auto& a : c.amp) EXPECT_EQ(a, cplx{});
}

TEST(Dynamics, ApplyFieldLowersExcitationByOne) {
  auto g = make_gen(3, 0.5, BlockadeConfig::fully_blockaded(), square(0.0, 5.0));
  auto s = zero_state(g.index_ptr());
  s.ground = 0.0;
  s.at({Block::ee, 0, 2}) = 1.0;
  s.at({Block::er, 1, 0}) = cplx(0, 1);
  const auto c = apply_field(g, s, 10.0);
  EXPECT_EQ(c.ground, cplx{});
  EXPECT_EQ(c.amp.size(), g.index().n_singles());
  const auto& w = g.output_weights();
  EXPECT_NEAR(std::abs(c.amp[2] - w[0]), 0.0, 1e-15);
  EXPECT_NEAR(std::abs(c.amp[0] - w[2]), 0.0, 1e-15);
  EXPECT_NEAR(std::abs(c.amp[3 + 0] - cplx(0, 1) * w[1]), 0.0, 1e-15);
}

TEST(Dynamics, ConditionalEvolveZeroIntervalIsIdentity) {
  auto g = make_gen(3, 0.5, BlockadeConfig::fully_blockaded(), square(0.0, 5.0));
  Propagator p(g, zero_state(g.index_ptr()), 0.0);
  p.advance_to(3.0);
  const auto c = apply_field(g, p.state(), 3.0);
  const auto c2 = conditional_evolve(c, g, 3.0, 3.0);
  EXPECT_EQ(c.amp, c2.amp);
  EXPECT_EQ(c.ground, c2.ground);
  EXPECT_THROW(conditional_evolve(c, g, 3.0, 2.0), ConfigError);
}

TEST(Dynamics, BlockadedSteadyIntensityNearOne) {
  auto p = PhysicalParams::with_ratio(0.2, 0.5);
  const int n = atoms_for_optical_depth(3.6, p);
  auto g = make_gen(n, 0.5, BlockadeConfig::fully_blockaded(), square(0.0, 200.0));
  EXPECT_NEAR(std::norm(f1_at(g, 150.0)), 1.0, 1e-6);
}

TEST(Dynamics, BreakpointsSplitSubsteps) {
  // A step boundary landing exactly on the shutoff gives the exact jump.
  auto g = make_gen(1, 0.0, BlockadeConfig::fully_blockaded(), square(0.0, 3.3));
  Propagator p(g, zero_state(g.index_ptr(), true), 0.0, 0.3);
  p.advance_to(3.3);
  const cplx before = p.state().amp[0];
  EXPECT_NEAR(std::abs(output_amplitude(g, p.state(), 3.3) - g.output_weights()[0] * before), 0.0, 1e-15);
  const double gc = g.params().coupling();
  const cplx exact = cplx(0, -gc) / 0.5 * (1.0 - std::exp(-0.5 * 3.3));
  EXPECT_NEAR(std::abs(before - exact), 0.0, 1e-6);
}
