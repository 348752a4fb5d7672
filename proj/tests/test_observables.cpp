#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "rydpulse/observables.hpp"

using namespace rydpulse;

namespace {

struct Rig {
  PhysicalParams p;
  AtomChain chain;
  BlockadeConfig b;
  ControlSchedule sched;
  PulseEnvelope env;
  Occupancy occ;
  Generator gen() const { return Generator(p, chain, b, sched, env, build_index(chain, b, occ)); }
};

Rig rig(int n, double omega, BlockadeConfig b, double duration, double k_p = 0.0,
        Occupancy occ = Occupancy::hard_core, PulseShape shape = PulseShape::square) {
  Rig r;
  r.p = PhysicalParams::with_ratio(0.2, omega);
  r.chain = build_chain(n, 1.0, k_p);
  r.b = b;
  r.env.shape = shape;
  r.env.duration = duration;
  r.env.fwhm = duration / 4;
  r.sched = ControlSchedule::constant(omega, 0.0, duration + 100.0);
  r.occ = occ;
  return r;
}

ObservableTrace synthetic(double dt, std::size_t n, auto f) {
  ObservableTrace tr;
  for (std::size_t k = 0; k < n; ++k) {
    const double t = static_cast<double>(k) * dt;
    const auto [i, pair] = f(t);
    tr.t.push_back(t);
    tr.envelope.push_back(1.0);
    tr.omega.push_back(0.5);
    tr.intensity.push_back(i);
    tr.pair.push_back(pair);
    tr.g2.push_back(g2_ratio(pair, i, tr.floor));
  }
  return tr;
}

}  // namespace

TEST(Observables, ProbePhaseInvariance) {
  const auto pw = PhysicalParams::with_ratio(0.2, 0.5);
  const auto b = BlockadeConfig::power_law_from_db(1.0, optical_depth(5, pw), 1.0, pw);
  auto r0 = rig(5, 0.5, b, 12.0, 0.0), r1 = rig(5, 0.5, b, 12.0, 3.7);
  SimulationOptions o;
  o.dt_out = 0.5;
  const auto a = simulate(r0.gen(), 0.0, 20.0, o).trace, c = simulate(r1.gen(), 0.0, 20.0, o).trace;
  for (std::size_t k = 0; k < a.size(); ++k) {
    EXPECT_NEAR(a.intensity[k], c.intensity[k], 1e-10);
    EXPECT_NEAR(a.pair[k], c.pair[k], 1e-10);
  }
}

TEST(Observables, TwoTimeAtEqualTimesIsEqualTimeG2) {
  const auto pw = PhysicalParams::with_ratio(0.2, 0.5);
  auto r = rig(6, 0.5, BlockadeConfig::power_law_from_db(1.0, optical_depth(6, pw), 1.0, pw), 15.0);
  const auto g = r.gen();
  Propagator pr(g, zero_state(g.index_ptr()), 0.0);
  for (double t : {2.0, 7.5, 15.0, 18.0}) {
    pr.advance_to(t);
    EXPECT_NEAR(two_time_G2(g, pr.state(), t, t), equal_time_G2(g, pr.state(), t), 1e-8);
  }
  EXPECT_THROW(equal_time_G2(g, zero_state(g.index_ptr(), true), 1.0), ConfigError);
}

TEST(Observables, CorrelationGridSymmetricWithTraceDiagonal) {
  auto r = rig(4, 0.5, BlockadeConfig::fully_blockaded(), 10.0);
  const auto g = r.gen();
  SimulationOptions o;
  o.dt_out = 0.5;
  o.keep_conditioned = true;
  const auto sim = simulate(g, 0.0, 15.0, o);
  const auto grid = correlation_grid(g, sim, 2);
  ASSERT_EQ(grid.n(), 16u);
  for (std::size_t i = 0; i < grid.n(); ++i) {
    EXPECT_NEAR(grid.at(i, i), sim.trace.pair[2 * i], 1e-8);
    for (std::size_t j = 0; j < grid.n(); ++j) EXPECT_EQ(grid.at(i, j), grid.at(j, i));
  }
  const auto sub = correlation_grid(g, sim, 1, 0.0, 5.0, 8.0);
  EXPECT_EQ(sub.n(), 7u);
  EXPECT_DOUBLE_EQ(sub.t.front(), 5.0);
  SimulationOptions plain;
  EXPECT_THROW(correlation_grid(g, simulate(g, 0.0, 2.0, plain)), ConfigError);
}

TEST(Observables, NonInteractingBosonsAreCoherent) {
  for (auto shape : {PulseShape::square, PulseShape::gaussian}) {
    auto r = rig(6, 0.5, BlockadeConfig::none(), 20.0, 0.0, Occupancy::bosonic, shape);
    const auto g = r.gen();
    SimulationOptions o;
    o.dt = 0.02;
    o.dt_out = 0.25;
    o.keep_conditioned = true;
    const auto sim = simulate(g, 0.0, 30.0, o);
    for (std::size_t k = 0; k < sim.trace.size(); ++k)
      if (sim.trace.intensity[k] > 1e-2) { EXPECT_NEAR(sim.trace.g2[k], 1.0, 1e-6) << sim.trace.t[k]; }
    const auto grid = correlation_grid(g, sim, 1, 0.02);
    EXPECT_NEAR(windowed_g2(grid, 0.0, 30.0), 1.0, 1e-6);
    EXPECT_NEAR(windowed_g2(grid, 2.0, 5.0, 10.0, 5.0), 1.0, 1e-6);
  }
}

TEST(Observables, WindowedG2Undefined) {
  CorrelationGrid g;
  g.t = {0.0, 1.0, 2.0};
  g.intensity = {0.0, 0.0, 0.0};
  g.g2.assign(9, 0.0);
  EXPECT_THROW(windowed_g2(g, 0.0, 2.0), UndefinedResultError);
  EXPECT_THROW(windowed_g2(g, 0.5, 1.0), ConfigError);
}

TEST(Spectrum, PerAtomProductOracle) {
  auto p = PhysicalParams::with_ratio(0.2, 0.5, 0.1);
  const int n = 6;
  const auto chain = build_chain(n, 1.0, 1.3);
  const auto sched = ControlSchedule::constant(0.5);
  const auto deltas = linspace(-2.0, 2.0, 41);
  const auto sp = transmission_spectrum(p, chain, sched, deltas);
  const double g2 = p.gamma_1d / 2.0;
  for (std::size_t i = 0; i < sp.size(); ++i) {
    const cplx d(0.0, deltas[i]);
    const cplx t1 = 1.0 - g2 / (0.5 - d + 0.25 / (0.1 - d));
    EXPECT_NEAR(sp[i].transmission, std::norm(std::pow(t1, n)), 1e-10) << deltas[i];
  }
}

TEST(Spectrum, NoControlGivesExpMinusD) {
  const auto p = PhysicalParams::with_ratio(0.2, 0.0);
  for (int n : {5, 10, 27}) {
    const auto sp = transmission_spectrum(p, build_chain(n, 1.0, 0.0), ControlSchedule::constant(0.0), {0.0});
    EXPECT_NEAR(sp[0].transmission, std::exp(-optical_depth(n, p)), 1e-12);
  }
  const auto pe = PhysicalParams::with_ratio(0.2, 0.5);
  const auto sp = transmission_spectrum(pe, build_chain(10, 1.0, 0.0), ControlSchedule::constant(0.5), {0.0});
  EXPECT_NEAR(sp[0].transmission, 1.0, 1e-12);
}

TEST(Spectrum, MatchesPropagatedSteadyState) {
  auto p = PhysicalParams::with_ratio(0.2, 0.4, 0.05, 0.3, 0.3);
  const auto chain = build_chain(4, 1.0, 0.0);
  PulseEnvelope env;
  env.duration = 400.0;
  const auto sched = ControlSchedule::constant(0.4, 0.0, 500.0);
  Generator g(p, chain, BlockadeConfig::fully_blockaded(), sched, env,
              build_index(chain, BlockadeConfig::fully_blockaded()));
  Propagator pr(g, zero_state(g.index_ptr(), true), 0.0);
  pr.advance_to(350.0);
  const auto sp = transmission_spectrum(PhysicalParams::with_ratio(0.2, 0.4, 0.05), chain, sched, {0.3});
  EXPECT_NEAR(std::norm(output_amplitude(g, pr.state(), 350.0)), sp[0].transmission, 1e-8);
}

TEST(Spectrum, WindowOfLorentzian) {
  std::vector<SpectrumPoint> sp;
  for (double d : linspace(-3.0, 3.0, 6001)) sp.push_back({d, 0.3 / (1.0 + d * d / 0.25), {}});
  const auto w = eit_window(sp);
  EXPECT_NEAR(w.peak, 0.3, 1e-12);
  EXPECT_NEAR(w.fwhm, 1.0, 1e-4);
}

TEST(Extraction, SteadyStateFlatness) {
  const auto tr = synthetic(0.1, 1001, [](double t) {
    const double i = 0.5 * (1 - std::exp(-t));
    return std::pair{i, 0.2 * i * i};
  });
  const auto ss = measure_steady_state(tr, 0.0, 100.0);
  EXPECT_TRUE(ss.flat);
  EXPECT_NEAR(ss.intensity, 0.5, 1e-9);
  EXPECT_NEAR(ss.g2, 0.2, 1e-9);
  const auto early = measure_steady_state(tr, 0.0, 3.0);
  EXPECT_FALSE(early.flat);
}

TEST(Extraction, TurnOnPermanentCriterion) {
  // relaxes to 0.2 with a decaying ripple; the last excursion above 0.5%
  // decides, not the first crossing
  const auto tr = synthetic(0.01, 6001, [](double t) {
    const double g2 = 0.2 * (1.0 + 0.5 * std::exp(-t / 5.0) * std::cos(3.0 * t));
    return std::pair{1.0, g2};
  });
  const double t0 = turn_on_time(tr, 0.0, 60.0, 0.2);
  EXPECT_GT(t0, 5.0 * std::log(100.0) - 1.2);
  EXPECT_LT(t0, 5.0 * std::log(100.0) + 0.01);
  for (std::size_t k = 0; k < tr.size(); ++k)
    if (tr.t[k] > t0 + 0.01 && tr.t[k] < 59.0) { EXPECT_LT(std::abs(tr.g2[k] - 0.2) / 0.2, 0.005) << tr.t[k]; }
  const auto never = synthetic(0.1, 101, [](double t) { return std::pair{1.0, 0.2 + 0.01 * t}; });
  EXPECT_THROW(turn_on_time(never, 0.0, 10.0, 0.2), ExtractionError);
}

TEST(Extraction, TurnOffTimes) {
  const auto tr = synthetic(0.01, 2001, [](double t) {
    if (t < 10.0) return std::pair{0.8, 0.1};
    const double x = t - 10.0;
    return std::pair{0.8 * std::exp(-x / 2.0), 0.1 * std::exp(-x / 0.5)};
  });
  EXPECT_NEAR(turn_off_intensity_time(tr, 10.0, 0.8), 2.0 * std::log(2.0), 1e-4);
  EXPECT_NEAR(turn_off_pair_time(tr, 10.0), 0.5 * std::log(2.0), 1e-4);
}

TEST(Extraction, EnvelopeFitSynthetic) {
  std::vector<double> t, y1, y2;
  for (double x = 0; x <= 20.0; x += 0.01) {
    t.push_back(x);
    y1.push_back(std::exp(-x) * (1.2 + std::cos(4.0 * x)));
    y2.push_back(std::exp(-2.0 * x));
  }
  EXPECT_NEAR(fit_exponential_envelope(t, y1, 1.0, 15.0), 1.0, 0.01);
  EXPECT_NEAR(fit_exponential_envelope(t, y2, 1.0, 15.0), 2.0, 0.02);
  std::vector<double> flat(t.size(), 1.0);
  EXPECT_THROW(fit_exponential_envelope(t, flat, 1.0, 15.0), ExtractionError);
}

TEST(Extraction, HighDepthFormula) {
  EXPECT_NEAR(g2_ss_high_depth(9.1, 0.5), 4 * 1.25 / (std::numbers::pi * 9.1) * std::exp(-9.1 / 1.25), 1e-15);
}

TEST(Csv, HeaderAndStableFormatting) {
  EXPECT_EQ(csv_num(0.0), "0");
  EXPECT_EQ(csv_num(kNaN), "nan");
  EXPECT_EQ(csv_num(0.1), "0.1");
  EXPECT_EQ(csv_num(1.0 / 3.0), "0.333333333333");
  auto tr = synthetic(1.0, 2, [](double) { return std::pair{0.5, 0.1}; });
  std::ostringstream os;
  write_trace_csv(os, tr, Units{});
  const auto s = os.str();
  EXPECT_EQ(s.substr(0, s.find('\n')),
            "t_gamma [1/Gamma],t_ns [ns],envelope [E_p0],omega_c [Gamma],I_tilde [1],G2_tilde [1],g2 [1]");
  EXPECT_EQ(std::count(s.begin(), s.end(), '\n'), 3);
}

TEST(Trace, G2FloorFlagsUndefined) {
  EXPECT_TRUE(std::isnan(g2_ratio(1e-10, 1e-5, 1e-4)));
  EXPECT_NEAR(g2_ratio(0.02, 0.2, 1e-4), 0.5, 1e-15);
  auto tr = synthetic(0.5, 4, [](double) { return std::pair{0.5, 0.1}; });
  EXPECT_EQ(tr.index_of(1.0), 2u);
  EXPECT_THROW(tr.index_of(0.7), ConfigError);
}
