#pragma once

// Monte Carlo emulation of a Hanbury Brown-Twiss measurement on the output
// pulse and the coincidence estimator with inter-trial normalization.
//
// Photon statistics per trial at leading order in the drive: with output
// flux F(t) = E0^2 I~(t) and pair density G(t1, t2) = E0^4 G2(t1, t2),
//   P2 = 1/2 iint G,   P1 = int F - 2 P2,   P0 = 1 - P1 - P2.
// A one-photon trial draws its time from F(t) - int G(t, t') dt'; a pair
// draws (t1, t2) from G. Every photon is then transmitted along the path,
// routed by the beamsplitter and detected independently. Grid values are
// interpolated (bilinear for G, linear for F), so expected window counts
// equal the trapezoid integrals of the quadrature estimator exactly.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <fmt/format.h>
#include <fmt/ostream.h>

#include "rydpulse/observables.hpp"

namespace rydpulse {

struct EfficiencyBudget {
  double eta_path = 0.46;  // ensemble to beamsplitter; half of it reaches detector 1
  double eta1 = 0.43;
  double eta2 = 0.43;
  double split = 0.5;      // probability a photon is routed to detector 1

  static EfficiencyBudget ideal() { return {1.0, 1.0, 1.0, 0.5}; }

  void validate() const {
    for (double x : {eta_path, eta1, eta2, split})
      if (!(x >= 0.0 && x <= 1.0)) throw ConfigError("efficiencies and splitting ratio must lie in [0, 1]");
  }
  // Probability that an emitted photon clicks detector d (1 or 2).
  double click_probability(int d) const { return eta_path * (d == 1 ? split * eta1 : (1.0 - split) * eta2); }
  double detection_total() const { return click_probability(1) + click_probability(2); }
};

struct DetectionEvent {
  long trial;
  int detector;  // 1 or 2
  double t;      // 1/Gamma, relative to the trial trigger
  bool operator==(const DetectionEvent&) const = default;
};

struct DetectionStream {
  long n_trials = 0;
  double trial_period = 0.0;  // 1/Gamma
  std::uint64_t seed = 0;
  std::vector<DetectionEvent> events;  // sorted by trial
  std::vector<std::string> warnings;
  double mean_emitted = 0.0;  // photons per trial at the ensemble output
};

class UndefinedEstimateError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
namespace detail {

// Piecewise-linear density on a uniform grid: pick an interval by its
// trapezoid weight, then sample the linear profile inside it by rejection.
class LinearSampler {
public:
  LinearSampler() = default;
  LinearSampler(std::vector<double> t, std::vector<double> v) : t_(std::move(t)), v_(std::move(v)) {
    std::vector<double> w(t_.size() > 1 ? t_.size() - 1 : 0);
    for (std::size_t i = 0; i + 1 < t_.size(); ++i) w[i] = 0.5 * (v_[i] + v_[i + 1]) * (t_[i + 1] - t_[i]);
    total_ = 0;
    for (double x : w) total_ += x;
    if (total_ > 0) pick_ = std::discrete_distribution<std::size_t>(w.begin(), w.end());
  }
  double total() const { return total_; }
  template <class Rng>
  double operator()(Rng& rng) {
    const std::size_t i = pick_(rng);
    const double a = v_[i], b = v_[i + 1], m = std::max(a, b);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (;;) {
      const double x = u(rng);
      if (u(rng) * m <= a + (b - a) * x) return t_[i] + x * (t_[i + 1] - t_[i]);
    }
  }

private:
  std::vector<double> t_, v_;
  double total_ = 0;
  std::discrete_distribution<std::size_t> pick_;
};

// Bilinear density over the square grid t x t.
class BilinearSampler {
public:
  BilinearSampler() = default;
  BilinearSampler(const std::vector<double>& t, const std::vector<double>& v) : t_(t), v_(v), n_(t.size()) {
    if (n_ < 2) return;
    std::vector<double> w((n_ - 1) * (n_ - 1));
    total_ = 0;
    for (std::size_t i = 0; i + 1 < n_; ++i)
      for (std::size_t j = 0; j + 1 < n_; ++j) {
        const double c = 0.25 * (at(i, j) + at(i + 1, j) + at(i, j + 1) + at(i + 1, j + 1)) * (t_[i + 1] - t_[i]) *
                         (t_[j + 1] - t_[j]);
        w[i * (n_ - 1) + j] = c;
        total_ += c;
      }
    if (total_ > 0) pick_ = std::discrete_distribution<std::size_t>(w.begin(), w.end());
  }
  double total() const { return total_; }
  template <class Rng>
  std::pair<double, double> operator()(Rng& rng) {
    const std::size_t c = pick_(rng);
    const std::size_t i = c / (n_ - 1), j = c % (n_ - 1);
    const double v00 = at(i, j), v10 = at(i + 1, j), v01 = at(i, j + 1), v11 = at(i + 1, j + 1);
    const double m = std::max({v00, v10, v01, v11});
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (;;) {
      const double x = u(rng), y = u(rng);
      const double f = v00 * (1 - x) * (1 - y) + v10 * x * (1 - y) + v01 * (1 - x) * y + v11 * x * y;
      if (u(rng) * m <= f) return {t_[i] + x * (t_[i + 1] - t_[i]), t_[j] + y * (t_[j + 1] - t_[j])};
    }
  }

private:
  double at(std::size_t i, std::size_t j) const { return v_[i * n_ + j]; }
  std::vector<double> t_, v_;
  std::size_t n_ = 0;
  double total_ = 0;
  std::discrete_distribution<std::size_t> pick_;
};

inline std::uint64_t block_seed(std::uint64_t seed, std::uint64_t block) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(block), static_cast<std::uint32_t>(block >> 32), 0x9e3779b9u};
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

inline constexpr long kTrialBlock = 8192;

// Runs `body(block_rng, first_trial, last_trial, out_events)` over trial
// blocks, optionally on several threads, and concatenates in block order.
template <class Body>
std::vector<DetectionEvent> run_blocks(long n_trials, std::uint64_t seed, int threads, Body body) {
  const long n_blocks = (n_trials + kTrialBlock - 1) / kTrialBlock;
  std::vector<std::vector<DetectionEvent>> parts(static_cast<std::size_t>(n_blocks));
  auto work = [&](long b) {
    std::mt19937_64 rng(block_seed(seed, static_cast<std::uint64_t>(b)));
    body(rng, b * kTrialBlock, std::min(n_trials, (b + 1) * kTrialBlock), parts[static_cast<std::size_t>(b)]);
  };
  threads = std::max(1, threads);
  if (threads == 1 || n_blocks < 2) {
    for (long b = 0; b < n_blocks; ++b) work(b);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < threads; ++w)
      pool.emplace_back([&, w] {
        for (long b = w; b < n_blocks; b += threads) work(b);
      });
    for (auto& th : pool) th.join();
  }
  std::vector<DetectionEvent> all;
  for (auto& p : parts) all.insert(all.end(), p.begin(), p.end());
  return all;
}

template <class Rng>
void detect_photon(Rng& rng, const EfficiencyBudget& b, long trial, double t, std::vector<DetectionEvent>& out) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  if (u(rng) >= b.eta_path) return;
  const int d = u(rng) < b.split ? 1 : 2;
  if (u(rng) < (d == 1 ? b.eta1 : b.eta2)) out.push_back({trial, d, t});
}

}  // namespace detail

// ---------------------------------------------------------------------------
// n_in is the mean input photon number and shape_energy the integral of the
// squared unit-peak envelope; E0^2 = n_in / shape_energy.
inline DetectionStream emulate_trials(const CorrelationGrid& grid, double n_in, double shape_energy,
                                      const EfficiencyBudget& budget, long n_trials, std::uint64_t seed,
                                      int threads = 1) {
  budget.validate();
  if (n_trials < 1) throw ConfigError("n_trials must be >= 1");
  if (!(n_in >= 0) || !(shape_energy > 0)) throw ConfigError("n_in must be >= 0 and shape energy positive");
  const std::size_t n = grid.n();
  if (n < 2) throw ConfigError("correlation grid too short");
  const double e2 = n_in / shape_energy;
  const double h = grid.dt();
  DetectionStream s;
  s.n_trials = n_trials;
  s.trial_period = grid.t.back() - grid.t.front();
  s.seed = seed;

  std::vector<double> pair(n * n), single(n);
  for (std::size_t k = 0; k < n * n; ++k) pair[k] = e2 * e2 * grid.g2[k];
  bool clamped = false;
  for (std::size_t i = 0; i < n; ++i) {
    double row = 0;
    for (std::size_t j = 0; j < n; ++j) row += ((j == 0 || j + 1 == n) ? 0.5 * h : h) * pair[i * n + j];
    double v = e2 * grid.intensity[i] - row;
    if (v < 0) {
      clamped = clamped || v < -1e-9 * e2 * std::max(grid.intensity[i], 1e-300);
      v = 0;
    }
    single[i] = v;
  }
  if (clamped) s.warnings.push_back("one-photon density clamped at zero (pair density exceeds the flux)");
  detail::LinearSampler ones(grid.t, single);
  detail::BilinearSampler twos(grid.t, pair);
  const double p2 = 0.5 * twos.total();
  const double p1 = ones.total();
  if (p1 + p2 > 1.0 + 1e-12)
    throw NumericalError(fmt::format("photon-number probabilities exceed 1 (P1 = {:.4g}, P2 = {:.4g})", p1, p2));
  s.mean_emitted = p1 + 2 * p2;
  if (s.mean_emitted * budget.detection_total() > 0.5)
    s.warnings.push_back(fmt::format("mean detected photons per trial {:.3g} is not << 1",
                                     s.mean_emitted * budget.detection_total()));

  s.events = detail::run_blocks(n_trials, seed, threads,
                                [&](std::mt19937_64& rng, long a, long b, std::vector<DetectionEvent>& out) {
                                  auto ones_l = ones;
                                  auto twos_l = twos;
                                  std::uniform_real_distribution<double> u(0.0, 1.0);
                                  for (long tr = a; tr < b; ++tr) {
                                    const double x = u(rng);
                                    if (x < p2) {
                                      const auto [t1, t2] = twos_l(rng);
                                      detail::detect_photon(rng, budget, tr, t1, out);
                                      detail::detect_photon(rng, budget, tr, t2, out);
                                    } else if (x < p2 + p1) {
                                      detail::detect_photon(rng, budget, tr, ones_l(rng), out);
                                    }
                                  }
                                });
  return s;
}

// Coherent input: Poisson photon number with i.i.d. arrival times drawn from
// the flux profile.
inline DetectionStream emulate_coherent_trials(const std::vector<double>& t, const std::vector<double>& flux,
                                               const EfficiencyBudget& budget, long n_trials, std::uint64_t seed,
                                               int threads = 1) {
  budget.validate();
  if (n_trials < 1) throw ConfigError("n_trials must be >= 1");
  DetectionStream s;
  s.n_trials = n_trials;
  s.trial_period = t.back() - t.front();
  s.seed = seed;
  detail::LinearSampler times(t, flux);
  s.mean_emitted = times.total();
  s.events = detail::run_blocks(n_trials, seed, threads,
                                [&](std::mt19937_64& rng, long a, long b, std::vector<DetectionEvent>& out) {
                                  auto times_l = times;
                                  std::poisson_distribution<int> pn(s.mean_emitted);
                                  for (long tr = a; tr < b; ++tr) {
                                    const int k = s.mean_emitted > 0 ? pn(rng) : 0;
                                    for (int q = 0; q < k; ++q) detail::detect_photon(rng, budget, tr, times_l(rng), out);
                                  }
                                });
  return s;
}

// ---------------------------------------------------------------------------
struct Window {
  double t;
  double width;
  bool contains(double x) const { return x >= t && x <= t + width; }
};

struct G2Estimate {
  double value = kNaN;
  double stderr_ = kNaN;
  long coincidences = 0;      // same-trial detector-1 x detector-2 click pairs
  double baseline = kNaN;     // mean offset-trial click pairs per trial pair
  long clicks1 = 0, clicks2 = 0;
};

// Same-trial coincidences between detector 1 in w1 and detector 2 in w2,
// normalized by the mean coincidence rate between trial i and trial i + k,
// k in [k_min, k_max]. Standard error from counting statistics of the
// coincidences and of the two detectors' window counts.
inline G2Estimate estimate_g2(const DetectionStream& s, const Window& w1, const Window& w2, int k_min = 5,
                              int k_max = 20) {
  if (s.n_trials <= k_max) throw ConfigError(fmt::format("need more than {} trials", k_max));
  if (k_min < 1 || k_max < k_min) throw ConfigError("invalid baseline offsets");
  std::vector<int> n1(static_cast<std::size_t>(s.n_trials), 0), n2(static_cast<std::size_t>(s.n_trials), 0);
  for (const auto& e : s.events) {
    if (e.trial < 0 || e.trial >= s.n_trials) throw ConfigError("event trial index out of range");
    if (e.detector == 1 && w1.contains(e.t)) ++n1[static_cast<std::size_t>(e.trial)];
    if (e.detector == 2 && w2.contains(e.t)) ++n2[static_cast<std::size_t>(e.trial)];
  }
  G2Estimate r;
  const std::size_t n = n1.size();
  for (std::size_t i = 0; i < n; ++i) {
    r.coincidences += static_cast<long>(n1[i]) * n2[i];
    r.clicks1 += n1[i];
    r.clicks2 += n2[i];
  }
  double base = 0;
  for (int k = k_min; k <= k_max; ++k) {
    long c = 0;
    for (std::size_t i = 0; i + static_cast<std::size_t>(k) < n; ++i) c += static_cast<long>(n1[i]) * n2[i + static_cast<std::size_t>(k)];
    base += static_cast<double>(c) / static_cast<double>(n - static_cast<std::size_t>(k));
  }
  r.baseline = base / static_cast<double>(k_max - k_min + 1);
  if (!(r.baseline > 0)) throw UndefinedEstimateError("no offset-trial coincidences: g2 estimate undefined");
  const double nt = static_cast<double>(n);
  const double c0 = static_cast<double>(r.coincidences) / nt;
  r.value = c0 / r.baseline;
  const double p1 = static_cast<double>(r.clicks1) / nt, p2 = static_cast<double>(r.clicks2) / nt;
  const double cc = std::max<double>(static_cast<double>(r.coincidences), 1.0);
  const double rel_c = (1.0 - std::min(1.0, cc / nt)) / cc;
  const double rel_b = (1.0 - std::min(1.0, p1)) / std::max<double>(static_cast<double>(r.clicks1), 1.0) +
                       (1.0 - std::min(1.0, p2)) / std::max<double>(static_cast<double>(r.clicks2), 1.0);
  const double shown = r.coincidences > 0 ? r.value : (1.0 / nt) / r.baseline;
  r.stderr_ = shown * std::sqrt(rel_c + rel_b);
  return r;
}

// ---------------------------------------------------------------------------
// Photons per trial at the ensemble output inside the window.
inline double generation_probability(const CorrelationGrid& grid, const Window& w, double n_in, double shape_energy) {
  if (!(shape_energy > 0)) throw ConfigError("shape energy must be positive");
  return n_in * window_intensity(grid, w.t, w.width) / shape_energy;
}

inline double generation_probability(const ObservableTrace& tr, const Window& w, double n_in, double shape_energy) {
  if (!(shape_energy > 0)) throw ConfigError("shape energy must be positive");
  const std::size_t i0 = tr.index_of(w.t), i1 = tr.index_of(w.t + w.width);
  double s = 0;
  for (std::size_t i = i0; i < i1; ++i) s += 0.5 * (tr.intensity[i] + tr.intensity[i + 1]) * (tr.t[i + 1] - tr.t[i]);
  return n_in * s / shape_energy;
}

struct ProbabilityEstimate {
  double value;
  double stderr_;
};

// Detected clicks per trial in the window, divided by the detection budget.
inline ProbabilityEstimate generation_probability(const DetectionStream& s, const Window& w,
                                                  const EfficiencyBudget& b) {
  b.validate();
  if (s.n_trials < 1) throw ConfigError("empty detection stream");
  long clicks = 0;
  for (const auto& e : s.events)
    if (w.contains(e.t)) ++clicks;
  const double eta = b.detection_total();
  if (!(eta > 0)) throw ConfigError("detection budget is zero");
  const double nt = static_cast<double>(s.n_trials);
  return {static_cast<double>(clicks) / nt / eta, std::sqrt(std::max<double>(static_cast<double>(clicks), 1.0)) / nt / eta};
}

// ---------------------------------------------------------------------------
struct DlczResult {
  double g2;
  double p_gen;
  std::string warning;
};

inline DlczResult dlcz_compare(double p, double eta_d, double eta_r) {
  if (!(p >= 0 && p <= 1)) throw ConfigError("pair probability must lie in [0, 1]");
  if (!(eta_d >= 0 && eta_d <= 1) || !(eta_r >= 0 && eta_r <= 1)) throw ConfigError("efficiencies must lie in [0, 1]");
  DlczResult r{4.0 * p, p * eta_d * eta_r, {}};
  if (p > 0.1) r.warning = fmt::format("pair probability {} is not << 1", p);
  return r;
}

// ---------------------------------------------------------------------------
// Timestamp file:
//   # rydpulse-timestamps 1
//   # n_trials <N> trial_period_ns <P> seed <S>
//   # trial_index detector_id time_ns
//   <trial> <1|2> <time_ns>
inline void write_timestamps(std::ostream& os, const DetectionStream& s, const Units& u) {
  os << "# rydpulse-timestamps 1\n";
  fmt::print(os, "# n_trials {} trial_period_ns {} seed {}\n", s.n_trials, csv_num(u.time_to_ns(s.trial_period)), s.seed);
  os << "# trial_index detector_id time_ns\n";
  for (const auto& e : s.events) fmt::print(os, "{} {} {:.6f}\n", e.trial, e.detector, u.time_to_ns(e.t));
}

inline DetectionStream read_timestamps(std::istream& is, const Units& u) {
  DetectionStream s;
  std::string line;
  bool have_header = false;
  long lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    if (line[0] == '#') {
      std::string hash, key;
      ls >> hash >> key;
      if (key == "n_trials") {
        double period_ns = 0;
        std::string k2, k3;
        if (!(ls >> s.n_trials >> k2 >> period_ns >> k3 >> s.seed) || k2 != "trial_period_ns" || k3 != "seed")
          throw ConfigError(fmt::format("malformed timestamp header at line {}", lineno));
        s.trial_period = u.time_from_ns(period_ns);
        have_header = true;
      }
      continue;
    }
    if (!have_header) throw ConfigError("timestamp file lacks the n_trials header");
    DetectionEvent e{};
    double t_ns = 0;
    if (!(ls >> e.trial >> e.detector >> t_ns) || (e.detector != 1 && e.detector != 2) || e.trial < 0 ||
        e.trial >= s.n_trials)
      throw ConfigError(fmt::format("malformed timestamp line {}: {}", lineno, line));
    e.t = u.time_from_ns(t_ns);
    s.events.push_back(e);
  }
  if (!have_header) throw ConfigError("timestamp file lacks the n_trials header");
  std::stable_sort(s.events.begin(), s.events.end(),
                   [](const DetectionEvent& a, const DetectionEvent& b) { return a.trial < b.trial; });
  return s;
}

}  // namespace rydpulse
