#include <gtest/gtest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "rydpulse/scenarios.hpp"

using namespace rydpulse;
namespace fs = std::filesystem;

namespace {

ScenarioConfig parse(const std::string& text, ScenarioKind kind = ScenarioKind::propagate) {
  return parse_config_string(text, kind);
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

struct CliResult {
  int code;
  std::string out;
};

CliResult cli(const std::string& args) {
  const char* exe = std::getenv("RYDPULSE_CLI");
  if (!exe) return {-1, ""};
  const std::string cmd = std::string(exe) + " " + args + " 2>/dev/null";
  FILE* p = popen(cmd.c_str(), "r");
  std::string out;
  char buf[512];
  while (p && fgets(buf, sizeof buf, p)) out += buf;
  const int st = p ? pclose(p) : -1;
  return {WIFEXITED(st) ? WEXITSTATUS(st) : -1, out};
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("rydpulse_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST(Config, UnitsAreConverted) {
  const auto c = parse("[model]\nomega_c = 3.2 MHz\ngamma_r = 0.8MHz\n[pulse]\nduration = 1 us\n"
                       "[integration]\ndt_out = 2 ns\n");
  const Units u;
  EXPECT_DOUBLE_EQ(c.omega_c, 3.2 / 6.0);
  EXPECT_DOUBLE_EQ(c.gamma_r, 0.8 / 6.0);
  EXPECT_NEAR(c.duration, u.time_from_ns(1000.0), 1e-12);
  EXPECT_NEAR(c.dt_out, u.time_from_ns(2.0), 1e-12);
  const auto g = parse("[model]\ngamma_mhz = 5\nomega_c = 2.5 MHz\n");
  EXPECT_DOUBLE_EQ(g.omega_c, 0.5);
}

TEST(Config, MalformedInputsAreErrors) {
  EXPECT_THROW(parse("[model]\nfrobnicate = 1\n"), ConfigError);
  EXPECT_THROW(parse("[nosuch]\nx = 1\n"), ConfigError);
  EXPECT_THROW(parse("[model]\nomega_c = fast\n"), ConfigError);
  EXPECT_THROW(parse("[model]\nomega_c = 3 ns\n"), ConfigError);
  EXPECT_THROW(parse("[pulse]\nshape = round\n"), ConfigError);
  EXPECT_THROW(parse("[scan]\npairs = maybe\n"), ConfigError);
  EXPECT_THROW(parse("[model]\nn_atoms = 2.5\n"), ConfigError);
  EXPECT_THROW(parse("[model\n"), ConfigError);
}

TEST(Config, ValidationRules) {
  auto c = default_config(ScenarioKind::turnon_scan);
  EXPECT_NO_THROW(validate(c));
  c.d_list = {3.6};
  EXPECT_THROW(validate(c), ConfigError);
  c = default_config(ScenarioKind::window_scan);
  c.window_widths = {1.0};
  EXPECT_THROW(validate(c), ConfigError);
  c = default_config(ScenarioKind::propagate);
  c.occupancy = Occupancy::bosonic;
  EXPECT_THROW(validate(c), ConfigError);
  c.blockade = BlockadeMode::none;
  EXPECT_NO_THROW(validate(c));
  c.dt_out = 0;
  EXPECT_THROW(validate(c), ConfigError);
  c = default_config(ScenarioKind::storage);
  EXPECT_NO_THROW(validate(c));
  c.control = "constant";
  EXPECT_THROW(validate(c), ConfigError);
}

TEST(Config, KindMismatchIsRejected) {
  const auto p = scratch("kind");
  fs::create_directories(p);
  std::ofstream(p / "c.ini") << "[scenario]\nkind = dlcz\n";
  EXPECT_THROW(load_config((p / "c.ini").string(), ScenarioKind::spectrum), ConfigError);
  EXPECT_NO_THROW(load_config((p / "c.ini").string(), ScenarioKind::dlcz));
  fs::remove_all(p);
}

TEST(Config, ManifestRoundTripIsExact) {
  for (auto kind : {ScenarioKind::experiment_replica, ScenarioKind::turnoff_scan, ScenarioKind::storage,
                    ScenarioKind::emulate_hbt}) {
    auto c = default_config(kind);
    c.seed = 12345678901234ull;
    c.omega_c = 1.0 / 3.0;
    const auto text = write_config_ini(c);
    const auto back = parse_config_string(text + "\n[manifest]\nwall_time_s = 1\n", kind);
    EXPECT_EQ(write_config_ini(back), text);
    EXPECT_EQ(back.omega_c, c.omega_c);
    EXPECT_EQ(back.seed, c.seed);
  }
}

TEST(Scenarios, ParallelForKeepsIndexOrder) {
  std::vector<int> out(50, -1);
  detail::parallel_for(out.size(), 4, [&](std::size_t i) { out[i] = static_cast<int>(i * i); });
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_EQ(out[i], static_cast<int>(i * i));
}

TEST(Scenarios, DlczBundle) {
  auto c = default_config(ScenarioKind::dlcz);
  c.p = 0.025;
  const auto b = run_scenario(c);
  EXPECT_EQ(b.scalar("g2"), 0.1);
  EXPECT_EQ(b.scalar("p_gen"), 0.025);
  EXPECT_NE(b.file("dlcz.csv").find("g2,0.1,nan,1"), std::string::npos);
}

TEST(Scenarios, TurnOnPointAndDoubledControl) {
  auto c = default_config(ScenarioKind::turnon_scan);
  const auto a = run_point(c, 1.8, 0.5, PointMode::turn_on);
  EXPECT_TRUE(a.ok()) << a.status();
  EXPECT_TRUE(std::isfinite(a.tau_0));
  EXPECT_GT(a.tau_0, 0.0);
  const auto b = run_point(c, 1.8, 0.25, PointMode::turn_on);
  EXPECT_NEAR(b.tau_eit / a.tau_eit, 4.0, 1e-12);
}

TEST(Scenarios, FailedPointIsFlaggedNotDropped) {
  auto c = default_config(ScenarioKind::turnon_scan);
  c.d_list = {1.8, 3.6};
  c.omega_list = {0.05, 0.5};
  c.min_duration = 1.0;
  c.initial_factor = 0.2;
  c.cap_factor = 0.2;
  std::vector<PointResult> pts;
  const auto b = run_scan_bundle(c, PointMode::turn_on, &pts);
  ASSERT_EQ(pts.size(), 4u);
  EXPECT_FALSE(pts[0].ok());
  const auto& csv = b.file("turnon_scan.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
  EXPECT_NE(csv.find("not equilibrated"), std::string::npos);
  EXPECT_GE(b.scalar("failed_points"), 1.0);
}

TEST(Scenarios, SpectrumBundleHasUnitHeaders) {
  auto c = default_config(ScenarioKind::spectrum);
  c.delta_points = 201;
  const auto b = run_scenario(c);
  const auto& s = b.file("spectrum.csv");
  EXPECT_EQ(s.substr(0, s.find('\n')), "delta [Gamma],delta_mhz [MHz],transmission [1],amp_re [1],amp_im [1]");
  EXPECT_EQ(std::count(s.begin(), s.end(), '\n'), 202);
  EXPECT_GT(b.scalar("peak_transmission"), 0.0);
}

TEST(Scenarios, StorageWithoutLossesPreservesCoherence) {
  auto c = default_config(ScenarioKind::storage);
  c.gamma_r = 0.0;
  c.blockade = BlockadeMode::none;
  c.occupancy = Occupancy::bosonic;
  c.optical_depth = 3.6;
  c.dt = 0.02;
  const auto b = run_scenario(c);
  EXPECT_NEAR(b.scalar("retrieval_g2"), 1.0, 1e-6);
  EXPECT_NEAR(b.scalar("r_population_at_retrieval"), b.scalar("r_population_at_off"), 1e-9);
}

TEST(Scenarios, StorageDephasingOracle) {
  auto c = default_config(ScenarioKind::storage);
  c.optical_depth = 3.6;
  c.gamma_r = 0.02;
  const auto a = run_scenario(c);
  c.gamma_r = 0.04;
  const auto b = run_scenario(c);
  const double ratio_a = a.scalar("r_population_at_retrieval") / a.scalar("r_population_at_off");
  EXPECT_NEAR(ratio_a, std::exp(-2 * 0.02 * c.t_store), 1e-6);
  EXPECT_LT(b.scalar("retrieval_efficiency"), a.scalar("retrieval_efficiency"));
}

TEST(Cli, DlczPrintsQuotedValues) {
  const auto r = cli("dlcz --p 0.025");
  if (r.code == -1) GTEST_SKIP() << "RYDPULSE_CLI not set";
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("g2 = 0.1\n"), std::string::npos);
  EXPECT_NE(r.out.find("p_gen = 0.025\n"), std::string::npos);
}

TEST(Cli, ExitCodesAndNoPartialOutput) {
  if (!std::getenv("RYDPULSE_CLI")) GTEST_SKIP() << "RYDPULSE_CLI not set";
  EXPECT_EQ(cli("").code, 2);
  EXPECT_EQ(cli("dlcz --frobnicate 3").code, 2);
  EXPECT_EQ(cli("nosuch").code, 2);
  const auto dir = scratch("cli");
  fs::create_directories(dir);
  std::ofstream(dir / "bad.ini") << "[model]\nomega_c = quick\n";
  const auto out = dir / "out";
  EXPECT_EQ(cli("spectrum --config " + (dir / "bad.ini").string() + " --out " + out.string()).code, 3);
  EXPECT_FALSE(fs::exists(out));
  EXPECT_EQ(cli("spectrum --config " + (dir / "missing.ini").string()).code, 3);
  EXPECT_EQ(cli("dlcz --p 2").code, 3);
  std::ofstream(dir / "afile") << "x";
  EXPECT_EQ(cli("dlcz --out " + (dir / "afile" / "sub").string()).code, 4);
  fs::remove_all(dir);
}

TEST(Cli, ReplicaManifestRerunIsByteIdentical) {
  if (!std::getenv("RYDPULSE_CLI")) GTEST_SKIP() << "RYDPULSE_CLI not set";
  const auto dir = scratch("replica");
  ASSERT_EQ(cli("replica --out " + (dir / "a").string()).code, 0);
  for (const char* f : {"spectrum.csv", "pulse.csv", "g2.csv", "manifest.ini"}) EXPECT_TRUE(fs::exists(dir / "a" / f)) << f;
  const auto g2 = slurp(dir / "a" / "g2.csv");
  EXPECT_EQ(g2.substr(0, g2.find('\n')),
            "t_gamma [1/Gamma],t_ns [ns],envelope [E_p0],omega_c [Gamma],I_tilde [1],G2_tilde [1],g2 [1]");
  ASSERT_EQ(cli("replica --config " + (dir / "a" / "manifest.ini").string() + " --out " + (dir / "b").string()).code, 0);
  for (const auto& e : fs::directory_iterator(dir / "a")) {
    const auto name = e.path().filename().string();
    if (name == "manifest.ini") continue;
    EXPECT_EQ(slurp(e.path()), slurp(dir / "b" / name)) << name;
  }
  fs::remove_all(dir);
}
