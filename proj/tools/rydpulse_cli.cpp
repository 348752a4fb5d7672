// rydpulse: scenario runner front end.
//
// Exit codes: 0 success, 2 usage error, 3 invalid configuration,
// 4 output not writable, 5 numerical or runtime failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>

#include <CLI11.hpp>

#include "rydpulse/scenarios.hpp"

namespace fs = std::filesystem;
using namespace rydpulse;

namespace {

enum Exit { kOk = 0, kUsage = 2, kConfig = 3, kOutput = 4, kRuntime = 5 };

struct OutputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Overrides {
  std::optional<std::string> d, omega_c, shape, n_in, p, eta_d, eta_r, duration, gamma_r, blockade, n_trials, t_end,
      dt_out;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
};

void set_field(ScenarioConfig& c, const std::string& section, const std::string& key, const std::string& value) {
  for (const auto& f : config_fields())
    if (f.section == section && f.key == key) {
      f.set(c, value, c.units());
      return;
    }
  throw ConfigError("internal: no field " + section + "." + key);
}

void apply_overrides(ScenarioConfig& c, const Overrides& o) {
  const bool scan = c.kind == ScenarioKind::turnon_scan || c.kind == ScenarioKind::turnoff_scan;
  if (o.d) {
    if (scan) {
      set_field(c, "scan", "d_list", *o.d);
    } else {
      set_field(c, "model", "optical_depth", *o.d);
      c.n_atoms = 0;
    }
  }
  if (o.omega_c) set_field(c, scan ? "scan" : "model", scan ? "omega_c_list" : "omega_c", *o.omega_c);
  if (o.shape) set_field(c, "pulse", "shape", *o.shape);
  if (o.n_in) set_field(c, "pulse", "n_in", *o.n_in);
  if (o.duration) set_field(c, "pulse", "duration", *o.duration);
  if (o.gamma_r) set_field(c, "model", "gamma_r", *o.gamma_r);
  if (o.blockade) set_field(c, "blockade", "mode", *o.blockade);
  if (o.t_end) set_field(c, "integration", "t_end", *o.t_end);
  if (o.dt_out) set_field(c, "integration", "dt_out", *o.dt_out);
  if (o.n_trials) set_field(c, "hbt", "n_trials", *o.n_trials);
  if (o.p) set_field(c, "dlcz", "p", *o.p);
  if (o.eta_d) set_field(c, "dlcz", "eta_d", *o.eta_d);
  if (o.eta_r) set_field(c, "dlcz", "eta_r", *o.eta_r);
  if (o.seed) c.seed = *o.seed;
  if (o.threads) c.threads = *o.threads;
}

void ensure_writable(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw OutputError("cannot create output directory " + dir.string());
  const fs::path probe = dir / ".rydpulse-write-probe";
  {
    std::ofstream f(probe);
    if (!f) throw OutputError("output directory " + dir.string() + " is not writable");
  }
  fs::remove(probe, ec);
}

// Everything is staged to temporary names first; the manifest is renamed last.
void write_bundle(const fs::path& dir, const ResultBundle& b, const std::string& manifest) {
  std::vector<std::pair<std::string, const std::string*>> items;
  for (const auto& [name, content] : b.files) items.emplace_back(name, &content);
  items.emplace_back("manifest.ini", &manifest);
  std::vector<fs::path> staged;
  auto cleanup = [&] {
    std::error_code ec;
    for (const auto& p : staged) fs::remove(p, ec);
  };
  for (const auto& [name, content] : items) {
    const fs::path tmp = dir / ("." + name + ".tmp");
    std::ofstream f(tmp, std::ios::binary);
    f << *content;
    f.close();
    staged.push_back(tmp);
    if (!f) {
      cleanup();
      throw OutputError("failed writing " + tmp.string());
    }
  }
  for (std::size_t i = 0; i < items.size(); ++i) {
    std::error_code ec;
    fs::rename(staged[i], dir / items[i].first, ec);
    if (ec) {
      cleanup();
      throw OutputError("failed to move " + items[i].first + " into place: " + ec.message());
    }
  }
}

int run(const std::string& sub, ScenarioKind kind, const std::string& config_path, const std::string& out_dir,
        const Overrides& o) {
  ScenarioConfig cfg;
  try {
    cfg = config_path.empty() ? default_config(kind) : load_config(config_path, kind);
    apply_overrides(cfg, o);
    validate(cfg);
  } catch (const ConfigError& e) {
    std::cerr << "rydpulse: config error: " << e.what() << "\n";
    return kConfig;
  } catch (const std::exception& e) {
    std::cerr << "rydpulse: config error: " << e.what() << "\n";
    return kConfig;
  }
  try {
    if (!out_dir.empty()) ensure_writable(out_dir);
  } catch (const OutputError& e) {
    std::cerr << "rydpulse: " << e.what() << "\n";
    return kOutput;
  }
  ResultBundle b;
  try {
    b = run_scenario(cfg);
  } catch (const ConfigError& e) {
    std::cerr << "rydpulse: config error: " << e.what() << "\n";
    return kConfig;
  } catch (const std::exception& e) {
    std::cerr << "rydpulse: runtime error: " << e.what() << "\n";
    return kRuntime;
  }
  for (const auto& s : b.scalars) {
    if (std::isnan(s.stderr_))
      fmt::print("{} = {}\n", s.name, csv_num(s.value));
    else
      fmt::print("{} = {} +- {}\n", s.name, csv_num(s.value), csv_num(s.stderr_));
  }
  for (const auto& n : b.notes) std::cerr << "note: " << n << "\n";
  if (!out_dir.empty()) {
    try {
      write_bundle(out_dir, b, manifest_ini(b, sub));
    } catch (const OutputError& e) {
      std::cerr << "rydpulse: " << e.what() << "\n";
      return kOutput;
    }
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Rydberg-EIT pulse simulator in the two-excitation spin model"};
  app.require_subcommand(1);
  const std::vector<std::pair<std::string, ScenarioKind>> subs{
      {"spectrum", ScenarioKind::spectrum},          {"propagate", ScenarioKind::propagate},
      {"scan-turnon", ScenarioKind::turnon_scan},    {"scan-turnoff", ScenarioKind::turnoff_scan},
      {"replica", ScenarioKind::experiment_replica}, {"window-scan", ScenarioKind::window_scan},
      {"storage", ScenarioKind::storage},            {"dlcz", ScenarioKind::dlcz},
      {"emulate-hbt", ScenarioKind::emulate_hbt}};
  std::string config_path, out_dir;
  Overrides o;
  std::map<std::string, CLI::App*> apps;
  for (const auto& [name, kind] : subs) {
    auto* s = app.add_subcommand(name, "run the " + to_string(kind) + " scenario");
    s->add_option("--config", config_path, "INI configuration (a manifest.ini also works)");
    s->add_option("--out", out_dir, "output directory");
    s->add_option("--seed", o.seed, "random seed");
    s->add_option("--threads", o.threads, "worker threads");
    s->add_option("--d", o.d, "optical depth (comma list for scans)");
    s->add_option("--omega-c", o.omega_c, "control Rabi frequency, Gamma or MHz (comma list for scans)");
    s->add_option("--shape", o.shape, "pulse shape: square, triangular_neg, triangular_pos, gaussian");
    s->add_option("--n-in", o.n_in, "mean input photon number");
    s->add_option("--duration", o.duration, "pulse duration, 1/Gamma, ns or us");
    s->add_option("--gamma-r", o.gamma_r, "Rydberg decay rate, Gamma or MHz");
    s->add_option("--blockade", o.blockade, "none, fully_blockaded, power_law");
    s->add_option("--t-end", o.t_end, "simulation end time");
    s->add_option("--dt-out", o.dt_out, "output sample spacing");
    s->add_option("--n-trials", o.n_trials, "Monte Carlo trials");
    s->add_option("--p", o.p, "DLCZ pair-creation probability");
    s->add_option("--eta-d", o.eta_d, "DLCZ detection efficiency");
    s->add_option("--eta-r", o.eta_r, "DLCZ retrieval efficiency");
    apps[name] = s;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }
  for (const auto& [name, kind] : subs)
    if (apps[name]->parsed()) return run(name, kind, config_path, out_dir, o);
  return kUsage;
}
