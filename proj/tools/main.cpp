// attnflow: run, verify and sweep gradient-flow experiments.
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "attnflow/experiment.hpp"
#include "attnflow/io.hpp"
#include "attnflow/theory.hpp"
#include "attnflow/verification.hpp"

namespace fs = std::filesystem;
using namespace attnflow;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitDivergence = 3;
constexpr int kExitVerify = 4;

struct ConfigFlags {
  std::string config_path;
  std::string preset;
  std::string seeds;
  std::string set;
};

void add_config_flags(CLI::App* cmd, ConfigFlags& f) {
  cmd->add_option("--config", f.config_path, "JSON experiment config");
  cmd->add_option("--preset", f.preset, "Built-in preset (fig1, fig3, fig4, next-token)");
  cmd->add_option("--seeds", f.seeds, "Comma-separated seed list, overrides the config");
  cmd->add_option("--set", f.set, "JSON object of keys applied on top of the config");
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> out;
  std::stringstream s(text);
  std::string item;
  while (std::getline(s, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoull(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("--seeds: '" + item + "' is not a non-negative integer");
    }
  }
  if (out.empty()) throw ConfigError("--seeds must list at least one seed");
  return out;
}

std::vector<double> parse_values(const std::string& text) {
  std::vector<double> out;
  std::stringstream s(text);
  std::string item;
  while (std::getline(s, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("--values: '" + item + "' is not a number");
    }
  }
  if (out.empty()) throw ConfigError("--values must list at least one value");
  return out;
}

ExperimentConfig load_config(const ConfigFlags& f) {
  if (f.config_path.empty() == f.preset.empty()) throw ConfigError("exactly one of --config or --preset is required");
  ExperimentConfig cfg = f.preset.empty() ? config_from_json(read_file(f.config_path)) : preset_config(f.preset);
  if (!f.set.empty()) cfg = apply_overrides(cfg, f.set);
  if (!f.seeds.empty()) cfg.seeds = parse_seeds(f.seeds);
  cfg.validate();
  return cfg;
}

fs::path output_dir(const std::string& flag, const ExperimentConfig& cfg) {
  if (!flag.empty()) return flag;
  if (!cfg.output_dir.empty()) return cfg.output_dir;
  return default_output_root() / (cfg.name.empty() ? "run" : cfg.name);
}

void write_or_print(const std::string& text, const std::string& path) {
  if (path.empty()) {
    std::cout << text << '\n';
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text << '\n';
}

int report_run(const RunResult& run, const fs::path& dir) {
  for (const auto& s : run.seeds) {
    std::cout << "seed " << s.seed << ": ";
    if (s.diverged) {
      std::cout << "DIVERGED (" << s.error << ")\n";
      continue;
    }
    std::cout << "final loss " << format_double(s.trajectory.final_loss()) << ", plateaus "
              << s.plateaus.intermediate_count() << ", max drift " << format_double(s.max_drift) << '\n';
  }
  std::cout << "wrote " << dir.string() << '\n';
  return run.any_diverged() ? kExitDivergence : kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gradient-flow simulator and theory oracle for multi-head linear attention"};
  app.require_subcommand(1);

  ConfigFlags run_flags;
  std::string run_out;
  int run_threads = 1;
  auto* run_cmd = app.add_subcommand("run", "Integrate every seed and write trajectories and a report");
  add_config_flags(run_cmd, run_flags);
  run_cmd->add_option("--out", run_out, "Output directory");
  run_cmd->add_option("--threads", run_threads, "Seeds integrated in parallel")->check(CLI::PositiveNumber);

  VerifyOptions verify;
  std::string verify_json;
  double plateau_tol = 0.0;
  auto* verify_cmd = app.add_subcommand("verify", "Run the acceptance criteria");
  verify_cmd->add_option("--threads", verify.threads, "Seeds integrated in parallel")->check(CLI::PositiveNumber);
  verify_cmd->add_option("--only", verify.only, "Criterion ids to run")->delimiter(',');
  verify_cmd->add_option("--json", verify_json, "Write the machine-readable report here");
  verify_cmd->add_option("--plateau-tol", plateau_tol, "Override the plateau match tolerance");
  verify_cmd->add_option("--mc-samples", verify.mc_samples, "Monte Carlo samples per point");
  verify_cmd->add_option("--mc-points", verify.mc_points, "Random parameter points for the gradient oracle");
  verify_cmd->add_flag("--flip-gradient-sign", verify.flip_gradient_sign, "Negate the closed-form gradient");
  verify_cmd->add_flag_callback("--list", [] {
    for (const auto& id : criterion_ids()) std::cout << id << '\n';
    std::exit(kExitOk);
  }, "List criterion ids");

  ConfigFlags sweep_flags;
  std::string sweep_out;
  std::string sweep_axis;
  std::string sweep_values;
  int sweep_threads = 1;
  auto* sweep_cmd = app.add_subcommand("sweep", "One run per axis value with shared seeds");
  add_config_flags(sweep_cmd, sweep_flags);
  sweep_cmd->add_option("--axis", sweep_axis, "w_init, rank or N")->required();
  sweep_cmd->add_option("--values", sweep_values, "Comma-separated axis values")->required();
  sweep_cmd->add_option("--out", sweep_out, "Output directory");
  sweep_cmd->add_option("--threads", sweep_threads, "Seeds integrated in parallel")->check(CLI::PositiveNumber);

  ConfigFlags catalog_flags;
  std::string catalog_out;
  int catalog_heads = 0;
  auto* catalog_cmd = app.add_subcommand("catalog", "Dump the fixed points of the separate model as JSON");
  add_config_flags(catalog_cmd, catalog_flags);
  catalog_cmd->add_option("--heads", catalog_heads, "Heads in the min-norm weights (default max(H, D))");
  catalog_cmd->add_option("--out", catalog_out, "Output file (default stdout)");

  ConfigFlags theory_flags;
  std::string theory_out;
  auto* theory_cmd = app.add_subcommand("theory", "Closed-form curves and tables for overlays");
  add_config_flags(theory_cmd, theory_flags);
  theory_cmd->add_option("--out", theory_out, "Output directory (default: print JSON)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*run_cmd) {
      const ExperimentConfig cfg = load_config(run_flags);
      const fs::path dir = output_dir(run_out, cfg);
      const RunResult run = run_experiment(cfg, run_threads);
      write_run(run, dir);
      return report_run(run, dir);
    }
    if (*verify_cmd) {
      if (verify_cmd->count("--plateau-tol") > 0) verify.plateau_rel_tol = plateau_tol;
      const auto results = run_verification(verify);
      bool all = true;
      for (const auto& r : results) {
        std::cout << format_result_line(r) << '\n';
        all = all && r.passed;
      }
      if (!verify_json.empty()) write_or_print(verification_json(results), verify_json);
      return all ? kExitOk : kExitVerify;
    }
    if (*sweep_cmd) {
      const ExperimentConfig cfg = load_config(sweep_flags);
      const SweepAxis axis = parse_sweep_axis(sweep_axis);
      const fs::path dir = output_dir(sweep_out, cfg) / ("sweep_" + sweep_axis_name(axis));
      const SweepResult sweep = run_sweep(cfg, axis, parse_values(sweep_values), sweep_threads);
      write_sweep(sweep, dir);
      std::cout << sweep_summary_json(sweep) << '\n';
      bool diverged = false;
      for (const auto& run : sweep.runs) diverged = diverged || run.any_diverged();
      return diverged ? kExitDivergence : kExitOk;
    }
    if (*catalog_cmd) {
      const ExperimentConfig cfg = load_config(catalog_flags);
      const int heads = catalog_heads > 0 ? catalog_heads : std::max(cfg.heads, cfg.dim);
      write_or_print(catalog_to_json(fixed_point_catalog(stats_for(cfg), heads), 2), catalog_out);
      return kExitOk;
    }
    if (*theory_cmd) {
      const ExperimentConfig cfg = load_config(theory_flags);
      if (theory_out.empty()) {
        std::cout << theory_json(cfg) << '\n';
      } else {
        write_theory(cfg, theory_out);
        std::cout << "wrote " << theory_out << '\n';
      }
      return kExitOk;
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return kExitOk;
}
