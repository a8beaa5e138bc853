#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "attnflow/flow.hpp"
#include "attnflow/task_data.hpp"

namespace attnflow {

/// Invalid or incomplete experiment configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EigenSpec {
  enum class Rule { explicit_list, inverse_index };
  Rule rule = Rule::explicit_list;
  std::vector<double> values;  ///< explicit_list only
  double trace = 1.0;          ///< inverse_index: lambda_d proportional to 1/d with this trace
  bool random_basis = false;   ///< Haar eigenvectors instead of the identity
  std::uint64_t basis_seed = 0;
};

struct ExperimentConfig {
  std::string name;
  std::optional<std::string> preset;
  ModelKind model = ModelKind::separate;
  int dim = 4;
  int heads = 4;
  int rank = 1;
  LengthLaw length = LengthLaw::fixed(31);
  EigenSpec eigen;
  double w_init = 1e-3;
  double tau = 1.0;
  double dt = 0.0;  ///< 0 selects default_dt
  double t_end = 100.0;
  Integrator integrator = Integrator::rk4;
  SnapshotSchedule snapshots;
  PlateauConfig plateaus;
  std::vector<std::uint64_t> seeds{0};
  std::string output_dir;
  std::uint32_t experiment_id = 0;
  double fixed_task_fraction = 0.0;

  /// Throws ConfigError on any violated invariant.
  void validate() const;
};

/// Names accepted by preset_config.
std::vector<std::string> preset_names();
/// Built-in configuration fragment as JSON text.
std::string preset_json(const std::string& name);
ExperimentConfig preset_config(const std::string& name);

/// Parses a JSON config. A "preset" key selects a base which the remaining
/// keys override. Throws ConfigError.
ExperimentConfig config_from_json(const std::string& text);
/// Applies the keys of `overrides` (a JSON object) on top of `base`.
ExperimentConfig apply_overrides(ExperimentConfig base, const std::string& overrides);
std::string config_to_json(const ExperimentConfig& cfg, int indent = -1);

CovarianceSpec covariance_for(const ExperimentConfig& cfg);
PopulationStats stats_for(const ExperimentConfig& cfg);
FlowConfig flow_config_for(const ExperimentConfig& cfg, std::uint64_t seed);
Params initial_params(const ExperimentConfig& cfg, std::uint64_t seed);

struct SeedResult {
  std::uint64_t seed = 0;
  Trajectory trajectory;
  PlateauReport plateaus;
  Params initial;
  double max_drift = 0.0;
  /// ||M_final - global_min_predictor||_F / ||global_min_predictor||_F
  double distance_to_global_min = 0.0;
  bool diverged = false;
  std::string error;
};

struct RunResult {
  ExperimentConfig config;
  std::vector<double> ladder;  ///< L(M_0..M_D) for the configured statistics
  std::vector<SeedResult> seeds;

  [[nodiscard]] bool any_diverged() const;
};

/// Integrates every seed. Seeds run on up to `threads` workers; results are
/// ordered by seed position and do not depend on the thread count.
RunResult run_experiment(const ExperimentConfig& cfg, int threads = 1);

/// Writes trajectory_seed<k>.csv, seed<k>.json, scalar_ode_seed<k>.csv
/// (separate models) and report.json into `dir`.
void write_run(const RunResult& run, const std::filesystem::path& dir);
std::string run_report_json(const RunResult& run, int indent = 2);

/// First time the loss falls to (high + low) / 2; nullopt if never.
std::optional<double> crossing_time(const Trajectory& traj, double level);

/// Times of the sequential drops L(M_{m-1}) -> L(M_m), m = 1..D, each taken
/// as the first crossing of the midpoint between the two ladder values.
std::vector<std::optional<double>> drop_times(const Trajectory& traj, const std::vector<double>& ladder);

/// Simulated |v| of the head that learns eigenvector `eigen` during drop
/// eigen + 1, next to the scalar ODE solution started from the simulated
/// value at the window start.
struct DropOverlay {
  int eigen = 0;
  int head = 0;
  std::vector<double> times;  ///< absolute times of the records in the window
  std::vector<double> simulated;
  std::vector<double> predicted;
  double v_star = 0.0;
  /// max |simulated - predicted| / v_star
  [[nodiscard]] double sup_error() const;
};

/// Where the scalar ODE is started for drop m + 1.
enum class OverlayStart {
  plateau_entry,  ///< first record of the plateau matched to M_m
  drop_onset,     ///< last record of that plateau
};

/// One overlay per drop whose bracketing plateaus (M_m and M_{m+1}) were both
/// detected. Separate rank-one trajectories with weight snapshots only.
std::vector<DropOverlay> scalar_ode_overlays(const Trajectory& traj, const PlateauReport& plateaus,
                                             const PopulationStats& stats, double dt,
                                             OverlayStart start = OverlayStart::drop_onset);

enum class SweepAxis { w_init, rank, n };

SweepAxis parse_sweep_axis(const std::string& name);
std::string sweep_axis_name(SweepAxis axis);

struct SweepResult {
  SweepAxis axis = SweepAxis::w_init;
  std::vector<double> values;
  std::vector<RunResult> runs;
};

/// One run per axis value with shared seeds.
SweepResult run_sweep(const ExperimentConfig& base, SweepAxis axis, const std::vector<double>& values,
                      int threads = 1);
/// Summary table: per value and seed, plateau count, durations and first-drop time.
std::string sweep_summary_json(const SweepResult& sweep, int indent = 2);
void write_sweep(const SweepResult& sweep, const std::filesystem::path& dir);

/// Closed-form curves and tables for overlays: loss ladder, global minimum
/// predictor, PCR predictors, duration estimates, and for white merged
/// configurations the sigmoid time course.
std::string theory_json(const ExperimentConfig& cfg, int indent = 2);
void write_theory(const ExperimentConfig& cfg, const std::filesystem::path& dir);

/// Output root: $ATTNFLOW_OUTPUT_ROOT if set, else "runs".
std::filesystem::path default_output_root();
inline constexpr const char* kOutputRootEnv = "ATTNFLOW_OUTPUT_ROOT";

}  // namespace attnflow
