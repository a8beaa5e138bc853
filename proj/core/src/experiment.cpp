#include "attnflow/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <set>
#include <thread>

#include <json.hpp>

#include "attnflow/io.hpp"
#include "attnflow/theory.hpp"

namespace attnflow {

using nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("config: " + msg); };
  if (dim < 1) fail("D must be >= 1");
  if (heads < 1) fail("H must be >= 1");
  if (model == ModelKind::separate && (rank < 1 || rank > dim)) fail("R must satisfy 1 <= R <= D");
  if (length.n < 1) fail("context length must be >= 1");
  if (eigen.rule == EigenSpec::Rule::explicit_list) {
    if (static_cast<int>(eigen.values.size()) != dim) fail("eigenvalue list length must equal D");
    for (double l : eigen.values)
      if (!(l > 0.0)) fail("eigenvalues must be positive");
  } else if (!(eigen.trace > 0.0)) {
    fail("eigen trace must be positive");
  }
  if (!(w_init >= 0.0)) fail("w_init must be non-negative");
  if (!(tau > 0.0)) fail("tau must be positive");
  if (dt < 0.0) fail("dt must be positive (or 0 for the default)");
  if (!(t_end > 0.0)) fail("t_end must be positive");
  if (dt > t_end) fail("dt must not exceed t_end");
  if (seeds.empty()) fail("seeds must be non-empty");
  if (fixed_task_fraction != 0.0) fail("fixed_task_fraction must be 0; task-pool mixtures are not supported");
  if (snapshots.log_points < 0 || snapshots.stride < 0.0) fail("invalid snapshot schedule");
  if (!(plateaus.min_fraction >= 0.0) || !(plateaus.rel_tol >= 0.0)) fail("invalid plateau settings");
}

namespace {

const char* kind_name(ModelKind k) { return k == ModelKind::merged ? "merged" : "separate"; }

const std::vector<std::pair<std::string, std::string>>& presets() {
  static const std::vector<std::pair<std::string, std::string>> table = {
      {"fig1", R"({
        "name": "fig1", "model": "merged", "D": 4, "H": 8, "N": 31,
        "eigen": {"rule": "explicit", "values": [1, 1, 1, 1]},
        "w_init": 1e-3, "tau": 1, "dt": 1e-3, "t_end": 10,
        "snapshots": {"log_points": 512, "stride": 0.01},
        "plateaus": {"axis": "linear"},
        "seeds": [0]})"},
      {"fig3", R"({
        "name": "fig3", "model": "separate", "D": 4, "H": 4, "R": 1, "N": 31,
        "eigen": {"rule": "explicit", "values": [0.4, 0.3, 0.2, 0.1]},
        "w_init": 0.05, "tau": 1, "dt": 0, "t_end": 40000,
        "snapshots": {"log_points": 512, "stride": 10},
        "plateaus": {"axis": "log"},
        "seeds": [0, 1, 2, 3, 4, 5]})"},
      {"fig4", R"({
        "name": "fig4", "model": "separate", "D": 8, "H": 9, "R": 1, "N": 31,
        "eigen": {"rule": "inverse_index", "trace": 1},
        "w_init": 0.05, "tau": 1, "dt": 0.5, "t_end": 100000,
        "snapshots": {"log_points": 512, "stride": 25},
        "plateaus": {"axis": "log"},
        "seeds": [0, 1, 2, 3, 4, 5]})"},
      {"next-token", R"({
        "name": "next-token", "model": "separate", "D": 4, "H": 4, "R": 1,
        "length": {"kind": "uniform", "N_max": 31},
        "eigen": {"rule": "explicit", "values": [0.4, 0.3, 0.2, 0.1]},
        "w_init": 0.05, "tau": 1, "dt": 0, "t_end": 40000,
        "snapshots": {"log_points": 512, "stride": 10},
        "plateaus": {"axis": "log"},
        "seeds": [0, 1, 2, 3, 4, 5]})"},
  };
  return table;
}

template <class T>
T get_as(const json& j, const char* key) {
  try {
    return j.get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("config: key '") + key + "' has the wrong type");
  }
}

void check_keys(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
  if (!obj.is_object()) throw ConfigError("config: " + where + " must be an object");
  for (const auto& item : obj.items())
    if (!allowed.count(item.key())) throw ConfigError("config: unknown key '" + item.key() + "' in " + where);
}

void apply_json(ExperimentConfig& cfg, const json& j) {
  check_keys(j,
             {"name", "preset", "model", "D", "H", "R", "N", "length", "eigen", "eigenvalues", "w_init", "tau",
              "dt", "t_end", "integrator", "snapshots", "plateaus", "seeds", "output_dir", "experiment_id",
              "fixed_task_fraction"},
             "config");
  for (const auto& [key, v] : j.items()) {
    const char* k = key.c_str();
    if (key == "name") cfg.name = get_as<std::string>(v, k);
    else if (key == "preset") cfg.preset = get_as<std::string>(v, k);
    else if (key == "model") {
      const auto m = get_as<std::string>(v, k);
      if (m == "merged") cfg.model = ModelKind::merged;
      else if (m == "separate") cfg.model = ModelKind::separate;
      else throw ConfigError("config: model must be 'merged' or 'separate'");
    } else if (key == "D") cfg.dim = get_as<int>(v, k);
    else if (key == "H") cfg.heads = get_as<int>(v, k);
    else if (key == "R") cfg.rank = get_as<int>(v, k);
    else if (key == "N") cfg.length = {LengthLaw::Kind::fixed, get_as<int>(v, k)};
    else if (key == "length") {
      check_keys(v, {"kind", "N", "N_max"}, "length");
      const auto kind = get_as<std::string>(v.at("kind"), "length.kind");
      if (kind == "fixed") cfg.length = {LengthLaw::Kind::fixed, get_as<int>(v.at("N"), "length.N")};
      else if (kind == "uniform") cfg.length = {LengthLaw::Kind::uniform, get_as<int>(v.at("N_max"), "length.N_max")};
      else throw ConfigError("config: length.kind must be 'fixed' or 'uniform'");
    } else if (key == "eigenvalues") {
      cfg.eigen.rule = EigenSpec::Rule::explicit_list;
      cfg.eigen.values = get_as<std::vector<double>>(v, k);
    } else if (key == "eigen") {
      check_keys(v, {"rule", "values", "trace", "random_basis", "basis_seed"}, "eigen");
      if (v.contains("rule")) {
        const auto rule = get_as<std::string>(v.at("rule"), "eigen.rule");
        if (rule == "explicit") cfg.eigen.rule = EigenSpec::Rule::explicit_list;
        else if (rule == "inverse_index") cfg.eigen.rule = EigenSpec::Rule::inverse_index;
        else throw ConfigError("config: eigen.rule must be 'explicit' or 'inverse_index'");
      }
      if (v.contains("values")) cfg.eigen.values = get_as<std::vector<double>>(v.at("values"), "eigen.values");
      if (v.contains("trace")) cfg.eigen.trace = get_as<double>(v.at("trace"), "eigen.trace");
      if (v.contains("random_basis")) cfg.eigen.random_basis = get_as<bool>(v.at("random_basis"), "eigen.random_basis");
      if (v.contains("basis_seed")) cfg.eigen.basis_seed = get_as<std::uint64_t>(v.at("basis_seed"), "eigen.basis_seed");
    } else if (key == "w_init") cfg.w_init = get_as<double>(v, k);
    else if (key == "tau") cfg.tau = get_as<double>(v, k);
    else if (key == "dt") cfg.dt = get_as<double>(v, k);
    else if (key == "t_end") cfg.t_end = get_as<double>(v, k);
    else if (key == "integrator") {
      const auto m = get_as<std::string>(v, k);
      if (m == "rk4") cfg.integrator = Integrator::rk4;
      else if (m == "euler") cfg.integrator = Integrator::euler;
      else throw ConfigError("config: integrator must be 'rk4' or 'euler'");
    } else if (key == "snapshots") {
      check_keys(v, {"log_points", "log_start", "stride"}, "snapshots");
      if (v.contains("log_points")) cfg.snapshots.log_points = get_as<int>(v.at("log_points"), "snapshots.log_points");
      if (v.contains("log_start")) cfg.snapshots.log_start = get_as<double>(v.at("log_start"), "snapshots.log_start");
      if (v.contains("stride")) cfg.snapshots.stride = get_as<double>(v.at("stride"), "snapshots.stride");
    } else if (key == "plateaus") {
      check_keys(v, {"axis", "slope_threshold", "min_fraction", "log_origin", "rel_tol"}, "plateaus");
      if (v.contains("axis")) {
        const auto a = get_as<std::string>(v.at("axis"), "plateaus.axis");
        if (a == "linear") cfg.plateaus.axis = TimeAxis::linear;
        else if (a == "log") cfg.plateaus.axis = TimeAxis::log;
        else throw ConfigError("config: plateaus.axis must be 'linear' or 'log'");
      }
      if (v.contains("slope_threshold"))
        cfg.plateaus.slope_threshold = get_as<double>(v.at("slope_threshold"), "plateaus.slope_threshold");
      if (v.contains("min_fraction")) cfg.plateaus.min_fraction = get_as<double>(v.at("min_fraction"), "plateaus.min_fraction");
      if (v.contains("log_origin")) cfg.plateaus.log_origin = get_as<double>(v.at("log_origin"), "plateaus.log_origin");
      if (v.contains("rel_tol")) cfg.plateaus.rel_tol = get_as<double>(v.at("rel_tol"), "plateaus.rel_tol");
    } else if (key == "seeds") cfg.seeds = get_as<std::vector<std::uint64_t>>(v, k);
    else if (key == "output_dir") cfg.output_dir = get_as<std::string>(v, k);
    else if (key == "experiment_id") cfg.experiment_id = get_as<std::uint32_t>(v, k);
    else if (key == "fixed_task_fraction") cfg.fixed_task_fraction = get_as<double>(v, k);
  }
}

json parse_object(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config: top level must be a JSON object");
  return j;
}

json matrix_json(const Mat& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

json config_json(const ExperimentConfig& cfg) {
  json j;
  j["name"] = cfg.name;
  if (cfg.preset) j["preset"] = *cfg.preset;
  j["model"] = kind_name(cfg.model);
  j["D"] = cfg.dim;
  j["H"] = cfg.heads;
  j["R"] = cfg.rank;
  if (cfg.length.kind == LengthLaw::Kind::fixed) j["length"] = {{"kind", "fixed"}, {"N", cfg.length.n}};
  else j["length"] = {{"kind", "uniform"}, {"N_max", cfg.length.n}};
  json e;
  if (cfg.eigen.rule == EigenSpec::Rule::explicit_list) {
    e["rule"] = "explicit";
    e["values"] = cfg.eigen.values;
  } else {
    e["rule"] = "inverse_index";
    e["trace"] = cfg.eigen.trace;
  }
  e["random_basis"] = cfg.eigen.random_basis;
  e["basis_seed"] = cfg.eigen.basis_seed;
  j["eigen"] = e;
  j["w_init"] = cfg.w_init;
  j["tau"] = cfg.tau;
  j["dt"] = cfg.dt;
  j["t_end"] = cfg.t_end;
  j["integrator"] = cfg.integrator == Integrator::rk4 ? "rk4" : "euler";
  j["snapshots"] = {{"log_points", cfg.snapshots.log_points},
                    {"log_start", cfg.snapshots.log_start},
                    {"stride", cfg.snapshots.stride}};
  j["plateaus"] = {{"axis", cfg.plateaus.axis == TimeAxis::log ? "log" : "linear"},
                   {"slope_threshold", cfg.plateaus.slope_threshold},
                   {"min_fraction", cfg.plateaus.min_fraction},
                   {"log_origin", cfg.plateaus.log_origin},
                   {"rel_tol", cfg.plateaus.rel_tol}};
  j["seeds"] = cfg.seeds;
  j["output_dir"] = cfg.output_dir;
  j["experiment_id"] = cfg.experiment_id;
  j["fixed_task_fraction"] = cfg.fixed_task_fraction;
  return j;
}

}  // namespace

std::vector<std::string> preset_names() {
  std::vector<std::string> out;
  for (const auto& [name, text] : presets()) out.push_back(name);
  return out;
}

std::string preset_json(const std::string& name) {
  for (const auto& [n, text] : presets())
    if (n == name) return text;
  throw ConfigError("config: unknown preset '" + name + "'");
}

ExperimentConfig preset_config(const std::string& name) {
  ExperimentConfig cfg;
  apply_json(cfg, parse_object(preset_json(name)));
  cfg.preset = name;
  cfg.validate();
  return cfg;
}

ExperimentConfig config_from_json(const std::string& text) {
  const json j = parse_object(text);
  ExperimentConfig cfg;
  if (j.contains("preset")) cfg = preset_config(get_as<std::string>(j.at("preset"), "preset"));
  apply_json(cfg, j);
  cfg.validate();
  return cfg;
}

ExperimentConfig apply_overrides(ExperimentConfig base, const std::string& overrides) {
  apply_json(base, parse_object(overrides));
  base.validate();
  return base;
}

std::string config_to_json(const ExperimentConfig& cfg, int indent) { return config_json(cfg).dump(indent); }

CovarianceSpec covariance_for(const ExperimentConfig& cfg) {
  const std::vector<double> values = cfg.eigen.rule == EigenSpec::Rule::explicit_list
                                         ? cfg.eigen.values
                                         : inverse_index_spectrum(cfg.dim, cfg.eigen.trace);
  try {
    if (cfg.eigen.random_basis)
      return build_covariance_random_basis(values, SeedStream(cfg.eigen.basis_seed, "basis", cfg.experiment_id));
    return build_covariance(values);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

PopulationStats stats_for(const ExperimentConfig& cfg) { return population_stats(covariance_for(cfg), cfg.length); }

FlowConfig flow_config_for(const ExperimentConfig& cfg, std::uint64_t seed) {
  FlowConfig f;
  f.tau = cfg.tau;
  f.dt = cfg.dt > 0.0 ? cfg.dt : default_dt(stats_for(cfg), cfg.tau);
  f.t_end = cfg.t_end;
  f.integrator = cfg.integrator;
  f.snapshots = cfg.snapshots;
  f.w_init = cfg.w_init;
  f.seed = seed;
  return f;
}

Params initial_params(const ExperimentConfig& cfg, std::uint64_t seed) {
  SeedStream stream(seed, "init", cfg.experiment_id);
  if (cfg.model == ModelKind::merged) return init_merged(cfg.dim, cfg.heads, cfg.w_init, stream);
  return init_separate(cfg.dim, cfg.heads, cfg.rank, cfg.w_init, stream);
}

// ---------------------------------------------------------------------------
// Runs
// ---------------------------------------------------------------------------

bool RunResult::any_diverged() const {
  return std::any_of(seeds.begin(), seeds.end(), [](const auto& s) { return s.diverged; });
}

namespace {

template <class Fn>
void parallel_for(std::size_t count, int threads, Fn&& fn) {
  const auto workers = static_cast<std::size_t>(std::max(1, threads));
  if (workers == 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(workers, count); ++w)
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < count; i += workers) fn(i);
    });
  for (auto& t : pool) t.join();
}

void summarize(SeedResult& r, const ExperimentConfig& cfg, const PopulationStats& stats,
               const std::vector<double>& ladder) {
  const Trajectory& tr = r.trajectory;
  if (tr.empty()) return;
  r.max_drift = *std::max_element(tr.conservation_drift.begin(), tr.conservation_drift.end());
  const Mat target = global_min_predictor(stats);
  r.distance_to_global_min = (tr.effective_matrices.back() - target).norm() / target.norm();
  r.plateaus = detect_plateaus(tr, ladder, cfg.plateaus);
}

std::vector<double> ladder_for(const ExperimentConfig& cfg, const PopulationStats& stats) {
  if (cfg.model == ModelKind::separate) return loss_ladder(stats);
  // Merged models have two fixed points: zero and the global minimum.
  return {stats.trace, fixed_point_loss(stats, [&] {
            std::vector<int> all(static_cast<std::size_t>(stats.dim()));
            for (int d = 0; d < stats.dim(); ++d) all[static_cast<std::size_t>(d)] = d;
            return all;
          }())};
}

}  // namespace

RunResult run_experiment(const ExperimentConfig& cfg, int threads) {
  cfg.validate();
  const PopulationStats stats = stats_for(cfg);
  RunResult run{cfg, ladder_for(cfg, stats), std::vector<SeedResult>(cfg.seeds.size())};
  parallel_for(cfg.seeds.size(), threads, [&](std::size_t k) {
    SeedResult& r = run.seeds[k];
    r.seed = cfg.seeds[k];
    r.initial = initial_params(cfg, r.seed);
    try {
      r.trajectory = integrate(r.initial, stats, flow_config_for(cfg, r.seed));
    } catch (const DivergenceError& e) {
      r.trajectory = e.partial();
      r.diverged = true;
      r.error = e.what();
    }
    summarize(r, cfg, stats, run.ladder);
  });
  return run;
}

std::optional<double> crossing_time(const Trajectory& traj, double level) {
  for (std::size_t k = 0; k < traj.size(); ++k) {
    if (traj.losses[k] <= level) {
      if (k == 0) return traj.times[0];
      // Linear interpolation between the bracketing records.
      const double l0 = traj.losses[k - 1];
      const double l1 = traj.losses[k];
      const double f = (l0 - level) / (l0 - l1);
      return traj.times[k - 1] + f * (traj.times[k] - traj.times[k - 1]);
    }
  }
  return std::nullopt;
}

std::vector<std::optional<double>> drop_times(const Trajectory& traj, const std::vector<double>& ladder) {
  std::vector<std::optional<double>> out;
  for (std::size_t m = 1; m < ladder.size(); ++m) out.push_back(crossing_time(traj, 0.5 * (ladder[m - 1] + ladder[m])));
  return out;
}

double DropOverlay::sup_error() const {
  double e = 0.0;
  for (std::size_t k = 0; k < times.size(); ++k) e = std::max(e, std::abs(simulated[k] - predicted[k]));
  return e / v_star;
}

std::vector<DropOverlay> scalar_ode_overlays(const Trajectory& traj, const PlateauReport& plateaus,
                                             const PopulationStats& stats, double dt, OverlayStart start) {
  std::vector<DropOverlay> out;
  if (traj.kind != ModelKind::separate || traj.rank != 1 || traj.params.size() != traj.size() || traj.empty())
    return out;
  auto find = [&](int m) -> const PlateauSegment* {
    for (const auto& s : plateaus.segments)
      if (s.matched && *s.matched == m) return &s;
    return nullptr;
  };
  const auto& final_params = std::get<SeparateParams>(traj.params.back());
  const Mat& final_align = traj.alignments.back();
  for (int m = 0; m < traj.dim; ++m) {
    const PlateauSegment* from = find(m);
    const PlateauSegment* to = find(m + 1);
    if (!from || !to) continue;
    DropOverlay ov;
    ov.eigen = m;
    double best = -1.0;
    for (int i = 0; i < traj.heads; ++i) {
      const double score = std::abs(final_params.value(i)) * final_align(i, m);
      if (score > best) {
        best = score;
        ov.head = i;
      }
    }
    const std::size_t k0 = start == OverlayStart::plateau_entry ? from->first : from->last;
    const std::size_t k1 = to->first;
    if (k1 <= k0) continue;
    std::vector<double> rel;
    for (std::size_t k = k0; k <= k1; ++k) {
      ov.times.push_back(traj.times[k]);
      rel.push_back(traj.times[k] - traj.times[k0]);
      ov.simulated.push_back(traj.head_norms[k][static_cast<std::size_t>(ov.head)].value);
    }
    ov.predicted = solve_scalar_ode(ov.simulated.front(), stats.lambda(m), stats.a(m), traj.tau, rel, dt);
    ov.v_star = scalar_ode_fixed_point(stats.lambda(m), stats.a(m));
    out.push_back(std::move(ov));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Output
// ---------------------------------------------------------------------------

namespace {

json plateau_json(const PlateauReport& rep, double tau) {
  json segs = json::array();
  for (const auto& s : rep.segments) {
    json j{{"t_start", s.t_start / tau}, {"t_end", s.t_end / tau}, {"mean_loss", s.mean_loss}, {"terminal", s.terminal}};
    j["matched"] = s.matched ? json(*s.matched) : json(nullptr);
    segs.push_back(std::move(j));
  }
  return segs;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
}

std::string seed_tag(std::uint64_t seed) { return "seed" + std::to_string(seed); }

json seed_summary(const SeedResult& r, const std::vector<double>& ladder) {
  const Trajectory& tr = r.trajectory;
  json j;
  j["seed"] = r.seed;
  j["trajectory_csv"] = "trajectory_" + seed_tag(r.seed) + ".csv";
  j["final_loss"] = tr.empty() ? json(nullptr) : json(tr.final_loss());
  j["max_conservation_drift"] = r.max_drift;
  j["max_loss_increase"] = tr.max_loss_increase;
  j["distance_to_global_min"] = r.distance_to_global_min;
  j["diverged"] = r.diverged;
  j["error"] = r.error;
  j["plateaus"] = plateau_json(r.plateaus, tr.tau);
  json drops = json::array();
  for (const auto& t : drop_times(tr, ladder)) drops.push_back(t ? json(*t / tr.tau) : json(nullptr));
  j["drop_times"] = drops;
  return j;
}

}  // namespace

std::string run_report_json(const RunResult& run, int indent) {
  const PopulationStats stats = stats_for(run.config);
  json j;
  j["schema"] = kSchemaVersion;
  j["config"] = config_json(run.config);
  j["ladder"] = run.ladder;
  j["exp_inv_len"] = stats.exp_inv_len;
  j["global_min_predictor"] = matrix_json(global_min_predictor(stats));
  json seeds = json::array();
  for (const auto& r : run.seeds) seeds.push_back(seed_summary(r, run.ladder));
  j["seeds"] = seeds;
  return j.dump(indent);
}

void write_run(const RunResult& run, const fs::path& dir) {
  fs::create_directories(dir);
  const PopulationStats stats = stats_for(run.config);
  for (const auto& r : run.seeds) {
    const std::string tag = seed_tag(r.seed);
    {
      std::ofstream f(dir / ("trajectory_" + tag + ".csv"), std::ios::binary);
      if (!f) throw std::runtime_error("cannot write trajectory for " + tag);
      write_trajectory_csv(f, r.trajectory);
    }
    json side;
    side["schema"] = kSchemaVersion;
    side["config"] = config_json(run.config);
    side["seed"] = r.seed;
    side["initial_params"] = json::parse(params_to_json(r.initial));
    if (!r.trajectory.params.empty())
      side["final_params"] = json::parse(params_to_json(r.trajectory.params.back()));
    side["plateaus"] = plateau_json(r.plateaus, r.trajectory.tau);
    json boundaries = json::array();
    for (const auto& s : r.plateaus.segments) {
      for (std::size_t k : {s.first, s.last}) {
        if (k < r.trajectory.params.size())
          boundaries.push_back({{"t", r.trajectory.times[k] / r.trajectory.tau},
                                {"params", json::parse(params_to_json(r.trajectory.params[k]))}});
      }
    }
    side["boundary_params"] = boundaries;
    write_text(dir / (tag + ".json"), side.dump(2));

    if (run.config.model == ModelKind::separate && run.config.rank == 1) {
      const double dt = flow_config_for(run.config, r.seed).dt;
      const auto overlays = scalar_ode_overlays(r.trajectory, r.plateaus, stats, dt);
      std::ofstream f(dir / ("scalar_ode_" + tag + ".csv"), std::ios::binary);
      f << "t,eigen,head,v_sim,v_ode\n";
      for (const auto& ov : overlays)
        for (std::size_t k = 0; k < ov.times.size(); ++k)
          f << format_double(ov.times[k] / r.trajectory.tau) << ',' << ov.eigen + 1 << ',' << ov.head + 1 << ','
            << format_double(ov.simulated[k]) << ',' << format_double(ov.predicted[k]) << '\n';
    }
  }
  write_text(dir / "report.json", run_report_json(run));
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

SweepAxis parse_sweep_axis(const std::string& name) {
  if (name == "w_init") return SweepAxis::w_init;
  if (name == "rank") return SweepAxis::rank;
  if (name == "N") return SweepAxis::n;
  throw ConfigError("sweep: axis must be one of w_init, rank, N");
}

std::string sweep_axis_name(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::w_init: return "w_init";
    case SweepAxis::rank: return "rank";
    case SweepAxis::n: return "N";
  }
  return "?";
}

SweepResult run_sweep(const ExperimentConfig& base, SweepAxis axis, const std::vector<double>& values, int threads) {
  if (values.empty()) throw ConfigError("sweep: axis values must be non-empty");
  SweepResult out{axis, values, {}};
  for (double v : values) {
    ExperimentConfig cfg = base;
    switch (axis) {
      case SweepAxis::w_init: cfg.w_init = v; break;
      case SweepAxis::rank: cfg.rank = static_cast<int>(std::lround(v)); break;
      case SweepAxis::n: cfg.length.n = static_cast<int>(std::lround(v)); break;
    }
    cfg.validate();
    out.runs.push_back(run_experiment(cfg, threads));
  }
  return out;
}

std::string sweep_summary_json(const SweepResult& sweep, int indent) {
  json rows = json::array();
  for (std::size_t i = 0; i < sweep.values.size(); ++i) {
    const RunResult& run = sweep.runs[i];
    for (const auto& r : run.seeds) {
      json durations = json::array();
      json indices = json::array();
      for (const auto& s : r.plateaus.segments) {
        if (s.terminal) continue;
        durations.push_back((s.t_end - s.t_start) / r.trajectory.tau);
        indices.push_back(s.matched ? json(*s.matched) : json(nullptr));
      }
      const auto drops = drop_times(r.trajectory, run.ladder);
      rows.push_back({{"value", sweep.values[i]},
                      {"seed", r.seed},
                      {"plateau_count", r.plateaus.intermediate_count()},
                      {"plateau_indices", indices},
                      {"plateau_durations", durations},
                      {"first_drop_time", drops.empty() || !drops[0] ? json(nullptr) : json(*drops[0] / r.trajectory.tau)},
                      {"final_loss", r.trajectory.empty() ? json(nullptr) : json(r.trajectory.final_loss())},
                      {"diverged", r.diverged}});
    }
  }
  return json{{"schema", kSchemaVersion}, {"axis", sweep_axis_name(sweep.axis)}, {"values", sweep.values}, {"rows", rows}}
      .dump(indent);
}

void write_sweep(const SweepResult& sweep, const fs::path& dir) {
  fs::create_directories(dir);
  for (std::size_t i = 0; i < sweep.values.size(); ++i)
    write_run(sweep.runs[i], dir / (sweep_axis_name(sweep.axis) + "_" + format_double(sweep.values[i])));
  write_text(dir / "sweep.json", sweep_summary_json(sweep));
}

// ---------------------------------------------------------------------------
// Theory
// ---------------------------------------------------------------------------

std::string theory_json(const ExperimentConfig& cfg, int indent) {
  cfg.validate();
  const PopulationStats stats = stats_for(cfg);
  json j;
  j["schema"] = kSchemaVersion;
  j["config"] = config_json(cfg);
  j["eigenvalues"] = std::vector<double>(stats.cov.eigenvalues().begin(), stats.cov.eigenvalues().end());
  j["a"] = std::vector<double>(stats.a_vals.begin(), stats.a_vals.end());
  j["exp_inv_len"] = stats.exp_inv_len;
  j["ladder"] = loss_ladder(stats);
  j["global_min_predictor"] = matrix_json(global_min_predictor(stats));
  json pcr = json::array();
  for (int m = 0; m <= stats.dim(); ++m) pcr.push_back(matrix_json(pcr_predictor(stats, m)));
  j["pcr_predictors"] = pcr;
  json vstar = json::array();
  for (int d = 0; d < stats.dim(); ++d) vstar.push_back(scalar_ode_fixed_point(stats.lambda(d), stats.a(d)));
  j["v_star"] = vstar;
  if (cfg.w_init > 0.0 && cfg.w_init < 1.0)
    j["plateau_duration_merged"] = plateau_duration_merged(stats, cfg.w_init, cfg.tau) / cfg.tau;
  const bool white = (stats.cov.eigenvalues().array() == stats.lambda(0)).all() && stats.lambda(0) == 1.0;
  if (cfg.model == ModelKind::merged && white && cfg.w_init > 0.0) {
    const auto sol = SigmoidSolution::white(cfg.dim, stats.exp_inv_len, cfg.w_init);
    j["sigmoid"] = {{"alpha", sol.alpha}, {"gamma", sol.gamma}, {"s0", sol.s0}, {"midpoint", sol.midpoint(cfg.tau) / cfg.tau}};
  }
  return j.dump(indent);
}

void write_theory(const ExperimentConfig& cfg, const fs::path& dir) {
  fs::create_directories(dir);
  write_text(dir / "theory.json", theory_json(cfg));
  const PopulationStats stats = stats_for(cfg);
  write_text(dir / "catalog.json", catalog_to_json(fixed_point_catalog(stats, std::max(cfg.heads, cfg.dim)), 2));
  const bool white = (stats.cov.eigenvalues().array() == 1.0).all();
  if (cfg.model == ModelKind::merged && white && cfg.w_init > 0.0) {
    const auto sol = SigmoidSolution::white(cfg.dim, stats.exp_inv_len, cfg.w_init);
    std::ofstream f(dir / "sigmoid.csv", std::ios::binary);
    f << "t,sigma,loss\n";
    const int points = 1000;
    for (int k = 0; k <= points; ++k) {
      const double t = cfg.t_end * k / points;
      f << format_double(t / cfg.tau) << ',' << format_double(sol.sigma(t, cfg.tau)) << ','
        << format_double(sol.loss(t, cfg.tau, cfg.dim)) << '\n';
    }
  }
}

fs::path default_output_root() {
  if (const char* env = std::getenv(kOutputRootEnv); env && *env) return env;
  return "runs";
}

}  // namespace attnflow
