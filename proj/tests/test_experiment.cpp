#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "attnflow/experiment.hpp"
#include "attnflow/io.hpp"

using namespace attnflow;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

ExperimentConfig small_config() {
  return config_from_json(R"({
    "name": "small", "model": "separate", "D": 2, "H": 2, "R": 1, "N": 7,
    "eigenvalues": [0.8, 0.3], "w_init": 0.05, "t_end": 3000, "dt": 0.05,
    "snapshots": {"log_points": 64, "stride": 50}, "plateaus": {"axis": "log"},
    "seeds": [0, 1, 2]})");
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("attnflow_test_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_SUITE("experiment") {
  TEST_CASE("presets") {
    CHECK(preset_names() == std::vector<std::string>{"fig1", "fig3", "fig4", "next-token"});
    const auto f1 = preset_config("fig1");
    CHECK(f1.model == ModelKind::merged);
    CHECK(f1.dim == 4);
    CHECK(f1.heads == 8);
    CHECK(f1.length.n == 31);
    CHECK(f1.plateaus.axis == TimeAxis::linear);
    const auto f3 = preset_config("fig3");
    CHECK(f3.model == ModelKind::separate);
    CHECK(f3.eigen.values == std::vector<double>{0.4, 0.3, 0.2, 0.1});
    CHECK(f3.seeds.size() == 6);
    const auto f4 = preset_config("fig4");
    CHECK(f4.dim == 8);
    CHECK(f4.heads == 9);
    CHECK(f4.eigen.rule == EigenSpec::Rule::inverse_index);
    const auto nt = preset_config("next-token");
    CHECK(nt.length.kind == LengthLaw::Kind::uniform);
    CHECK(nt.length.n == 31);
    for (const auto& name : preset_names()) CHECK_NOTHROW(preset_config(name).validate());
    CHECK_THROWS_AS(preset_config("fig9"), ConfigError);
  }

  TEST_CASE("config JSON round-trips and overrides") {
    const auto cfg = apply_overrides(preset_config("fig3"), R"({"w_init": 0.02, "seeds": [7]})");
    CHECK(cfg.w_init == 0.02);
    CHECK(cfg.seeds == std::vector<std::uint64_t>{7});
    CHECK(cfg.dim == 4);
    const auto back = config_from_json(config_to_json(cfg));
    CHECK(config_to_json(back) == config_to_json(cfg));
    const auto from_preset = config_from_json(R"({"preset": "fig4", "R": 2})");
    CHECK(from_preset.rank == 2);
    CHECK(from_preset.dim == 8);
  }

  TEST_CASE("invalid configurations are rejected") {
    const auto base = preset_config("fig3");
    for (const char* bad : {R"({"unknown_key": 1})", R"({"D": 0})", R"({"R": 5})", R"({"N": 0})",
                            R"({"w_init": -1})", R"({"tau": 0})", R"({"t_end": -5})",
                            R"({"eigen": {"rule": "explicit", "values": [0.4, 0.3]}})",
                            R"({"eigen": {"rule": "explicit", "values": [0.4, 0.3, 0.2, -0.1]}})",
                            R"({"fixed_task_fraction": 0.5})", R"({"seeds": []})",
                            R"({"integrator": "leapfrog"})", R"({"model": "mlp"})",
                            R"({"plateaus": {"axis": "sqrt"}})", R"({"length": {"kind": "poisson"}})"}) {
      INFO(bad);
      CHECK_THROWS_AS(apply_overrides(base, bad), ConfigError);
    }
    CHECK_THROWS_AS(config_from_json("{not json"), ConfigError);
  }

  TEST_CASE("derived statistics and flow settings") {
    const auto cfg = preset_config("fig4");
    const auto stats = stats_for(cfg);
    CHECK(stats.trace == doctest::Approx(1.0));
    CHECK(stats.lambda(0) / stats.lambda(7) == doctest::Approx(8.0));
    const auto fc = flow_config_for(preset_config("fig3"), 3);
    CHECK(fc.dt == default_dt(stats_for(preset_config("fig3")), 1.0));
    CHECK(fc.seed == 3);
    CHECK(flat_of(initial_params(cfg, 2)) == flat_of(initial_params(cfg, 2)));
    CHECK(flat_of(initial_params(cfg, 2)) != flat_of(initial_params(cfg, 3)));
  }

  TEST_CASE("reruns write identical files") {
    const auto cfg = small_config();
    const fs::path a = scratch("rerun_a");
    const fs::path b = scratch("rerun_b");
    write_run(run_experiment(cfg, 1), a);
    write_run(run_experiment(cfg, 3), b);
    std::size_t files = 0;
    for (const auto& entry : fs::directory_iterator(a)) {
      ++files;
      CHECK(slurp(entry.path()) == slurp(b / entry.path().filename()));
    }
    CHECK(files == 10);
    CHECK(fs::exists(a / "trajectory_seed0.csv"));
    CHECK(fs::exists(a / "scalar_ode_seed2.csv"));

    std::ifstream csv(a / "trajectory_seed1.csv");
    const Trajectory tr = read_trajectory_csv(csv);
    CHECK(tr.dim == 2);
    CHECK(tr.times.back() == doctest::Approx(3000.0));

    const json report = json::parse(slurp(a / "report.json"));
    CHECK(report.at("schema") == 1);
    CHECK(report.at("seeds").size() == 3);
    CHECK(report.at("ladder").size() == 3);
    const json seed = json::parse(slurp(a / "seed0.json"));
    CHECK(seed.contains("initial_params"));
    CHECK(seed.contains("final_params"));
    fs::remove_all(a);
    fs::remove_all(b);
  }

  TEST_CASE("small run reaches the global minimum through the ladder") {
    const auto run = run_experiment(small_config());
    CHECK(!run.any_diverged());
    for (const auto& s : run.seeds) {
      CHECK(s.distance_to_global_min < 1e-3);
      CHECK(s.max_drift < 1e-8);
      REQUIRE(!s.plateaus.segments.empty());
      CHECK(s.plateaus.segments.back().matched == 2);
    }
  }

  TEST_CASE("divergence is reported per seed") {
    const auto cfg = apply_overrides(preset_config("fig1"), R"({"w_init": 5, "dt": 0.5, "integrator": "euler"})");
    const auto run = run_experiment(cfg);
    CHECK(run.any_diverged());
    CHECK(!run.seeds[0].error.empty());
  }

  TEST_CASE("larger merged initialization leaves the plateau earlier") {
    const auto base = preset_config("fig1");
    const auto sweep = run_sweep(base, SweepAxis::w_init, {1e-4, 1e-3, 1e-2});
    std::vector<double> first;
    for (const auto& run : sweep.runs) {
      const auto t = drop_times(run.seeds[0].trajectory, run.ladder);
      REQUIRE(t[0].has_value());
      first.push_back(*t[0]);
    }
    CHECK(first[0] > first[1]);
    CHECK(first[1] > first[2]);
    const json summary = json::parse(sweep_summary_json(sweep));
    CHECK(summary.at("axis") == "w_init");
    CHECK(summary.at("rows").size() == 3);
    CHECK(summary.at("rows")[2].at("first_drop_time").get<double>() == doctest::Approx(first[2]));
  }

  TEST_CASE("sweep axes") {
    CHECK(parse_sweep_axis("rank") == SweepAxis::rank);
    CHECK(parse_sweep_axis("N") == SweepAxis::n);
    CHECK(sweep_axis_name(SweepAxis::w_init) == "w_init");
    CHECK_THROWS_AS(parse_sweep_axis("depth"), ConfigError);
  }

  TEST_CASE("crossing and drop times interpolate") {
    Trajectory tr;
    tr.times = {0.0, 1.0, 2.0, 3.0};
    tr.losses = {1.0, 0.8, 0.4, 0.2};
    CHECK(*crossing_time(tr, 0.6) == doctest::Approx(1.5));
    CHECK(*crossing_time(tr, 0.7) == doctest::Approx(1.25));
    CHECK(*crossing_time(tr, 1.5) == 0.0);
    CHECK(!crossing_time(tr, 0.1).has_value());
    const auto d = drop_times(tr, {1.0, 0.6, 0.2, 0.0});
    REQUIRE(d.size() == 3);
    CHECK(*d[0] == doctest::Approx(1.0));
    CHECK(*d[1] == doctest::Approx(2.0));
    CHECK(!d[2].has_value());
  }

  TEST_CASE("theory JSON for a white merged configuration") {
    const json j = json::parse(theory_json(preset_config("fig1")));
    CHECK(j.at("ladder").size() == 5);
    CHECK(j.at("global_min_predictor")[0][0].get<double>() == doctest::Approx(31.0 / 36.0));
    CHECK(j.at("plateau_duration_merged").get<double>() == doctest::Approx(3.454).epsilon(1e-3));
    CHECK(j.at("sigmoid").at("alpha").get<double>() == doctest::Approx(36.0 / 31.0));
    CHECK(!json::parse(theory_json(preset_config("fig3"))).contains("sigmoid"));

    const fs::path dir = scratch("theory");
    write_theory(preset_config("fig3"), dir);
    CHECK(fs::exists(dir / "theory.json"));
    CHECK(json::parse(slurp(dir / "catalog.json")).size() == 16);
    fs::remove_all(dir);
  }

  TEST_CASE("output root follows the environment") {
    ::unsetenv(kOutputRootEnv);
    CHECK(default_output_root() == fs::path("runs"));
    ::setenv(kOutputRootEnv, "/tmp/elsewhere", 1);
    CHECK(default_output_root() == fs::path("/tmp/elsewhere"));
    ::unsetenv(kOutputRootEnv);
  }
}
