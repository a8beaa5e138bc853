#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <json.hpp>
#include <limits>
#include <sstream>

#include "attnflow/io.hpp"

using namespace attnflow;
using nlohmann::json;

namespace {

Trajectory small_trajectory() {
  const auto stats =
      population_stats(build_covariance(std::vector<double>{0.7, 0.2}), LengthLaw::fixed(5));
  SeedStream s(3, "io-test");
  FlowConfig cfg;
  cfg.dt = 0.05;
  cfg.t_end = 2.0;
  cfg.snapshots.log_points = 0;
  cfg.snapshots.stride = 0.5;
  return integrate(init_separate(2, 3, 1, 0.3, s), stats, cfg);
}

}  // namespace

TEST_SUITE("io") {
  TEST_CASE("format_double round-trips") {
    SeedStream s(1, "io-test");
    for (int k = 0; k < 1000; ++k) {
      const double x = std::ldexp(s.normal(), static_cast<int>(s.next_u32() % 200) - 100);
      CHECK(std::stod(format_double(x)) == x);
    }
    CHECK(format_double(0.1) == "0.1");
    CHECK(format_double(1.0) == "1");
    CHECK(std::strtod(format_double(std::numeric_limits<double>::denorm_min()).c_str(), nullptr) ==
          std::numeric_limits<double>::denorm_min());
  }

  TEST_CASE("trajectory CSV columns") {
    const Trajectory tr = small_trajectory();
    const auto cols = trajectory_csv_columns(tr);
    REQUIRE(cols.size() == 2 + 3 * 3 + 1 + 3 * 2 + 4);
    CHECK(cols[0] == "t");
    CHECK(cols[1] == "loss");
    CHECK(cols[2] == "v_1");
    CHECK(cols[3] == "k_1");
    CHECK(cols[4] == "q_1");
    CHECK(cols[11] == "conservation_drift");
    CHECK(cols[12] == "align_1_1");
    CHECK(cols[13] == "align_1_2");
    CHECK(cols[14] == "align_2_1");
    CHECK(cols[18] == "m_1_1");
    CHECK(cols[19] == "m_1_2");
    CHECK(cols[21] == "m_2_2");
  }

  TEST_CASE("trajectory CSV round-trips") {
    const Trajectory tr = small_trajectory();
    std::stringstream buf;
    write_trajectory_csv(buf, tr);
    std::string first;
    std::getline(std::stringstream(buf.str()), first);
    CHECK(first.rfind("# attnflow-trajectory schema=1 kind=separate D=2 H=3 R=1", 0) == 0);

    const Trajectory back = read_trajectory_csv(buf);
    CHECK(back.kind == tr.kind);
    CHECK(back.dim == 2);
    CHECK(back.heads == 3);
    CHECK(back.steps == tr.steps);
    CHECK(back.lambda_max == tr.lambda_max);
    CHECK(back.max_loss_increase == tr.max_loss_increase);
    REQUIRE(back.size() == tr.size());
    for (std::size_t i = 0; i < tr.size(); ++i) {
      CHECK(back.times[i] == tr.times[i]);
      CHECK(back.losses[i] == tr.losses[i]);
      CHECK(back.conservation_drift[i] == tr.conservation_drift[i]);
      CHECK(back.effective_matrices[i] == tr.effective_matrices[i]);
      CHECK(back.alignments[i] == tr.alignments[i]);
      CHECK(back.head_norms[i][2].query == tr.head_norms[i][2].query);
    }
    CHECK(back.params.empty());
  }

  TEST_CASE("malformed CSV is rejected") {
    std::stringstream none("");
    CHECK_THROWS_AS(read_trajectory_csv(none), std::runtime_error);
    std::stringstream wrong("# something else\nt,loss\n");
    CHECK_THROWS_AS(read_trajectory_csv(wrong), std::runtime_error);
  }

  TEST_CASE("params JSON round-trips for both models") {
    SeedStream s(4, "io-test");
    const Params merged = init_merged(3, 2, 0.7, s);
    const Params separate = init_separate(3, 2, 2, 0.7, s);
    for (const Params& p : {merged, separate}) {
      const Params back = params_from_json(params_to_json(p));
      CHECK(kind_of(back) == kind_of(p));
      CHECK(rank_of(back) == rank_of(p));
      CHECK(flat_of(back) == flat_of(p));
    }
    const json j = json::parse(params_to_json(separate));
    CHECK(j.at("model_kind") == "separate");
    CHECK(j.at("keys").size() == 2);
    CHECK(j.at("keys")[0].size() == 3);
    CHECK(j.at("keys")[0][0].size() == 2);
    CHECK(j.at("keys")[1][2][1].get<double>() == std::get<SeparateParams>(separate).keys(1)(2, 1));
    CHECK(json::parse(params_to_json(merged)).contains("kq"));
  }

  TEST_CASE("catalog JSON uses 1-based indices") {
    const auto stats = population_stats(build_covariance(std::vector<double>{0.5, 0.2}), LengthLaw::fixed(9));
    const json j = json::parse(catalog_to_json(fixed_point_catalog(stats)));
    REQUIRE(j.size() == 4);
    CHECK(j[0].at("indices").empty());
    CHECK(j[1].at("indices") == json::array({1}));
    CHECK(j[2].at("indices") == json::array({2}));
    CHECK(j[3].at("indices") == json::array({1, 2}));
    CHECK(j[3].at("loss").get<double>() == fixed_point_loss(stats, {0, 1}));
    CHECK(j[2].at("target_matrix")[1][1].get<double>() == doctest::Approx(0.2 / stats.a(1)));
  }
}
