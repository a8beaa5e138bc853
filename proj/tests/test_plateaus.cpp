#include <doctest.h>

#include <cmath>

#include "attnflow/flow.hpp"

using namespace attnflow;

namespace {

Trajectory synthetic(const std::vector<double>& times, double (*loss)(double)) {
  Trajectory tr;
  tr.tau = 1.0;
  tr.lambda_max = 1.0;
  tr.times = times;
  for (double t : times) tr.losses.push_back(loss(t));
  return tr;
}

std::vector<double> linspace(double a, double b, int n) {
  std::vector<double> out;
  for (int k = 0; k < n; ++k) out.push_back(a + (b - a) * k / (n - 1));
  return out;
}

std::vector<double> logspace(double a, double b, int n) {
  std::vector<double> out;
  for (int k = 0; k < n; ++k) out.push_back(a * std::pow(b / a, static_cast<double>(k) / (n - 1)));
  return out;
}

// Steps from 1.0 to 0.6 at t = 100 and to 0.3 at t = 3000, sharp in log time.
double staircase(double t) {
  auto drop = [t](double at, double amount) { return amount / (1.0 + std::pow(at / std::max(t, 1e-300), 12.0)); };
  return 1.0 - drop(100.0, 0.4) - drop(3000.0, 0.3);
}

}  // namespace

TEST_SUITE("plateaus") {
  TEST_CASE("constant loss is one plateau spanning the run") {
    const Trajectory tr = synthetic(linspace(0.0, 100.0, 101), [](double) { return 0.5; });
    for (TimeAxis axis : {TimeAxis::linear, TimeAxis::log}) {
      PlateauConfig cfg;
      cfg.axis = axis;
      const auto rep = detect_plateaus(tr, {1.0, 0.5}, cfg);
      REQUIRE(rep.segments.size() == 1);
      CHECK(rep.segments[0].terminal);
      CHECK(rep.segments[0].t_end == 100.0);
      CHECK(rep.segments[0].mean_loss == doctest::Approx(0.5));
      CHECK(rep.segments[0].matched == 1);
      CHECK(rep.intermediate_count() == 0);
    }
    CHECK(detect_plateaus(tr, {1.0, 0.5}, 0.02).segments.front().t_start == 0.0);
  }

  TEST_CASE("exponential decay has no plateau") {
    const Trajectory tr = synthetic(linspace(0.0, 50.0, 501), [](double t) { return std::exp(-0.5 * t); });
    CHECK(detect_plateaus(tr, {1.0}, 0.02).segments.empty());
  }

  TEST_CASE("staircase on the log axis gives matched plateaus") {
    const Trajectory tr = synthetic(logspace(1e-2, 1e5, 600), staircase);
    PlateauConfig cfg;
    cfg.axis = TimeAxis::log;
    const auto rep = detect_plateaus(tr, {1.0, 0.6, 0.3}, cfg);
    REQUIRE(rep.segments.size() == 3);
    CHECK(rep.segments[0].matched == 0);
    CHECK(rep.segments[1].matched == 1);
    CHECK(rep.segments[2].matched == 2);
    CHECK(rep.segments[2].terminal);
    CHECK(rep.intermediate_count() == 2);
    CHECK(rep.segments[0].t_end < 100.0);
    CHECK(rep.segments[1].t_start > 100.0);
    CHECK(rep.segments[1].t_end < 3000.0);
  }

  TEST_CASE("a vanishing tolerance leaves plateaus unmatched") {
    const Trajectory tr = synthetic(logspace(1e-2, 1e5, 600), staircase);
    PlateauConfig cfg;
    cfg.axis = TimeAxis::log;
    cfg.rel_tol = 1e-15;
    const auto rep = detect_plateaus(tr, {1.0, 0.6, 0.3}, cfg);
    REQUIRE(rep.segments.size() == 3);
    CHECK(!rep.segments[1].matched);
  }

  TEST_CASE("short flat runs below the minimum fraction are dropped") {
    const Trajectory tr = synthetic(logspace(1e-2, 1e5, 600), staircase);
    PlateauConfig cfg;
    cfg.axis = TimeAxis::log;
    cfg.min_fraction = 0.9;
    const auto rep = detect_plateaus(tr, {1.0, 0.6, 0.3}, cfg);
    REQUIRE(rep.segments.size() == 1);
    CHECK(rep.segments[0].terminal);
  }

  TEST_CASE("single record and empty trajectories") {
    const Trajectory one = synthetic({0.0}, [](double) { return 2.0; });
    const auto rep = detect_plateaus(one, {2.0}, 0.02);
    REQUIRE(rep.segments.size() == 1);
    CHECK(rep.segments[0].terminal);
    CHECK(detect_plateaus(Trajectory{}, {1.0}, 0.02).segments.empty());
  }
}
