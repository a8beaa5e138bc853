#include <doctest.h>

#include <cmath>
#include <unsupported/Eigen/KroneckerProduct>

#include "attnflow/experiment.hpp"
#include "attnflow/flow.hpp"
#include "attnflow/theory.hpp"

using namespace attnflow;

namespace {

PopulationStats fig3_stats(int n = 31) {
  return population_stats(build_covariance(std::vector<double>{0.4, 0.3, 0.2, 0.1}), LengthLaw::fixed(n));
}

PopulationStats white_stats(int dim, int n) {
  return population_stats(build_covariance(std::vector<double>(dim, 1.0)), LengthLaw::fixed(n));
}

}  // namespace

TEST_SUITE("theory") {
  TEST_CASE("global minimum for white inputs") {
    const Mat m = global_min_predictor(white_stats(4, 31));
    CHECK((m - (31.0 / 36.0) * Mat::Identity(4, 4)).norm() < 1e-14);
    CHECK(31.0 / 36.0 == doctest::Approx(0.8611).epsilon(1e-4));
  }

  TEST_CASE("global minimum tends to the inverse covariance as N grows") {
    const auto stats = fig3_stats(1000000000);
    const Mat inv = stats.cov_matrix().inverse();
    CHECK((global_min_predictor(stats) - inv).norm() / inv.norm() < 1e-7);
  }

  TEST_CASE("global minimum solves the Kronecker normal equations") {
    SeedStream s(11, "theory-test");
    const auto cov = build_covariance_random_basis(std::vector<double>{0.9, 0.5, 0.35}, s);
    const auto stats = population_stats(cov, LengthLaw::uniform(12));
    const Mat lam = cov.matrix();
    const Mat kron = Eigen::kroneckerProduct(lam, stats.exp_sq_cov).eval();
    const Mat lam2 = lam * lam;
    const Vec ref = kron.lu().solve(vec(lam2));
    const Mat m = global_min_predictor(stats);
    CHECK((vec(m) - ref).norm() / ref.norm() < 1e-12);
    CHECK(loss_direction(m, stats).norm() < 1e-12);
  }

  TEST_CASE("sigmoid endpoints and midpoint") {
    const double w = 0.01;
    CHECK(sigma_of_t(4, 31, w, 1.0, 0.0) == doctest::Approx(w * w / 2.0).epsilon(1e-12));
    CHECK(sigma_of_t(4, 31, w, 1.0, 1e4) == doctest::Approx(31.0 / 36.0).epsilon(1e-12));
    CHECK(sigmoid_loss(4, 31, w, 1.0, 1e4) == doctest::Approx(4.0 * 5.0 / 36.0).epsilon(1e-10));
    const auto sol = SigmoidSolution::white(4, 1.0 / 31.0, w);
    CHECK(sol.sigma(sol.midpoint(2.0), 2.0) == doctest::Approx(1.0 / (2.0 * sol.alpha)).epsilon(1e-12));
    CHECK(sol.midpoint(2.0) == doctest::Approx(2.0 * sol.midpoint(1.0)));
  }

  TEST_CASE("sigmoid solves its logistic ODE") {
    // d sigma / dt = 2 sigma (gamma - alpha gamma sigma) / tau for the sigmoid family.
    const auto sol = SigmoidSolution::white(3, 0.1, 0.05);
    for (double t : {0.0, 1.0, 2.5, 4.0}) {
      const double h = 1e-5;
      const double d = (sol.sigma(t + h, 1.0) - sol.sigma(t - h, 1.0)) / (2.0 * h);
      const double s = sol.sigma(t, 1.0);
      CHECK(d == doctest::Approx(2.0 * sol.gamma * s * (1.0 - sol.alpha * s)).epsilon(1e-7));
    }
  }

  TEST_CASE("fixed-point losses") {
    const auto stats = fig3_stats();
    CHECK(fixed_point_loss(stats, {}) == doctest::Approx(1.0));
    CHECK(fixed_point_loss(stats, {0}) == doctest::Approx(0.64058).epsilon(1e-5));
    CHECK(fixed_point_loss(stats, {0, 1, 2, 3}) == doctest::Approx(0.13600).epsilon(1e-4));
    for (int m = 0; m <= 4; ++m) {
      const auto fp = sequential_fixed_point(stats, m);
      CHECK(population_loss(fp.target_matrix, stats) == doctest::Approx(fp.loss).epsilon(1e-12));
    }
    CHECK_THROWS_AS(fixed_point(stats, {4}), std::out_of_range);
    CHECK_THROWS_AS(fixed_point(stats, {2}, 2), std::invalid_argument);
  }

  TEST_CASE("loss ladder is strictly decreasing and ends at the global minimum") {
    const auto stats = fig3_stats();
    const auto ladder = loss_ladder(stats);
    REQUIRE(ladder.size() == 5);
    for (std::size_t m = 1; m < ladder.size(); ++m) CHECK(ladder[m] < ladder[m - 1]);
    CHECK(ladder.back() == doctest::Approx(population_loss(global_min_predictor(stats), stats)).epsilon(1e-12));
  }

  TEST_CASE("catalog enumerates every subset and its stationary points") {
    const auto stats = fig3_stats();
    const auto cat = fixed_point_catalog(stats);
    REQUIRE(cat.size() == 16);
    CHECK(cat.front().index_set.empty());
    CHECK(cat.back().index_set == std::vector<int>{0, 1, 2, 3});
    CHECK((cat.back().target_matrix - global_min_predictor(stats)).norm() < 1e-12);
    for (const auto& fp : cat) {
      const Params p = fp.min_norm_params;
      CHECK((effective_matrix(p).m - fp.target_matrix).norm() < 1e-12);
      CHECK(flat_of(grad(p, stats)).lpNorm<Eigen::Infinity>() < 1e-12);
    }
    CHECK(fixed_point_catalog(stats, 6).front().min_norm_params.heads() == 6);
  }

  TEST_CASE("catalog falls back to the sequential chain in high dimension") {
    const auto stats = population_stats(build_covariance(inverse_index_spectrum(13)), LengthLaw::fixed(20));
    const auto cat = fixed_point_catalog(stats);
    REQUIRE(cat.size() == 14);
    CHECK(cat[5].index_set == std::vector<int>{0, 1, 2, 3, 4});
  }

  TEST_CASE("min-norm weights are balanced and beat rescaled realizations") {
    const auto stats = fig3_stats();
    const auto fp = fixed_point(stats, {0, 2});
    const SeparateParams& p = fp.min_norm_params;
    const double c = stats.lambda(0) / stats.a(0);
    CHECK(p.value(0) == doctest::Approx(std::cbrt(c)));
    CHECK(p.keys(0).norm() == doctest::Approx(std::cbrt(c)));
    CHECK(p.queries(0).norm() == doctest::Approx(std::cbrt(c)));
    CHECK(p.value(1) == 0.0);
    SeedStream s(12, "theory-test");
    for (int k = 0; k < 20; ++k) {
      SeparateParams q = p;
      const double a = std::exp(0.5 * s.normal());
      const double b = std::exp(0.5 * s.normal());
      q.value(0) *= a;
      q.keys(0) *= b;
      q.queries(0) /= a * b;
      CHECK((effective_matrix(q).m - fp.target_matrix).norm() < 1e-12);
      CHECK(q.flat().norm() >= p.flat().norm() - 1e-12);
    }
  }

  TEST_CASE("scalar ODE fixed point and closed-form time") {
    const auto stats = fig3_stats();
    const double l = stats.lambda(0);
    const double a = stats.a(0);
    CHECK(scalar_ode_rhs(0.0, l, a, 1.0) == 0.0);
    const double vs = scalar_ode_fixed_point(l, a);
    CHECK(vs == doctest::Approx(1.3097).epsilon(1e-4));
    CHECK(std::abs(scalar_ode_rhs(vs, l, a, 1.0)) < 1e-14);
    CHECK(scalar_ode_rhs(0.5, l, a, 2.0) == doctest::Approx(0.5 * (l * l * 0.25 - l * a * std::pow(0.5, 5))));

    const double v0 = 0.01;
    const double v1 = 0.9 * vs;
    const double t1 = implicit_time(v1, v0, l, a, 1.0);
    const auto traj = solve_scalar_ode(v0, l, a, 1.0, {0.0, t1}, 1e-2);
    CHECK(traj[0] == v0);
    CHECK(traj[1] == doctest::Approx(v1).epsilon(1e-6));
    CHECK(implicit_time(v0, v0, l, a, 1.0) == 0.0);
    CHECK(implicit_time(v1, v0, l, a, 3.0) == doctest::Approx(3.0 * t1));
    CHECK_THROWS_AS(implicit_time(vs * 1.1, v0, l, a, 1.0), std::domain_error);
    CHECK_THROWS_AS(implicit_time(v0, v1, l, a, 1.0), std::domain_error);
  }

  TEST_CASE("plateau duration estimates") {
    const auto white = white_stats(4, 31);
    CHECK(plateau_duration_merged(white, 1e-3, 1.0) == doctest::Approx(3.454).epsilon(1e-3));
    const auto doubled = population_stats(build_covariance(std::vector<double>(4, std::sqrt(2.0))), LengthLaw::fixed(31));
    CHECK(plateau_duration_merged(doubled, 1e-3, 1.0) ==
          doctest::Approx(0.5 * plateau_duration_merged(white, 1e-3, 1.0)));
    const auto stats = fig3_stats();
    CHECK(plateau_duration_separate(0, stats, 1.0 / 160.0, 1.0) == doctest::Approx(1000.0));
    for (int m = 1; m < 4; ++m)
      CHECK(plateau_duration_separate(m, stats, 0.01, 1.0) > plateau_duration_separate(m - 1, stats, 0.01, 1.0));
  }

  TEST_CASE("principal component regression predictors") {
    const auto stats = fig3_stats();
    CHECK(pcr_predictor(stats, 0).norm() == 0.0);
    CHECK((pcr_predictor(stats, 4) - global_min_predictor(stats)).norm() < 1e-12);
    const auto inf = fig3_stats(1000000000);
    Mat expected = Mat::Zero(4, 4);
    expected(0, 0) = 1.0 / 0.4;
    expected(1, 1) = 1.0 / 0.3;
    CHECK((pcr_predictor(inf, 2) - expected).norm() < 1e-7);
  }

  TEST_CASE("alignment of one-hot heads") {
    const auto cov = build_covariance(std::vector<double>{0.5, 0.3, 0.2});
    SeparateParams p(3, 2, 1);
    p.keys(0)(1, 0) = 2.0;
    p.queries(0)(1, 0) = -1.0;
    p.keys(1)(0, 0) = 1.0;
    p.keys(1)(2, 0) = 1.0;
    const auto prof = alignment_profile(p, cov);
    CHECK(prof.keys(0, 1) == doctest::Approx(1.0));
    CHECK(prof.keys(0, 0) == 0.0);
    CHECK(prof.queries(0, 1) == doctest::Approx(1.0));
    CHECK(prof.keys(1, 0) == doctest::Approx(std::sqrt(0.5)));
    CHECK(prof.queries.row(1).norm() == 0.0);

    MergedParams m(3, 1);
    m.kq(0)(2, 2) = -3.0;
    m.kq(0)(0, 1) = 4.0;
    const Mat ma = merged_alignment(m, cov);
    CHECK(ma(0, 2) == doctest::Approx(0.6));
    CHECK(ma(0, 1) == 0.0);
  }

  TEST_CASE("trained heads align with distinct eigenvectors") {
    ExperimentConfig cfg = preset_config("fig3");
    cfg.seeds = {0};
    const RunResult run = run_experiment(cfg);
    const Mat& align = run.seeds[0].trajectory.alignments.back();
    const auto& norms = run.seeds[0].trajectory.head_norms.back();
    std::vector<int> used;
    for (int i = 0; i < align.rows(); ++i) {
      if (norms[static_cast<std::size_t>(i)].value < 0.1) continue;
      Eigen::Index d = 0;
      CHECK(align.row(i).maxCoeff(&d) >= 0.99);
      CHECK(std::find(used.begin(), used.end(), static_cast<int>(d)) == used.end());
      used.push_back(static_cast<int>(d));
    }
    CHECK(used.size() == 4);
  }
}
