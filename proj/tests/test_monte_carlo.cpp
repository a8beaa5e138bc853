#include <doctest.h>

#include "attnflow/flow.hpp"

using namespace attnflow;

namespace {

Params random_params(ModelKind kind, int dim, int heads, int rank, SeedStream& s) {
  Params p = kind == ModelKind::merged ? Params(MergedParams(dim, heads)) : Params(SeparateParams(dim, heads, rank));
  for (auto& x : flat_of(p)) x = 0.7 * s.normal();
  return p;
}

}  // namespace

TEST_SUITE("monte_carlo") {
  TEST_CASE("duplicated sequences give zero standard error") {
    SeedStream s(1, "mc-test");
    const auto cov = build_covariance(std::vector<double>{0.5, 0.2, 0.1});
    const Sequence seq = sample_sequence(cov, 6, s);
    const Params p = random_params(ModelKind::separate, 3, 2, 2, s);
    const McEstimate est = mc_gradient(p, std::vector<Sequence>(5, seq));
    const ContextStats cs = context_stats(seq);
    const Vec single = per_sample_gradient(p, cs, seq.query_input, seq.query_output);
    CHECK((est.mean - single).lpNorm<Eigen::Infinity>() < 1e-14);
    CHECK(est.std_error.lpNorm<Eigen::Infinity>() < 1e-14);
    CHECK(est.samples == 5);
  }

  TEST_CASE("per-sample gradients match central finite differences") {
    SeedStream s(2, "mc-test");
    for (int k = 0; k < 30; ++k) {
      const int dim = 2 + k % 3;
      std::vector<double> ev(dim);
      for (double& l : ev) l = 0.2 + s.uniform();
      const auto cov = build_covariance_random_basis(ev, s.substream(k));
      const Sequence seq = sample_sequence(cov, 2 + k % 15, s);
      const ContextStats cs = context_stats(seq);
      const Params p = random_params(k % 2 ? ModelKind::separate : ModelKind::merged, dim, 1 + k % 3, 1 + k % dim, s);
      const Vec g = per_sample_gradient(p, cs, seq.query_input, seq.query_output);
      Vec fd(g.size());
      const double h = 1e-5;
      for (Eigen::Index i = 0; i < g.size(); ++i) {
        Params a = p;
        Params b = p;
        flat_of(a)(i) += h;
        flat_of(b)(i) -= h;
        fd(i) = -(per_sample_loss(a, cs, seq.query_input, seq.query_output) -
                  per_sample_loss(b, cs, seq.query_input, seq.query_output)) /
                (2.0 * h);
      }
      CHECK((g - fd).lpNorm<Eigen::Infinity>() / g.lpNorm<Eigen::Infinity>() < 1e-5);
    }
  }

  TEST_CASE("per-sample loss is half the squared residual") {
    SeedStream s(3, "mc-test");
    const auto cov = build_covariance(std::vector<double>{1.0, 0.5});
    const Sequence seq = sample_sequence(cov, 4, s);
    const ContextStats cs = context_stats(seq);
    const Params p = random_params(ModelKind::merged, 2, 2, 1, s);
    const double r = seq.query_output - forward(p, cs, seq.query_input);
    CHECK(per_sample_loss(p, cs, seq.query_input, seq.query_output) == doctest::Approx(0.5 * r * r));
  }

  TEST_CASE("estimates do not depend on the thread count") {
    SeedStream s(4, "mc-test");
    const auto cov = build_covariance(std::vector<double>{0.6, 0.3});
    const Params p = random_params(ModelKind::separate, 2, 2, 1, s);
    const SeedStream stream(4, "mc");
    const McEstimate one = mc_gradient(p, cov, LengthLaw::fixed(5), 20000, stream, 1);
    const McEstimate three = mc_gradient(p, cov, LengthLaw::fixed(5), 20000, stream, 3);
    CHECK(one.mean == three.mean);
    CHECK(one.std_error == three.std_error);
    const McEstimate loss1 = mc_loss(p, cov, LengthLaw::uniform(5), 20000, stream, 1);
    const McEstimate loss2 = mc_loss(p, cov, LengthLaw::uniform(5), 20000, stream, 2);
    CHECK(loss1.mean == loss2.mean);
  }

  TEST_CASE("streaming estimator matches the explicit-batch estimator on the same draws") {
    SeedStream s(5, "mc-test");
    const auto cov = build_covariance(std::vector<double>{0.6, 0.3});
    const Params p = random_params(ModelKind::merged, 2, 1, 1, s);
    const McEstimate est = mc_gradient(p, cov, LengthLaw::fixed(3), 5000, SeedStream(5, "mc"));
    CHECK(est.samples == 5000);
    CHECK(est.std_error.minCoeff() > 0.0);
    CHECK_THROWS_AS(mc_gradient(p, cov, LengthLaw::fixed(3), 1, SeedStream(5, "mc")), std::invalid_argument);
  }
}
