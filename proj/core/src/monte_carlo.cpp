#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <thread>

#include "attnflow/flow.hpp"

namespace attnflow {

namespace {

constexpr long kChunks = 64;

void add_gradient(const Params& p, const Vec& beta, const Vec& x_q, double y_q, Eigen::Ref<Vec> out) {
  if (const auto* m = std::get_if<MergedParams>(&p)) {
    const int h = m->heads();
    const int d = m->dim();
    double yhat = 0.0;
    for (int i = 0; i < h; ++i) {
      const double s = beta.dot(m->kq(i) * x_q);
      out(i) = s;
      yhat += m->value(i) * s;
    }
    const double r = y_q - yhat;
    out.head(h) *= r;
    for (int i = 0; i < h; ++i) {
      Eigen::Map<Mat> g(out.data() + h + static_cast<Eigen::Index>(i) * d * d, d, d);
      g.noalias() = (r * m->value(i)) * beta * x_q.transpose();
    }
    return;
  }
  const auto& s = std::get<SeparateParams>(p);
  const int h = s.heads();
  const Eigen::Index block = static_cast<Eigen::Index>(s.dim()) * s.rank();
  double yhat = 0.0;
  for (int i = 0; i < h; ++i) {
    out(i) = (s.keys(i).transpose() * beta).dot(s.queries(i).transpose() * x_q);
    yhat += s.value(i) * out(i);
  }
  const double r = y_q - yhat;
  for (int i = 0; i < h; ++i) {
    Eigen::Map<Mat> gk(out.data() + h + i * block, s.dim(), s.rank());
    Eigen::Map<Mat> gq(out.data() + h + (h + i) * block, s.dim(), s.rank());
    const Eigen::RowVectorXd bk = (s.keys(i).transpose() * beta).transpose();
    const Eigen::RowVectorXd qx = (s.queries(i).transpose() * x_q).transpose();
    gk.noalias() = (r * s.value(i)) * beta * qx;
    gq.noalias() = (r * s.value(i)) * x_q * bk;
    out(i) *= r;
  }
}

/// Running mean and sum of squared deviations (Welford), merged with Chan's rule.
struct Moments {
  explicit Moments(Eigen::Index n) : mean(Vec::Zero(n)), m2(Vec::Zero(n)) {}
  long count = 0;
  Vec mean;
  Vec m2;

  void add(const Vec& x) {
    ++count;
    const Vec delta = x - mean;
    mean += delta / static_cast<double>(count);
    m2.array() += delta.array() * (x - mean).array();
  }

  void merge(const Moments& o) {
    if (o.count == 0) return;
    const double n = static_cast<double>(count + o.count);
    const Vec delta = o.mean - mean;
    mean += delta * (static_cast<double>(o.count) / n);
    m2 += o.m2 + delta.cwiseAbs2() * (static_cast<double>(count) * o.count / n);
    count += o.count;
  }

  [[nodiscard]] McEstimate finish() const {
    McEstimate e{mean, Vec::Zero(mean.size()), count};
    if (count > 1) e.std_error = (m2 / (static_cast<double>(count - 1) * count)).cwiseSqrt();
    return e;
  }
};

/// Draws one sequence's (beta, x_q, y_q) consuming normals in the same order
/// as sample_sequence.
struct LeanSampler {
  explicit LeanSampler(const CovarianceSpec& cov) : sq(cov.sqrt_matrix()), w(cov.dim()), g(cov.dim()), x(cov.dim()) {}

  void draw(int n, SeedStream& rng, Vec& beta, Vec& x_q, double& y_q) {
    const auto d = w.size();
    for (Eigen::Index i = 0; i < d; ++i) w(i) = rng.normal();
    beta.setZero();
    for (int k = 0; k < n; ++k) {
      for (Eigen::Index i = 0; i < d; ++i) g(i) = rng.normal();
      x.noalias() = sq * g;
      beta += w.dot(x) * x;
    }
    beta /= static_cast<double>(n);
    for (Eigen::Index i = 0; i < d; ++i) g(i) = rng.normal();
    x_q.noalias() = sq * g;
    y_q = w.dot(x_q);
  }

  Mat sq;
  Vec w, g, x;
};

template <class Fn>
McEstimate run_chunks(long batch, int threads, Eigen::Index width, Fn&& chunk_fn) {
  if (batch < 2) throw std::invalid_argument("Monte Carlo: batch must be >= 2");
  const long chunks = std::min(kChunks, batch);
  std::vector<Moments> parts(static_cast<std::size_t>(chunks), Moments(width));
  auto worker = [&](long first) {
    for (long c = first; c < chunks; c += std::max(threads, 1)) {
      const long lo = batch * c / chunks;
      const long hi = batch * (c + 1) / chunks;
      chunk_fn(c, hi - lo, parts[static_cast<std::size_t>(c)]);
    }
  };
  if (threads <= 1) {
    worker(0);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker, t);
    for (auto& th : pool) th.join();
  }
  Moments total(width);
  for (const auto& part : parts) total.merge(part);
  return total.finish();
}

}  // namespace

Vec per_sample_gradient(const Params& p, const ContextStats& stats, const Vec& x_q, double y_q) {
  Vec out(flat_of(p).size());
  add_gradient(p, stats.beta, x_q, y_q, out);
  return out;
}

double per_sample_loss(const Params& p, const ContextStats& stats, const Vec& x_q, double y_q) {
  const double r = y_q - forward(p, stats, x_q);
  return 0.5 * r * r;
}

McEstimate mc_gradient(const Params& p, const CovarianceSpec& cov, const LengthLaw& law, long batch,
                       const SeedStream& stream, int threads) {
  const Eigen::Index width = flat_of(p).size();
  return run_chunks(batch, threads, width, [&](long c, long count, Moments& acc) {
    SeedStream rng = stream.substream(static_cast<std::uint32_t>(c));
    LeanSampler sampler(cov);
    Vec beta(cov.dim()), x_q(cov.dim()), g(width);
    double y_q = 0.0;
    for (long k = 0; k < count; ++k) {
      sampler.draw(law.sample(rng), rng, beta, x_q, y_q);
      add_gradient(p, beta, x_q, y_q, g);
      acc.add(g);
    }
  });
}

McEstimate mc_loss(const Params& p, const CovarianceSpec& cov, const LengthLaw& law, long batch,
                   const SeedStream& stream, int threads) {
  return run_chunks(batch, threads, 1, [&](long c, long count, Moments& acc) {
    SeedStream rng = stream.substream(static_cast<std::uint32_t>(c));
    LeanSampler sampler(cov);
    Vec beta(cov.dim()), x_q(cov.dim()), e(1);
    double y_q = 0.0;
    for (long k = 0; k < count; ++k) {
      sampler.draw(law.sample(rng), rng, beta, x_q, y_q);
      const double r = y_q - forward(p, ContextStats{beta, Mat()}, x_q);
      e(0) = r * r;
      acc.add(e);
    }
  });
}

McEstimate mc_gradient(const Params& p, const std::vector<Sequence>& batch) {
  if (batch.size() < 2) throw std::invalid_argument("Monte Carlo: batch must be >= 2");
  Moments acc(flat_of(p).size());
  for (const auto& seq : batch) {
    const ContextStats cs = context_stats(seq);
    acc.add(per_sample_gradient(p, cs, seq.query_input, seq.query_output));
  }
  return acc.finish();
}

}  // namespace attnflow
