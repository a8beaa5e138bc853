#include "attnflow/flow.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>

#include "attnflow/theory.hpp"

namespace attnflow {

namespace {

std::atomic<bool> g_sign_flip{false};

}  // namespace

void set_gradient_sign_flip(bool on) noexcept { g_sign_flip.store(on); }
bool gradient_sign_flip() noexcept { return g_sign_flip.load(); }

double population_loss(const Mat& m, const PopulationStats& stats) {
  const Mat& lam = stats.cov_matrix();
  const Mat lam2 = lam * lam;
  const double cross = (m.array() * lam2.array()).sum();  // tr(M Lambda^2), Lambda^2 symmetric
  const double quad = ((m * lam * m.transpose()).array() * stats.exp_sq_cov.array()).sum();
  return stats.trace - 2.0 * cross + quad;
}

double population_loss(const Params& p, const PopulationStats& stats) {
  return population_loss(effective_matrix(p).m, stats);
}

Mat loss_direction(const Mat& m, const PopulationStats& stats) {
  const Mat& lam = stats.cov_matrix();
  return lam * lam - stats.exp_sq_cov * m * lam;
}

MergedParams grad_merged(const MergedParams& p, const PopulationStats& stats) {
  const Mat g = loss_direction(effective_matrix(p).m, stats);
  MergedParams out = MergedParams::zeros_like(p);
  for (int i = 0; i < p.heads(); ++i) {
    out.value(i) = (p.kq(i).array() * g.array()).sum();
    out.kq(i) = p.value(i) * g;
  }
  return out;
}

SeparateParams grad_separate(const SeparateParams& p, const PopulationStats& stats) {
  const Mat g = loss_direction(effective_matrix(p).m, stats);
  SeparateParams out = SeparateParams::zeros_like(p);
  for (int i = 0; i < p.heads(); ++i) {
    const Mat gq = g * p.queries(i);
    out.value(i) = (p.keys(i).array() * gq.array()).sum();
    out.keys(i) = p.value(i) * gq;
    out.queries(i).noalias() = p.value(i) * g.transpose() * p.keys(i);
  }
  return out;
}

Params grad(const Params& p, const PopulationStats& stats) {
  Params out = std::visit(
      [&](const auto& q) -> Params {
        using T = std::decay_t<decltype(q)>;
        if constexpr (std::is_same_v<T, MergedParams>) return grad_merged(q, stats);
        else return grad_separate(q, stats);
      },
      p);
  if (gradient_sign_flip()) flat_of(out) *= -1.0;
  return out;
}

std::pair<Vec, Mat> grad_mlp_reference(const Vec& w2, const Mat& w1, const PopulationStats& stats) {
  const int d = stats.dim();
  const Mat& lam = stats.cov_matrix();
  const Vec eyz = vec(lam * lam);
  Mat ezz(d * d, d * d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) ezz.block(i * d, j * d, d, d) = lam(i, j) * stats.exp_sq_cov;
  const Vec resid = eyz - ezz * (w1.transpose() * w2);  // E(z y) - E(z z^T) W1^T w2
  return {w1 * resid, w2 * resid.transpose()};
}

void FlowConfig::validate() const {
  if (!(tau > 0.0) || !(dt > 0.0) || !(t_end > 0.0))
    throw std::invalid_argument("flow config: tau, dt, t_end must be positive");
  if (dt > t_end) throw std::invalid_argument("flow config: dt must not exceed t_end");
  if (snapshots.log_points < 0) throw std::invalid_argument("flow config: log_points must be >= 0");
  if (snapshots.stride < 0.0) throw std::invalid_argument("flow config: stride must be >= 0");
}

long FlowConfig::steps() const { return static_cast<long>(std::ceil(t_end / dt - 1e-9)); }

double default_dt(const PopulationStats& stats, double tau) {
  return 1e-2 * tau / stats.a_vals.maxCoeff();
}

namespace {

class Stepper {
 public:
  Stepper(const Params& shape, const PopulationStats& stats) : stats_(stats), tmp_(shape) {}

  void operator()(Params& p, double h, double tau, Integrator method) {
    const double s = h / tau;
    Vec& x = flat_of(p);
    if (method == Integrator::euler) {
      x += s * flat_of(grad(p, stats_));
      return;
    }
    Vec& y = flat_of(tmp_);
    const Vec k1 = flat_of(grad(p, stats_));
    y = x + 0.5 * s * k1;
    const Vec k2 = flat_of(grad(tmp_, stats_));
    y = x + 0.5 * s * k2;
    const Vec k3 = flat_of(grad(tmp_, stats_));
    y = x + s * k3;
    const Vec k4 = flat_of(grad(tmp_, stats_));
    x += (s / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }

 private:
  const PopulationStats& stats_;
  Params tmp_;
};

std::vector<long> record_steps(const FlowConfig& cfg, long steps) {
  std::vector<long> out{0, steps};
  const auto& s = cfg.snapshots;
  if (s.log_points > 0) {
    const double lo = s.log_start > 0.0 ? s.log_start : cfg.dt;
    const double ratio = std::log(cfg.t_end / lo);
    for (int j = 0; j < s.log_points; ++j) {
      const double f = s.log_points == 1 ? 1.0 : static_cast<double>(j) / (s.log_points - 1);
      const double t = lo * std::exp(ratio * f);
      out.push_back(std::clamp(std::lround(t / cfg.dt), 1L, steps));
    }
  }
  if (s.stride > 0.0) {
    for (double t = s.stride; t < cfg.t_end; t += s.stride)
      out.push_back(std::clamp(std::lround(t / cfg.dt), 1L, steps));
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

Mat alignment_of(const Params& p, const CovarianceSpec& cov) {
  if (const auto* m = std::get_if<MergedParams>(&p)) return merged_alignment(*m, cov);
  return alignment_profile(std::get<SeparateParams>(p), cov).keys;
}

}  // namespace

void step(Params& p, const PopulationStats& stats, double dt, double tau, Integrator method) {
  Stepper(p, stats)(p, dt, tau, method);
}

Vec conserved_quantities(const Params& p) {
  if (const auto* m = std::get_if<MergedParams>(&p)) {
    const Vec w2 = mlp_output_weights(*m);
    const Mat w1 = mlp_hidden_weights(*m);
    return vec(w2 * w2.transpose() - w1 * w1.transpose());
  }
  const auto& s = std::get<SeparateParams>(p);
  const int h = s.heads();
  const int r = s.rank();
  Vec out(h * r + h);
  for (int i = 0; i < h; ++i) {
    double ksum = 0.0;
    for (int j = 0; j < r; ++j) {
      const double kk = s.keys(i).col(j).squaredNorm();
      out(i * r + j) = kk - s.queries(i).col(j).squaredNorm();
      ksum += kk;
    }
    out(h * r + i) = ksum - s.value(i) * s.value(i);
  }
  return out;
}

double conservation_drift(const Params& p_t, const Params& p_0) {
  const Vec a = conserved_quantities(p_t);
  const Vec b = conserved_quantities(p_0);
  if (a.size() != b.size()) throw std::invalid_argument("conservation_drift: shape mismatch");
  return a.size() == 0 ? 0.0 : (a - b).cwiseAbs().maxCoeff();
}

std::vector<HeadNorms> head_norms(const Params& p) {
  std::vector<HeadNorms> out;
  if (const auto* m = std::get_if<MergedParams>(&p)) {
    for (int i = 0; i < m->heads(); ++i) out.push_back({std::abs(m->value(i)), m->kq(i).norm(), 0.0});
    return out;
  }
  const auto& s = std::get<SeparateParams>(p);
  for (int i = 0; i < s.heads(); ++i)
    out.push_back({std::abs(s.value(i)), s.keys(i).norm(), s.queries(i).norm()});
  return out;
}

Trajectory integrate(const Params& initial, const PopulationStats& stats, const FlowConfig& cfg) {
  cfg.validate();
  if (dim_of(initial) != stats.dim()) throw std::invalid_argument("integrate: dimension mismatch");

  Trajectory traj;
  traj.kind = kind_of(initial);
  traj.dim = dim_of(initial);
  traj.heads = heads_of(initial);
  traj.rank = rank_of(initial);
  traj.tau = cfg.tau;
  traj.lambda_max = stats.lambda(0);

  const long steps = cfg.steps();
  const std::vector<long> records = record_steps(cfg, steps);
  const Vec c0 = conserved_quantities(initial);

  Params p = initial;
  auto record = [&](double t, double loss) {
    const EffectiveMatrix m = effective_matrix(p);
    traj.times.push_back(t);
    traj.losses.push_back(loss);
    traj.effective_matrices.push_back(m.m);
    traj.head_norms.push_back(head_norms(p));
    const Vec c = conserved_quantities(p);
    traj.conservation_drift.push_back(c.size() ? (c - c0).cwiseAbs().maxCoeff() : 0.0);
    traj.alignments.push_back(alignment_of(p, stats.cov));
    traj.params.push_back(p);
  };

  Stepper stepper(p, stats);
  double loss = population_loss(p, stats);
  double t = 0.0;
  std::size_t next = 0;
  if (records[next] == 0) {
    record(t, loss);
    ++next;
  }
  for (long k = 1; k <= steps; ++k) {
    const double h = std::min(cfg.dt, cfg.t_end - t);
    stepper(p, h, cfg.tau, cfg.integrator);
    t = (k == steps) ? cfg.t_end : k * cfg.dt;
    const double next_loss = population_loss(p, stats);
    if (!std::isfinite(next_loss) || next_loss > kDivergenceLoss) {
      record(t, next_loss);
      traj.steps = k;
      std::ostringstream msg;
      msg << "integration diverged at t/tau = " << t / cfg.tau << " (step " << k << "), loss = " << next_loss;
      throw DivergenceError(msg.str(), std::move(traj));
    }
    traj.max_loss_increase = std::max(traj.max_loss_increase, next_loss - loss);
    loss = next_loss;
    if (next < records.size() && records[next] == k) {
      record(t, loss);
      ++next;
    }
  }
  traj.steps = steps;
  return traj;
}

}  // namespace attnflow
