#include "attnflow/theory.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace attnflow {

namespace {

constexpr double kNormFloor = 1e-9;

void check_subset(const PopulationStats& stats, const std::vector<int>& subset) {
  for (int d : subset) {
    if (d < 0 || d >= stats.dim())
      throw std::out_of_range("fixed point: eigen index " + std::to_string(d) + " out of range");
  }
}

}  // namespace

Mat global_min_predictor(const PopulationStats& stats) {
  const int d = stats.dim();
  const Mat& lam = stats.cov_matrix();
  const Mat a = lam + stats.exp_inv_len * (lam + stats.trace * Mat::Identity(d, d));
  Eigen::LLT<Mat> llt(a);
  if (llt.info() != Eigen::Success) throw std::runtime_error("global_min_predictor: singular matrix");
  return llt.solve(Mat::Identity(d, d));
}

SigmoidSolution SigmoidSolution::white(int dim, double exp_inv_len, double w_init) {
  return {1.0 + exp_inv_len * (1.0 + dim), std::sqrt(static_cast<double>(dim)), w_init * w_init};
}

double SigmoidSolution::sigma(double t, double tau) const {
  // Divide through by e^{2 gamma t / tau} to stay finite for large t.
  const double decay = std::exp(-2.0 * gamma * t / tau);
  return 1.0 / (alpha * (1.0 - decay) + decay * gamma / s0);
}

double SigmoidSolution::loss(double t, double tau, int dim) const {
  const double s = sigma(t, tau);
  return (1.0 - 2.0 * s + alpha * s * s) * dim;
}

double SigmoidSolution::midpoint(double tau) const {
  // 1/sigma = alpha (1 - e) + e gamma/s0 = 2 alpha  ->  e = alpha / (gamma/s0 - alpha)
  return tau / (2.0 * gamma) * std::log((gamma / s0 - alpha) / alpha);
}

double sigma_of_t(int dim, int n, double w_init, double tau, double t) {
  return SigmoidSolution::white(dim, 1.0 / n, w_init).sigma(t, tau);
}

double sigmoid_loss(int dim, int n, double w_init, double tau, double t) {
  return SigmoidSolution::white(dim, 1.0 / n, w_init).loss(t, tau, dim);
}

double fixed_point_loss(const PopulationStats& stats, const std::vector<int>& subset) {
  check_subset(stats, subset);
  double loss = stats.trace;
  for (int d : subset) loss -= std::pow(stats.lambda(d), 3) / stats.a(d);
  return loss;
}

Mat fixed_point_target(const PopulationStats& stats, const std::vector<int>& subset) {
  check_subset(stats, subset);
  Mat m = Mat::Zero(stats.dim(), stats.dim());
  for (int d : subset) {
    const Vec e = stats.cov.eigenvector(d);
    m += (stats.lambda(d) / stats.a(d)) * e * e.transpose();
  }
  return m;
}

FixedPoint fixed_point(const PopulationStats& stats, std::vector<int> subset, int heads) {
  check_subset(stats, subset);
  std::sort(subset.begin(), subset.end());
  if (std::adjacent_find(subset.begin(), subset.end()) != subset.end())
    throw std::invalid_argument("fixed point: repeated index");
  if (heads <= 0) heads = stats.dim();
  if (!subset.empty() && subset.back() >= heads)
    throw std::invalid_argument("fixed point: needs more heads than the largest eigen index");

  FixedPoint fp{subset, fixed_point_loss(stats, subset), fixed_point_target(stats, subset),
                SeparateParams(stats.dim(), heads, 1)};
  for (int d : subset) {
    const double v = scalar_ode_fixed_point(stats.lambda(d), stats.a(d));
    const Vec e = stats.cov.eigenvector(d);
    fp.min_norm_params.value(d) = v;
    fp.min_norm_params.keys(d).col(0) = v * e;
    fp.min_norm_params.queries(d).col(0) = v * e;
  }
  return fp;
}

FixedPoint sequential_fixed_point(const PopulationStats& stats, int m, int heads) {
  if (m < 0 || m > stats.dim()) throw std::out_of_range("sequential fixed point: m out of range");
  std::vector<int> s(static_cast<std::size_t>(m));
  for (int d = 0; d < m; ++d) s[static_cast<std::size_t>(d)] = d;
  return fixed_point(stats, std::move(s), heads);
}

std::vector<FixedPoint> fixed_point_catalog(const PopulationStats& stats, int heads) {
  const int d = stats.dim();
  std::vector<FixedPoint> out;
  if (d > kMaxExhaustiveCatalogDim) {
    for (int m = 0; m <= d; ++m) out.push_back(sequential_fixed_point(stats, m, heads));
    return out;
  }
  const unsigned count = 1u << d;
  out.reserve(count);
  for (unsigned mask = 0; mask < count; ++mask) {
    std::vector<int> s;
    for (int i = 0; i < d; ++i)
      if (mask & (1u << i)) s.push_back(i);
    out.push_back(fixed_point(stats, std::move(s), heads));
  }
  return out;
}

std::vector<double> loss_ladder(const PopulationStats& stats) {
  std::vector<double> out;
  std::vector<int> s;
  out.push_back(fixed_point_loss(stats, s));
  for (int d = 0; d < stats.dim(); ++d) {
    s.push_back(d);
    out.push_back(fixed_point_loss(stats, s));
  }
  return out;
}

double scalar_ode_rhs(double v, double lambda, double a, double tau) {
  const double v2 = v * v;
  return (lambda * lambda * v2 - lambda * a * v2 * v2 * v) / tau;
}

double scalar_ode_fixed_point(double lambda, double a) { return std::cbrt(lambda / a); }

std::vector<double> solve_scalar_ode(double v0, double lambda, double a, double tau,
                                     const std::vector<double>& times, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("solve_scalar_ode: dt must be positive");
  std::vector<double> out;
  out.reserve(times.size());
  double t = 0.0;
  double v = v0;
  auto f = [&](double x) { return scalar_ode_rhs(x, lambda, a, tau); };
  for (double target : times) {
    if (target < t) throw std::invalid_argument("solve_scalar_ode: times must ascend from 0");
    while (t < target) {
      const double h = std::min(dt, target - t);
      const double k1 = f(v);
      const double k2 = f(v + 0.5 * h * k1);
      const double k3 = f(v + 0.5 * h * k2);
      const double k4 = f(v + h * k3);
      v += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      t = (target - t <= dt) ? target : t + h;
    }
    out.push_back(v);
  }
  return out;
}

double implicit_time(double v, double v0, double lambda, double a, double tau) {
  const double c = a / lambda;
  const double c3 = std::cbrt(c);
  const double vstar = 1.0 / c3;
  if (!(v0 > 0.0) || !(v >= v0) || !(v < vstar))
    throw std::domain_error("implicit_time: requires 0 < v0 <= v < v*");
  auto antiderivative = [&](double x) {
    const double u = c3 * x;
    const double log_term = std::log((u * u + u + 1.0) / ((1.0 - u) * (1.0 - u)));
    const double atan_term = 2.0 * std::numbers::sqrt3 * std::atan((2.0 * u + 1.0) / std::numbers::sqrt3);
    return c3 / 6.0 * (log_term - atan_term) - 1.0 / x;
  };
  return tau / (lambda * lambda) * (antiderivative(v) - antiderivative(v0));
}

double plateau_duration_merged(const PopulationStats& stats, double w_init, double tau) {
  if (!(w_init > 0.0 && w_init < 1.0))
    throw std::invalid_argument("plateau_duration_merged: requires 0 < w_init < 1");
  const double norm = stats.cov_squared().norm();
  return tau / norm * std::log(1.0 / w_init);
}

double plateau_duration_separate(int m, const PopulationStats& stats, double v_at_entry, double tau) {
  if (m < 0 || m >= stats.dim()) throw std::out_of_range("plateau_duration_separate: m out of range");
  if (!(v_at_entry > 0.0))
    throw std::invalid_argument("plateau_duration_separate: v_at_entry must be positive");
  const double l = stats.lambda(m);
  return tau / (l * l * v_at_entry);
}

Mat pcr_predictor(const PopulationStats& stats, int m) {
  if (m < 0 || m > stats.dim()) throw std::out_of_range("pcr_predictor: m out of range");
  std::vector<int> s(static_cast<std::size_t>(m));
  for (int d = 0; d < m; ++d) s[static_cast<std::size_t>(d)] = d;
  return fixed_point_target(stats, s);
}

AlignmentProfile alignment_profile(const SeparateParams& p, const CovarianceSpec& cov) {
  const int h = p.heads();
  const int d = p.dim();
  if (cov.dim() != d) throw std::invalid_argument("alignment_profile: dimension mismatch");
  AlignmentProfile out{Mat::Zero(h, d), Mat::Zero(h, d)};
  const Mat& e = cov.eigenvectors();
  auto profile = [&](const auto& w) -> Eigen::RowVectorXd {
    const double n = w.norm();
    if (n < kNormFloor) return Eigen::RowVectorXd::Zero(d);
    const Mat proj = e.transpose() * w;  // D x R
    return (proj.rowwise().norm() / n).transpose();
  };
  for (int i = 0; i < h; ++i) {
    out.keys.row(i) = profile(p.keys(i));
    out.queries.row(i) = profile(p.queries(i));
  }
  return out;
}

Mat merged_alignment(const MergedParams& p, const CovarianceSpec& cov) {
  Mat out = Mat::Zero(p.heads(), p.dim());
  const Mat& e = cov.eigenvectors();
  for (int i = 0; i < p.heads(); ++i) {
    const double n = p.kq(i).norm();
    if (n < kNormFloor) continue;
    const Mat rot = e.transpose() * p.kq(i) * e;
    out.row(i) = (rot.diagonal().cwiseAbs() / n).transpose();
  }
  return out;
}

}  // namespace attnflow
