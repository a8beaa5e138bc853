#include "attnflow/attention.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace attnflow {

namespace {

void check_dims(int dim, int heads) {
  if (dim < 1) throw std::invalid_argument("params: D must be >= 1");
  if (heads < 1) throw std::invalid_argument("params: H must be >= 1");
}

void check_scale(double w_init) {
  if (!(w_init >= 0.0) || !std::isfinite(w_init))
    throw std::invalid_argument("init: w_init must be finite and non-negative");
}

void check_input(int dim, const ContextStats& stats, const Vec& x_q) {
  if (stats.beta.size() != dim || x_q.size() != dim)
    throw std::invalid_argument("forward: dimension mismatch, model D = " + std::to_string(dim));
}

}  // namespace

MergedParams::MergedParams(int dim, int heads) : dim_(dim), heads_(heads) {
  check_dims(dim, heads);
  data_ = Vec::Zero(heads + static_cast<Eigen::Index>(heads) * dim * dim);
}

SeparateParams::SeparateParams(int dim, int heads, int rank) : dim_(dim), heads_(heads), rank_(rank) {
  check_dims(dim, heads);
  if (rank < 1 || rank > dim)
    throw std::invalid_argument("params: rank must satisfy 1 <= R <= D, got R = " + std::to_string(rank));
  data_ = Vec::Zero(heads + 2 * static_cast<Eigen::Index>(heads) * dim * rank);
}

ModelKind kind_of(const Params& p) noexcept {
  return std::holds_alternative<MergedParams>(p) ? ModelKind::merged : ModelKind::separate;
}

int dim_of(const Params& p) noexcept {
  return std::visit([](const auto& q) { return q.dim(); }, p);
}

int heads_of(const Params& p) noexcept {
  return std::visit([](const auto& q) { return q.heads(); }, p);
}

int rank_of(const Params& p) noexcept {
  if (const auto* s = std::get_if<SeparateParams>(&p)) return s->rank();
  return 1;
}

const Vec& flat_of(const Params& p) noexcept {
  return std::visit([](const auto& q) -> const Vec& { return q.flat(); }, p);
}

Vec& flat_of(Params& p) noexcept {
  return std::visit([](auto& q) -> Vec& { return q.flat(); }, p);
}

MergedParams init_merged(int dim, int heads, double w_init, SeedStream& stream) {
  check_scale(w_init);
  MergedParams p(dim, heads);
  const double sv = w_init / std::sqrt(static_cast<double>(heads));
  const double su = w_init / std::sqrt(static_cast<double>(heads) * dim * dim);
  for (int i = 0; i < heads; ++i) p.value(i) = sv * stream.normal();
  for (int i = 0; i < heads; ++i) {
    auto u = p.kq(i);
    for (Eigen::Index j = 0; j < u.size(); ++j) u.data()[j] = su * stream.normal();
  }
  return p;
}

SeparateParams init_separate(int dim, int heads, int rank, double w_init, SeedStream& stream) {
  check_scale(w_init);
  SeparateParams p(dim, heads, rank);
  const double sv = w_init / std::sqrt(static_cast<double>(heads));
  const double sw = w_init / std::sqrt(static_cast<double>(heads) * rank * dim);
  for (int i = 0; i < heads; ++i) p.value(i) = sv * stream.normal();
  auto rest = p.flat().tail(p.flat().size() - heads);
  for (Eigen::Index j = 0; j < rest.size(); ++j) rest(j) = sw * stream.normal();
  return p;
}

double forward_merged(const MergedParams& p, const ContextStats& stats, const Vec& x_q) {
  check_input(p.dim(), stats, x_q);
  double y = 0.0;
  for (int i = 0; i < p.heads(); ++i) y += p.value(i) * stats.beta.dot(p.kq(i) * x_q);
  return y;
}

double forward_separate(const SeparateParams& p, const ContextStats& stats, const Vec& x_q) {
  check_input(p.dim(), stats, x_q);
  double y = 0.0;
  for (int i = 0; i < p.heads(); ++i) {
    const Vec bk = p.keys(i).transpose() * stats.beta;
    const Vec qx = p.queries(i).transpose() * x_q;
    y += p.value(i) * bk.dot(qx);
  }
  return y;
}

double forward(const Params& p, const ContextStats& stats, const Vec& x_q) {
  if (const auto* m = std::get_if<MergedParams>(&p)) return forward_merged(*m, stats, x_q);
  return forward_separate(std::get<SeparateParams>(p), stats, x_q);
}

CubicFeature cubic_feature(const ContextStats& stats, const Vec& x_q) {
  if (stats.beta.size() != x_q.size()) throw std::invalid_argument("cubic_feature: dimension mismatch");
  const Mat outer = stats.beta * x_q.transpose();
  return {vec(outer)};
}

Vec mlp_output_weights(const MergedParams& p) { return p.values(); }

Mat mlp_hidden_weights(const MergedParams& p) {
  const int d2 = p.dim() * p.dim();
  Mat w1(p.heads(), d2);
  for (int i = 0; i < p.heads(); ++i) w1.row(i) = Eigen::Map<const Vec>(p.kq(i).data(), d2).transpose();
  return w1;
}

MergedParams merged_from_mlp(const Vec& w2, const Mat& w1) {
  const auto heads = w2.size();
  const int dim = static_cast<int>(std::lround(std::sqrt(static_cast<double>(w1.cols()))));
  if (w1.rows() != heads || static_cast<Eigen::Index>(dim) * dim != w1.cols())
    throw std::invalid_argument("merged_from_mlp: W1 must be H x D^2");
  MergedParams p(dim, static_cast<int>(heads));
  p.values() = w2;
  for (int i = 0; i < p.heads(); ++i) Eigen::Map<Vec>(p.kq(i).data(), w1.cols()) = w1.row(i).transpose();
  return p;
}

double forward_mlp(const MergedParams& p, const CubicFeature& z) {
  if (z.z.size() != static_cast<Eigen::Index>(p.dim()) * p.dim())
    throw std::invalid_argument("forward_mlp: feature length must be D^2");
  return mlp_output_weights(p).dot(mlp_hidden_weights(p) * z.z);
}

Mat cnn_kernel(const Vec& k) {
  const auto d = k.size();
  Mat kk = Mat::Zero(d, d * d);
  for (Eigen::Index b = 0; b < d; ++b) kk.block(b, b * d, 1, d) = k.transpose();
  return kk;
}

double forward_cnn(const SeparateParams& p, const CubicFeature& z) {
  if (p.rank() != 1) throw std::invalid_argument("forward_cnn: requires rank 1");
  if (z.z.size() != static_cast<Eigen::Index>(p.dim()) * p.dim())
    throw std::invalid_argument("forward_cnn: feature length must be D^2");
  double y = 0.0;
  for (int i = 0; i < p.heads(); ++i) {
    const Vec k = p.keys(i).col(0);
    y += p.value(i) * p.queries(i).col(0).dot(cnn_kernel(k) * z.z);
  }
  return y;
}

EffectiveMatrix effective_matrix(const MergedParams& p) {
  Mat m = Mat::Zero(p.dim(), p.dim());
  for (int i = 0; i < p.heads(); ++i) m += p.value(i) * p.kq(i);
  return {m};
}

EffectiveMatrix effective_matrix(const SeparateParams& p) {
  Mat m = Mat::Zero(p.dim(), p.dim());
  for (int i = 0; i < p.heads(); ++i) m.noalias() += p.value(i) * p.keys(i) * p.queries(i).transpose();
  return {m};
}

EffectiveMatrix effective_matrix(const Params& p) {
  return std::visit([](const auto& q) { return effective_matrix(q); }, p);
}

SeparateParams split_ranks(const SeparateParams& p) {
  SeparateParams out(p.dim(), p.heads() * p.rank(), 1);
  for (int i = 0; i < p.heads(); ++i) {
    for (int r = 0; r < p.rank(); ++r) {
      const int h = i * p.rank() + r;
      out.value(h) = p.value(i);
      out.keys(h).col(0) = p.keys(i).col(r);
      out.queries(h).col(0) = p.queries(i).col(r);
    }
  }
  return out;
}

}  // namespace attnflow
