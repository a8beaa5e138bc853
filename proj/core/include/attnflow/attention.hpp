#pragma once

#include <variant>

#include "attnflow/linalg.hpp"
#include "attnflow/random.hpp"
#include "attnflow/task_data.hpp"

namespace attnflow {

/// Merged key-query linear attention: y = sum_i v_i beta^T U_i x_q.
///
/// Weights live in one flat vector so that integrators and gradient code can
/// treat them as a single state. Layout: [v_1..v_H] [vec(U_1)] .. [vec(U_H)],
/// each U_i column-major.
class MergedParams {
 public:
  MergedParams() = default;
  MergedParams(int dim, int heads);

  static MergedParams zeros_like(const MergedParams& p) { return MergedParams(p.dim(), p.heads()); }

  [[nodiscard]] int dim() const noexcept { return dim_; }
  [[nodiscard]] int heads() const noexcept { return heads_; }

  auto values() { return data_.head(heads_); }
  [[nodiscard]] auto values() const { return data_.head(heads_); }
  double& value(int i) { return data_(i); }
  [[nodiscard]] double value(int i) const { return data_(i); }
  Eigen::Map<Mat> kq(int i) { return {data_.data() + offset(i), dim_, dim_}; }
  [[nodiscard]] Eigen::Map<const Mat> kq(int i) const { return {data_.data() + offset(i), dim_, dim_}; }

  Vec& flat() noexcept { return data_; }
  [[nodiscard]] const Vec& flat() const noexcept { return data_; }

 private:
  [[nodiscard]] Eigen::Index offset(int i) const { return heads_ + static_cast<Eigen::Index>(i) * dim_ * dim_; }
  int dim_ = 0;
  int heads_ = 0;
  Vec data_;
};

/// Separate rank-R key/query attention: y = sum_i sum_r v_i beta^T k_ir q_ir^T x_q.
///
/// Layout: [v_1..v_H] [K_1] .. [K_H] [Q_1] .. [Q_H], where K_i is D x R
/// column-major with column r equal to k_{i,r} (likewise Q_i).
class SeparateParams {
 public:
  SeparateParams() = default;
  SeparateParams(int dim, int heads, int rank);

  static SeparateParams zeros_like(const SeparateParams& p) {
    return SeparateParams(p.dim(), p.heads(), p.rank());
  }

  [[nodiscard]] int dim() const noexcept { return dim_; }
  [[nodiscard]] int heads() const noexcept { return heads_; }
  [[nodiscard]] int rank() const noexcept { return rank_; }

  auto values() { return data_.head(heads_); }
  [[nodiscard]] auto values() const { return data_.head(heads_); }
  double& value(int i) { return data_(i); }
  [[nodiscard]] double value(int i) const { return data_(i); }
  Eigen::Map<Mat> keys(int i) { return {data_.data() + key_offset(i), dim_, rank_}; }
  [[nodiscard]] Eigen::Map<const Mat> keys(int i) const { return {data_.data() + key_offset(i), dim_, rank_}; }
  Eigen::Map<Mat> queries(int i) { return {data_.data() + query_offset(i), dim_, rank_}; }
  [[nodiscard]] Eigen::Map<const Mat> queries(int i) const {
    return {data_.data() + query_offset(i), dim_, rank_};
  }

  Vec& flat() noexcept { return data_; }
  [[nodiscard]] const Vec& flat() const noexcept { return data_; }

 private:
  [[nodiscard]] Eigen::Index block() const { return static_cast<Eigen::Index>(dim_) * rank_; }
  [[nodiscard]] Eigen::Index key_offset(int i) const { return heads_ + i * block(); }
  [[nodiscard]] Eigen::Index query_offset(int i) const { return heads_ + (heads_ + i) * block(); }
  int dim_ = 0;
  int heads_ = 0;
  int rank_ = 0;
  Vec data_;
};

enum class ModelKind { merged, separate };

using Params = std::variant<MergedParams, SeparateParams>;

[[nodiscard]] ModelKind kind_of(const Params& p) noexcept;
[[nodiscard]] int dim_of(const Params& p) noexcept;
[[nodiscard]] int heads_of(const Params& p) noexcept;
/// 1 for merged models.
[[nodiscard]] int rank_of(const Params& p) noexcept;
[[nodiscard]] const Vec& flat_of(const Params& p) noexcept;
Vec& flat_of(Params& p) noexcept;

struct CubicFeature {
  Vec z;  ///< vec(beta x_q^T), column-major, length D^2
};

struct EffectiveMatrix {
  Mat m;
};

/// v_i ~ N(0, w^2/H), U_i entries ~ N(0, w^2/(H D^2)).
MergedParams init_merged(int dim, int heads, double w_init, SeedStream& stream);
/// v_i ~ N(0, w^2/H), key and query entries ~ N(0, w^2/(H R D)). Requires 1 <= R <= D.
SeparateParams init_separate(int dim, int heads, int rank, double w_init, SeedStream& stream);

double forward_merged(const MergedParams& p, const ContextStats& stats, const Vec& x_q);
double forward_separate(const SeparateParams& p, const ContextStats& stats, const Vec& x_q);
double forward(const Params& p, const ContextStats& stats, const Vec& x_q);

CubicFeature cubic_feature(const ContextStats& stats, const Vec& x_q);

/// Second-layer weights w2 = (v_1..v_H) of the equivalent two-layer network.
Vec mlp_output_weights(const MergedParams& p);
/// First-layer weights W1 (H x D^2), row i = vec(U_i)^T.
Mat mlp_hidden_weights(const MergedParams& p);
/// Inverse of the two functions above.
MergedParams merged_from_mlp(const Vec& w2, const Mat& w1);
/// w2^T W1 z.
double forward_mlp(const MergedParams& p, const CubicFeature& z);

/// D x D^2 block-diagonal matrix with k^T on every diagonal block
/// (a 1-D convolution with kernel k, kernel size D and stride D).
Mat cnn_kernel(const Vec& k);
/// sum_i v_i q_i^T K_i z. Rank-one models only.
double forward_cnn(const SeparateParams& p, const CubicFeature& z);

EffectiveMatrix effective_matrix(const MergedParams& p);
EffectiveMatrix effective_matrix(const SeparateParams& p);
EffectiveMatrix effective_matrix(const Params& p);

/// Rank-one model with R*H heads, head (i, r) carrying (v_i, k_ir, q_ir).
SeparateParams split_ranks(const SeparateParams& p);

}  // namespace attnflow
