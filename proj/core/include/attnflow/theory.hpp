#pragma once

#include <vector>

#include "attnflow/attention.hpp"
#include "attnflow/task_data.hpp"

namespace attnflow {

/// [Lambda + E(1/N)(Lambda + tr(Lambda) I)]^{-1}; the converged model predicts
/// beta^T (this) x_q.
Mat global_min_predictor(const PopulationStats& stats);

/// sigma(t) = e^{2 gamma t/tau} / (alpha (e^{2 gamma t/tau} - 1) + gamma / s0).
struct SigmoidSolution {
  double alpha = 1.0;
  double gamma = 1.0;
  double s0 = 0.0;

  /// White covariance: alpha = 1 + E(1/N)(1 + D), gamma = sqrt(D), s0 = w_init^2.
  static SigmoidSolution white(int dim, double exp_inv_len, double w_init);

  [[nodiscard]] double sigma(double t, double tau) const;
  /// (1 - 2 sigma + alpha sigma^2) * dim
  [[nodiscard]] double loss(double t, double tau, int dim) const;
  /// Time at which sigma reaches 1/(2 alpha).
  [[nodiscard]] double midpoint(double tau) const;
};

double sigma_of_t(int dim, int n, double w_init, double tau, double t);
double sigmoid_loss(int dim, int n, double w_init, double tau, double t);

struct FixedPoint {
  std::vector<int> index_set;  ///< zero-based eigen indices, ascending
  double loss = 0.0;
  Mat target_matrix;
  /// Rank-one weights realizing target_matrix with minimal l2 norm: positive
  /// values, head d aligned with eigenvector d, other heads zero.
  SeparateParams min_norm_params;
};

/// tr(Lambda) - sum_{d in S} lambda_d^3 / a_d.
double fixed_point_loss(const PopulationStats& stats, const std::vector<int>& subset);
/// sum_{d in S} (lambda_d / a_d) e_d e_d^T.
Mat fixed_point_target(const PopulationStats& stats, const std::vector<int>& subset);
/// `heads` defaults to D and must exceed every index in `subset`.
FixedPoint fixed_point(const PopulationStats& stats, std::vector<int> subset, int heads = 0);
/// S_m = {0, ..., m-1}.
FixedPoint sequential_fixed_point(const PopulationStats& stats, int m, int heads = 0);

inline constexpr int kMaxExhaustiveCatalogDim = 12;

/// All 2^D subsets (ordered by bitmask) when D <= 12, else the chain S_0..S_D.
std::vector<FixedPoint> fixed_point_catalog(const PopulationStats& stats, int heads = 0);

/// L(M_0), ..., L(M_D).
std::vector<double> loss_ladder(const PopulationStats& stats);

/// dv/dt for tau dv/dt = lambda^2 v^2 - lambda a v^5.
double scalar_ode_rhs(double v, double lambda, double a, double tau);
/// (lambda / a)^{1/3}.
double scalar_ode_fixed_point(double lambda, double a);

/// rk4 solution of the scalar ODE from v(0) = v0, sampled at `times`
/// (ascending, relative to the start) with internal step at most `dt`.
std::vector<double> solve_scalar_ode(double v0, double lambda, double a, double tau,
                                     const std::vector<double>& times, double dt);

/// Elapsed time to move from v0 to v under the scalar ODE, from its implicit
/// closed form. Valid for 0 < v0 <= v < v*.
double implicit_time(double v, double v0, double lambda, double a, double tau);

/// tau / ||Lambda^2||_F * ln(1 / w_init).
double plateau_duration_merged(const PopulationStats& stats, double w_init, double tau);
/// tau / (lambda_{m+1}^2 v_entry), m zero-based count of learned eigenvectors.
double plateau_duration_separate(int m, const PopulationStats& stats, double v_at_entry, double tau);

/// sum_{d < m} (lambda_d / a_d) e_d e_d^T.
Mat pcr_predictor(const PopulationStats& stats, int m);

/// Per-head alignment with each eigenvector, H x D. For column set K_i the
/// entry is ||K_i^T e_d|| / ||K_i||_F, which is |cos(k_i, e_d)| at rank one.
/// Heads with norm below 1e-9 report zeros.
struct AlignmentProfile {
  Mat keys;
  Mat queries;
};

AlignmentProfile alignment_profile(const SeparateParams& p, const CovarianceSpec& cov);
/// |<U_i, e_d e_d^T>| / ||U_i||_F.
Mat merged_alignment(const MergedParams& p, const CovarianceSpec& cov);

}  // namespace attnflow
