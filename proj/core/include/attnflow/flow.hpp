#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include "attnflow/attention.hpp"
#include "attnflow/task_data.hpp"

namespace attnflow {

// ---------------------------------------------------------------------------
// Closed-form population loss and gradients.
//
// With effective matrix M the population loss is
//   L(M) = tr(Lambda) - 2 tr(M Lambda^2) + tr(M Lambda M^T E(hatLambda^2)).
// Every gradient below is tau dW/dt = -1/2 dL/dW, built from
//   G = Lambda^2 - E(hatLambda^2) M Lambda.
// ---------------------------------------------------------------------------

double population_loss(const Mat& m, const PopulationStats& stats);
double population_loss(const Params& p, const PopulationStats& stats);

/// -1/2 dL/dM.
Mat loss_direction(const Mat& m, const PopulationStats& stats);

MergedParams grad_merged(const MergedParams& p, const PopulationStats& stats);
SeparateParams grad_separate(const SeparateParams& p, const PopulationStats& stats);
Params grad(const Params& p, const PopulationStats& stats);

/// Gradient of the equivalent two-layer network, computed with the explicit
/// D^2 x D^2 feature covariance Lambda (x) E(hatLambda^2). Returns
/// (tau dw2/dt, tau dW1/dt). Slow; meant as an independent reference.
std::pair<Vec, Mat> grad_mlp_reference(const Vec& w2, const Mat& w1, const PopulationStats& stats);

/// Test-only fault injection: when set, grad() negates its output.
void set_gradient_sign_flip(bool on) noexcept;
[[nodiscard]] bool gradient_sign_flip() noexcept;

// ---------------------------------------------------------------------------
// Integration.
// ---------------------------------------------------------------------------

enum class Integrator { euler, rk4 };

/// Record times: t = 0, `log_points` log-spaced times in [log_start, t_end],
/// and, when `stride` > 0, every multiple of `stride`. Times snap to the step
/// grid.
struct SnapshotSchedule {
  int log_points = 512;
  double log_start = 0.0;  ///< 0 selects one step
  double stride = 0.0;
};

struct FlowConfig {
  double tau = 1.0;
  double dt = 1e-2;
  double t_end = 100.0;
  Integrator integrator = Integrator::rk4;
  SnapshotSchedule snapshots;
  double w_init = 1e-3;
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument unless tau, dt, t_end > 0 and dt <= t_end.
  void validate() const;
  [[nodiscard]] long steps() const;
};

/// Step sizes satisfying dt * max_d a_d / tau <= 1e-2.
double default_dt(const PopulationStats& stats, double tau);

struct HeadNorms {
  double value = 0.0;  ///< |v_i|
  double key = 0.0;    ///< ||K_i||_F (separate) or ||U_i||_F (merged)
  double query = 0.0;  ///< ||Q_i||_F (separate); 0 for merged models
};

struct Trajectory {
  ModelKind kind = ModelKind::separate;
  int dim = 0;
  int heads = 0;
  int rank = 1;
  double tau = 1.0;
  double lambda_max = 1.0;  ///< largest covariance eigenvalue

  std::vector<double> times;  ///< absolute time t
  std::vector<double> losses;
  std::vector<Mat> effective_matrices;
  std::vector<std::vector<HeadNorms>> head_norms;
  std::vector<double> conservation_drift;
  /// Per record, an H x D matrix of key alignments (see alignment_profile);
  /// merged models use |<U_i, e_d e_d^T>| / ||U_i||_F.
  std::vector<Mat> alignments;

  /// Full weights at each record. Kept in memory only; persisted selectively.
  std::vector<Params> params;

  double max_loss_increase = 0.0;  ///< largest single-step loss increase
  long steps = 0;

  [[nodiscard]] std::size_t size() const noexcept { return times.size(); }
  [[nodiscard]] bool empty() const noexcept { return times.empty(); }
  [[nodiscard]] double final_loss() const { return losses.back(); }
};

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, Trajectory partial)
      : std::runtime_error(what), partial_(std::move(partial)) {}
  [[nodiscard]] const Trajectory& partial() const noexcept { return partial_; }

 private:
  Trajectory partial_;
};

inline constexpr double kDivergenceLoss = 1e6;

/// Integrates tau dW/dt = grad(W) from `initial`. Throws DivergenceError when
/// the loss exceeds 1e6 or becomes non-finite.
Trajectory integrate(const Params& initial, const PopulationStats& stats, const FlowConfig& cfg);

/// One integrator step of size dt.
void step(Params& p, const PopulationStats& stats, double dt, double tau, Integrator method);

/// Max-norm deviation of all conserved quantities between `p_t` and `p_0`.
///   merged:   w2 w2^T - W1 W1^T
///   separate: |k_ir|^2 - |q_ir|^2 and sum_r |k_ir|^2 - v_i^2
double conservation_drift(const Params& p_t, const Params& p_0);
/// The conserved quantities, flattened in a fixed order.
Vec conserved_quantities(const Params& p);

std::vector<HeadNorms> head_norms(const Params& p);

// ---------------------------------------------------------------------------
// Plateaus.
// ---------------------------------------------------------------------------

enum class TimeAxis { linear, log };

struct PlateauConfig {
  /// Duration and slopes are measured in t (linear) or ln t (log).
  TimeAxis axis = TimeAxis::linear;
  /// Flat when |d ln L / d t| (linear) or |d ln L / d ln t| (log) is below this.
  /// Non-positive selects 1e-2 * max_d lambda_d^2 / tau for the linear axis
  /// and 0.3 for the log axis.
  double slope_threshold = 0.0;
  /// Minimum duration as a fraction of the run: of t_end on the linear axis,
  /// of ln(t_end / log_origin) on the log axis. A flat run reaching the last
  /// record is always reported (terminal convergence).
  double min_fraction = 0.05;
  /// Log axis origin; earlier times are clamped to it. Non-positive selects
  /// tau / max_d lambda_d^2, the fastest learning time scale.
  double log_origin = 0.0;
  double rel_tol = 0.02;
};

struct PlateauSegment {
  double t_start = 0.0;
  double t_end = 0.0;
  double mean_loss = 0.0;
  std::optional<int> matched;  ///< index into the theory loss list
  bool terminal = false;       ///< segment extends to the last record
  std::size_t first = 0;       ///< record indices covered, inclusive
  std::size_t last = 0;
};

struct PlateauReport {
  std::vector<PlateauSegment> segments;
  [[nodiscard]] std::size_t intermediate_count() const;
};

PlateauReport detect_plateaus(const Trajectory& traj, const std::vector<double>& theory_losses,
                              const PlateauConfig& cfg);
/// Linear axis with the default threshold.
PlateauReport detect_plateaus(const Trajectory& traj, const std::vector<double>& theory_losses,
                              double rel_tol);

// ---------------------------------------------------------------------------
// Monte Carlo oracle.
// ---------------------------------------------------------------------------

/// (y_q - yhat) d yhat / dW for one sequence, in the flat parameter layout.
Vec per_sample_gradient(const Params& p, const ContextStats& stats, const Vec& x_q, double y_q);
/// 1/2 (y_q - yhat)^2, whose negative gradient is per_sample_gradient.
double per_sample_loss(const Params& p, const ContextStats& stats, const Vec& x_q, double y_q);

struct McEstimate {
  Vec mean;
  Vec std_error;
  long samples = 0;
};

/// Sample mean and standard error of per_sample_gradient over `batch`
/// sequences. Work is split into fixed chunks with their own substreams, so
/// the result does not depend on `threads`.
McEstimate mc_gradient(const Params& p, const CovarianceSpec& cov, const LengthLaw& law, long batch,
                       const SeedStream& stream, int threads = 1);
/// Same, for the squared error (y_q - yhat)^2.
McEstimate mc_loss(const Params& p, const CovarianceSpec& cov, const LengthLaw& law, long batch,
                   const SeedStream& stream, int threads = 1);
/// Same estimator over an explicit list of sequences.
McEstimate mc_gradient(const Params& p, const std::vector<Sequence>& batch);

}  // namespace attnflow
