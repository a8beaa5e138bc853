#include <algorithm>
#include <cmath>
#include <limits>

#include "attnflow/flow.hpp"

namespace attnflow {

std::size_t PlateauReport::intermediate_count() const {
  return static_cast<std::size_t>(
      std::count_if(segments.begin(), segments.end(), [](const auto& s) { return !s.terminal; }));
}

namespace {

std::optional<int> match_loss(double loss, const std::vector<double>& theory, double rel_tol) {
  std::optional<int> best;
  double best_err = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < theory.size(); ++k) {
    const double err = std::abs(loss - theory[k]) / std::abs(theory[k]);
    if (err < best_err) {
      best_err = err;
      best = static_cast<int>(k);
    }
  }
  if (best && best_err <= rel_tol) return best;
  return std::nullopt;
}

PlateauReport detect(const Trajectory& traj, const std::vector<double>& theory, double rel_tol,
                     double threshold, double min_fraction, TimeAxis axis, double origin) {
  PlateauReport report;
  const std::size_t n = traj.size();
  if (n == 0) return report;
  if (n == 1) {
    report.segments.push_back({traj.times[0], traj.times[0], traj.losses[0],
                               match_loss(traj.losses[0], theory, rel_tol), true, 0, 0});
    return report;
  }

  std::vector<double> x(n);
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = axis == TimeAxis::linear ? traj.times[i] : std::log(std::max(traj.times[i], origin));
    y[i] = std::log(std::max(traj.losses[i], std::numeric_limits<double>::min()));
  }
  const double span = axis == TimeAxis::linear ? traj.times.back() : x.back() - std::log(origin);
  const double min_len = min_fraction * span;

  auto flat = [&](std::size_t i) { return std::abs(y[i + 1] - y[i]) <= threshold * (x[i + 1] - x[i]); };

  std::size_t i = 0;
  while (i + 1 < n) {
    if (!flat(i)) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j + 1 < n && flat(j)) ++j;  // records i..j form a flat run
    const double len = x[j] - x[i];
    const bool terminal = j == n - 1;
    if ((len >= min_len && len > 0.0) || terminal) {
      double area = 0.0;
      for (std::size_t k = i; k < j; ++k)
        area += 0.5 * (traj.losses[k] + traj.losses[k + 1]) * (x[k + 1] - x[k]);
      const double mean = len > 0.0 ? area / len : traj.losses[j];
      report.segments.push_back(
          {traj.times[i], traj.times[j], mean, match_loss(mean, theory, rel_tol), terminal, i, j});
    }
    i = j;
  }
  return report;
}

}  // namespace

PlateauReport detect_plateaus(const Trajectory& traj, const std::vector<double>& theory_losses,
                              const PlateauConfig& cfg) {
  double threshold = cfg.slope_threshold;
  if (threshold <= 0.0)
    threshold = cfg.axis == TimeAxis::log ? 0.3 : 1e-2 * traj.lambda_max * traj.lambda_max / traj.tau;
  const double origin =
      cfg.log_origin > 0.0 ? cfg.log_origin : traj.tau / (traj.lambda_max * traj.lambda_max);
  return detect(traj, theory_losses, cfg.rel_tol, threshold, cfg.min_fraction, cfg.axis, origin);
}

PlateauReport detect_plateaus(const Trajectory& traj, const std::vector<double>& theory_losses,
                              double rel_tol) {
  PlateauConfig cfg;
  cfg.rel_tol = rel_tol;
  return detect_plateaus(traj, theory_losses, cfg);
}

}  // namespace attnflow
