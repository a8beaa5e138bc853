#pragma once

#include <optional>
#include <string>
#include <vector>

namespace attnflow {

struct CriterionResult {
  std::string id;
  std::string title;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

struct VerifyOptions {
  /// Seed-level parallelism for the simulation runs.
  int threads = 1;
  /// Replaces the plateau match tolerance of every preset when set.
  std::optional<double> plateau_rel_tol;
  /// Negate the closed-form gradient (mutation check).
  bool flip_gradient_sign = false;
  long mc_samples = 1'000'000;
  int mc_points = 50;
  /// Criterion ids to run; empty runs all.
  std::vector<std::string> only;
};

/// Ids of the acceptance criteria in report order.
std::vector<std::string> criterion_ids();

/// Runs the acceptance suite. Unknown ids in `only` throw std::invalid_argument.
std::vector<CriterionResult> run_verification(const VerifyOptions& opts);

/// {"schema": 1, "passed": bool, "criteria": [...]}
std::string verification_json(const std::vector<CriterionResult>& results, int indent = 2);

/// One "PASS|FAIL  id  (seconds)  detail" line.
std::string format_result_line(const CriterionResult& r);

}  // namespace attnflow
