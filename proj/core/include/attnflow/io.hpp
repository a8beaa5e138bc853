#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "attnflow/attention.hpp"
#include "attnflow/flow.hpp"
#include "attnflow/theory.hpp"

namespace attnflow {

inline constexpr int kSchemaVersion = 1;

/// Shortest decimal text that parses back to the same double.
std::string format_double(double x);

/// Trajectory CSV.
///
/// Line 1 is a metadata comment:
///   # attnflow-trajectory schema=1 kind=<merged|separate> D=.. H=.. R=.. tau=..
///     lambda_max=.. steps=.. max_loss_increase=..
/// Line 2 is the header; columns in order:
///   t                      time in units of tau (t / tau)
///   loss                   population loss
///   v_i, k_i, q_i          per head i = 1..H: |v_i|, ||K_i||_F, ||Q_i||_F
///                          (merged models: v_i, u_i with u_i = ||U_i||_F)
///   conservation_drift     max deviation of the conserved quantities from t = 0
///   align_i_d              key alignment of head i with eigenvector d, row-major in (i, d)
///   m_r_c                  effective matrix entry (r, c), row-major
/// All indices in column names are 1-based. Weight snapshots are not stored.
void write_trajectory_csv(std::ostream& out, const Trajectory& traj);
Trajectory read_trajectory_csv(std::istream& in);
std::vector<std::string> trajectory_csv_columns(const Trajectory& traj);

/// {"model_kind", "D", "H", "R", "values", "kq" | "keys" + "queries"}; every
/// matrix is a row-major nested list (K_i and Q_i are D x R).
std::string params_to_json(const Params& p, int indent = -1);
Params params_from_json(const std::string& text);

/// [{"indices": [1-based eigen indices], "loss", "target_matrix"}].
std::string catalog_to_json(const std::vector<FixedPoint>& catalog, int indent = -1);

}  // namespace attnflow
