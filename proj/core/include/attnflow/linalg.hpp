#pragma once

#include <Eigen/Dense>

namespace attnflow {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

/// Column-stacking vectorization: vec([[1,3],[2,4]]) = [1,2,3,4].
inline Vec vec(const Mat& m) { return Eigen::Map<const Vec>(m.data(), m.size()); }

/// Inverse of vec() for a rows x cols matrix.
inline Mat unvec(const Vec& v, Eigen::Index rows, Eigen::Index cols) {
  return Eigen::Map<const Mat>(v.data(), rows, cols);
}

}  // namespace attnflow
