#include "attnflow/task_data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace attnflow {

CovarianceSpec::CovarianceSpec(Vec eigenvalues, Mat eigenvectors)
    : eigenvalues_(std::move(eigenvalues)), eigenvectors_(std::move(eigenvectors)) {
  const auto d = eigenvalues_.size();
  if (d == 0) throw std::invalid_argument("covariance: empty eigenvalue list");
  if (eigenvectors_.rows() != d || eigenvectors_.cols() != d)
    throw std::invalid_argument("covariance: eigenvector matrix must be D x D");
  matrix_ = eigenvectors_ * eigenvalues_.asDiagonal() * eigenvectors_.transpose();
  matrix_ = 0.5 * (matrix_ + matrix_.transpose()).eval();
  sqrt_ = eigenvectors_ * eigenvalues_.cwiseSqrt().asDiagonal() * eigenvectors_.transpose();
}

CovarianceSpec build_covariance(std::span<const double> eigenvalues, const Mat& eigenvectors) {
  const auto d = static_cast<Eigen::Index>(eigenvalues.size());
  if (d == 0) throw std::invalid_argument("covariance: empty eigenvalue list");
  if (eigenvectors.rows() != d || eigenvectors.cols() != d)
    throw std::invalid_argument("covariance: eigenvector matrix must be D x D");
  for (double l : eigenvalues) {
    if (!(l > 0.0) || !std::isfinite(l))
      throw std::invalid_argument("covariance: eigenvalues must be positive and finite, got " +
                                  std::to_string(l));
  }
  const double gram_dev =
      (eigenvectors.transpose() * eigenvectors - Mat::Identity(d, d)).cwiseAbs().maxCoeff();
  if (gram_dev > kOrthonormalTolerance)
    throw std::invalid_argument("covariance: eigenvectors not orthonormal (Gram deviation " +
                                std::to_string(gram_dev) + ")");

  std::vector<Eigen::Index> order(static_cast<std::size_t>(d));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) {
    return eigenvalues[static_cast<std::size_t>(a)] > eigenvalues[static_cast<std::size_t>(b)];
  });
  Vec vals(d);
  Mat vecs(d, d);
  for (Eigen::Index j = 0; j < d; ++j) {
    vals(j) = eigenvalues[static_cast<std::size_t>(order[static_cast<std::size_t>(j)])];
    vecs.col(j) = eigenvectors.col(order[static_cast<std::size_t>(j)]);
  }
  return CovarianceSpec(std::move(vals), std::move(vecs));
}

CovarianceSpec build_covariance(std::span<const double> eigenvalues) {
  const auto d = static_cast<Eigen::Index>(eigenvalues.size());
  return build_covariance(eigenvalues, Mat::Identity(d, d));
}

Mat haar_orthonormal(int dim, SeedStream& stream) {
  Mat g(dim, dim);
  for (int j = 0; j < dim; ++j)
    for (int i = 0; i < dim; ++i) g(i, j) = stream.normal();
  Eigen::HouseholderQR<Mat> qr(g);
  Mat q = qr.householderQ() * Mat::Identity(dim, dim);
  const Mat r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int j = 0; j < dim; ++j)
    if (r(j, j) < 0.0) q.col(j) *= -1.0;
  return q;
}

CovarianceSpec build_covariance_random_basis(std::span<const double> eigenvalues, SeedStream stream) {
  const Mat basis = haar_orthonormal(static_cast<int>(eigenvalues.size()), stream);
  return build_covariance(eigenvalues, basis);
}

std::vector<double> inverse_index_spectrum(int dim, double trace) {
  if (dim < 1) throw std::invalid_argument("spectrum: dim must be positive");
  if (!(trace > 0.0)) throw std::invalid_argument("spectrum: trace must be positive");
  std::vector<double> out(static_cast<std::size_t>(dim));
  double total = 0.0;
  for (int d = 1; d <= dim; ++d) total += 1.0 / d;
  for (int d = 1; d <= dim; ++d) out[static_cast<std::size_t>(d - 1)] = trace / (d * total);
  return out;
}

LengthLaw LengthLaw::fixed(int n) {
  if (n < 1) throw std::invalid_argument("length law: fixed N must be >= 1");
  return {Kind::fixed, n};
}

LengthLaw LengthLaw::uniform(int n_max) {
  if (n_max < 1) throw std::invalid_argument("length law: N_max must be >= 1");
  return {Kind::uniform, n_max};
}

int LengthLaw::sample(SeedStream& stream) const {
  if (kind == Kind::fixed) return n;
  const int k = static_cast<int>(stream.uniform() * n);
  return std::min(k, n - 1) + 1;
}

Sequence sample_sequence(const CovarianceSpec& cov, int length, SeedStream& stream) {
  if (length < 1) throw std::invalid_argument("sample_sequence: length must be >= 1");
  const int d = cov.dim();
  Sequence s;
  s.task_vector.resize(d);
  for (int i = 0; i < d; ++i) s.task_vector(i) = stream.normal();
  Mat raw(d, length);
  for (int n = 0; n < length; ++n)
    for (int i = 0; i < d; ++i) raw(i, n) = stream.normal();
  s.context_inputs = cov.sqrt_matrix() * raw;
  Vec rq(d);
  for (int i = 0; i < d; ++i) rq(i) = stream.normal();
  s.query_input = cov.sqrt_matrix() * rq;
  s.context_outputs = s.context_inputs.transpose() * s.task_vector;
  s.query_output = s.task_vector.dot(s.query_input);
  return s;
}

ContextStats context_stats(const Sequence& seq) {
  const double inv_n = 1.0 / seq.length();
  ContextStats c;
  c.beta = inv_n * (seq.context_inputs * seq.context_outputs);
  c.context_cov = inv_n * (seq.context_inputs * seq.context_inputs.transpose());
  return c;
}

double expected_inverse_length(const LengthLaw& law) {
  if (law.kind == LengthLaw::Kind::fixed) return 1.0 / law.n;
  double h = 0.0;
  for (int k = law.n; k >= 1; --k) h += 1.0 / k;
  return h / law.n;
}

PopulationStats population_stats(const CovarianceSpec& cov, const LengthLaw& law) {
  PopulationStats s{cov, expected_inverse_length(law), {}, {}, cov.trace()};
  const Vec& l = cov.eigenvalues();
  s.a_vals = (l.array().square() * (1.0 + s.exp_inv_len * (1.0 + s.trace / l.array()))).matrix();
  s.exp_sq_cov = cov.eigenvectors() * s.a_vals.asDiagonal() * cov.eigenvectors().transpose();
  s.exp_sq_cov = 0.5 * (s.exp_sq_cov + s.exp_sq_cov.transpose()).eval();
  return s;
}

void require_no_fixed_task_fraction(double fraction) {
  if (fraction != 0.0)
    throw std::invalid_argument("fixed-task fraction must be 0; task-pool mixtures are not supported");
}

}  // namespace attnflow
