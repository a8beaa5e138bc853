#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "attnflow/linalg.hpp"
#include "attnflow/random.hpp"

namespace attnflow {

/// Token covariance stored in eigen-factored form. Eigenvalues are strictly
/// positive and sorted in descending order; eigenvector d is column d.
class CovarianceSpec {
 public:
  CovarianceSpec(Vec eigenvalues, Mat eigenvectors);

  [[nodiscard]] int dim() const noexcept { return static_cast<int>(eigenvalues_.size()); }
  [[nodiscard]] const Vec& eigenvalues() const noexcept { return eigenvalues_; }
  [[nodiscard]] const Mat& eigenvectors() const noexcept { return eigenvectors_; }
  [[nodiscard]] double eigenvalue(int d) const { return eigenvalues_(d); }
  [[nodiscard]] Vec eigenvector(int d) const { return eigenvectors_.col(d); }

  [[nodiscard]] const Mat& matrix() const noexcept { return matrix_; }
  /// Symmetric square root E diag(sqrt(lambda)) E^T.
  [[nodiscard]] const Mat& sqrt_matrix() const noexcept { return sqrt_; }
  [[nodiscard]] double trace() const noexcept { return eigenvalues_.sum(); }

 private:
  Vec eigenvalues_;
  Mat eigenvectors_;
  Mat matrix_;
  Mat sqrt_;
};

/// Tolerance on |E^T E - I| when validating user-supplied eigenvectors.
inline constexpr double kOrthonormalTolerance = 1e-8;

/// Builds a covariance from eigenvalues and explicit orthonormal eigenvectors.
/// Pairs are reordered so eigenvalues descend. Throws std::invalid_argument
/// for a non-positive eigenvalue or a Gram deviation above 1e-8.
CovarianceSpec build_covariance(std::span<const double> eigenvalues, const Mat& eigenvectors);
/// Same, with identity eigenvectors.
CovarianceSpec build_covariance(std::span<const double> eigenvalues);
/// Same, with a Haar-distributed orthonormal basis drawn from `stream`.
CovarianceSpec build_covariance_random_basis(std::span<const double> eigenvalues, SeedStream stream);

/// Haar orthonormal D x D matrix (QR of a Gaussian matrix with sign fix).
Mat haar_orthonormal(int dim, SeedStream& stream);

/// Eigenvalues lambda_d proportional to 1/d, scaled so the trace equals `trace`.
std::vector<double> inverse_index_spectrum(int dim, double trace = 1.0);

struct LengthLaw {
  enum class Kind { fixed, uniform };
  Kind kind = Kind::fixed;
  int n = 1;  ///< context length for fixed, N_max for uniform(1..N_max)

  static LengthLaw fixed(int n);
  static LengthLaw uniform(int n_max);

  [[nodiscard]] int max_length() const noexcept { return n; }
  /// Draws a context length.
  int sample(SeedStream& stream) const;
};

/// One in-context regression problem. Context inputs are the columns of a
/// D x N matrix; outputs are exact linear maps of the inputs.
struct Sequence {
  Mat context_inputs;
  Vec context_outputs;
  Vec query_input;
  double query_output = 0.0;
  Vec task_vector;

  [[nodiscard]] int length() const noexcept { return static_cast<int>(context_inputs.cols()); }
  [[nodiscard]] int dim() const noexcept { return static_cast<int>(query_input.size()); }
};

Sequence sample_sequence(const CovarianceSpec& cov, int length, SeedStream& stream);

struct ContextStats {
  Vec beta;         ///< (1/N) sum_n y_n x_n
  Mat context_cov;  ///< (1/N) sum_n x_n x_n^T
};

ContextStats context_stats(const Sequence& seq);

/// E(1/N): 1/N for fixed(N); H_{N_max}/N_max for uniform(1..N_max).
double expected_inverse_length(const LengthLaw& law);

/// Closed-form second-order statistics of the task distribution.
struct PopulationStats {
  CovarianceSpec cov;
  double exp_inv_len = 0.0;
  Mat exp_sq_cov;  ///< E(hat Lambda^2) = Lambda^2 + E(1/N)(Lambda + tr(Lambda) I) Lambda
  Vec a_vals;      ///< eigenvalues of exp_sq_cov along cov's eigenvectors
  double trace = 0.0;

  [[nodiscard]] int dim() const noexcept { return cov.dim(); }
  [[nodiscard]] double lambda(int d) const { return cov.eigenvalue(d); }
  [[nodiscard]] double a(int d) const { return a_vals(d); }
  [[nodiscard]] const Mat& cov_matrix() const noexcept { return cov.matrix(); }
  /// Lambda^2
  [[nodiscard]] Mat cov_squared() const { return cov.matrix() * cov.matrix(); }
};

PopulationStats population_stats(const CovarianceSpec& cov, const LengthLaw& law);

/// Task vectors drawn from a fixed pool (in-weight learning mixtures) are not
/// modelled. Throws std::invalid_argument when `fraction` is nonzero.
void require_no_fixed_task_fraction(double fraction);

}  // namespace attnflow
