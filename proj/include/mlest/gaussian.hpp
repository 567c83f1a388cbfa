#pragma once

// Gaussian numerics shared by every other module. Densities are always
// returned in log space; probabilities only appear transiently inside
// log_mean_exp.

#include <span>

#include <Eigen/Dense>

#include "mlest/rng.hpp"

namespace mlest {

struct Gaussian1D {
  double mean = 0.0;
  double variance = 1.0;
};

struct GaussianND {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;

  Eigen::Index dim() const { return mean.size(); }
};

/// log N(y; g.mean, g.variance). Throws std::domain_error on variance <= 0.
double log_density_1d(const Gaussian1D& g, double y);

/// Closed-form KL(p || q) between 1-D Gaussians.
double kl_gaussian_1d(const Gaussian1D& p, const Gaussian1D& q);

/// KL(p || q) via Cholesky factors of both covariances; no explicit inverse.
/// Throws std::invalid_argument on dimension mismatch and NumericError when a
/// covariance stays singular after jitter.
double kl_gaussian_nd(const GaussianND& p, const GaussianND& q);

/// ln((1/k) sum_j exp(v_j)), max-shifted. Throws std::domain_error if empty.
double log_mean_exp(std::span<const double> values);
double log_sum_exp(std::span<const double> values);

/// Lower Cholesky factor plus the diagonal jitter that had to be added.
struct JitteredCholesky {
  Eigen::MatrixXd lower;
  double jitter = 0.0;

  double log_det() const;
  /// Solves (L L^T) x = b.
  Eigen::VectorXd solve(const Eigen::VectorXd& b) const;
};

/// Factorizes a symmetric matrix. Tries the matrix as given, then adds
/// 1e-9 * trace/d to the diagonal, escalating x10 up to three more times.
/// Throws NumericError afterwards.
JitteredCholesky cholesky_with_jitter(const Eigen::MatrixXd& a);

/// True when `cov` is symmetric within 1e-10 relative and has no eigenvalue
/// below -1e-10 * (largest eigenvalue).
bool is_valid_covariance(const Eigen::MatrixXd& cov);

/// Draws from a fixed multivariate Gaussian, caching its factor.
class MvnSampler {
 public:
  explicit MvnSampler(const GaussianND& g);

  Eigen::VectorXd draw(Rng& rng) const;
  /// Writes `count` draws as the columns of the returned dim x count matrix.
  Eigen::MatrixXd draw_many(Rng& rng, Eigen::Index count) const;

  const Eigen::VectorXd& mean() const { return mean_; }
  const Eigen::MatrixXd& factor() const { return lower_; }

 private:
  Eigen::VectorXd mean_;
  Eigen::MatrixXd lower_;
};

Eigen::VectorXd sample_mvn(const GaussianND& g, Rng& rng);

/// Fills a vector with i.i.d. standard normals from `rng`.
Eigen::VectorXd standard_normal_vector(Rng& rng, Eigen::Index n);

}  // namespace mlest
