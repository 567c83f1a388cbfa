#pragma once

// Exact conjugate Bayesian linear regression
//
//   y = theta^T x + eps,  eps ~ N(0, noise_variance),
//   theta ~ N(prior_mean, prior_variance * I).
//
// Everything here is closed form and serves as the ground truth the
// sampling estimators are checked against.

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mlest/gaussian.hpp"
#include "mlest/report.hpp"

namespace mlest {

/// Ordered (features, target) pairs; row order is the prequential order.
class Dataset {
 public:
  Dataset() = default;
  /// Validates shapes, n >= 1 and finiteness; throws std::invalid_argument.
  Dataset(Eigen::MatrixXd features, Eigen::VectorXd targets);

  Eigen::Index size() const { return features_.rows(); }
  Eigen::Index dim() const { return features_.cols(); }
  const Eigen::MatrixXd& features() const { return features_; }
  const Eigen::VectorXd& targets() const { return targets_; }
  Eigen::VectorXd row(Eigen::Index i) const { return features_.row(i).transpose(); }

  /// Dataset with the same targets and new (already mapped) features.
  Dataset with_features(Eigen::MatrixXd features) const;

 private:
  Eigen::MatrixXd features_;
  Eigen::VectorXd targets_;
};

struct BlrModel {
  Eigen::VectorXd prior_mean;
  double prior_variance = 1.0;
  double noise_variance = 1.0;
  /// Reporting label only; feature maps are applied when the Dataset is built.
  std::string feature_map = "identity";

  static BlrModel zero_mean(Eigen::Index d, double prior_variance, double noise_variance,
                            std::string feature_map = "identity");
  /// Throws std::invalid_argument on non-positive variances.
  void validate() const;
};

struct PosteriorState {
  GaussianND weights;
  Eigen::Index prefix_len = 0;
};

/// Posterior over weights after the first `prefix_len` points.
PosteriorState condition(const BlrModel& model, const Dataset& data, Eigen::Index prefix_len);

/// One-step-ahead predictive N(x^T mu, x^T Sigma x + noise_variance).
Gaussian1D predictive(const PosteriorState& state, const Eigen::VectorXd& x,
                      double noise_variance);

/// Incremental conditioning with rank-1 updates of the precision Cholesky
/// factor; refactorizes from the accumulated Gram every 64 updates.
class SequentialConditioner {
 public:
  static constexpr int kRefactorInterval = 64;

  explicit SequentialConditioner(const BlrModel& model);

  /// Predictive for a new input given all points added so far.
  Gaussian1D predictive(const Eigen::VectorXd& x) const;
  void add(const Eigen::VectorXd& x, double y);
  GaussianND posterior() const;
  Eigen::Index count() const { return count_; }

 private:
  void refactor();

  BlrModel model_;
  Eigen::MatrixXd gram_;       // X^T X over the points added so far
  Eigen::MatrixXd precision_lower_;
  Eigen::VectorXd shifted_rhs_;  // X^T (y - X mu0) / noise_variance
  Eigen::Index count_ = 0;
  int since_refactor_ = 0;
};

/// Sum of log one-step-ahead predictive densities (prequential evidence).
EvidenceReport sequential_log_evidence(const BlrModel& model, const Dataset& data);

/// log N(y; X mu0, prior_variance X X^T + noise_variance I) via Cholesky.
double exact_log_evidence(const BlrModel& model, const Dataset& data);
/// Same value, with per-point terms read off the Cholesky factor (chain rule).
EvidenceReport exact_evidence_report(const BlrModel& model, const Dataset& data);

/// KL(P(theta | D_<i) || P(theta | D_<=i)) for 1-based i in [1, n].
double posterior_step_kl(const BlrModel& model, const Dataset& data, Eigen::Index i);
/// All n step KLs, i = 1..n.
std::vector<double> posterior_step_kls(const BlrModel& model, const Dataset& data);

/// Closed-form L(D) = sum_i E_{theta ~ P(.|D_<i)} log N(y_i; theta^T x_i, noise).
EvidenceReport expected_log_likelihood_bound(const BlrModel& model, const Dataset& data);

}  // namespace mlest
