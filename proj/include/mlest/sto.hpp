#pragma once

// Sample-then-optimize trajectories for Bayesian linear regression.
//
// For each trajectory j: draw theta0 ~ N(mu0, s0^2 I) and perturbed targets
// y~ = y + eps, eps ~ N(0, sN^2 I), once. Then walk the data in order; for
// point i, first score the current parameters on (x_i, y_i), then minimize
//
//   l(theta) = ||y~_<=i - X_<=i theta||^2 + (sN^2 / s0^2) ||theta - theta0||^2
//
// starting from the current parameters. The minimizer for prefix i is an exact
// draw from P(theta | D_<=i), so the parameters used to score point i+1 are
// posterior samples given D_<=i.

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "mlest/blr.hpp"
#include "mlest/rng.hpp"

namespace mlest {

enum class SolverMode { closed_form, gradient_descent };

struct GdConfig {
  SolverMode mode = SolverMode::closed_form;
  /// 0 selects 1 / (L + lambda), L a power-iteration estimate of ||X^T X||.
  double step_size = 0.0;
  int max_iters = 10000;
  double grad_tolerance = 1e-9;
  /// Reject step sizes with step * (L + lambda) >= 2 for the current prefix.
  bool enforce_step_bound = true;

  void validate() const;
};

struct TrajectorySamples {
  /// theta[i] is d x k; column j is the parameter sample that scored point i
  /// (0-based), i.e. a draw conditioned on the first i points.
  std::vector<Eigen::MatrixXd> theta;
  std::vector<std::uint64_t> seeds;
  /// converged[i][j]: whether the optimization feeding theta[i+1] column j
  /// converged (always true for the final prefix and in closed_form mode).
  std::vector<std::vector<bool>> converged;
  std::uint64_t master_seed = 0;

  Eigen::Index n() const { return static_cast<Eigen::Index>(theta.size()); }
  Eigen::Index k() const { return theta.empty() ? 0 : theta.front().cols(); }
  Eigen::Index dim() const { return theta.empty() ? 0 : theta.front().rows(); }
};

struct SumLossRecord {
  /// (theta_i^T x_i - y_i)^2 / (2 sN^2) for the parameters that scored point i.
  std::vector<double> per_point;
  double total = 0.0;
};

/// y + eps, eps_i ~ N(0, noise_variance). Zero variance returns y unchanged.
Eigen::VectorXd perturb_targets(const Eigen::VectorXd& y, double noise_variance, Rng& rng);

/// Squared residual on the prefix plus (noise/prior) * ||theta - theta0||^2.
double regularized_loss(const Eigen::VectorXd& theta, const Eigen::VectorXd& theta0,
                        const Eigen::MatrixXd& x_prefix, const Eigen::VectorXd& y_prefix,
                        double noise_variance, double prior_variance);

struct PrefixSolution {
  Eigen::VectorXd theta;
  bool converged = true;
  int iterations = 0;
};

/// Minimizes regularized_loss. An empty prefix returns theta0. In
/// gradient_descent mode the iteration starts at `warm_start` (theta0 when
/// null) and runs on half the loss, whose gradient is
/// (X^T X + lambda I) theta - (X^T y~ + lambda theta0).
PrefixSolution solve_prefix(const Eigen::VectorXd& theta0, const Eigen::MatrixXd& x_prefix,
                            const Eigen::VectorXd& y_prefix, double noise_variance,
                            double prior_variance, const GdConfig& cfg,
                            const Eigen::VectorXd* warm_start = nullptr);

/// Power-iteration estimate of the largest eigenvalue of a symmetric PSD matrix.
double largest_eigenvalue_estimate(const Eigen::MatrixXd& sym, int iters = 200);

/// Bound on |log N(y; theta*^T x, s2) - log N(y; theta^T x, s2)| in terms of
/// delta = ||theta - theta*||: delta * ||x|| * (2|theta*^T x| + delta ||x|| + 2|y|) / (2 s2).
double gd_loglik_error_bound(const Eigen::VectorXd& theta, const Eigen::VectorXd& theta_star,
                             const Eigen::VectorXd& x, double y, double noise_variance);

struct TrajectoryRun {
  TrajectorySamples samples;
  std::vector<SumLossRecord> losses;  // one per trajectory
};

/// k independent trajectories. Sample j uses split_seed(master_seed, j), so
/// the result does not depend on `jobs`.
TrajectoryRun run_trajectories(const BlrModel& model, const Dataset& data, int k,
                               const GdConfig& cfg, std::uint64_t master_seed, int jobs = 1);

/// Same layout as run_trajectories, but drawing each column directly from the
/// conjugate posterior (independent across prefixes).
TrajectorySamples sample_exact_posteriors(const BlrModel& model, const Dataset& data, int k,
                                          std::uint64_t master_seed);

}  // namespace mlest
