#pragma once

// Lower-bound estimators of log P(D) computed from per-prefix parameter
// samples. With samples theta_ij ~ P(theta | D_<i):
//
//   l_hat   = sum_i (1/k) sum_j log N(y_i; theta_ij^T x_i, sN^2)
//   l_hat_k = sum_i log (1/k) sum_j N(y_i; theta_ij^T x_i, sN^2)
//   l_hat_s = sum_i log N(y_i; mu_i, s_i^2), with mu_i, s_i^2 the sample mean
//             and (k-1)-denominator variance of predictive draws
//             theta_ij^T x_i + eta_ij, eta_ij ~ N(0, sN^2)
//
// All three have expectation <= log P(D). E[l_hat] equals
// log P(D) - sum_i KL(P(theta|D_<i) || P(theta|D_<=i)).

#include <cstdint>

#include <Eigen/Dense>

#include "mlest/blr.hpp"
#include "mlest/report.hpp"
#include "mlest/sto.hpp"

namespace mlest {

/// Floor applied to the l_hat_s predictive sample variance.
inline constexpr double kPredictiveVarianceFloor = 1e-12;

/// n x k matrix of log N(y_i; theta_ij^T x_i, noise_variance).
Eigen::MatrixXd pointwise_log_likelihoods(const TrajectorySamples& samples, const Dataset& data,
                                          double noise_variance);

EvidenceReport l_hat(const TrajectorySamples& samples, const Dataset& data, double noise_variance);

EvidenceReport l_hat_k(const TrajectorySamples& samples, const Dataset& data,
                       double noise_variance);

/// l_hat_k evaluated on each disjoint block of `block` consecutive sample
/// columns and averaged: an unbiased estimate of L_block from a larger pool.
/// Requires block to divide the sample count.
EvidenceReport l_hat_k_pooled(const TrajectorySamples& samples, const Dataset& data,
                              double noise_variance, int block);

/// Requires k >= 2. noise_variance may be 0 (noiseless predictive draws).
EvidenceReport l_hat_s(const TrajectorySamples& samples, const Dataset& data,
                       double noise_variance);

/// -total - (n/2) ln(2 pi sN^2): the sum of training losses read as a
/// log-likelihood.
EvidenceReport sotl_report(const SumLossRecord& record, double noise_variance, Eigen::Index n);

struct BiasCheck {
  double lhs = 0.0;         // Monte Carlo L(D) from exact posterior samples
  double lhs_stderr = 0.0;
  double rhs = 0.0;         // exact evidence minus the summed step KLs
  double exact_evidence = 0.0;
  double kl_sum = 0.0;
};

BiasCheck prop1_bias_check(const BlrModel& model, const Dataset& data, int k, std::uint64_t seed);

}  // namespace mlest
