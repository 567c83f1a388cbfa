#pragma once

// Analytic neural tangent kernel of a fully-connected ReLU network in NTK
// parameterization, and evidence computations for the GP it induces.
//
// Network with `depth` hidden layers of width m -> infinity:
//   h^1 = (s_w / sqrt(d)) W^1 x + s_b b^1
//   h^l = (s_w / sqrt(m)) W^l relu(h^(l-1)) + s_b b^l,   l = 2..depth+1
// with all W, b entries i.i.d. N(0, 1) and f(x) = h^(depth+1).
//
// Below s_w^2 = weight_variance and s_b^2 = bias_variance.
//
// Kernel recursion, for a pair (x, x'):
//   S^1(x, x')     = s_w^2 x.x' / d + s_b^2,    Theta^1 = S^1
//   rho            = S^l(x, x') / sqrt(S^l(x, x) S^l(x', x'))   (clamped to [-1, 1])
//   t              = arccos(rho)
//   S^(l+1)(x, x') = s_w^2 / (2 pi) sqrt(S^l(x,x) S^l(x',x')) (sin t + (pi - t) cos t) + s_b^2
//   Sdot^(l+1)     = s_w^2 (pi - t) / (2 pi)
//   Theta^(l+1)    = Theta^l * Sdot^(l+1) + S^(l+1)
// and the NTK is Theta^(depth+1). It equals the expected inner product of the
// parameter gradients of f at x and x' (weights and biases of all layers).

#include <cstdint>
#include <string>

#include <Eigen/Dense>

#include "mlest/gaussian.hpp"
#include "mlest/report.hpp"
#include "mlest/rng.hpp"

namespace mlest {

struct NtkSpec {
  int depth = 1;
  double weight_variance = 2.0;
  double bias_variance = 0.1;

  void validate() const;
  std::string label() const;
};

struct KernelValues {
  double nngp = 0.0;  // S^(depth+1)
  double ntk = 0.0;   // Theta^(depth+1)
};

KernelValues ntk_kernel_values(const NtkSpec& spec, const Eigen::VectorXd& x,
                               const Eigen::VectorXd& x2);
double ntk_value(const NtkSpec& spec, const Eigen::VectorXd& x, const Eigen::VectorXd& x2);

struct KernelMatrix {
  Eigen::MatrixXd gram;
  double jitter_applied = 0.0;
};

/// Gram matrix over the rows of `inputs`; rows are filled in parallel.
KernelMatrix ntk_gram(const NtkSpec& spec, const Eigen::MatrixXd& inputs, int jobs = 1);
/// prior_variance * X X^T: the function-space form of Bayesian linear regression.
KernelMatrix linear_gram(const Eigen::MatrixXd& inputs, double prior_variance);

/// log N(y; 0, K + noise I). Records the jitter the factorization needed.
double gp_log_evidence(KernelMatrix& k, const Eigen::VectorXd& y, double noise_variance);
double gp_log_evidence(const KernelMatrix& k, const Eigen::VectorXd& y, double noise_variance);

/// Prequential form: sum over i of log N(y_i; mu_i, s_i^2 + noise), from the
/// posterior given the leading (i-1) points.
EvidenceReport gp_sequential_evidence(const KernelMatrix& k, const Eigen::VectorXd& y,
                                      double noise_variance);

/// Posterior at point i (1-based) given the first i-1 targets. The latent
/// form excludes observation noise; the predictive form includes it.
Gaussian1D gp_latent_posterior(const KernelMatrix& k, const Eigen::VectorXd& y_prefix,
                               Eigen::Index i, double noise_variance);
Gaussian1D gp_predictive(const KernelMatrix& k, const Eigen::VectorXd& y_prefix, Eigen::Index i,
                         double noise_variance);

/// Draw at point i from the posterior given the first i-1 targets. With
/// include_noise the draw is from the predictive (latent + observation noise).
double gp_posterior_function_sample(const KernelMatrix& k, const Eigen::VectorXd& y_prefix,
                                    Eigen::Index i, double noise_variance, Rng& rng,
                                    bool include_noise = true);

/// KL between the latent posterior at x_i before and after observing y_i.
std::vector<double> gp_function_step_kls(const KernelMatrix& k, const Eigen::VectorXd& y,
                                         double noise_variance);

/// Monte Carlo L(D) for the GP: k latent draws per point, scored with
/// log N(y_i; f_ij, noise). Kind l_hat.
EvidenceReport mc_l_estimate_gp(const KernelMatrix& k, const Eigen::VectorXd& y,
                                double noise_variance, int samples, std::uint64_t seed);
EvidenceReport mc_l_estimate_gp(const NtkSpec& spec, const Eigen::MatrixXd& inputs,
                                const Eigen::VectorXd& y, double noise_variance, int samples,
                                std::uint64_t seed);

/// Closed-form expectation of mc_l_estimate_gp.
EvidenceReport gp_expected_loglik_bound(const KernelMatrix& k, const Eigen::VectorXd& y,
                                        double noise_variance);

}  // namespace mlest
