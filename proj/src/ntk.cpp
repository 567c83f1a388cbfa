#include "mlest/ntk.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "mlest/errors.hpp"
#include "mlest/parallel.hpp"
#include "mlest/stats.hpp"

namespace mlest {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;
constexpr double kCosineTolerance = 1e-12;

double clamp_cosine(double rho) {
  if (std::abs(rho) > 1.0 + kCosineTolerance) {
    std::ostringstream msg;
    msg << "ntk: cosine " << rho << " outside [-1, 1] beyond tolerance";
    throw NumericError(msg.str());
  }
  return std::clamp(rho, -1.0, 1.0);
}

void require_square(const KernelMatrix& k, Eigen::Index n) {
  if (k.gram.rows() != k.gram.cols()) throw std::invalid_argument("kernel matrix is not square");
  if (k.gram.rows() < n) throw std::invalid_argument("kernel matrix smaller than target vector");
}

// Latent posteriors (mean, variance) at every point given the preceding ones,
// by growing the Cholesky factor of K + s2 I one row at a time.
struct LatentSequence {
  std::vector<Gaussian1D> latent;
  double effective_noise = 0.0;
};

LatentSequence latent_sequence(const KernelMatrix& k, const Eigen::VectorXd& y,
                               double noise_variance) {
  const Eigen::Index n = y.size();
  require_square(k, n);
  if (noise_variance < 0.0 || !std::isfinite(noise_variance)) {
    throw std::domain_error("gp: negative noise variance");
  }
  const Eigen::MatrixXd block = k.gram.topLeftCorner(n, n);
  Eigen::MatrixXd c = block;
  c.diagonal().array() += noise_variance;
  LatentSequence out;
  out.effective_noise = noise_variance + cholesky_with_jitter(c).jitter;
  out.latent.reserve(static_cast<std::size_t>(n));

  Eigen::MatrixXd lower = Eigen::MatrixXd::Zero(n, n);
  Eigen::VectorXd alpha(n);  // L^-1 y
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::VectorXd l(i);
    if (i > 0) {
      l = lower.topLeftCorner(i, i).triangularView<Eigen::Lower>().solve(
          Eigen::VectorXd(block.col(i).head(i)));
    }
    const double mean = i > 0 ? l.dot(alpha.head(i)) : 0.0;
    const double var = block(i, i) - (i > 0 ? l.squaredNorm() : 0.0);
    const double total = var + out.effective_noise;
    if (!(total > 0.0)) {
      std::ostringstream msg;
      msg << "gp: non-positive predictive variance at point " << (i + 1);
      throw NumericError(msg.str());
    }
    out.latent.push_back({mean, std::max(var, 0.0)});
    const double diag = std::sqrt(total);
    if (i > 0) lower.row(i).head(i) = l.transpose();
    lower(i, i) = diag;
    alpha[i] = (y[i] - mean) / diag;
  }
  return out;
}

Eigen::VectorXd column_head(const Eigen::MatrixXd& m, Eigen::Index col, Eigen::Index len) {
  return m.col(col).head(len);
}

}  // namespace

void NtkSpec::validate() const {
  if (depth < 1) throw std::invalid_argument("NtkSpec: depth must be >= 1");
  if (!(weight_variance > 0.0)) throw std::invalid_argument("NtkSpec: weight_variance must be positive");
  if (bias_variance < 0.0) throw std::invalid_argument("NtkSpec: bias_variance must be >= 0");
}

std::string NtkSpec::label() const {
  std::ostringstream s;
  s << "ntk_depth" << depth << "_sw" << weight_variance << "_sb" << bias_variance;
  return s.str();
}

KernelValues ntk_kernel_values(const NtkSpec& spec, const Eigen::VectorXd& x,
                               const Eigen::VectorXd& x2) {
  spec.validate();
  if (x.size() != x2.size() || x.size() == 0) {
    throw std::invalid_argument("ntk_value: input dimension mismatch");
  }
  const double inv_d = 1.0 / static_cast<double>(x.size());
  const double sw = spec.weight_variance;
  const double sb = spec.bias_variance;
  double q11 = sw * x.squaredNorm() * inv_d + sb;
  double q22 = sw * x2.squaredNorm() * inv_d + sb;
  double q12 = sw * x.dot(x2) * inv_d + sb;
  double theta = q12;
  for (int layer = 0; layer < spec.depth; ++layer) {
    const double norm = std::sqrt(q11 * q22);
    double next12 = sb;
    double deriv = 0.0;
    if (norm > 0.0) {
      const double t = std::acos(clamp_cosine(q12 / norm));
      next12 = sw / (2.0 * std::numbers::pi) * norm *
                   (std::sin(t) + (std::numbers::pi - t) * std::cos(t)) +
               sb;
      deriv = sw * (std::numbers::pi - t) / (2.0 * std::numbers::pi);
    }
    theta = theta * deriv + next12;
    q11 = 0.5 * sw * q11 + sb;
    q22 = 0.5 * sw * q22 + sb;
    q12 = next12;
  }
  return {q12, theta};
}

double ntk_value(const NtkSpec& spec, const Eigen::VectorXd& x, const Eigen::VectorXd& x2) {
  return ntk_kernel_values(spec, x, x2).ntk;
}

KernelMatrix ntk_gram(const NtkSpec& spec, const Eigen::MatrixXd& inputs, int jobs) {
  spec.validate();
  const Eigen::Index n = inputs.rows();
  KernelMatrix k;
  k.gram.resize(n, n);
  parallel_for(static_cast<std::size_t>(n), jobs, [&](std::size_t is) {
    const auto i = static_cast<Eigen::Index>(is);
    const Eigen::VectorXd xi = inputs.row(i).transpose();
    for (Eigen::Index j = 0; j <= i; ++j) {
      k.gram(i, j) = ntk_value(spec, xi, inputs.row(j).transpose());
    }
  });
  k.gram.triangularView<Eigen::StrictlyUpper>() = k.gram.transpose();
  return k;
}

KernelMatrix linear_gram(const Eigen::MatrixXd& inputs, double prior_variance) {
  if (!(prior_variance > 0.0)) throw std::invalid_argument("linear_gram: prior_variance must be positive");
  return {prior_variance * inputs * inputs.transpose(), 0.0};
}

double gp_log_evidence(const KernelMatrix& k, const Eigen::VectorXd& y, double noise_variance) {
  KernelMatrix copy = k;
  return gp_log_evidence(copy, y, noise_variance);
}

double gp_log_evidence(KernelMatrix& k, const Eigen::VectorXd& y, double noise_variance) {
  const Eigen::Index n = y.size();
  require_square(k, n);
  if (k.gram.rows() != n) throw std::invalid_argument("gp_log_evidence: size mismatch");
  if (noise_variance < 0.0) throw std::domain_error("gp_log_evidence: negative noise variance");
  Eigen::MatrixXd c = k.gram;
  c.diagonal().array() += noise_variance;
  const JitteredCholesky chol = cholesky_with_jitter(c);
  k.jitter_applied = chol.jitter;
  const Eigen::VectorXd z = chol.lower.triangularView<Eigen::Lower>().solve(y);
  return -0.5 * z.squaredNorm() - 0.5 * chol.log_det() - 0.5 * static_cast<double>(n) * kLog2Pi;
}

EvidenceReport gp_sequential_evidence(const KernelMatrix& k, const Eigen::VectorXd& y,
                                      double noise_variance) {
  if (k.gram.rows() != y.size()) throw std::invalid_argument("gp_sequential_evidence: size mismatch");
  const LatentSequence seq = latent_sequence(k, y, noise_variance);
  std::vector<double> per_point(seq.latent.size());
  for (std::size_t i = 0; i < per_point.size(); ++i) {
    const Gaussian1D& g = seq.latent[i];
    per_point[i] = log_density_1d({g.mean, g.variance + seq.effective_noise},
                                  y[static_cast<Eigen::Index>(i)]);
  }
  return make_report(EstimatorKind::sequential, std::move(per_point), 0, 0);
}

Gaussian1D gp_latent_posterior(const KernelMatrix& k, const Eigen::VectorXd& y_prefix,
                               Eigen::Index i, double noise_variance) {
  if (i < 1 || i > k.gram.rows()) throw std::out_of_range("gp posterior: i outside [1, n]");
  if (y_prefix.size() < i - 1) throw std::invalid_argument("gp posterior: y_prefix too short");
  if (noise_variance < 0.0) throw std::domain_error("gp posterior: negative noise variance");
  const Eigen::Index p = i - 1;
  const double kii = k.gram(p, p);
  if (p == 0) return {0.0, kii};
  Eigen::MatrixXd c = k.gram.topLeftCorner(p, p);
  c.diagonal().array() += noise_variance;
  const JitteredCholesky chol = cholesky_with_jitter(c);
  const Eigen::VectorXd kv = column_head(k.gram, p, p);
  const Eigen::VectorXd l = chol.lower.triangularView<Eigen::Lower>().solve(kv);
  const Eigen::VectorXd a = chol.lower.triangularView<Eigen::Lower>().solve(
      Eigen::VectorXd(y_prefix.head(p)));
  return {l.dot(a), std::max(kii - l.squaredNorm(), 0.0)};
}

Gaussian1D gp_predictive(const KernelMatrix& k, const Eigen::VectorXd& y_prefix, Eigen::Index i,
                         double noise_variance) {
  Gaussian1D g = gp_latent_posterior(k, y_prefix, i, noise_variance);
  g.variance += noise_variance;
  return g;
}

double gp_posterior_function_sample(const KernelMatrix& k, const Eigen::VectorXd& y_prefix,
                                    Eigen::Index i, double noise_variance, Rng& rng,
                                    bool include_noise) {
  const Gaussian1D g = include_noise ? gp_predictive(k, y_prefix, i, noise_variance)
                                     : gp_latent_posterior(k, y_prefix, i, noise_variance);
  std::normal_distribution<double> normal(0.0, 1.0);
  return g.mean + std::sqrt(g.variance) * normal(rng);
}

std::vector<double> gp_function_step_kls(const KernelMatrix& k, const Eigen::VectorXd& y,
                                         double noise_variance) {
  const LatentSequence seq = latent_sequence(k, y, noise_variance);
  const double s2 = seq.effective_noise;
  std::vector<double> out(seq.latent.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const Gaussian1D& before = seq.latent[i];
    if (before.variance <= 0.0) {
      out[i] = 0.0;
      continue;
    }
    const double gain = before.variance / (before.variance + s2);
    const Gaussian1D after{before.mean + gain * (y[static_cast<Eigen::Index>(i)] - before.mean),
                           before.variance * s2 / (before.variance + s2)};
    out[i] = after.variance > 0.0 ? kl_gaussian_1d(before, after) : 0.0;
  }
  return out;
}

EvidenceReport mc_l_estimate_gp(const KernelMatrix& k, const Eigen::VectorXd& y,
                                double noise_variance, int samples, std::uint64_t seed) {
  if (samples < 1) throw std::invalid_argument("mc_l_estimate_gp: samples must be >= 1");
  if (!(noise_variance > 0.0)) throw std::domain_error("mc_l_estimate_gp: noise_variance must be positive");
  const LatentSequence seq = latent_sequence(k, y, noise_variance);
  std::vector<double> per_point(seq.latent.size());
  double var = 0.0;
  std::vector<double> ll(static_cast<std::size_t>(samples));
  for (std::size_t i = 0; i < per_point.size(); ++i) {
    Rng rng = make_rng(seed, i);
    std::normal_distribution<double> normal(0.0, 1.0);
    const Gaussian1D& g = seq.latent[i];
    const double sd = std::sqrt(g.variance);
    for (auto& v : ll) {
      const double f = g.mean + sd * normal(rng);
      v = log_density_1d({f, noise_variance}, y[static_cast<Eigen::Index>(i)]);
    }
    const MeanStderr ms = mean_stderr(ll);
    per_point[i] = ms.mean;
    var += ms.stderr_of_mean * ms.stderr_of_mean;
  }
  return make_report(EstimatorKind::l_hat, std::move(per_point), samples, seed, std::sqrt(var));
}

EvidenceReport mc_l_estimate_gp(const NtkSpec& spec, const Eigen::MatrixXd& inputs,
                                const Eigen::VectorXd& y, double noise_variance, int samples,
                                std::uint64_t seed) {
  EvidenceReport r = mc_l_estimate_gp(ntk_gram(spec, inputs), y, noise_variance, samples, seed);
  r.model_id = spec.label();
  return r;
}

EvidenceReport gp_expected_loglik_bound(const KernelMatrix& k, const Eigen::VectorXd& y,
                                        double noise_variance) {
  if (!(noise_variance > 0.0)) throw std::domain_error("gp bound: noise_variance must be positive");
  const LatentSequence seq = latent_sequence(k, y, noise_variance);
  std::vector<double> per_point(seq.latent.size());
  for (std::size_t i = 0; i < per_point.size(); ++i) {
    const Gaussian1D& g = seq.latent[i];
    const double r = y[static_cast<Eigen::Index>(i)] - g.mean;
    per_point[i] = -(r * r + g.variance) / (2.0 * noise_variance) -
                   0.5 * (kLog2Pi + std::log(noise_variance));
  }
  return make_report(EstimatorKind::l_hat, std::move(per_point), 0, 0);
}

}  // namespace mlest
