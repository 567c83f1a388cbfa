#include "mlest/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "mlest/gaussian.hpp"
#include "mlest/stats.hpp"

namespace mlest {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;
constexpr std::uint64_t kPredictiveNoiseStream = 0x4554414e4f495345ULL;

void require_compatible(const TrajectorySamples& s, const Dataset& data) {
  if (s.n() != data.size() || s.dim() != data.dim()) {
    throw std::invalid_argument("estimator: samples do not match dataset shape");
  }
  if (s.k() < 1) throw std::invalid_argument("estimator: need at least one sample");
}

std::vector<double> row_values(const Eigen::MatrixXd& m, Eigen::Index i, Eigen::Index first,
                               Eigen::Index count) {
  std::vector<double> v(static_cast<std::size_t>(count));
  for (Eigen::Index j = 0; j < count; ++j) v[static_cast<std::size_t>(j)] = m(i, first + j);
  return v;
}

// Delta-method standard error of log(mean(exp(v))).
double log_mean_exp_variance(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = *std::max_element(v.begin(), v.end());
  std::vector<double> w(v.size());
  for (std::size_t j = 0; j < v.size(); ++j) w[j] = std::exp(v[j] - m);
  const MeanStderr ms = mean_stderr(w);
  if (ms.mean <= 0.0) return 0.0;
  const double rel = ms.stderr_of_mean / ms.mean;
  return rel * rel;
}

}  // namespace

Eigen::MatrixXd pointwise_log_likelihoods(const TrajectorySamples& samples, const Dataset& data,
                                          double noise_variance) {
  require_compatible(samples, data);
  if (!(noise_variance > 0.0)) throw std::domain_error("estimator: noise_variance must be positive");
  const Eigen::Index n = data.size();
  const Eigen::Index k = samples.k();
  Eigen::MatrixXd ll(n, k);
  const double c = -0.5 * (kLog2Pi + std::log(noise_variance));
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::RowVectorXd pred = data.features().row(i) * samples.theta[static_cast<std::size_t>(i)];
    const Eigen::ArrayXXd r = pred.array() - data.targets()[i];
    ll.row(i) = (c - r.square() / (2.0 * noise_variance)).matrix();
  }
  return ll;
}

EvidenceReport l_hat(const TrajectorySamples& samples, const Dataset& data, double noise_variance) {
  const Eigen::MatrixXd ll = pointwise_log_likelihoods(samples, data, noise_variance);
  const Eigen::Index k = ll.cols();
  std::vector<double> per_point(static_cast<std::size_t>(ll.rows()));
  double var = 0.0;
  for (Eigen::Index i = 0; i < ll.rows(); ++i) {
    const MeanStderr ms = mean_stderr(row_values(ll, i, 0, k));
    per_point[static_cast<std::size_t>(i)] = ms.mean;
    var += ms.stderr_of_mean * ms.stderr_of_mean;
  }
  return make_report(EstimatorKind::l_hat, std::move(per_point), static_cast<int>(k),
                     samples.master_seed, std::sqrt(var));
}

EvidenceReport l_hat_k(const TrajectorySamples& samples, const Dataset& data,
                       double noise_variance) {
  return l_hat_k_pooled(samples, data, noise_variance, static_cast<int>(samples.k()));
}

EvidenceReport l_hat_k_pooled(const TrajectorySamples& samples, const Dataset& data,
                              double noise_variance, int block) {
  const Eigen::MatrixXd ll = pointwise_log_likelihoods(samples, data, noise_variance);
  const Eigen::Index k = ll.cols();
  if (block < 1 || k % block != 0) {
    throw std::invalid_argument("l_hat_k_pooled: block must divide the sample count");
  }
  const Eigen::Index blocks = k / block;
  std::vector<double> per_point(static_cast<std::size_t>(ll.rows()));
  double var = 0.0;
  for (Eigen::Index i = 0; i < ll.rows(); ++i) {
    std::vector<double> block_values(static_cast<std::size_t>(blocks));
    double block_var = 0.0;
    for (Eigen::Index b = 0; b < blocks; ++b) {
      const auto v = row_values(ll, i, b * block, block);
      block_values[static_cast<std::size_t>(b)] = log_mean_exp(v);
      block_var += log_mean_exp_variance(v);
    }
    per_point[static_cast<std::size_t>(i)] = pairwise_sum(block_values) / static_cast<double>(blocks);
    var += block_var / static_cast<double>(blocks * blocks);
  }
  return make_report(EstimatorKind::l_hat_k, std::move(per_point), block, samples.master_seed,
                     std::sqrt(var));
}

EvidenceReport l_hat_s(const TrajectorySamples& samples, const Dataset& data,
                       double noise_variance) {
  require_compatible(samples, data);
  if (samples.k() < 2) throw std::invalid_argument("l_hat_s: needs k >= 2 samples");
  if (noise_variance < 0.0 || !std::isfinite(noise_variance)) {
    throw std::domain_error("l_hat_s: negative noise variance");
  }
  const Eigen::Index n = data.size();
  const Eigen::Index k = samples.k();
  const double noise_sd = std::sqrt(noise_variance);

  // eta stream for trajectory j is split from that trajectory's seed.
  Eigen::MatrixXd draws(n, k);
  for (Eigen::Index j = 0; j < k; ++j) {
    Rng rng = make_rng(samples.seeds[static_cast<std::size_t>(j)], kPredictiveNoiseStream);
    const Eigen::VectorXd eta = standard_normal_vector(rng, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      draws(i, j) = data.features().row(i).dot(samples.theta[static_cast<std::size_t>(i)].col(j)) +
                    noise_sd * eta[i];
    }
  }

  EvidenceReport report;
  std::vector<double> per_point(static_cast<std::size_t>(n));
  bool degenerate = false;
  // Delta-method variance of each plug-in term, using Var(mean) = v/k and
  // Var(v) = 2 v^2 / (k - 1) for Gaussian draws.
  std::vector<double> term_var(static_cast<std::size_t>(n));
  const double kd = static_cast<double>(k);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto v = row_values(draws, i, 0, k);
    const double mean = pairwise_sum(v) / static_cast<double>(k);
    std::vector<double> sq(v.size());
    for (std::size_t j = 0; j < v.size(); ++j) sq[j] = (v[j] - mean) * (v[j] - mean);
    double var = pairwise_sum(sq) / static_cast<double>(k - 1);
    if (var < kPredictiveVarianceFloor) {
      var = kPredictiveVarianceFloor;
      degenerate = true;
    }
    per_point[static_cast<std::size_t>(i)] = log_density_1d({mean, var}, data.targets()[i]);
    const double r = data.targets()[i] - mean;
    const double d_mean = r / var;
    const double d_var = -0.5 / var + 0.5 * r * r / (var * var);
    term_var[static_cast<std::size_t>(i)] =
        d_mean * d_mean * var / kd + d_var * d_var * 2.0 * var * var / (kd - 1.0);
  }
  report = make_report(EstimatorKind::l_hat_s, std::move(per_point), static_cast<int>(k),
                       samples.master_seed, std::sqrt(pairwise_sum(term_var)));
  report.degenerate = degenerate;
  return report;
}

EvidenceReport sotl_report(const SumLossRecord& record, double noise_variance, Eigen::Index n) {
  if (!(noise_variance > 0.0)) throw std::domain_error("sotl_report: noise_variance must be positive");
  if (static_cast<Eigen::Index>(record.per_point.size()) != n) {
    throw std::invalid_argument("sotl_report: record length does not match n");
  }
  const double c = -0.5 * (kLog2Pi + std::log(noise_variance));
  std::vector<double> per_point(record.per_point.size());
  for (std::size_t i = 0; i < per_point.size(); ++i) per_point[i] = c - record.per_point[i];
  return make_report(EstimatorKind::sotl, std::move(per_point), 1, 0);
}

BiasCheck prop1_bias_check(const BlrModel& model, const Dataset& data, int k, std::uint64_t seed) {
  const TrajectorySamples samples = sample_exact_posteriors(model, data, k, seed);
  const EvidenceReport mc = l_hat(samples, data, model.noise_variance);
  BiasCheck out;
  out.lhs = mc.value;
  out.lhs_stderr = mc.std_error;
  out.exact_evidence = exact_log_evidence(model, data);
  out.kl_sum = pairwise_sum(posterior_step_kls(model, data));
  out.rhs = out.exact_evidence - out.kl_sum;
  return out;
}

}  // namespace mlest
