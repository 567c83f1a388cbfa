#include "mlest/gaussian.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "mlest/errors.hpp"

namespace mlest {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

}  // namespace

double log_density_1d(const Gaussian1D& g, double y) {
  if (!(g.variance > 0.0)) {
    throw std::domain_error("log_density_1d: variance must be positive");
  }
  const double r = y - g.mean;
  return -0.5 * r * r / g.variance - 0.5 * (kLog2Pi + std::log(g.variance));
}

double kl_gaussian_1d(const Gaussian1D& p, const Gaussian1D& q) {
  if (!(p.variance > 0.0) || !(q.variance > 0.0)) {
    throw std::domain_error("kl_gaussian_1d: variances must be positive");
  }
  const double dm = q.mean - p.mean;
  const double ratio = p.variance / q.variance;
  return 0.5 * (ratio + dm * dm / q.variance - 1.0 - std::log(ratio));
}

double JitteredCholesky::log_det() const {
  return 2.0 * lower.diagonal().array().log().sum();
}

Eigen::VectorXd JitteredCholesky::solve(const Eigen::VectorXd& b) const {
  const auto tri = lower.triangularView<Eigen::Lower>();
  Eigen::VectorXd z = tri.solve(b);
  return tri.transpose().solve(z);
}

JitteredCholesky cholesky_with_jitter(const Eigen::MatrixXd& a) {
  if (a.rows() != a.cols()) throw std::invalid_argument("cholesky_with_jitter: matrix not square");
  const Eigen::Index d = a.rows();
  if (d == 0) return {Eigen::MatrixXd(0, 0), 0.0};

  auto attempt = [&](double jitter, JitteredCholesky& out) {
    Eigen::MatrixXd m = a;
    m.diagonal().array() += jitter;
    Eigen::LLT<Eigen::MatrixXd> llt(m);
    if (llt.info() != Eigen::Success) return false;
    Eigen::MatrixXd lower = llt.matrixL();
    if (!lower.allFinite() || (lower.diagonal().array() <= 0.0).any()) return false;
    out.lower = std::move(lower);
    out.jitter = jitter;
    return true;
  };

  JitteredCholesky out;
  if (attempt(0.0, out)) return out;
  const double scale = std::abs(a.trace()) / static_cast<double>(d);
  double jitter = 1e-9 * (scale > 0.0 ? scale : 1.0);
  for (int step = 0; step < 4; ++step, jitter *= 10.0) {
    if (attempt(jitter, out)) return out;
  }
  std::ostringstream msg;
  msg << "Cholesky factorization failed for a " << d << "x" << d
      << " matrix after jitter up to " << jitter / 10.0;
  throw NumericError(msg.str());
}

bool is_valid_covariance(const Eigen::MatrixXd& cov) {
  if (cov.rows() != cov.cols()) return false;
  if (!cov.allFinite()) return false;
  const double scale = std::max(cov.cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());
  if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) return false;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov, Eigen::EigenvaluesOnly);
  const auto& ev = es.eigenvalues();
  return ev.minCoeff() >= -1e-10 * std::max(ev.maxCoeff(), 0.0);
}

double kl_gaussian_nd(const GaussianND& p, const GaussianND& q) {
  const Eigen::Index d = p.dim();
  if (q.dim() != d || p.covariance.rows() != d || p.covariance.cols() != d ||
      q.covariance.rows() != d || q.covariance.cols() != d) {
    throw std::invalid_argument("kl_gaussian_nd: dimension mismatch");
  }
  const JitteredCholesky lp = cholesky_with_jitter(p.covariance);
  const JitteredCholesky lq = cholesky_with_jitter(q.covariance);
  const auto lq_tri = lq.lower.triangularView<Eigen::Lower>();

  // tr(Sq^-1 Sp) = ||Lq^-1 Lp||_F^2 ; Mahalanobis term = ||Lq^-1 (mq - mp)||^2
  const Eigen::MatrixXd a = lq_tri.solve(lp.lower);
  const Eigen::VectorXd b = lq_tri.solve(q.mean - p.mean);
  const double kl = 0.5 * (a.squaredNorm() + b.squaredNorm() - static_cast<double>(d) +
                           lq.log_det() - lp.log_det());
  // Rounding can push an exact zero slightly negative.
  return std::max(kl, 0.0);
}

double log_sum_exp(std::span<const double> values) {
  if (values.empty()) throw std::domain_error("log_sum_exp: empty input");
  const double m = *std::max_element(values.begin(), values.end());
  if (m == -std::numeric_limits<double>::infinity()) return m;
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double v : values) s += std::exp(v - m);
  return m + std::log(s);
}

double log_mean_exp(std::span<const double> values) {
  if (values.empty()) throw std::domain_error("log_mean_exp: empty input");
  if (values.size() == 1) return values.front();
  return log_sum_exp(values) - std::log(static_cast<double>(values.size()));
}

Eigen::VectorXd standard_normal_vector(Rng& rng, Eigen::Index n) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd z(n);
  for (Eigen::Index i = 0; i < n; ++i) z[i] = normal(rng);
  return z;
}

MvnSampler::MvnSampler(const GaussianND& g) : mean_(g.mean) {
  if (g.covariance.rows() != g.dim() || g.covariance.cols() != g.dim()) {
    throw std::invalid_argument("MvnSampler: covariance shape does not match mean");
  }
  lower_ = cholesky_with_jitter(g.covariance).lower;
}

Eigen::VectorXd MvnSampler::draw(Rng& rng) const {
  Eigen::VectorXd z = standard_normal_vector(rng, mean_.size());
  return mean_ + lower_.triangularView<Eigen::Lower>() * z;
}

Eigen::MatrixXd MvnSampler::draw_many(Rng& rng, Eigen::Index count) const {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd z(mean_.size(), count);
  for (Eigen::Index j = 0; j < count; ++j) {
    for (Eigen::Index r = 0; r < mean_.size(); ++r) z(r, j) = normal(rng);
  }
  Eigen::MatrixXd out = lower_.triangularView<Eigen::Lower>() * z;
  out.colwise() += mean_;
  return out;
}

Eigen::VectorXd sample_mvn(const GaussianND& g, Rng& rng) {
  return MvnSampler(g).draw(rng);
}

}  // namespace mlest
