#include "mlest/blr.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "mlest/errors.hpp"

namespace mlest {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

void require_model_matches(const BlrModel& model, const Dataset& data) {
  model.validate();
  if (model.prior_mean.size() != data.dim()) {
    std::ostringstream msg;
    msg << "model dimension " << model.prior_mean.size() << " does not match dataset dimension "
        << data.dim();
    throw std::invalid_argument(msg.str());
  }
}

}  // namespace

Dataset::Dataset(Eigen::MatrixXd features, Eigen::VectorXd targets)
    : features_(std::move(features)), targets_(std::move(targets)) {
  if (features_.rows() < 1) throw std::invalid_argument("Dataset: need at least one point");
  if (features_.rows() != targets_.size()) {
    throw std::invalid_argument("Dataset: feature rows and target count differ");
  }
  if (!features_.allFinite() || !targets_.allFinite()) {
    throw std::invalid_argument("Dataset: NaN or Inf entry");
  }
}

Dataset Dataset::with_features(Eigen::MatrixXd features) const {
  return Dataset(std::move(features), targets_);
}

BlrModel BlrModel::zero_mean(Eigen::Index d, double prior_variance, double noise_variance,
                             std::string feature_map) {
  BlrModel m;
  m.prior_mean = Eigen::VectorXd::Zero(d);
  m.prior_variance = prior_variance;
  m.noise_variance = noise_variance;
  m.feature_map = std::move(feature_map);
  m.validate();
  return m;
}

void BlrModel::validate() const {
  if (!(prior_variance > 0.0) || !std::isfinite(prior_variance)) {
    throw std::invalid_argument("BlrModel: prior_variance must be positive");
  }
  if (!(noise_variance > 0.0) || !std::isfinite(noise_variance)) {
    throw std::invalid_argument("BlrModel: noise_variance must be positive");
  }
  if (!prior_mean.allFinite()) throw std::invalid_argument("BlrModel: non-finite prior mean");
}

PosteriorState condition(const BlrModel& model, const Dataset& data, Eigen::Index prefix_len) {
  require_model_matches(model, data);
  if (prefix_len < 0 || prefix_len > data.size()) {
    throw std::out_of_range("condition: prefix_len outside [0, n]");
  }
  const Eigen::Index d = data.dim();
  PosteriorState state;
  state.prefix_len = prefix_len;
  if (prefix_len == 0) {
    state.weights.mean = model.prior_mean;
    state.weights.covariance = model.prior_variance * Eigen::MatrixXd::Identity(d, d);
    return state;
  }
  const auto x = data.features().topRows(prefix_len);
  const Eigen::VectorXd r = data.targets().head(prefix_len) - x * model.prior_mean;
  Eigen::MatrixXd precision = x.transpose() * x / model.noise_variance;
  precision.diagonal().array() += 1.0 / model.prior_variance;
  const JitteredCholesky chol = cholesky_with_jitter(precision);
  const Eigen::VectorXd rhs = x.transpose() * r / model.noise_variance;
  state.weights.mean = model.prior_mean + chol.solve(rhs);
  const auto tri = chol.lower.triangularView<Eigen::Lower>();
  const Eigen::MatrixXd linv = tri.solve(Eigen::MatrixXd::Identity(d, d));
  Eigen::MatrixXd cov = linv.transpose() * linv;
  state.weights.covariance = 0.5 * (cov + cov.transpose());
  return state;
}

Gaussian1D predictive(const PosteriorState& state, const Eigen::VectorXd& x,
                      double noise_variance) {
  if (x.size() != state.weights.dim()) {
    throw std::invalid_argument("predictive: input dimension mismatch");
  }
  if (!(noise_variance > 0.0)) throw std::domain_error("predictive: noise_variance must be positive");
  const double mean = x.dot(state.weights.mean);
  const double var = x.dot(state.weights.covariance * x) + noise_variance;
  return {mean, var};
}

SequentialConditioner::SequentialConditioner(const BlrModel& model) : model_(model) {
  model_.validate();
  const Eigen::Index d = model_.prior_mean.size();
  gram_ = Eigen::MatrixXd::Zero(d, d);
  shifted_rhs_ = Eigen::VectorXd::Zero(d);
  precision_lower_ = Eigen::MatrixXd::Identity(d, d) / std::sqrt(model_.prior_variance);
}

void SequentialConditioner::refactor() {
  Eigen::MatrixXd precision = gram_ / model_.noise_variance;
  precision.diagonal().array() += 1.0 / model_.prior_variance;
  precision_lower_ = cholesky_with_jitter(precision).lower;
  since_refactor_ = 0;
}

Gaussian1D SequentialConditioner::predictive(const Eigen::VectorXd& x) const {
  if (x.size() != model_.prior_mean.size()) {
    throw std::invalid_argument("SequentialConditioner: input dimension mismatch");
  }
  const auto tri = precision_lower_.triangularView<Eigen::Lower>();
  const Eigen::VectorXd z = tri.solve(x);
  const Eigen::VectorXd u = tri.solve(shifted_rhs_);
  // x^T A^-1 b = (L^-1 x)^T (L^-1 b)
  const double mean = x.dot(model_.prior_mean) + z.dot(u);
  return {mean, z.squaredNorm() + model_.noise_variance};
}

void SequentialConditioner::add(const Eigen::VectorXd& x, double y) {
  if (x.size() != model_.prior_mean.size()) {
    throw std::invalid_argument("SequentialConditioner: input dimension mismatch");
  }
  gram_.noalias() += x * x.transpose();
  shifted_rhs_ += x * ((y - x.dot(model_.prior_mean)) / model_.noise_variance);
  ++count_;
  if (++since_refactor_ >= kRefactorInterval) {
    refactor();
    return;
  }
  Eigen::MatrixXd lower = precision_lower_;
  Eigen::VectorXd v = x / std::sqrt(model_.noise_variance);
  // Standard rank-1 Cholesky update of L L^T + v v^T.
  const Eigen::Index d = lower.rows();
  for (Eigen::Index k = 0; k < d; ++k) {
    const double lkk = lower(k, k);
    const double r = std::hypot(lkk, v[k]);
    const double c = r / lkk;
    const double s = v[k] / lkk;
    lower(k, k) = r;
    if (k + 1 < d) {
      const Eigen::Index m = d - k - 1;
      lower.col(k).tail(m) = (lower.col(k).tail(m) + s * v.tail(m)) / c;
      v.tail(m) = c * v.tail(m) - s * lower.col(k).tail(m);
    }
  }
  if (!lower.allFinite()) {
    refactor();
    return;
  }
  precision_lower_ = std::move(lower);
}

GaussianND SequentialConditioner::posterior() const {
  const Eigen::Index d = model_.prior_mean.size();
  const auto tri = precision_lower_.triangularView<Eigen::Lower>();
  const Eigen::MatrixXd linv = tri.solve(Eigen::MatrixXd::Identity(d, d));
  GaussianND g;
  g.covariance = linv.transpose() * linv;
  g.mean = model_.prior_mean + g.covariance * shifted_rhs_;
  return g;
}

EvidenceReport sequential_log_evidence(const BlrModel& model, const Dataset& data) {
  require_model_matches(model, data);
  SequentialConditioner cond(model);
  std::vector<double> per_point(static_cast<std::size_t>(data.size()));
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    const Eigen::VectorXd x = data.row(i);
    const double y = data.targets()[i];
    const Gaussian1D pred = cond.predictive(x);
    if (!std::isfinite(pred.mean) || !(pred.variance > 0.0) || !std::isfinite(pred.variance)) {
      throw NumericError("sequential evidence: invalid predictive at prefix " +
                         std::to_string(i + 1));
    }
    per_point[static_cast<std::size_t>(i)] = log_density_1d(pred, y);
    cond.add(x, y);
  }
  return make_report(EstimatorKind::sequential, std::move(per_point), 0, 0);
}

EvidenceReport exact_evidence_report(const BlrModel& model, const Dataset& data) {
  require_model_matches(model, data);
  const auto& x = data.features();
  const Eigen::Index n = data.size();
  Eigen::MatrixXd cov = model.prior_variance * (x * x.transpose());
  cov.diagonal().array() += model.noise_variance;
  const Eigen::VectorXd r = data.targets() - x * model.prior_mean;
  const JitteredCholesky chol = cholesky_with_jitter(cov);
  const Eigen::VectorXd z = chol.lower.triangularView<Eigen::Lower>().solve(r);
  // log N(r; 0, L L^T) = sum_i [-z_i^2/2 - log L_ii - log(2 pi)/2], and the
  // i-th summand is exactly log p(y_i | y_<i).
  std::vector<double> per_point(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    per_point[static_cast<std::size_t>(i)] =
        -0.5 * z[i] * z[i] - std::log(chol.lower(i, i)) - 0.5 * kLog2Pi;
  }
  return make_report(EstimatorKind::exact, std::move(per_point), 0, 0);
}

double exact_log_evidence(const BlrModel& model, const Dataset& data) {
  return exact_evidence_report(model, data).value;
}

double posterior_step_kl(const BlrModel& model, const Dataset& data, Eigen::Index i) {
  if (i < 1 || i > data.size()) throw std::out_of_range("posterior_step_kl: i outside [1, n]");
  const PosteriorState before = condition(model, data, i - 1);
  const PosteriorState after = condition(model, data, i);
  return kl_gaussian_nd(before.weights, after.weights);
}

std::vector<double> posterior_step_kls(const BlrModel& model, const Dataset& data) {
  require_model_matches(model, data);
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(data.size()));
  SequentialConditioner cond(model);
  GaussianND prev = cond.posterior();
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    cond.add(data.row(i), data.targets()[i]);
    GaussianND next = cond.posterior();
    out.push_back(kl_gaussian_nd(prev, next));
    prev = std::move(next);
  }
  return out;
}

EvidenceReport expected_log_likelihood_bound(const BlrModel& model, const Dataset& data) {
  require_model_matches(model, data);
  SequentialConditioner cond(model);
  std::vector<double> per_point(static_cast<std::size_t>(data.size()));
  const double s2 = model.noise_variance;
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    const Eigen::VectorXd x = data.row(i);
    const double y = data.targets()[i];
    const Gaussian1D pred = cond.predictive(x);
    const double param_var = pred.variance - s2;
    const double r = y - pred.mean;
    per_point[static_cast<std::size_t>(i)] =
        -(r * r + param_var) / (2.0 * s2) - 0.5 * (kLog2Pi + std::log(s2));
    cond.add(x, y);
  }
  return make_report(EstimatorKind::l_hat, std::move(per_point), 0, 0);
}

}  // namespace mlest
