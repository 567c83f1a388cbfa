#include "mlest/sto.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "mlest/errors.hpp"
#include "mlest/gaussian.hpp"
#include "mlest/parallel.hpp"
#include "mlest/stats.hpp"

namespace mlest {

void GdConfig::validate() const {
  if (step_size < 0.0 || !std::isfinite(step_size)) {
    throw std::invalid_argument("GdConfig: step_size must be positive (0 = automatic)");
  }
  if (max_iters <= 0) throw std::invalid_argument("GdConfig: max_iters must be positive");
  if (!(grad_tolerance > 0.0)) throw std::invalid_argument("GdConfig: grad_tolerance must be positive");
}

Eigen::VectorXd perturb_targets(const Eigen::VectorXd& y, double noise_variance, Rng& rng) {
  if (noise_variance < 0.0 || !std::isfinite(noise_variance)) {
    throw std::domain_error("perturb_targets: negative noise variance");
  }
  if (noise_variance == 0.0) return y;
  return y + std::sqrt(noise_variance) * standard_normal_vector(rng, y.size());
}

double regularized_loss(const Eigen::VectorXd& theta, const Eigen::VectorXd& theta0,
                        const Eigen::MatrixXd& x_prefix, const Eigen::VectorXd& y_prefix,
                        double noise_variance, double prior_variance) {
  if (theta.size() != theta0.size() || x_prefix.cols() != theta.size() ||
      x_prefix.rows() != y_prefix.size()) {
    throw std::invalid_argument("regularized_loss: dimension mismatch");
  }
  if (!(prior_variance > 0.0)) throw std::domain_error("regularized_loss: prior_variance must be positive");
  const double lambda = noise_variance / prior_variance;
  const double data_term = x_prefix.rows() > 0 ? (y_prefix - x_prefix * theta).squaredNorm() : 0.0;
  return data_term + lambda * (theta - theta0).squaredNorm();
}

double largest_eigenvalue_estimate(const Eigen::MatrixXd& sym, int iters) {
  const Eigen::Index d = sym.rows();
  if (d == 0) return 0.0;
  Eigen::VectorXd v = Eigen::VectorXd::Ones(d) / std::sqrt(static_cast<double>(d));
  double lambda = 0.0;
  for (int it = 0; it < iters; ++it) {
    Eigen::VectorXd w = sym * v;
    const double norm = w.norm();
    if (norm == 0.0) return 0.0;
    const double next = v.dot(w);
    v = w / norm;
    if (it > 0 && std::abs(next - lambda) <= 1e-10 * std::abs(next)) return next;
    lambda = next;
  }
  return lambda;
}

namespace {

struct QuadraticProblem {
  Eigen::MatrixXd hessian;  // X^T X + lambda I
  Eigen::VectorXd rhs;      // X^T y~ + lambda theta0
  double lambda = 0.0;
};

QuadraticProblem make_problem(const Eigen::VectorXd& theta0, const Eigen::MatrixXd& x,
                              const Eigen::VectorXd& y, double noise_variance,
                              double prior_variance) {
  QuadraticProblem p;
  p.lambda = noise_variance / prior_variance;
  p.hessian = x.transpose() * x;
  p.hessian.diagonal().array() += p.lambda;
  p.rhs = x.transpose() * y + p.lambda * theta0;
  return p;
}

PrefixSolution gradient_descent(const QuadraticProblem& p, const Eigen::VectorXd& start,
                                const GdConfig& cfg) {
  const double top = largest_eigenvalue_estimate(p.hessian);
  const double step = cfg.step_size > 0.0 ? cfg.step_size : 1.0 / top;
  if (cfg.enforce_step_bound && step * top >= 2.0) {
    std::ostringstream msg;
    msg << "gradient descent step " << step << " violates step * (L + lambda) < 2 (L + lambda = "
        << top << ")";
    throw std::invalid_argument(msg.str());
  }
  PrefixSolution out;
  out.theta = start;
  auto half_loss = [&](const Eigen::VectorXd& t) { return 0.5 * t.dot(p.hessian * t) - p.rhs.dot(t); };
  double prev_loss = half_loss(out.theta);
  int increases = 0;
  for (int it = 0; it < cfg.max_iters; ++it) {
    const Eigen::VectorXd grad = p.hessian * out.theta - p.rhs;
    if (grad.norm() <= cfg.grad_tolerance) {
      out.converged = true;
      out.iterations = it;
      return out;
    }
    out.theta -= step * grad;
    const double loss = half_loss(out.theta);
    if (!std::isfinite(loss)) {
      out.converged = false;
      out.iterations = it + 1;
      return out;
    }
    increases = loss > prev_loss ? increases + 1 : 0;
    prev_loss = loss;
    if (increases >= 10) {
      out.converged = false;
      out.iterations = it + 1;
      return out;
    }
  }
  out.iterations = cfg.max_iters;
  out.converged = (p.hessian * out.theta - p.rhs).norm() <= cfg.grad_tolerance;
  return out;
}

}  // namespace

PrefixSolution solve_prefix(const Eigen::VectorXd& theta0, const Eigen::MatrixXd& x_prefix,
                            const Eigen::VectorXd& y_prefix, double noise_variance,
                            double prior_variance, const GdConfig& cfg,
                            const Eigen::VectorXd* warm_start) {
  cfg.validate();
  if (x_prefix.cols() != theta0.size() || x_prefix.rows() != y_prefix.size()) {
    throw std::invalid_argument("solve_prefix: dimension mismatch");
  }
  if (!(prior_variance > 0.0) || !(noise_variance >= 0.0)) {
    throw std::domain_error("solve_prefix: invalid variances");
  }
  if (x_prefix.rows() == 0) return {theta0, true, 0};
  const QuadraticProblem p = make_problem(theta0, x_prefix, y_prefix, noise_variance, prior_variance);
  if (cfg.mode == SolverMode::closed_form) {
    return {cholesky_with_jitter(p.hessian).solve(p.rhs), true, 0};
  }
  if (warm_start != nullptr && warm_start->size() != theta0.size()) {
    throw std::invalid_argument("solve_prefix: warm start dimension mismatch");
  }
  return gradient_descent(p, warm_start != nullptr ? *warm_start : theta0, cfg);
}

double gd_loglik_error_bound(const Eigen::VectorXd& theta, const Eigen::VectorXd& theta_star,
                             const Eigen::VectorXd& x, double y, double noise_variance) {
  const double delta = (theta - theta_star).norm();
  const double xn = x.norm();
  return delta * xn * (2.0 * std::abs(theta_star.dot(x)) + delta * xn + 2.0 * std::abs(y)) /
         (2.0 * noise_variance);
}

namespace {

constexpr std::uint64_t kPriorStream = 0x5052494f52ULL;

void init_samples(TrajectorySamples& s, Eigen::Index n, Eigen::Index d, int k,
                  std::uint64_t master_seed) {
  s.master_seed = master_seed;
  s.theta.assign(static_cast<std::size_t>(n), Eigen::MatrixXd(d, k));
  s.converged.assign(static_cast<std::size_t>(n), std::vector<bool>(static_cast<std::size_t>(k), true));
  s.seeds.resize(static_cast<std::size_t>(k));
  for (int j = 0; j < k; ++j) s.seeds[static_cast<std::size_t>(j)] = split_seed(master_seed, static_cast<std::uint64_t>(j));
}

}  // namespace

TrajectoryRun run_trajectories(const BlrModel& model, const Dataset& data, int k,
                               const GdConfig& cfg, std::uint64_t master_seed, int jobs) {
  model.validate();
  cfg.validate();
  if (k < 1) throw std::invalid_argument("run_trajectories: k must be >= 1");
  if (model.prior_mean.size() != data.dim()) {
    throw std::invalid_argument("run_trajectories: model/data dimension mismatch");
  }
  const Eigen::Index n = data.size();
  const Eigen::Index d = data.dim();
  const double lambda = model.noise_variance / model.prior_variance;
  const double prior_sd = std::sqrt(model.prior_variance);
  const auto& x = data.features();
  const auto& y = data.targets();

  TrajectoryRun run;
  init_samples(run.samples, n, d, k, master_seed);
  run.losses.resize(static_cast<std::size_t>(k));

  // Closed-form systems depend only on the prefix, not on the trajectory.
  std::vector<JitteredCholesky> systems;
  std::vector<Eigen::MatrixXd> hessians;
  if (cfg.mode == SolverMode::closed_form) {
    systems.reserve(static_cast<std::size_t>(n));
    Eigen::MatrixXd h = lambda * Eigen::MatrixXd::Identity(d, d);
    for (Eigen::Index i = 0; i < n; ++i) {
      h.noalias() += x.row(i).transpose() * x.row(i);
      try {
        systems.push_back(cholesky_with_jitter(h));
      } catch (const NumericError& e) {
        throw NumericError("prefix " + std::to_string(i + 1) + ": " + e.what());
      }
    }
  }

  parallel_for(static_cast<std::size_t>(k), jobs, [&](std::size_t js) {
    const auto j = static_cast<Eigen::Index>(js);
    // Target noise first: models of different dimension sharing a seed then
    // share eps and a prefix of theta0.
    Rng rng(run.samples.seeds[js]);
    const Eigen::VectorXd y_tilde = perturb_targets(y, model.noise_variance, rng);
    const Eigen::VectorXd theta0 = model.prior_mean + prior_sd * standard_normal_vector(rng, d);
    SumLossRecord& record = run.losses[js];
    record.per_point.resize(static_cast<std::size_t>(n));

    Eigen::VectorXd theta = theta0;
    Eigen::VectorXd rhs = lambda * theta0;  // X^T y~ + lambda theta0, grown per prefix
    for (Eigen::Index i = 0; i < n; ++i) {
      run.samples.theta[static_cast<std::size_t>(i)].col(j) = theta;
      const double r = theta.dot(x.row(i)) - y[i];
      record.per_point[static_cast<std::size_t>(i)] = r * r / (2.0 * model.noise_variance);
      if (i + 1 == n) break;  // the final optimum never scores a point
      rhs.noalias() += x.row(i).transpose() * y_tilde[i];
      if (cfg.mode == SolverMode::closed_form) {
        theta = systems[static_cast<std::size_t>(i)].solve(rhs);
      } else {
        const PrefixSolution sol = solve_prefix(theta0, x.topRows(i + 1), y_tilde.head(i + 1),
                                                model.noise_variance, model.prior_variance, cfg,
                                                &theta);
        theta = sol.theta;
        run.samples.converged[static_cast<std::size_t>(i + 1)][js] = sol.converged;
      }
    }
    record.total = pairwise_sum(record.per_point);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!std::isfinite(record.per_point[static_cast<std::size_t>(i)])) {
        throw NumericError("trajectory " + std::to_string(j) + ": non-finite loss at point " +
                           std::to_string(i + 1));
      }
    }
  });
  return run;
}

TrajectorySamples sample_exact_posteriors(const BlrModel& model, const Dataset& data, int k,
                                          std::uint64_t master_seed) {
  if (k < 1) throw std::invalid_argument("sample_exact_posteriors: k must be >= 1");
  TrajectorySamples s;
  init_samples(s, data.size(), data.dim(), k, master_seed);
  SequentialConditioner cond(model);
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    const MvnSampler sampler(cond.posterior());
    Rng rng = make_rng(master_seed, kPriorStream + static_cast<std::uint64_t>(i));
    s.theta[static_cast<std::size_t>(i)] = sampler.draw_many(rng, k);
    cond.add(data.row(i), data.targets()[i]);
  }
  return s;
}

}  // namespace mlest
