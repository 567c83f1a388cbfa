#include <doctest.h>

#include <cmath>
#include <numbers>

#include "mlest/blr.hpp"
#include "mlest/estimators.hpp"
#include "mlest/sto.hpp"
#include "mlest/stats.hpp"
#include "support/instances.hpp"

using namespace mlest;
using mlest::testing::random_instance;
using mlest::testing::scalar_instance;

namespace {

Eigen::MatrixXd row(double x) { return Eigen::MatrixXd::Constant(1, 1, x); }
Eigen::VectorXd vec(double v) { return Eigen::VectorXd::Constant(1, v); }

}  // namespace

TEST_SUITE("sto") {

TEST_CASE("target perturbation") {
  const Eigen::VectorXd y = Eigen::VectorXd::LinSpaced(5, -1, 1);
  Rng rng(1);
  CHECK(perturb_targets(y, 0.0, rng) == y);
  Rng a(8), b(8);
  CHECK(perturb_targets(y, 0.3, a) == perturb_targets(y, 0.3, b));
  CHECK_THROWS(perturb_targets(y, -1.0, rng));

  Rng r(9);
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(100000);
  const Eigen::VectorXd eps = perturb_targets(zero, 2.5, r);
  const double var = eps.squaredNorm() / eps.size() - std::pow(eps.mean(), 2);
  CHECK(std::abs(var / 2.5 - 1.0) < 0.05);
}

TEST_CASE("regularized loss") {
  CHECK(regularized_loss(vec(1), vec(1), row(1), vec(1), 1, 1) == 0.0);
  const Eigen::MatrixXd empty(0, 1);
  CHECK(regularized_loss(vec(3), vec(1), empty, Eigen::VectorXd(0), 2.0, 0.5) ==
        doctest::Approx(4.0 * 4.0));
  CHECK(regularized_loss(vec(0), vec(1), row(1), vec(1), 1, 1) == doctest::Approx(2.0));
  CHECK_THROWS(regularized_loss(vec(0), vec(1), Eigen::MatrixXd::Ones(1, 2), vec(1), 1, 1));
}

TEST_CASE("prefix solver") {
  GdConfig closed;
  const PrefixSolution s = solve_prefix(vec(0), row(1), vec(2), 1.0, 1.0, closed);
  CHECK(s.theta(0) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(s.converged);

  const PrefixSolution anchored = solve_prefix(vec(0.75), row(1), vec(5), 1.0, 1e-12, closed);
  CHECK(std::abs(anchored.theta(0) - 0.75) < 1e-6);

  const Eigen::MatrixXd empty(0, 1);
  CHECK(solve_prefix(vec(0.3), empty, Eigen::VectorXd(0), 1.0, 1.0, closed).theta(0) == 0.3);

  Rng rng(4);
  for (int t = 0; t < 10; ++t) {
    const auto inst = random_instance(rng, 6, 20, 0.1, 10);
    const Eigen::Index d = inst.data.dim();
    const Eigen::VectorXd theta0 = standard_normal_vector(rng, d);
    const auto& x = inst.data.features();
    const auto& y = inst.data.targets();
    const PrefixSolution cf = solve_prefix(theta0, x, y, inst.model.noise_variance,
                                           inst.model.prior_variance, closed);
    GdConfig gd;
    gd.mode = SolverMode::gradient_descent;
    gd.grad_tolerance = 1e-10;
    gd.max_iters = 2000000;
    const PrefixSolution g = solve_prefix(theta0, x, y, inst.model.noise_variance,
                                          inst.model.prior_variance, gd);
    CHECK(g.converged);
    CHECK((g.theta - cf.theta).cwiseAbs().maxCoeff() < 1e-8);

    // closed form does not look at the warm start
    const Eigen::VectorXd junk = Eigen::VectorXd::Constant(d, 1e6);
    CHECK(solve_prefix(theta0, x, y, inst.model.noise_variance, inst.model.prior_variance,
                       closed, &junk)
              .theta == cf.theta);
  }
}

TEST_CASE("gradient descent step bound and divergence") {
  const Eigen::MatrixXd x = Eigen::MatrixXd::Identity(2, 2) * 3.0;
  const Eigen::VectorXd y(Eigen::Vector2d(1, 2));
  GdConfig gd;
  gd.mode = SolverMode::gradient_descent;
  gd.step_size = 1.0;  // step * (9 + 1) >= 2
  CHECK_THROWS_AS(solve_prefix(Eigen::VectorXd::Zero(2), x, y, 1.0, 1.0, gd), std::invalid_argument);
  gd.enforce_step_bound = false;
  const PrefixSolution s = solve_prefix(Eigen::VectorXd::Zero(2), x, y, 1.0, 1.0, gd);
  CHECK_FALSE(s.converged);
  CHECK(s.iterations < gd.max_iters);
}

TEST_CASE("early-stopped gradient descent error bound") {
  Rng rng(6);
  for (int t = 0; t < 10; ++t) {
    const auto inst = random_instance(rng, 5, 15, 0.1, 10);
    const Eigen::Index d = inst.data.dim();
    const auto& x = inst.data.features();
    const auto& y = inst.data.targets();
    const Eigen::VectorXd theta0 = standard_normal_vector(rng, d);
    const double nv = inst.model.noise_variance;
    const Eigen::VectorXd star =
        solve_prefix(theta0, x, y, nv, inst.model.prior_variance, GdConfig{}).theta;
    GdConfig loose;
    loose.mode = SolverMode::gradient_descent;
    loose.max_iters = 3;
    const Eigen::VectorXd rough =
        solve_prefix(theta0, x, y, nv, inst.model.prior_variance, loose).theta;
    for (Eigen::Index i = 0; i < inst.data.size(); ++i) {
      const Eigen::VectorXd xi = inst.data.row(i);
      const double err = std::abs(log_density_1d({star.dot(xi), nv}, y(i)) -
                                  log_density_1d({rough.dot(xi), nv}, y(i)));
      CHECK(err <= gd_loglik_error_bound(rough, star, xi, y(i), nv) * (1 + 1e-12) + 1e-12);
    }
  }
}

TEST_CASE("single step trajectory") {
  const auto inst = scalar_instance(2.0, 0.5, 1.0, 0.3);
  const TrajectoryRun run = run_trajectories(inst.model, inst.data, 1, GdConfig{}, 17);
  CHECK(run.samples.n() == 1);
  CHECK(run.samples.k() == 1);
  const double theta = run.samples.theta[0](0, 0);
  // eps is drawn first, then theta0; with one point and no update before
  // scoring, theta is theta0.
  Rng rng(run.samples.seeds[0]);
  standard_normal_vector(rng, 1);
  CHECK(theta == doctest::Approx(standard_normal_vector(rng, 1)(0)).epsilon(1e-15));
  CHECK(run.losses[0].total == doctest::Approx(std::pow(theta * 2.0 - 0.5, 2) / 0.6));
}

TEST_CASE("trajectories are deterministic and independent of thread count") {
  Rng rng(12);
  const auto inst = random_instance(rng, 4, 12);
  const TrajectoryRun a = run_trajectories(inst.model, inst.data, 16, GdConfig{}, 5, 1);
  const TrajectoryRun b = run_trajectories(inst.model, inst.data, 16, GdConfig{}, 5, 3);
  for (Eigen::Index i = 0; i < a.samples.n(); ++i) CHECK(a.samples.theta[i] == b.samples.theta[i]);
  for (std::size_t j = 0; j < a.losses.size(); ++j) CHECK(a.losses[j].total == b.losses[j].total);
  CHECK(a.samples.seeds == b.samples.seeds);
  for (const auto& rowc : a.samples.converged) {
    for (bool c : rowc) CHECK(c);
  }
}

TEST_CASE("closed-form trajectories match the conjugate posterior on the scalar example") {
  const auto inst = scalar_instance(1.0, 2.0);
  Eigen::MatrixXd x(2, 1);
  x << 1.0, 1.0;
  const Dataset two(x, Eigen::Vector2d(2.0, 0.0));
  const int k = 2000;
  const TrajectoryRun run = run_trajectories(inst.model, two, k, GdConfig{}, 2024);
  std::vector<double> prior_draws, post_draws;
  for (int j = 0; j < k; ++j) {
    prior_draws.push_back(run.samples.theta[0](0, j));
    post_draws.push_back(run.samples.theta[1](0, j));
  }
  const MeanStderr p = mean_stderr(prior_draws);
  const MeanStderr q = mean_stderr(post_draws);
  CHECK(std::abs(p.mean) < 3 * std::sqrt(1.0 / k));
  CHECK(std::abs(q.mean - 1.0) < 3 * std::sqrt(0.5 / k));
  const double var = q.stderr_of_mean * q.stderr_of_mean * k;
  // sd of the sample variance is about sqrt(2/k) * 0.5
  CHECK(std::abs(var - 0.5) < 3 * std::sqrt(2.0 / k) * 0.5);
}

TEST_CASE("sum of losses bookkeeping") {
  Rng rng(13);
  const auto inst = random_instance(rng, 5, 20);
  const TrajectoryRun run = run_trajectories(inst.model, inst.data, 8, GdConfig{}, 3);
  const double nv = inst.model.noise_variance;
  const Eigen::Index n = inst.data.size();
  for (int j = 0; j < 8; ++j) {
    const SumLossRecord& rec = run.losses[j];
    CHECK(std::abs(rec.total - pairwise_sum(rec.per_point)) <= 1e-12 * std::max(1.0, rec.total));
    double direct = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      CHECK(rec.per_point[i] >= 0.0);
      direct += log_density_1d({run.samples.theta[i].col(j).dot(inst.data.row(i)), nv},
                               inst.data.targets()(i));
    }
    const double sotl = -rec.total - 0.5 * n * std::log(2 * std::numbers::pi * nv);
    CHECK(sotl == doctest::Approx(direct).epsilon(1e-10));
    CHECK(sotl_report(rec, nv, n).value == doctest::Approx(direct).epsilon(1e-10));
  }
}

TEST_CASE("gradient-descent trajectories track closed form") {
  Rng rng(14);
  const auto inst = random_instance(rng, 3, 8, 0.3, 3);
  GdConfig gd;
  gd.mode = SolverMode::gradient_descent;
  gd.grad_tolerance = 1e-10;
  gd.max_iters = 1000000;
  const TrajectoryRun a = run_trajectories(inst.model, inst.data, 4, GdConfig{}, 8);
  const TrajectoryRun b = run_trajectories(inst.model, inst.data, 4, gd, 8);
  for (Eigen::Index i = 0; i < a.samples.n(); ++i) {
    CHECK((a.samples.theta[i] - b.samples.theta[i]).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("config validation") {
  GdConfig bad;
  bad.max_iters = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  GdConfig neg;
  neg.step_size = -1;
  CHECK_THROWS_AS(neg.validate(), std::invalid_argument);
  const auto inst = scalar_instance(1, 1);
  CHECK_THROWS(run_trajectories(inst.model, inst.data, 0, GdConfig{}, 1));
}

}  // TEST_SUITE
