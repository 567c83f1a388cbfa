#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "mlest/blr.hpp"
#include "mlest/stats.hpp"
#include "support/instances.hpp"

using namespace mlest;
using mlest::testing::random_instance;
using mlest::testing::scalar_instance;

TEST_SUITE("blr") {

TEST_CASE("conditioning on the scalar example") {
  const auto inst = scalar_instance(1.0, 2.0);
  const PosteriorState prior = condition(inst.model, inst.data, 0);
  CHECK(prior.weights.mean(0) == 0.0);
  CHECK(prior.weights.covariance(0, 0) == 1.0);
  CHECK(prior.prefix_len == 0);

  const PosteriorState post = condition(inst.model, inst.data, 1);
  CHECK(post.weights.mean(0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(post.weights.covariance(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
  const PosteriorState again = condition(inst.model, inst.data, 1);
  CHECK(again.weights.mean == post.weights.mean);
  CHECK(again.weights.covariance == post.weights.covariance);

  const Eigen::VectorXd x = Eigen::VectorXd::Ones(1);
  const Gaussian1D pp = predictive(prior, x, 1.0);
  CHECK(pp.mean == 0.0);
  CHECK(pp.variance == doctest::Approx(2.0));
  const Gaussian1D qp = predictive(post, x, 1.0);
  CHECK(qp.mean == doctest::Approx(1.0));
  CHECK(qp.variance == doctest::Approx(1.5));
  const Gaussian1D zp = predictive(post, Eigen::VectorXd::Zero(1), 0.3);
  CHECK(zp.mean == 0.0);
  CHECK(zp.variance == doctest::Approx(0.3));
  CHECK_THROWS(predictive(post, Eigen::VectorXd::Zero(2), 1.0));
  CHECK_THROWS_AS(condition(inst.model, inst.data, 2), std::out_of_range);
}

TEST_CASE("nonzero prior mean is the prior at prefix zero") {
  BlrModel m = BlrModel::zero_mean(2, 0.7, 0.2);
  m.prior_mean = Eigen::Vector2d(0.5, -1.0);
  const Dataset d(Eigen::MatrixXd::Ones(3, 2), Eigen::Vector3d(1, 2, 3));
  const PosteriorState s = condition(m, d, 0);
  CHECK(s.weights.mean == m.prior_mean);
  CHECK(s.weights.covariance == 0.7 * Eigen::MatrixXd::Identity(2, 2));
}

TEST_CASE("evidence reference values") {
  const auto inst = scalar_instance(1.0, 0.0);
  CHECK(sequential_log_evidence(inst.model, inst.data).value ==
        doctest::Approx(-1.2655121).epsilon(1e-7));
  CHECK(exact_log_evidence(inst.model, inst.data) == doctest::Approx(-1.2655121).epsilon(1e-7));

  // duplicated point (x=1, y=1) twice: log N2((1,1); 0, [[2,1],[1,2]])
  const Dataset dup(Eigen::MatrixXd::Ones(2, 1), Eigen::VectorXd::Ones(2));
  const BlrModel unit = BlrModel::zero_mean(1, 1.0, 1.0);
  const double expected = -std::log(2 * std::numbers::pi) - 0.5 * std::log(3.0) - 1.0 / 3.0;
  CHECK(exact_log_evidence(unit, dup) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(expected == doctest::Approx(-2.720516544).epsilon(1e-9));
  CHECK(sequential_log_evidence(unit, dup).value == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("degenerate priors and features") {
  Rng rng(2);
  const Eigen::VectorXd y = standard_normal_vector(rng, 5);
  double noise_only = 0.0;
  for (int i = 0; i < 5; ++i) noise_only += log_density_1d({0.0, 0.4}, y(i));

  const Dataset zeros(Eigen::MatrixXd::Zero(5, 3), y);
  CHECK(exact_log_evidence(BlrModel::zero_mean(3, 9.0, 0.4), zeros) ==
        doctest::Approx(noise_only).epsilon(1e-12));

  Eigen::MatrixXd x(5, 3);
  for (int i = 0; i < 5; ++i) x.row(i) = standard_normal_vector(rng, 3).transpose();
  const Dataset data(x, y);
  const BlrModel tight = BlrModel::zero_mean(3, 1e-12, 0.4);
  CHECK(sequential_log_evidence(tight, data).value == doctest::Approx(noise_only).epsilon(1e-8));
  CHECK(exact_log_evidence(tight, data) == doctest::Approx(noise_only).epsilon(1e-8));
}

TEST_CASE("sequential equals exact on random instances") {
  Rng rng(20);
  for (int t = 0; t < 60; ++t) {
    const auto inst = random_instance(rng, 8, 32, 1e-2, 1e2, t % 2 == 1);
    const EvidenceReport seq = sequential_log_evidence(inst.model, inst.data);
    const EvidenceReport ex = exact_evidence_report(inst.model, inst.data);
    const double tol = 1e-8 * std::max(1.0, std::abs(ex.value));
    CHECK(std::abs(seq.value - ex.value) <= tol);
    CHECK(ex.value == doctest::Approx(exact_log_evidence(inst.model, inst.data)).epsilon(1e-12));
    CHECK(std::abs(pairwise_sum(seq.per_point) - seq.value) <= 1e-10 * std::max(1.0, std::abs(seq.value)));
    for (std::size_t i = 0; i < seq.per_point.size(); ++i) {
      CHECK(seq.per_point[i] == doctest::Approx(ex.per_point[i]).epsilon(1e-7));
    }
    CHECK(seq.k == 0);
    CHECK(ex.k == 0);
  }
}

TEST_CASE("long sequences cross the refactor interval") {
  Rng rng(21);
  BlrModel m = BlrModel::zero_mean(4, 2.0, 0.05);
  Eigen::MatrixXd x(200, 4);
  for (int i = 0; i < 200; ++i) x.row(i) = standard_normal_vector(rng, 4).transpose();
  const Dataset d(x, standard_normal_vector(rng, 200));
  SequentialConditioner cond(m);
  for (int i = 0; i < 200; ++i) cond.add(d.row(i), d.targets()(i));
  const PosteriorState direct = condition(m, d, 200);
  CHECK((cond.posterior().mean - direct.weights.mean).norm() < 1e-9);
  CHECK((cond.posterior().covariance - direct.weights.covariance).norm() < 1e-12);
  CHECK(sequential_log_evidence(m, d).value ==
        doctest::Approx(exact_log_evidence(m, d)).epsilon(1e-10));
}

TEST_CASE("permutation invariance of the total") {
  Rng rng(22);
  for (int t = 0; t < 20; ++t) {
    const auto inst = random_instance(rng, 6, 20);
    std::vector<Eigen::Index> perm(static_cast<std::size_t>(inst.data.size()));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Eigen::MatrixXd x(inst.data.size(), inst.data.dim());
    Eigen::VectorXd y(inst.data.size());
    for (std::size_t i = 0; i < perm.size(); ++i) {
      x.row(i) = inst.data.features().row(perm[i]);
      y(i) = inst.data.targets()(perm[i]);
    }
    const double exact = exact_log_evidence(inst.model, inst.data);
    const double shuffled = sequential_log_evidence(inst.model, Dataset(x, y)).value;
    CHECK(std::abs(shuffled - exact) <= 1e-8 * std::max(1.0, std::abs(exact)));
  }
}

TEST_CASE("posterior covariance shrinks with the prefix") {
  Rng rng(23);
  for (int t = 0; t < 10; ++t) {
    const auto inst = random_instance(rng, 5, 15);
    Eigen::VectorXd prev = condition(inst.model, inst.data, 0).weights.covariance.eigenvalues().real();
    std::sort(prev.data(), prev.data() + prev.size());
    for (Eigen::Index i = 1; i <= inst.data.size(); ++i) {
      Eigen::VectorXd cur = condition(inst.model, inst.data, i).weights.covariance.eigenvalues().real();
      std::sort(cur.data(), cur.data() + cur.size());
      for (Eigen::Index j = 0; j < cur.size(); ++j) CHECK(cur(j) <= prev(j) + 1e-10);
      prev = cur;
    }
  }
}

TEST_CASE("posterior step kl") {
  const auto inst = scalar_instance(1.0, 2.0);
  // KL(N(0,1) || N(1,0.5)) = 0.5 (2 + 2 - 1 + ln 0.5)
  CHECK(posterior_step_kl(inst.model, inst.data, 1) == doctest::Approx(1.1534264097).epsilon(1e-10));
  CHECK_THROWS_AS(posterior_step_kl(inst.model, inst.data, 0), std::out_of_range);
  CHECK_THROWS_AS(posterior_step_kl(inst.model, inst.data, 2), std::out_of_range);

  const Dataset dup(Eigen::MatrixXd::Ones(2, 1), Eigen::VectorXd::Ones(2));
  CHECK(posterior_step_kl(BlrModel::zero_mean(1, 1.0, 1e12), dup, 2) < 1e-9);

  Rng rng(24);
  for (int t = 0; t < 30; ++t) {
    const auto inst2 = random_instance(rng, 6, 12);
    for (double kl : posterior_step_kls(inst2.model, inst2.data)) CHECK(kl >= 0.0);
  }
}

TEST_CASE("closed-form expected log likelihood equals evidence minus step kls") {
  Rng rng(25);
  for (int t = 0; t < 30; ++t) {
    const auto inst = random_instance(rng, 6, 20, 1e-1, 1e1, t % 3 == 0);
    const auto kls = posterior_step_kls(inst.model, inst.data);
    const double rhs = exact_log_evidence(inst.model, inst.data) - pairwise_sum(kls);
    const double lhs = expected_log_likelihood_bound(inst.model, inst.data).value;
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-9));
    CHECK(lhs <= exact_log_evidence(inst.model, inst.data) + 1e-9);
  }
}

TEST_CASE("model validation") {
  CHECK_THROWS_AS(BlrModel::zero_mean(2, 0.0, 1.0).validate(), std::invalid_argument);
  CHECK_THROWS_AS(BlrModel::zero_mean(2, 1.0, -1.0).validate(), std::invalid_argument);
  const auto inst = scalar_instance(1.0, 1.0);
  CHECK_THROWS(exact_log_evidence(BlrModel::zero_mean(2, 1.0, 1.0), inst.data));
}

}  // TEST_SUITE
