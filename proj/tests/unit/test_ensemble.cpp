#include <doctest.h>

#include <cmath>
#include <vector>

#include "mlest/blr.hpp"
#include "mlest/data.hpp"
#include "mlest/ensemble.hpp"
#include "mlest/gaussian.hpp"
#include "mlest/stats.hpp"
#include "support/instances.hpp"

using namespace mlest;

namespace {

// Three prefix models on a small feature-selection draw.
std::vector<ModelCandidate> small_family(std::uint64_t seed, int n = 20) {
  FeatureTaskOptions opts;
  opts.data.n = n;
  opts.data.d_total = 6;
  opts.data.k_informative = 3;
  opts.data.sigma0 = 0.3;
  opts.data.seed = seed;
  opts.d_min = 2;
  opts.d_max = 4;
  opts.prior_variance = 0.5;
  opts.noise_variance = 0.1;
  return feature_selection_task(opts).models;
}

}  // namespace

TEST_SUITE("ensemble") {

TEST_CASE("sampling mode names") {
  for (auto m : {SamplingMode::concurrent, SamplingMode::posterior, SamplingMode::prior}) {
    CHECK(parse_sampling_mode(to_string(m)) == m);
  }
  CHECK_THROWS(parse_sampling_mode("joint"));
}

TEST_CASE("lemma instance matches the closed form") {
  Rng rng(1);
  const std::vector<double> sigmas{1.0, std::sqrt(2.0), 2.0};
  for (double alpha : {0.5, 1.0, 3.0}) {
    const LemmaInstance inst = synth_lemma_instance(alpha, sigmas, 50, rng);
    const Eigen::MatrixXd& phi = inst.design.phi;
    CHECK(inst.y.squaredNorm() == doctest::Approx(50.0));
    for (int j = 0; j < 3; ++j) {
      const Eigen::VectorXd eps = phi.col(j) - alpha * inst.y;
      CHECK(eps.squaredNorm() == doctest::Approx(sigmas[j] * sigmas[j] * 50.0));
      CHECK(std::abs(eps.dot(inst.y)) < 1e-9);
    }
    const Eigen::VectorXd w = least_squares_weights(inst.design, inst.y).weights;
    const Eigen::VectorXd expect = lemma_closed_form_weights(alpha, sigmas);
    for (int j = 0; j < 3; ++j) CHECK(std::abs(w(j) - expect(j)) <= 1e-6 * std::abs(expect(j)));
    CHECK(w(0) > w(1));
    CHECK(w(1) > w(2));
  }
  const Eigen::VectorXd w = lemma_closed_form_weights(1.0, sigmas);
  CHECK(w(0) == doctest::Approx(1.0 / 2.75));
  const Eigen::VectorXd normalized = w / w.sum();
  CHECK(normalized(0) == doctest::Approx(0.5714285714));
  CHECK(normalized(1) == doctest::Approx(0.2857142857));
  CHECK(normalized(2) == doctest::Approx(0.1428571429));
}

TEST_CASE("lemma edge cases") {
  const std::vector<double> equal{0.7, 0.7, 0.7, 0.7};
  const Eigen::VectorXd w = lemma_closed_form_weights(2.0, equal);
  CHECK((w.array() - w(0)).abs().maxCoeff() == 0.0);
  CHECK(lemma_closed_form_weights(0.0, equal).isZero());
  Rng rng(2);
  const LemmaInstance zero = synth_lemma_instance(0.0, equal, 20, rng);
  CHECK(least_squares_weights(zero.design, zero.y).weights.cwiseAbs().maxCoeff() < 1e-10);
  CHECK_THROWS(synth_lemma_instance(1.0, equal, 4, rng));
}

TEST_CASE("exact single predictor gets unit weight") {
  Rng rng(3);
  const Eigen::VectorXd y = standard_normal_vector(rng, 15);
  DesignMatrix d;
  d.phi = y;
  CHECK(least_squares_weights(d, y).weights(0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(least_squares_weights(d, y, WeightSolver::gradient_descent).weights(0) ==
        doctest::Approx(1.0).epsilon(1e-8));
}

TEST_CASE("gradient descent solver agrees with direct solve") {
  Rng rng(4);
  DesignMatrix d;
  d.phi = Eigen::MatrixXd(30, 4);
  for (int j = 0; j < 4; ++j) d.phi.col(j) = standard_normal_vector(rng, 30);
  const Eigen::VectorXd y = standard_normal_vector(rng, 30);
  const Eigen::VectorXd a = least_squares_weights(d, y).weights;
  const Eigen::VectorXd b = least_squares_weights(d, y, WeightSolver::gradient_descent).weights;
  CHECK((a - b).norm() < 1e-7 * (1.0 + a.norm()));
}

TEST_CASE("identical columns tie and rank in index order") {
  Rng rng(5);
  DesignMatrix d;
  const Eigen::VectorXd col = standard_normal_vector(rng, 12);
  d.phi = Eigen::MatrixXd(12, 2);
  d.phi << col, col;
  const WeightReport r = least_squares_weights(d, col);
  CHECK(r.weights(0) == doctest::Approx(r.weights(1)));
  CHECK(r.weights.sum() == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(r.ranking == std::vector<int>{0, 1});
  CHECK(r.argmax() == 0);
  Eigen::VectorXd w(4);
  w << 0.5, -2.0, 2.0, 0.1;
  CHECK(rank_by_magnitude(w) == std::vector<int>{1, 2, 0, 3});
}

TEST_CASE("predictive table moments per mode") {
  const auto models = small_family(7);
  const auto& c = models.front();
  const PredictiveTable prior = predictive_table(models, SamplingMode::prior);
  const PredictiveTable conc = predictive_table(models, SamplingMode::concurrent);
  const PredictiveTable post = predictive_table(models, SamplingMode::posterior);
  for (Eigen::Index i = 0; i < c.data.size(); ++i) {
    const Eigen::VectorXd x = c.data.row(i);
    CHECK(prior.mean(i, 0) == doctest::Approx(x.dot(c.model.prior_mean)));
    CHECK(prior.variance(i, 0) ==
          doctest::Approx(c.model.prior_variance * x.squaredNorm() + c.model.noise_variance));
    CHECK(post.variance(i, 0) <= conc.variance(i, 0) + 1e-12);
  }
  CHECK(conc.mean.row(0) == prior.mean.row(0));
  CHECK((conc.variance.row(0) - prior.variance.row(0)).cwiseAbs().maxCoeff() < 1e-12);
  const PosteriorState full = condition(c.model, c.data, c.data.size());
  const Gaussian1D g = predictive(full, c.data.row(3), c.model.noise_variance);
  CHECK(post.mean(3, 0) == doctest::Approx(g.mean));
  CHECK(post.variance(3, 0) == doctest::Approx(g.variance));
}

TEST_CASE("concurrent predictions do not see their own or later targets") {
  const auto models = small_family(8);
  const PredictiveTable before = predictive_table(models, SamplingMode::concurrent);
  std::vector<ModelCandidate> altered = models;
  const Eigen::Index cut = 9;
  for (auto& c : altered) {
    Eigen::VectorXd y = c.data.targets();
    y.tail(y.size() - cut).array() += 5.0;
    c.data = Dataset(c.data.features(), y);
  }
  const PredictiveTable after = predictive_table(altered, SamplingMode::concurrent);
  CHECK(before.mean.topRows(cut + 1) == after.mean.topRows(cut + 1));
  CHECK(before.mean.row(cut + 1) != after.mean.row(cut + 1));
}

TEST_CASE("design columns have the tabulated moments") {
  const auto models = small_family(9);
  const PredictiveTable t = predictive_table(models, SamplingMode::concurrent);
  const int draws = 2000;
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(t.mean.rows(), t.mean.cols());
  Rng rng(10);
  for (int s = 0; s < draws; ++s) sum += draw_design(t, rng).phi;
  const Eigen::MatrixXd mean = sum / draws;
  const Eigen::ArrayXXd z = (mean - t.mean).array() / (t.variance.array() / draws).sqrt();
  CHECK(z.abs().maxCoeff() < 4.5);

  Rng a(11), b(11);
  CHECK(build_design(models, SamplingMode::prior, a).phi ==
        build_design(models, SamplingMode::prior, b).phi);
  CHECK_THROWS(build_design(std::span<const ModelCandidate>(models.data(), 1),
                            SamplingMode::prior, a));
}

TEST_CASE("averaged weights approach the expected normal equations") {
  const auto models = small_family(12, 40);
  const PredictiveTable t = predictive_table(models, SamplingMode::concurrent);
  const Eigen::VectorXd& y = models.front().data.targets();
  Eigen::MatrixXd gram = t.mean.transpose() * t.mean;
  gram.diagonal() += t.variance.colwise().sum().transpose();
  const Eigen::VectorXd limit = gram.ldlt().solve(t.mean.transpose() * y);
  const WeightReport many = least_squares_weights(t, y, 4000, 13);
  CHECK(many.draws_averaged == 4000);
  CHECK((many.weights - limit).norm() < 0.05 * limit.norm());
  const WeightReport one = least_squares_weights(t, y, 1, 13);
  CHECK((one.weights - limit).norm() > (many.weights - limit).norm());
  CHECK(least_squares_weights(t, y, 50, 13, 1).weights ==
        least_squares_weights(t, y, 50, 13, 3).weights);
}

TEST_CASE("selection consistency report") {
  const auto models = small_family(14);
  ConsistencyOptions opts;
  opts.draws = 100;
  const ConsistencyReport r = selection_consistency(models, 15, opts);
  CHECK(r.model_ids.size() == 3);
  CHECK(r.modes.size() == 3);
  CHECK(static_cast<std::size_t>(r.evidence_argmax) == argmax_lowest(r.exact_evidence));
  for (std::size_t i = 0; i < models.size(); ++i) {
    CHECK(r.exact_evidence[i] == doctest::Approx(exact_log_evidence(models[i].model, models[i].data)));
  }
  const ModeOutcome& c = r.outcome(SamplingMode::concurrent);
  CHECK(c.agrees_with_evidence == (c.weights.argmax() == r.evidence_argmax));
  CHECK(c.max_residual_correlation >= 0.0);
  CHECK(c.max_residual_correlation <= 1.0 + 1e-12);
  opts.jobs = 2;
  const ConsistencyReport r2 = selection_consistency(models, 15, opts);
  CHECK(r2.outcome(SamplingMode::prior).weights.weights == r.outcome(SamplingMode::prior).weights.weights);

  const nlohmann::json j = to_json(c.weights);
  for (const char* key : {"weights", "ranking", "sampling_mode", "S", "seed", "agreement"}) {
    CHECK(j.contains(key));
  }
  CHECK(j.at("S").get<int>() == 100);
  CHECK(j.at("sampling_mode").get<std::string>() == "concurrent");
  CHECK(to_json(r).contains("exact_evidence"));
}

}  // TEST_SUITE
