#include <doctest.h>

#include <cmath>
#include <numeric>
#include <sstream>
#include <vector>

#include "mlest/blr.hpp"
#include "mlest/csv.hpp"
#include "mlest/report.hpp"
#include "mlest/rng.hpp"
#include "mlest/stats.hpp"

using namespace mlest;

TEST_SUITE("support") {

TEST_CASE("seed splitting") {
  CHECK(split_seed(1, 0) == split_seed(1, 0));
  CHECK(split_seed(1, 0) != split_seed(1, 1));
  CHECK(split_seed(1, 0) != split_seed(2, 0));
  Rng a = make_rng(42, 3), b = make_rng(42, 3);
  CHECK(a() == b());
}

TEST_CASE("pairwise sum and moments") {
  Rng rng(1);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<double> v(1001);
  for (auto& x : v) x = u(rng);
  long double exact = 0;
  for (double x : v) exact += x;
  CHECK(std::abs(pairwise_sum(v) - static_cast<double>(exact)) < 1e-12);
  CHECK(pairwise_sum(std::vector<double>{}) == 0.0);

  const MeanStderr ms = mean_stderr(std::vector<double>{1, 2, 3, 4});
  CHECK(ms.mean == doctest::Approx(2.5));
  CHECK(ms.stderr_of_mean == doctest::Approx(std::sqrt(5.0 / 3.0 / 4.0)));
  CHECK(mean_stderr(std::vector<double>{7}).stderr_of_mean == 0.0);
}

TEST_CASE("spearman and argmax") {
  const std::vector<double> a{1, 2, 3, 4, 5};
  const std::vector<double> rev{5, 4, 3, 2, 1};
  const std::vector<double> mono{0.1, 0.5, 2, 10, 11};
  CHECK(spearman(a, a) == doctest::Approx(1.0));
  CHECK(spearman(a, rev) == doctest::Approx(-1.0));
  CHECK(spearman(a, mono) == doctest::Approx(1.0));
  CHECK(argmax_lowest(std::vector<double>{1, 3, 3, 2}) == 1);
  CHECK(argmax_lowest(std::vector<double>{4, 4}) == 0);
}

TEST_CASE("evidence report json round trip") {
  EvidenceReport r = make_report(EstimatorKind::l_hat_k, {-1.0, -2.5, 0.25}, 10, 77, 0.3);
  r.model_id = "m1";
  r.degenerate = true;
  CHECK(r.value == doctest::Approx(-3.25).epsilon(1e-15));
  const nlohmann::json j = to_json(r);
  CHECK(j.at("kind") == "l_hat_k");
  CHECK(j.at("stderr") == 0.3);
  const EvidenceReport back = report_from_json(j);
  CHECK(back.kind == r.kind);
  CHECK(back.value == r.value);
  CHECK(back.per_point == r.per_point);
  CHECK(back.k == 10);
  CHECK(back.seed == 77);
  CHECK(back.model_id == "m1");
  CHECK(back.degenerate);
  CHECK_THROWS_AS(parse_estimator_kind("l_hat_q"), std::invalid_argument);
  for (auto k : {EstimatorKind::exact, EstimatorKind::sequential, EstimatorKind::l_hat,
                 EstimatorKind::l_hat_k, EstimatorKind::l_hat_s, EstimatorKind::sotl}) {
    CHECK(parse_estimator_kind(to_string(k)) == k);
  }
}

TEST_CASE("dataset csv round trip") {
  Rng rng(4);
  Eigen::MatrixXd x(6, 3);
  for (int i = 0; i < 6; ++i) x.row(i) = standard_normal_vector(rng, 3).transpose() * 1e3;
  const Eigen::VectorXd y = standard_normal_vector(rng, 6) / 7.0;
  const Dataset d(x, y);
  std::stringstream ss;
  write_dataset_csv(ss, d);
  CHECK(ss.str().rfind("x1,x2,x3,y\n", 0) == 0);
  const Dataset back = read_dataset_csv(ss);
  CHECK(back.features() == d.features());
  CHECK(back.targets() == d.targets());

  for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23}) {
    CHECK(std::stod(format_double(v)) == v);
  }
  std::stringstream bad("x1,y\n1,2\n3,oops\n");
  try {
    read_dataset_csv(bad);
    FAIL("expected an error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
  std::stringstream ragged("x1,x2,y\n1,2,3\n4,5\n");
  CHECK_THROWS(read_dataset_csv(ragged));
}

TEST_CASE("dataset validation") {
  CHECK_THROWS_AS(Dataset(Eigen::MatrixXd(0, 2), Eigen::VectorXd(0)), std::invalid_argument);
  CHECK_THROWS_AS(Dataset(Eigen::MatrixXd::Zero(2, 2), Eigen::VectorXd::Zero(3)),
                  std::invalid_argument);
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(2, 2);
  x(1, 1) = std::nan("");
  CHECK_THROWS_AS(Dataset(x, Eigen::VectorXd::Zero(2)), std::invalid_argument);
}

}  // TEST_SUITE
