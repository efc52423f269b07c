#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "lsgp/metrics.hpp"

using namespace lsgp;
using Catch::Approx;
using Catch::Matchers::ContainsSubstring;

TEST_CASE("covariance discrepancy") {
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(2, 2);
  REQUIRE(covariance_discrepancy(eye, 2.0 * eye) == Approx(1.0).epsilon(1e-15));
  REQUIRE(covariance_discrepancy(eye, eye) == 0.0);

  Eigen::MatrixXd c(2, 2);
  c << 3.0, 1.0, 1.0, 2.0;
  REQUIRE(covariance_discrepancy(c, Eigen::MatrixXd::Zero(2, 2)) ==
          Approx(1.0).epsilon(1e-15));

  // Scale identity: CD(C, a*C) = |1 - a|.
  REQUIRE(covariance_discrepancy(c, 0.25 * c) == Approx(0.75).epsilon(1e-14));
  REQUIRE(covariance_discrepancy(c, 1.5 * c) == Approx(0.5).epsilon(1e-14));

  REQUIRE_THROWS_WITH(covariance_discrepancy(Eigen::MatrixXd::Zero(2, 2), eye),
                      ContainsSubstring("reference covariance is zero"));
  REQUIRE_THROWS_WITH(covariance_discrepancy(eye, Eigen::MatrixXd::Identity(3, 3)),
                      ContainsSubstring("shapes"));
}

TEST_CASE("pointwise error metrics on a hand case") {
  Eigen::VectorXd z(3), zhat(3);
  z << 1.0, 2.0, 0.0;
  zhat << 1.1, 1.8, 0.3;
  const ErrorMetrics m = error_metrics(z, zhat);
  REQUIRE(m.nme == Approx(std::sqrt(0.14 / 5.0)).epsilon(1e-12));
  REQUIRE(m.mae == Approx(0.2).epsilon(1e-12));
  REQUIRE(m.mape == Approx(0.1).epsilon(1e-12));  // zero-truth entry skipped
  REQUIRE(m.count == 3);
  REQUIRE(m.mape_skipped == 1);

  Eigen::VectorXd ones2(2), far2(2);
  ones2 << 1.0, 1.0;
  far2 << 0.0, 2.0;
  const ErrorMetrics worst = error_metrics(ones2, far2);
  REQUIRE(worst.nme == Approx(1.0).epsilon(1e-14));
  REQUIRE(worst.mae == Approx(1.0).epsilon(1e-14));
  REQUIRE(worst.mape == Approx(1.0).epsilon(1e-14));

  const ErrorMetrics perfect = error_metrics(z, z);
  REQUIRE(perfect.nme == 0.0);
  REQUIRE(perfect.mae == 0.0);
  REQUIRE(perfect.mape == 0.0);

  REQUIRE_THROWS_WITH(error_metrics(z, Eigen::VectorXd::Zero(2)),
                      ContainsSubstring("length"));
  REQUIRE_THROWS_WITH(error_metrics(Eigen::VectorXd(), Eigen::VectorXd()),
                      ContainsSubstring("no entries"));
  REQUIRE_THROWS_WITH(error_metrics(Eigen::VectorXd::Zero(3), zhat),
                      ContainsSubstring("NME undefined"));
}

TEST_CASE("normalized mutual information") {
  const std::vector<int> truth = {0, 0, 1, 1};

  REQUIRE(normalized_mutual_information(truth, truth) == 1.0);
  REQUIRE(normalized_mutual_information(truth, {1, 1, 0, 0}) == 1.0);
  REQUIRE(normalized_mutual_information(truth, {7, 7, 3, 3}) == 1.0);

  // Independent labelings carry no information.
  REQUIRE(normalized_mutual_information(truth, {0, 1, 0, 1}) ==
          Approx(0.0).margin(1e-12));

  // Both trivial: equal partitions by convention.
  REQUIRE(normalized_mutual_information({4, 4, 4}, {2, 2, 2}) == 1.0);
  // One trivial, one not: the max-entropy normalizer keeps this at 0.
  REQUIRE(normalized_mutual_information({0, 0, 0, 0}, truth) ==
          Approx(0.0).margin(1e-12));

  REQUIRE(normalized_mutual_information(truth, {0, 0, 0, 1}) ==
          Approx(0.31127812445913283).epsilon(1e-12));
  // Symmetric in its arguments.
  REQUIRE(normalized_mutual_information({0, 0, 0, 1}, truth) ==
          normalized_mutual_information(truth, {0, 0, 0, 1}));
  REQUIRE(normalized_mutual_information({0, 1, 2, 0}, truth) ==
          normalized_mutual_information(truth, {0, 1, 2, 0}));

  REQUIRE_THROWS_WITH(normalized_mutual_information(truth, {0, 0, 1}),
                      ContainsSubstring("equal length"));
  REQUIRE_THROWS_WITH(normalized_mutual_information({}, {}),
                      ContainsSubstring("nonempty"));
}

TEST_CASE("metrics file bytes are deterministic") {
  const std::string path = "metrics_roundtrip_test.csv";
  write_metrics(path, {{"nme", 0.5, "method=sc"}, {"targets", 3.0, ""}});

  std::ifstream in(path, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  REQUIRE(buf.str() == "metric,value,details\nnme,0.5,method=sc\ntargets,3,\n");
  std::remove(path.c_str());
}
