#include <catch2/catch.hpp>

#include "dplr/dataset.hpp"
#include "dplr/features.hpp"
#include "dplr/ilr.hpp"
#include "dplr/metrics.hpp"
#include "dplr/random.hpp"

using namespace dplr;
using Eigen::MatrixXd;
using Eigen::VectorXd;

TEST_CASE("identity spec at degree 1 is the identity plus bias slot") {
  const auto spec = FeatureSpec::identity(2, 1, 1, true);
  VectorXd x(2);
  x << 3.0, 4.0;
  const VectorXd u = apply(spec, x);
  REQUIRE(u.size() == 3);
  CHECK(u(0) == 3.0);
  CHECK(u(1) == 4.0);
  CHECK(u(2) == 1.0);
}

TEST_CASE("degree-3 monomials of a scalar") {
  const auto plain = FeatureSpec::identity(1, 1, 3, false);
  const VectorXd u = apply(plain, VectorXd::Constant(1, 2.0));
  REQUIRE(u.size() == 3);
  CHECK(u(0) == 2.0);
  CHECK(u(1) == 4.0);
  CHECK(u(2) == 8.0);

  const auto biased = FeatureSpec::identity(1, 1, 3, true);
  CHECK(apply(biased, VectorXd::Constant(1, 2.0))(3) == 1.0);
}

TEST_CASE("output standardization round trips exactly") {
  RngStream rng(31);
  FeatureSpec spec = FeatureSpec::identity(1, 3, 1);
  spec.output_shift = rng.normal_vector(3);
  spec.output_scale = VectorXd::NullaryExpr(
      3, [&](Eigen::Index) { return rng.uniform(0.1, 5.0); });
  for (int trial = 0; trial < 100; ++trial) {
    const VectorXd y = 10.0 * rng.normal_vector(3);
    const VectorXd back = invert_output(spec, standardize_output(spec, y));
    CHECK((back - y).cwiseAbs().maxCoeff() < 1e-12 * (1 + y.cwiseAbs().maxCoeff()));
  }
}

TEST_CASE("fit_spec standardizes the expanded features") {
  RngStream rng(32);
  MatrixXd x(200, 2), y(200, 1);
  for (int i = 0; i < 200; ++i) {
    x(i, 0) = rng.uniform(-3.0, 7.0);
    x(i, 1) = 100.0 + 5.0 * rng.normal();
    y(i, 0) = 2.0 * x(i, 0) + rng.normal();
  }
  const auto spec = fit_spec(x, y, 2);
  const MatrixXd u = apply_all(spec, x);
  REQUIRE(u.cols() == 5);  // 2 dims * degree 2 + bias
  for (int j = 0; j < 4; ++j) {
    CHECK(u.col(j).mean() == Approx(0.0).margin(1e-10));
    CHECK(u.col(j).squaredNorm() / 200 == Approx(1.0).epsilon(1e-8));
  }
  CHECK_THROWS_AS(fit_spec(x, y, 0), std::invalid_argument);
}

TEST_CASE("input rescaling leaves the single-component fit invariant") {
  // Standardization absorbs any input scaling, so a K=1 conjugate fit gives
  // the same raw-space NMSE on scaled data with correspondingly scaled
  // queries.
  RngStream rng(33);
  Dataset ds;
  ds.X.resize(300, 1);
  ds.Y.resize(300, 1);
  for (int i = 0; i < 300; ++i) {
    ds.X(i, 0) = rng.uniform(-2.0, 2.0);
    ds.Y(i, 0) = 1.5 * ds.X(i, 0) - 0.7 + 0.05 * rng.normal();
  }
  Dataset scaled = ds;
  scaled.X *= 37.5;

  ilr::ILRConfig cfg;
  cfg.truncation = 1;
  cfg.max_iters = 2;
  RngStream r1(0), r2(0);
  const auto [m1, t1] = ilr::fit(ds, cfg, r1);
  const auto [m2, t2] = ilr::fit(scaled, cfg, r2);

  MatrixXd pred1(50, 1), pred2(50, 1), truth(50, 1);
  for (int i = 0; i < 50; ++i) {
    const double x = -1.9 + 3.8 * i / 49.0;
    pred1(i, 0) =
        ilr::predict(m1, VectorXd::Constant(1, x), PredictMode::mean)
            .second.mean(0);
    pred2(i, 0) =
        ilr::predict(m2, VectorXd::Constant(1, 37.5 * x), PredictMode::mean)
            .second.mean(0);
    truth(i, 0) = 1.5 * x - 0.7;
  }
  CHECK(normalized_mse(pred1, truth) ==
        Approx(normalized_mse(pred2, truth)).margin(1e-6));
}
