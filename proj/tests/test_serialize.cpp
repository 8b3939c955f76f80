#include <catch2/catch.hpp>

#include <cstdio>
#include <unistd.h>

#include "dplr/dataset.hpp"
#include "dplr/hilr.hpp"
#include "dplr/ilr.hpp"
#include "dplr/serialize.hpp"

using namespace dplr;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

std::string temp_path(const char* name) {
  return std::string("/tmp/dplr_ser_") + std::to_string(getpid()) + "_" + name;
}

}  // namespace

TEST_CASE("ilr model save/load reproduces predictions to 1e-12") {
  RngStream rng(50);
  const Dataset ds = gen_sinc_hetero(600, rng);
  ilr::ILRConfig cfg;
  cfg.truncation = 8;
  cfg.max_iters = 50;
  const auto [model, trace] = ilr::fit(ds, cfg, rng);

  const std::string path = temp_path("ilr.json");
  save_model(AnyModel(model), path);
  const AnyModel loaded = load_model(path);
  REQUIRE(std::holds_alternative<ilr::ILRModel>(loaded));
  const auto& back = std::get<ilr::ILRModel>(loaded);

  for (double x = -9.5; x < 10.0; x += 0.83) {
    const VectorXd q = VectorXd::Constant(1, x);
    const auto a = ilr::predict(model, q, PredictMode::mean).second;
    const auto b = ilr::predict(back, q, PredictMode::mean).second;
    CHECK(a.mean(0) == Approx(b.mean(0)).margin(1e-12));
    CHECK(a.stddev(0) == Approx(b.stddev(0)).margin(1e-12));
  }

  // Serialization is idempotent after one round trip.
  const auto reloaded = std::get<ilr::ILRModel>(load_model(path));
  CHECK(to_json(back).dump() == to_json(reloaded).dump());
  std::remove(path.c_str());
}

TEST_CASE("hilr model save/load reproduces predictions to 1e-12") {
  RngStream rng(51);
  const Dataset ds = gen_triangle(500, rng);
  hilr::HILRConfig cfg;
  cfg.upper_truncation = 4;
  cfg.lower_truncation = 4;
  cfg.max_iters = 40;
  const auto [model, trace] = hilr::h_fit(ds, cfg, rng);

  const std::string path = temp_path("hilr.json");
  save_model(AnyModel(model), path);
  const AnyModel loaded = load_model(path);
  REQUIRE(std::holds_alternative<hilr::HILRModel>(loaded));
  const auto& back = std::get<hilr::HILRModel>(loaded);

  for (double x = 0.1; x < 6.0; x += 0.53) {
    const VectorXd q = VectorXd::Constant(1, x);
    const auto a = hilr::h_predict(model, q, PredictMode::mean).second;
    const auto b = hilr::h_predict(back, q, PredictMode::mean).second;
    CHECK(a.mean(0) == Approx(b.mean(0)).margin(1e-12));
    CHECK(a.stddev(0) == Approx(b.stddev(0)).margin(1e-12));
  }
  std::remove(path.c_str());
}

TEST_CASE("model loading validates structure") {
  const std::string path = temp_path("broken.json");
  {
    std::ofstream out(path);
    out << "{\"kind\": \"ilr\", \"format_version\": 1}";
  }
  CHECK_THROWS_AS(load_model(path), ParseError);
  {
    std::ofstream out(path);
    out << "not json at all {";
  }
  CHECK_THROWS_AS(load_model(path), ParseError);
  std::remove(path.c_str());
  CHECK_THROWS_AS(load_model("/nonexistent/model.json"), IoError);
}

TEST_CASE("feature spec survives the round trip bit-for-bit") {
  RngStream rng(52);
  const Dataset ds = gen_cubics(300, rng);
  ilr::ILRConfig cfg;
  cfg.truncation = 4;
  cfg.degree = 3;
  cfg.max_iters = 30;
  const auto [model, trace] = ilr::fit(ds, cfg, rng);
  const std::string path = temp_path("spec.json");
  save_model(AnyModel(model), path);
  const auto back = std::get<ilr::ILRModel>(load_model(path));
  CHECK(back.feature_spec.degree == 3);
  CHECK(back.feature_spec.input_shift == model.feature_spec.input_shift);
  CHECK(back.feature_spec.input_scale == model.feature_spec.input_scale);
  CHECK(back.feature_spec.output_shift == model.feature_spec.output_shift);
  CHECK(back.feature_spec.output_scale == model.feature_spec.output_scale);
  std::remove(path.c_str());
}
