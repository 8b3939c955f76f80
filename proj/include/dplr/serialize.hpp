#pragma once

#include <fstream>
#include <string>
#include <variant>

#include <json.hpp>

#include "dplr/dataset.hpp"
#include "dplr/hilr.hpp"
#include "dplr/ilr.hpp"

namespace dplr {

using json = nlohmann::json;

namespace detail {

inline json to_json(const Eigen::VectorXd& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

/// Row-major nested arrays.
inline json to_json(const Eigen::MatrixXd& m) {
  json out = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    out.push_back(row);
  }
  return out;
}

inline Eigen::VectorXd vector_from_json(const json& j) {
  Eigen::VectorXd v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) v(i) = j.at(i).get<double>();
  return v;
}

inline Eigen::MatrixXd matrix_from_json(const json& j) {
  const Eigen::Index rows = j.size();
  const Eigen::Index cols = rows > 0 ? j.at(0).size() : 0;
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    if (static_cast<Eigen::Index>(j.at(i).size()) != cols)
      throw ParseError("model: ragged matrix");
    for (Eigen::Index c = 0; c < cols; ++c)
      m(i, c) = j.at(i).at(c).get<double>();
  }
  return m;
}

inline json to_json(const FeatureSpec& spec) {
  return json{{"degree", spec.degree},
              {"input_shift", to_json(spec.input_shift)},
              {"input_scale", to_json(spec.input_scale)},
              {"output_shift", to_json(spec.output_shift)},
              {"output_scale", to_json(spec.output_scale)},
              {"bias_augmented", spec.bias_augmented}};
}

inline FeatureSpec feature_spec_from_json(const json& j) {
  FeatureSpec spec;
  spec.degree = j.at("degree").get<int>();
  spec.input_shift = vector_from_json(j.at("input_shift"));
  spec.input_scale = vector_from_json(j.at("input_scale"));
  spec.output_shift = vector_from_json(j.at("output_shift"));
  spec.output_scale = vector_from_json(j.at("output_scale"));
  spec.bias_augmented = j.at("bias_augmented").get<bool>();
  spec.validate();
  return spec;
}

inline json to_json(const TruncatedStickBreaking& sb) {
  return json{{"gamma", to_json(sb.gamma)}, {"alpha", to_json(sb.alpha)}};
}

inline TruncatedStickBreaking sticks_from_json(const json& j) {
  TruncatedStickBreaking sb;
  sb.gamma = vector_from_json(j.at("gamma"));
  sb.alpha = vector_from_json(j.at("alpha"));
  return sb;
}

inline json to_json(const NormalWishartParams& p) {
  return json{{"m", to_json(p.m)},
              {"kappa", p.kappa},
              {"Psi", to_json(p.Psi)},
              {"nu", p.nu}};
}

inline NormalWishartParams nw_from_json(const json& j) {
  NormalWishartParams p;
  p.m = vector_from_json(j.at("m"));
  p.kappa = j.at("kappa").get<double>();
  p.Psi = matrix_from_json(j.at("Psi"));
  p.nu = j.at("nu").get<double>();
  return p;
}

inline json to_json(const MatrixNormalWishartParams& p) {
  return json{{"M", to_json(p.M)},
              {"K", to_json(p.K)},
              {"Phi", to_json(p.Phi)},
              {"eta", p.eta}};
}

inline MatrixNormalWishartParams mnw_from_json(const json& j) {
  MatrixNormalWishartParams p;
  p.M = matrix_from_json(j.at("M"));
  p.K = matrix_from_json(j.at("K"));
  p.Phi = matrix_from_json(j.at("Phi"));
  p.eta = j.at("eta").get<double>();
  return p;
}

inline const char* dof_convention_name(DofConvention c) {
  return c == DofConvention::paper ? "paper" : "textbook";
}

inline DofConvention dof_convention_from_name(const std::string& s) {
  if (s == "paper") return DofConvention::paper;
  if (s == "textbook") return DofConvention::textbook;
  throw ParseError("model: unknown dof_convention '" + s + "'");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// ILR
// ---------------------------------------------------------------------------

inline json to_json(const ilr::ILRModel& model) {
  json activation = json::array(), regression = json::array();
  json act_prior = json::array(), reg_prior = json::array();
  for (int k = 0; k < model.truncation; ++k) {
    activation.push_back(detail::to_json(model.activation_post[k]));
    regression.push_back(detail::to_json(model.regression_post[k]));
    act_prior.push_back(detail::to_json(model.activation_prior[k]));
    reg_prior.push_back(detail::to_json(model.regression_prior[k]));
  }
  json sticks = detail::to_json(model.sticks_post);
  sticks["alpha0"] = model.alpha0;
  return json{{"format_version", 1},
              {"kind", "ilr"},
              {"truncation", model.truncation},
              {"dof_convention",
               detail::dof_convention_name(model.dof_convention)},
              {"feature_spec", detail::to_json(model.feature_spec)},
              {"sticks", sticks},
              {"activation", activation},
              {"regression", regression},
              {"priors", json{{"alpha0", model.alpha0},
                              {"sticks", detail::to_json(model.sticks_prior)},
                              {"activation", act_prior},
                              {"regression", reg_prior}}}};
}

inline ilr::ILRModel ilr_model_from_json(const json& j) {
  if (j.at("format_version").get<int>() != 1)
    throw ParseError("model: unsupported format_version");
  ilr::ILRModel model;
  model.truncation = j.at("truncation").get<int>();
  model.dof_convention =
      detail::dof_convention_from_name(j.at("dof_convention").get<std::string>());
  model.feature_spec = detail::feature_spec_from_json(j.at("feature_spec"));
  model.sticks_post = detail::sticks_from_json(j.at("sticks"));
  model.alpha0 = j.at("sticks").at("alpha0").get<double>();
  const json& priors = j.at("priors");
  model.sticks_prior = detail::sticks_from_json(priors.at("sticks"));
  for (const auto& e : j.at("activation"))
    model.activation_post.push_back(detail::nw_from_json(e));
  for (const auto& e : j.at("regression"))
    model.regression_post.push_back(detail::mnw_from_json(e));
  for (const auto& e : priors.at("activation"))
    model.activation_prior.push_back(detail::nw_from_json(e));
  for (const auto& e : priors.at("regression"))
    model.regression_prior.push_back(detail::mnw_from_json(e));
  model.validate();
  return model;
}

// ---------------------------------------------------------------------------
// HILR
// ---------------------------------------------------------------------------

inline json to_json(const hilr::HILRModel& model) {
  json lower_sticks = json::array(), meta = json::array(),
       slopes = json::array(), centers = json::array(),
       biases = json::array();
  for (int m = 0; m < model.upper_truncation; ++m) {
    lower_sticks.push_back(detail::to_json(model.lower_sticks[m]));
    meta.push_back(detail::to_json(model.meta[m]));
    slopes.push_back(detail::to_json(model.slopes[m]));
    json crow = json::array(), brow = json::array();
    for (int k = 0; k < model.lower_truncation; ++k) {
      crow.push_back(json{{"mean", detail::to_json(model.centers[m][k].mean)},
                          {"scale", model.centers[m][k].scale}});
      brow.push_back(json{{"mean", detail::to_json(model.biases[m][k].mean)},
                          {"scale", model.biases[m][k].scale}});
    }
    centers.push_back(crow);
    biases.push_back(brow);
  }
  json upper = detail::to_json(model.upper_sticks);
  upper["beta0"] = model.beta0;
  return json{
      {"format_version", 1},
      {"kind", "hilr"},
      {"upper_truncation", model.upper_truncation},
      {"lower_truncation", model.lower_truncation},
      {"dof_convention", detail::dof_convention_name(model.dof_convention)},
      {"feature_spec", detail::to_json(model.feature_spec)},
      {"upper_sticks", upper},
      {"lower_sticks", lower_sticks},
      {"meta", meta},
      {"slopes", slopes},
      {"centers", centers},
      {"biases", biases},
      {"priors",
       json{{"beta0", model.beta0},
            {"alpha0", model.alpha0},
            {"kappa0", model.kappa0},
            {"rho0", model.rho0},
            {"theta0", detail::to_json(model.theta0)},
            {"upper_sticks", detail::to_json(model.upper_sticks_prior)},
            {"meta", detail::to_json(model.meta_prior)},
            {"slope", detail::to_json(model.slope_prior)}}}};
}

inline hilr::HILRModel hilr_model_from_json(const json& j) {
  if (j.at("format_version").get<int>() != 1)
    throw ParseError("model: unsupported format_version");
  hilr::HILRModel model;
  model.upper_truncation = j.at("upper_truncation").get<int>();
  model.lower_truncation = j.at("lower_truncation").get<int>();
  model.dof_convention =
      detail::dof_convention_from_name(j.at("dof_convention").get<std::string>());
  model.feature_spec = detail::feature_spec_from_json(j.at("feature_spec"));
  model.upper_sticks = detail::sticks_from_json(j.at("upper_sticks"));
  const json& priors = j.at("priors");
  model.beta0 = priors.at("beta0").get<double>();
  model.alpha0 = priors.at("alpha0").get<double>();
  model.kappa0 = priors.at("kappa0").get<double>();
  model.rho0 = priors.at("rho0").get<double>();
  model.theta0 = detail::vector_from_json(priors.at("theta0"));
  model.upper_sticks_prior = detail::sticks_from_json(priors.at("upper_sticks"));
  model.meta_prior = detail::nw_from_json(priors.at("meta"));
  model.slope_prior = detail::mnw_from_json(priors.at("slope"));
  for (const auto& e : j.at("lower_sticks"))
    model.lower_sticks.push_back(detail::sticks_from_json(e));
  for (const auto& e : j.at("meta"))
    model.meta.push_back(detail::nw_from_json(e));
  for (const auto& e : j.at("slopes"))
    model.slopes.push_back(detail::mnw_from_json(e));
  for (const auto& row : j.at("centers")) {
    std::vector<GaussianMeanParams> cells;
    for (const auto& e : row)
      cells.push_back({detail::vector_from_json(e.at("mean")),
                       e.at("scale").get<double>()});
    model.centers.push_back(std::move(cells));
  }
  for (const auto& row : j.at("biases")) {
    std::vector<GaussianMeanParams> cells;
    for (const auto& e : row)
      cells.push_back({detail::vector_from_json(e.at("mean")),
                       e.at("scale").get<double>()});
    model.biases.push_back(std::move(cells));
  }
  model.validate();
  return model;
}

// ---------------------------------------------------------------------------
// File round trips
// ---------------------------------------------------------------------------

using AnyModel = std::variant<ilr::ILRModel, hilr::HILRModel>;

inline void save_model(const AnyModel& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  const json j = std::holds_alternative<ilr::ILRModel>(model)
                     ? to_json(std::get<ilr::ILRModel>(model))
                     : to_json(std::get<hilr::HILRModel>(model));
  out << j.dump(1) << "\n";
  if (!out) throw IoError("write failed: " + path);
}

inline AnyModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  try {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "ilr") return ilr_model_from_json(j);
    if (kind == "hilr") return hilr_model_from_json(j);
    throw ParseError(path + ": unknown model kind '" + kind + "'");
  } catch (const json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
}

}  // namespace dplr
