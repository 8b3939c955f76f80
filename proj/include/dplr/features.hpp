#pragma once

#include <Eigen/Core>

#include <cmath>
#include <stdexcept>

namespace dplr {

/* Input transform shared by models and their serialized form: per-dimension
 * monomials up to `degree` (no cross terms), standardized feature-wise, with
 * an optional trailing bias slot for the regression input. Outputs are
 * standardized with their own shift/scale pairs. */
struct FeatureSpec {
  int degree = 1;
  Eigen::VectorXd input_shift;   // length raw_dim * degree
  Eigen::VectorXd input_scale;   // same length, all > 0
  Eigen::VectorXd output_shift;  // length d_y
  Eigen::VectorXd output_scale;  // same length, all > 0
  bool bias_augmented = true;

  int raw_input_dim() const {
    return degree > 0 ? static_cast<int>(input_shift.size()) / degree : 0;
  }
  int output_dim() const { return static_cast<int>(output_shift.size()); }
  /// Feature count excluding the bias slot.
  int feature_dim() const { return static_cast<int>(input_shift.size()); }
  /// Length of apply() output.
  int augmented_dim() const { return feature_dim() + (bias_augmented ? 1 : 0); }

  void validate() const {
    if (degree < 1) throw std::invalid_argument("FeatureSpec: degree >= 1");
    if (input_shift.size() != input_scale.size() ||
        output_shift.size() != output_scale.size())
      throw std::invalid_argument("FeatureSpec: shift/scale length mismatch");
    if ((input_scale.array() <= 0.0).any() ||
        (output_scale.array() <= 0.0).any())
      throw std::invalid_argument("FeatureSpec: scales must be positive");
  }

  static FeatureSpec identity(int raw_dim, int out_dim, int degree,
                              bool bias = true) {
    if (degree < 1) throw std::invalid_argument("FeatureSpec: degree >= 1");
    FeatureSpec spec;
    spec.degree = degree;
    spec.input_shift = Eigen::VectorXd::Zero(raw_dim * degree);
    spec.input_scale = Eigen::VectorXd::Ones(raw_dim * degree);
    spec.output_shift = Eigen::VectorXd::Zero(out_dim);
    spec.output_scale = Eigen::VectorXd::Ones(out_dim);
    spec.bias_augmented = bias;
    return spec;
  }
};

namespace detail {

inline Eigen::MatrixXd expand_monomials(const Eigen::MatrixXd& x, int degree) {
  Eigen::MatrixXd e(x.rows(), x.cols() * degree);
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    Eigen::VectorXd p = x.col(j);
    for (int d = 0; d < degree; ++d) {
      e.col(j * degree + d) = p;
      if (d + 1 < degree) p = p.cwiseProduct(x.col(j));
    }
  }
  return e;
}

}  // namespace detail

/// Standardization constants estimated from a raw dataset.
inline FeatureSpec fit_spec(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                            int degree, bool bias = true) {
  if (degree < 1) throw std::invalid_argument("fit_spec: degree >= 1");
  if (x.rows() < 1) throw std::invalid_argument("fit_spec: empty data");
  FeatureSpec spec;
  spec.degree = degree;
  spec.bias_augmented = bias;

  const Eigen::MatrixXd e = detail::expand_monomials(x, degree);
  spec.input_shift = e.colwise().mean();
  spec.input_scale =
      ((e.rowwise() - spec.input_shift.transpose()).colwise().squaredNorm() /
       static_cast<double>(e.rows()))
          .cwiseSqrt()
          .transpose();
  spec.output_shift = y.colwise().mean();
  spec.output_scale =
      ((y.rowwise() - spec.output_shift.transpose()).colwise().squaredNorm() /
       static_cast<double>(y.rows()))
          .cwiseSqrt()
          .transpose();
  // Constant columns keep unit scale so the transform stays invertible.
  spec.input_scale = spec.input_scale.cwiseMax(1e-12);
  spec.output_scale = spec.output_scale.cwiseMax(1e-12);
  return spec;
}

/// Transform one raw input, appending the bias slot when flagged.
inline Eigen::VectorXd apply(const FeatureSpec& spec,
                             const Eigen::VectorXd& x) {
  if (x.size() != spec.raw_input_dim())
    throw std::invalid_argument("FeatureSpec apply: raw dimension mismatch");
  Eigen::VectorXd out(spec.augmented_dim());
  const Eigen::MatrixXd e =
      detail::expand_monomials(x.transpose(), spec.degree);
  out.head(spec.feature_dim()) =
      (e.row(0).transpose() - spec.input_shift).cwiseQuotient(spec.input_scale);
  if (spec.bias_augmented) out(spec.feature_dim()) = 1.0;
  return out;
}

/// Row-wise transform of a raw input matrix.
inline Eigen::MatrixXd apply_all(const FeatureSpec& spec,
                                 const Eigen::MatrixXd& x) {
  if (x.cols() != spec.raw_input_dim())
    throw std::invalid_argument("FeatureSpec apply: raw dimension mismatch");
  Eigen::MatrixXd out(x.rows(), spec.augmented_dim());
  const Eigen::MatrixXd e = detail::expand_monomials(x, spec.degree);
  out.leftCols(spec.feature_dim()) =
      (e.rowwise() - spec.input_shift.transpose()).array().rowwise() /
      spec.input_scale.transpose().array();
  if (spec.bias_augmented) out.col(spec.feature_dim()).setOnes();
  return out;
}

inline Eigen::VectorXd standardize_output(const FeatureSpec& spec,
                                          const Eigen::VectorXd& y) {
  return (y - spec.output_shift).cwiseQuotient(spec.output_scale);
}

inline Eigen::MatrixXd standardize_outputs(const FeatureSpec& spec,
                                           const Eigen::MatrixXd& y) {
  return (y.rowwise() - spec.output_shift.transpose()).array().rowwise() /
         spec.output_scale.transpose().array();
}

/// Undo output standardization exactly.
inline Eigen::VectorXd invert_output(const FeatureSpec& spec,
                                     const Eigen::VectorXd& y_std) {
  return y_std.cwiseProduct(spec.output_scale) + spec.output_shift;
}

}  // namespace dplr
