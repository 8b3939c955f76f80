#pragma once

#include <Eigen/Core>

#include <stdexcept>

namespace dplr {

inline double mean_squared_error(const Eigen::MatrixXd& pred,
                                 const Eigen::MatrixXd& truth) {
  if (pred.rows() != truth.rows() || pred.cols() != truth.cols())
    throw std::invalid_argument("mean_squared_error: shape mismatch");
  if (pred.rows() == 0) throw std::invalid_argument("mean_squared_error: empty");
  return (pred - truth).squaredNorm() /
         static_cast<double>(pred.rows() * pred.cols());
}

/* Per-output-dimension MSE divided by the test-target variance of that
 * dimension, averaged over dimensions. */
inline double normalized_mse(const Eigen::MatrixXd& pred,
                             const Eigen::MatrixXd& truth) {
  if (pred.rows() != truth.rows() || pred.cols() != truth.cols())
    throw std::invalid_argument("normalized_mse: shape mismatch");
  const double n = static_cast<double>(truth.rows());
  if (n < 2) throw std::invalid_argument("normalized_mse: needs >= 2 rows");
  double acc = 0.0;
  for (Eigen::Index j = 0; j < truth.cols(); ++j) {
    const double mse = (pred.col(j) - truth.col(j)).squaredNorm() / n;
    const double mean = truth.col(j).mean();
    const double var = (truth.col(j).array() - mean).square().sum() / n;
    acc += mse / (var > 0.0 ? var : 1.0);
  }
  return acc / static_cast<double>(truth.cols());
}

}  // namespace dplr
