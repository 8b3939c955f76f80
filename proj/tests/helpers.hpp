#pragma once

#include <Eigen/Dense>

#include <Eigen/Core>

#include "dplr/distributions.hpp"
#include "dplr/random.hpp"

namespace testutil {

inline Eigen::MatrixXd random_spd(dplr::RngStream& rng, int d,
                                  double ridge = 0.5) {
  const Eigen::MatrixXd a = rng.normal_matrix(d, d);
  return a * a.transpose() + ridge * Eigen::MatrixXd::Identity(d, d);
}

inline dplr::NormalWishartParams random_nw(dplr::RngStream& rng, int d) {
  dplr::NormalWishartParams p;
  p.m = rng.normal_vector(d);
  p.kappa = rng.uniform(0.2, 4.0);
  p.Psi = random_spd(rng, d);
  p.nu = d + rng.uniform(0.5, 5.0);
  return p;
}

inline dplr::MatrixNormalWishartParams random_mnw(dplr::RngStream& rng, int du,
                                                  int dy) {
  dplr::MatrixNormalWishartParams p;
  p.M = rng.normal_matrix(dy, du);
  p.K = random_spd(rng, du);
  p.Phi = random_spd(rng, dy);
  p.eta = dy + rng.uniform(0.5, 5.0);
  return p;
}

/* Straight-line evaluations of the weighted conjugate posterior formulas,
 * kept independent of the library implementations they check. */
inline dplr::NormalWishartParams naive_nw_update(
    const dplr::NormalWishartParams& prior, const Eigen::MatrixXd& x,
    const Eigen::VectorXd& w) {
  const int d = prior.dim();
  double wsum = 0.0;
  Eigen::VectorXd s1 = prior.kappa * prior.m;
  Eigen::MatrixXd s2 = prior.Psi.inverse() +
                       prior.kappa * prior.m * prior.m.transpose();
  for (int i = 0; i < x.rows(); ++i) {
    wsum += w(i);
    s1 += w(i) * x.row(i).transpose();
    s2 += w(i) * x.row(i).transpose() * x.row(i);
  }
  dplr::NormalWishartParams post;
  post.kappa = prior.kappa + wsum;
  post.nu = prior.nu + wsum;
  post.m = s1 / post.kappa;
  post.Psi = (s2 - post.kappa * post.m * post.m.transpose()).inverse();
  (void)d;
  return post;
}

inline dplr::MatrixNormalWishartParams naive_mnw_update(
    const dplr::MatrixNormalWishartParams& prior, const Eigen::MatrixXd& u,
    const Eigen::MatrixXd& y, const Eigen::VectorXd& w) {
  double wsum = 0.0;
  Eigen::MatrixXd k = prior.K;
  Eigen::MatrixXd cross = prior.M * prior.K;
  Eigen::MatrixXd scatter =
      prior.Phi.inverse() + prior.M * prior.K * prior.M.transpose();
  for (int i = 0; i < u.rows(); ++i) {
    wsum += w(i);
    k += w(i) * u.row(i).transpose() * u.row(i);
    cross += w(i) * y.row(i).transpose() * u.row(i);
    scatter += w(i) * y.row(i).transpose() * y.row(i);
  }
  dplr::MatrixNormalWishartParams post;
  post.K = k;
  post.M = cross * k.inverse();
  post.eta = prior.eta + wsum;
  post.Phi = (scatter - post.M * k * post.M.transpose()).inverse();
  return post;
}

/// Digamma through numerical differentiation of lgamma; independent of the
/// series implementation in the library.
inline long double digamma_nd(long double x) {
  const long double h = 1e-7L;
  return (lgammal(x + h) - lgammal(x - h)) / (2.0L * h);
}

}  // namespace testutil
