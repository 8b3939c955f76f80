#pragma once

#include <Eigen/Core>

#include <limits>
#include <vector>

#include "dplr/random.hpp"

namespace dplr::detail {

/* k-means++ seeding followed by a few Lloyd sweeps. Deterministic given the
 * stream. Used only to seed responsibilities, so no convergence finesse. */
struct KMeansResult {
  Eigen::MatrixXd centers;       // k x d
  std::vector<int> labels;       // size n
};

inline KMeansResult kmeans_pp(const Eigen::MatrixXd& x, int k, RngStream& rng,
                              int sweeps = 25) {
  const int n = static_cast<int>(x.rows());
  const int d = static_cast<int>(x.cols());
  KMeansResult res;
  res.centers.resize(k, d);
  res.labels.assign(n, 0);
  if (n == 0) return res;

  // Seeding: first center uniform, then distance-squared weighted.
  Eigen::VectorXd dist2 =
      Eigen::VectorXd::Constant(n, std::numeric_limits<double>::infinity());
  res.centers.row(0) = x.row(rng.integer(n));
  for (int c = 1; c < k; ++c) {
    for (int i = 0; i < n; ++i) {
      const double di = (x.row(i) - res.centers.row(c - 1)).squaredNorm();
      if (di < dist2(i)) dist2(i) = di;
    }
    const double total = dist2.sum();
    int pick = 0;
    if (total > 0.0) {
      double u = rng.uniform() * total;
      for (; pick < n - 1; ++pick) {
        u -= dist2(pick);
        if (u <= 0.0) break;
      }
    } else {
      pick = static_cast<int>(rng.integer(n));
    }
    res.centers.row(c) = x.row(pick);
  }

  for (int sweep = 0; sweep < sweeps; ++sweep) {
    bool changed = false;
    for (int i = 0; i < n; ++i) {
      int best = 0;
      double bestd = (x.row(i) - res.centers.row(0)).squaredNorm();
      for (int c = 1; c < k; ++c) {
        const double dc = (x.row(i) - res.centers.row(c)).squaredNorm();
        if (dc < bestd) {
          bestd = dc;
          best = c;
        }
      }
      if (res.labels[i] != best) changed = true;
      res.labels[i] = best;
    }
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, d);
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(k);
    for (int i = 0; i < n; ++i) {
      sums.row(res.labels[i]) += x.row(i);
      counts(res.labels[i]) += 1.0;
    }
    for (int c = 0; c < k; ++c)
      if (counts(c) > 0.0) res.centers.row(c) = sums.row(c) / counts(c);
    if (!changed) break;
  }
  return res;
}

}  // namespace dplr::detail
