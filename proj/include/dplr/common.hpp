#pragma once

#include <Eigen/Core>

#include <vector>

#include "dplr/distributions.hpp"
#include "dplr/features.hpp"

namespace dplr {

enum class PredictMode { mode, mean };

/// Responsibility seeding: k-means over input features, k-means over the
/// joint (feature, output) space, or random Dirichlet rows.
enum class InitMethod { kmeans, kmeans_joint, random };

/// Per-iteration record of a variational fit.
struct FitTrace {
  std::vector<double> elbo;
  std::vector<int> active_components;
  bool converged = false;
  int iterations = 0;
};

/* Activation weights plus per-component Student-t predictives for one query,
 * in raw output space. underflow_fallback marks queries so far from every
 * receptive field that the weights fell back to uniform. */
struct PredictiveMixture {
  Eigen::VectorXd weights;
  std::vector<StudentT> components;
  bool underflow_fallback = false;
};

struct PointPrediction {
  Eigen::VectorXd mean;    // raw output space
  Eigen::VectorXd stddev;  // marginal standard deviations; valid iff cov_defined
  bool cov_defined = false;
  int top_component = 0;
  double top_weight = 0.0;
};

namespace detail {

/// Softmax of log weights; falls back to uniform when everything underflows.
inline Eigen::VectorXd normalize_log_weights(const Eigen::VectorXd& logw,
                                             bool* underflow) {
  const double lse = logsumexp(logw);
  if (underflow) *underflow = false;
  if (!std::isfinite(lse)) {
    if (underflow) *underflow = true;
    return Eigen::VectorXd::Constant(logw.size(), 1.0 / logw.size());
  }
  return (logw.array() - lse).exp();
}

/// Argmax with ties broken by the lowest index.
inline int argmax_lowest(const Eigen::VectorXd& v) {
  int best = 0;
  for (int i = 1; i < v.size(); ++i)
    if (v(i) > v(best)) best = i;
  return best;
}

/// Map a standardized-output-space Student-t back to raw output space.
inline StudentT unstandardize(const FeatureSpec& spec, const StudentT& t) {
  StudentT out;
  out.dof = t.dof;
  out.loc = invert_output(spec, t.loc);
  const Eigen::VectorXd inv_scale = spec.output_scale.cwiseInverse();
  out.scale = inv_scale.asDiagonal() * t.scale * inv_scale.asDiagonal();
  return out;
}

/// Mixture moments by the law of total variance; covariance only when every
/// weight-bearing component has dof > 2.
inline void mixture_summary(const PredictiveMixture& mix, PredictMode mode,
                            PointPrediction& out) {
  const int dy = mix.components.empty() ? 0 : mix.components[0].dim();
  out.top_component = argmax_lowest(mix.weights);
  out.top_weight = mix.weights(out.top_component);

  if (mode == PredictMode::mode) {
    const StudentT& top = mix.components[out.top_component];
    out.mean = top.loc;
    out.cov_defined = top.dof > 2.0;
    out.stddev = out.cov_defined
                     ? student_t_covariance(top).diagonal().cwiseSqrt().eval()
                     : Eigen::VectorXd::Zero(dy).eval();
    return;
  }

  out.mean = Eigen::VectorXd::Zero(dy);
  out.cov_defined = true;
  Eigen::MatrixXd second = Eigen::MatrixXd::Zero(dy, dy);
  for (int j = 0; j < mix.weights.size(); ++j) {
    const double w = mix.weights(j);
    if (w <= 1e-12) continue;  // negligible at double precision
    const StudentT& c = mix.components[j];
    out.mean += w * c.loc;
    if (!(c.dof > 2.0)) {
      out.cov_defined = false;
      continue;
    }
    if (out.cov_defined)
      second += w * (student_t_covariance(c) + c.loc * c.loc.transpose());
  }
  out.stddev = out.cov_defined
                   ? (second - out.mean * out.mean.transpose())
                         .diagonal()
                         .cwiseMax(0.0)
                         .cwiseSqrt()
                         .eval()
                   : Eigen::VectorXd::Zero(dy).eval();
}

}  // namespace detail

}  // namespace dplr
