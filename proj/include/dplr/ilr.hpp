#pragma once

#include <Eigen/Core>

#include <cmath>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "dplr/common.hpp"
#include "dplr/dataset.hpp"
#include "dplr/distributions.hpp"
#include "dplr/features.hpp"
#include "dplr/kmeans.hpp"
#include "dplr/mathutils.hpp"
#include "dplr/random.hpp"

namespace dplr::ilr {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Expected component assignments, one row per datum, rows sum to one.
using Responsibilities = Eigen::MatrixXd;

struct ILRConfig {
  int truncation = 25;
  double alpha0 = 1.0;
  int degree = 1;
  double tol = 1e-6;
  int max_iters = 200;
  InitMethod init = InitMethod::kmeans;
  DofConvention dof_convention = DofConvention::paper;

  // Prior scales; location-type hyperparameters come from the data.
  double kappa0 = 1e-2;
  double k0_scale = 1e-2;
  double phi0_scale = 1.0;

  // Stochastic schedule: rho_t = (t + tau_delay)^(-kappa_step), t from 0.
  int batch_size = 0;  // 0 selects full-batch fitting
  double tau_delay = 1.0;
  double kappa_step = 0.75;

  void validate() const {
    if (truncation < 1) throw std::invalid_argument("ILRConfig: truncation >= 1");
    if (!(alpha0 > 0.0)) throw std::invalid_argument("ILRConfig: alpha0 > 0");
    if (degree < 1) throw std::invalid_argument("ILRConfig: degree >= 1");
    if (!(tol > 0.0)) throw std::invalid_argument("ILRConfig: tol > 0");
    if (max_iters < 1) throw std::invalid_argument("ILRConfig: max_iters >= 1");
    if (!(kappa0 > 0.0 && k0_scale > 0.0 && phi0_scale > 0.0))
      throw std::invalid_argument("ILRConfig: prior scales must be positive");
    if (batch_size != 0) {
      if (batch_size < 1)
        throw std::invalid_argument("ILRConfig: batch_size >= 1");
      if (!(kappa_step > 0.5 && kappa_step <= 1.0))
        throw std::invalid_argument("ILRConfig: kappa_step in (0.5, 1]");
      if (!(tau_delay >= 1.0))
        throw std::invalid_argument("ILRConfig: tau_delay >= 1");
    }
  }
};

/* Flat infinite mixture of local linear regressors under truncated
 * variational posteriors. Priors are stored per component so a sequential
 * update can promote posteriors to priors; a fresh fit replicates one prior
 * across components. The model never retains training data. */
struct ILRModel {
  int truncation = 1;
  double alpha0 = 1.0;
  FeatureSpec feature_spec;
  DofConvention dof_convention = DofConvention::paper;

  TruncatedStickBreaking sticks_prior, sticks_post;
  std::vector<NormalWishartParams> activation_prior, activation_post;
  std::vector<MatrixNormalWishartParams> regression_prior, regression_post;

  int feature_dim() const { return feature_spec.feature_dim(); }
  int output_dim() const { return feature_spec.output_dim(); }

  void validate() const {
    feature_spec.validate();
    if (truncation < 1) throw std::invalid_argument("ILRModel: truncation >= 1");
    if (sticks_post.truncation() != truncation ||
        sticks_prior.truncation() != truncation ||
        static_cast<int>(activation_post.size()) != truncation ||
        static_cast<int>(activation_prior.size()) != truncation ||
        static_cast<int>(regression_post.size()) != truncation ||
        static_cast<int>(regression_prior.size()) != truncation)
      throw std::invalid_argument("ILRModel: block count mismatch");
    sticks_prior.validate();
    sticks_post.validate();
    for (const auto& p : activation_prior) p.validate();
    for (const auto& p : activation_post) p.validate();
    for (const auto& p : regression_prior) p.validate();
    for (const auto& p : regression_post) p.validate();
  }
};

namespace detail {

using dplr::detail::argmax_lowest;
using dplr::detail::mixture_summary;
using dplr::detail::normalize_log_weights;
using dplr::detail::unstandardize;

/// Training data mapped through the feature transform.
struct View {
  MatrixXd U;  // N x (F+1), bias-augmented
  MatrixXd Y;  // N x d_y, standardized
  int F = 0;
};

inline View make_view(const FeatureSpec& spec, const Dataset& data) {
  data.validate();
  if (data.input_dim() != spec.raw_input_dim() ||
      data.output_dim() != spec.output_dim())
    throw std::invalid_argument("ILR: dataset does not match feature_spec");
  View v;
  v.U = apply_all(spec, data.X);
  v.Y = standardize_outputs(spec, data.Y);
  v.F = spec.feature_dim();
  return v;
}

/* log r_nk before normalization: E[log pi_k] + E[log N(x_n | mu_k, Lambda_k)]
 * + E[log N(y_n | A_k u_n, V_k)], vectorized over rows. */
inline MatrixXd loglik_matrix(const ILRModel& model, const View& view) {
  const int n = static_cast<int>(view.U.rows());
  const int k = model.truncation;
  const int f = view.F;
  const int dy = static_cast<int>(view.Y.cols());
  const auto xa = view.U.leftCols(f);

  MatrixXd out(n, k);
  const VectorXd logw = expected_log_weights(model.sticks_post);
  for (int j = 0; j < k; ++j) {
    const auto& nw = model.activation_post[j];
    const auto psi_llt = spd_cholesky(nw.Psi, "e_step: Psi");
    const double elogdet_l =
        mvdigamma_sum(f, nw.nu) + f * std::log(2.0) + logdet_from_llt(psi_llt);
    const MatrixXd lpsi = psi_llt.matrixL();
    const VectorXd act_quad =
        ((xa.rowwise() - nw.m.transpose()) * lpsi).rowwise().squaredNorm() *
        nw.nu;
    const double act_const =
        0.5 * (elogdet_l - f * kLog2Pi - f / nw.kappa);

    const auto& mnw = model.regression_post[j];
    const auto phi_llt = spd_cholesky(mnw.Phi, "e_step: Phi");
    const double elogdet_v = mvdigamma_sum(dy, mnw.eta) +
                             dy * std::log(2.0) + logdet_from_llt(phi_llt);
    const MatrixXd lphi = phi_llt.matrixL();
    const MatrixXd resid = view.Y - view.U * mnw.M.transpose();
    const VectorXd reg_quad =
        (resid * lphi).rowwise().squaredNorm() * mnw.eta;
    const MatrixXd kin = spd_cholesky(mnw.K, "e_step: K").solve(view.U.transpose());
    const VectorXd u_quad =
        (view.U.array() * kin.transpose().array()).rowwise().sum() * dy;
    const double reg_const = 0.5 * (elogdet_v - dy * kLog2Pi);

    out.col(j) = (logw(j) + act_const + reg_const) -
                 0.5 * (act_quad + reg_quad + u_quad).array();
  }
  return out;
}

inline Responsibilities normalize_rows(const MatrixXd& loglik) {
  const int n = static_cast<int>(loglik.rows());
  Responsibilities r(n, loglik.cols());
  for (int i = 0; i < n; ++i) {
    const VectorXd row = loglik.row(i).transpose();
    for (int j = 0; j < row.size(); ++j)
      if (std::isnan(row(j)))
        throw NumericalError("e_step: non-finite term at datum " +
                             std::to_string(i) + ", component " +
                             std::to_string(j));
    const double lse = logsumexp(row);
    if (!std::isfinite(lse))
      throw NumericalError("e_step: all components underflow at datum " +
                           std::to_string(i));
    r.row(i) = (row.array() - lse).exp();
  }
  return r;
}

inline void m_step_impl(ILRModel& model, const View& view,
                        const Responsibilities& resp) {
  const VectorXd counts = resp.colwise().sum();
  model.sticks_post = stick_update(model.sticks_prior, counts);
  const auto xa = view.U.leftCols(view.F);
  for (int j = 0; j < model.truncation; ++j) {
    model.activation_post[j] =
        nw_update(model.activation_prior[j], xa, resp.col(j));
    model.regression_post[j] =
        mnw_update(model.regression_prior[j], view.U, view.Y, resp.col(j));
  }
}

inline double elbo_impl(const ILRModel& model, const MatrixXd& loglik,
                        const Responsibilities& resp) {
  double data_term = 0.0;
  for (Eigen::Index i = 0; i < resp.rows(); ++i)
    for (Eigen::Index j = 0; j < resp.cols(); ++j) {
      const double r = resp(i, j);
      if (r > 0.0) data_term += r * (loglik(i, j) - std::log(r));
    }

  double kl = 0.0;
  for (int j = 0; j + 1 < model.truncation; ++j)
    kl += kl_beta(model.sticks_post.gamma(j), model.sticks_post.alpha(j),
                  model.sticks_prior.gamma(j), model.sticks_prior.alpha(j));
  for (int j = 0; j < model.truncation; ++j) {
    kl += kl_normal_wishart(model.activation_post[j],
                            model.activation_prior[j]);
    kl += kl_matrix_normal_wishart(model.regression_post[j],
                                   model.regression_prior[j]);
  }
  const double value = data_term - kl;
  if (!std::isfinite(value)) throw NumericalError("elbo: non-finite value");
  return value;
}

inline int active_count(const Responsibilities& resp, double threshold) {
  const VectorXd mass = resp.colwise().sum();
  const double bar = threshold * static_cast<double>(resp.rows());
  return static_cast<int>((mass.array() > bar).count());
}

/// Data-scaled priors replicated across the truncation level.
inline ILRModel make_prior_model(const View& view, const FeatureSpec& spec,
                                 const ILRConfig& config) {
  const int f = view.F;
  const int dy = static_cast<int>(view.Y.cols());

  NormalWishartParams nw0;
  nw0.m = view.U.leftCols(f).colwise().mean();
  VectorXd var = (view.U.leftCols(f).rowwise() - nw0.m.transpose())
                     .colwise()
                     .squaredNorm() /
                 static_cast<double>(view.U.rows());
  var = var.cwiseMax(1e-6);
  nw0.Psi = var.cwiseInverse().asDiagonal();
  nw0.nu = f + 1.0;
  nw0.kappa = config.kappa0;

  MatrixNormalWishartParams mnw0;
  mnw0.M = MatrixXd::Zero(dy, f + 1);
  mnw0.K = config.k0_scale * MatrixXd::Identity(f + 1, f + 1);
  mnw0.Phi = config.phi0_scale * MatrixXd::Identity(dy, dy);
  mnw0.eta = dy + 1.0;

  ILRModel model;
  model.truncation = config.truncation;
  model.alpha0 = config.alpha0;
  model.feature_spec = spec;
  model.dof_convention = config.dof_convention;
  model.sticks_prior =
      TruncatedStickBreaking::prior(config.truncation, config.alpha0);
  model.sticks_post = model.sticks_prior;
  model.activation_prior.assign(config.truncation, nw0);
  model.activation_post = model.activation_prior;
  model.regression_prior.assign(config.truncation, mnw0);
  model.regression_post = model.regression_prior;
  return model;
}

inline Responsibilities init_responsibilities(const View& view,
                                              const ILRConfig& config,
                                              RngStream& rng) {
  const int n = static_cast<int>(view.U.rows());
  const int k = config.truncation;
  if (k == 1) return MatrixXd::Ones(n, 1);

  Responsibilities r(n, k);
  if (config.init != InitMethod::random) {
    MatrixXd points;
    if (config.init == InitMethod::kmeans_joint) {
      points.resize(n, view.F + view.Y.cols());
      points << view.U.leftCols(view.F), view.Y;
    } else {
      points = view.U.leftCols(view.F);
    }
    const auto km = dplr::detail::kmeans_pp(points, k, rng);
    r.setConstant(0.01 / k);
    for (int i = 0; i < n; ++i) r(i, km.labels[i]) += 0.99;
  } else {
    for (int i = 0; i < n; ++i) {
      double total = 0.0;
      for (int j = 0; j < k; ++j) {
        r(i, j) = -std::log(rng.uniform());
        total += r(i, j);
      }
      r.row(i) /= total;
    }
  }
  return r;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Training operations
// ---------------------------------------------------------------------------

/// Seed responsibilities and apply one M-step; the starting point of fit().
inline std::pair<ILRModel, Responsibilities> init(const Dataset& data,
                                                  const ILRConfig& config,
                                                  RngStream& rng) {
  config.validate();
  data.validate();
  if (data.rows() < 1) throw std::invalid_argument("ilr::init: empty dataset");
  const FeatureSpec spec = fit_spec(data.X, data.Y, config.degree);
  const auto view = detail::make_view(spec, data);
  ILRModel model = detail::make_prior_model(view, spec, config);
  Responsibilities resp = detail::init_responsibilities(view, config, rng);
  detail::m_step_impl(model, view, resp);
  return {std::move(model), std::move(resp)};
}

inline Responsibilities e_step(const ILRModel& model, const Dataset& data) {
  const auto view = detail::make_view(model.feature_spec, data);
  return detail::normalize_rows(detail::loglik_matrix(model, view));
}

inline ILRModel m_step(const ILRModel& model, const Dataset& data,
                       const Responsibilities& resp) {
  const auto view = detail::make_view(model.feature_spec, data);
  if (resp.rows() != view.U.rows() || resp.cols() != model.truncation)
    throw std::invalid_argument("m_step: responsibility shape mismatch");
  ILRModel next = model;
  detail::m_step_impl(next, view, resp);
  return next;
}

inline double elbo(const ILRModel& model, const Dataset& data,
                   const Responsibilities& resp) {
  const auto view = detail::make_view(model.feature_spec, data);
  if (resp.rows() != view.U.rows() || resp.cols() != model.truncation)
    throw std::invalid_argument("elbo: responsibility shape mismatch");
  const MatrixXd loglik = view.U.rows() > 0
                              ? detail::loglik_matrix(model, view)
                              : MatrixXd(0, model.truncation);
  return detail::elbo_impl(model, loglik, resp);
}

namespace detail {

/// Shared coordinate-ascent loop; the model arrives with posteriors already
/// one M-step ahead of `resp`.
inline FitTrace ascend(ILRModel& model, const View& view,
                       Responsibilities& resp, double tol, int max_iters) {
  FitTrace trace;
  double prev = 0.0;
  for (int it = 0; it < max_iters; ++it) {
    const MatrixXd loglik = loglik_matrix(model, view);
    resp = normalize_rows(loglik);
    const double value = elbo_impl(model, loglik, resp);
    trace.elbo.push_back(value);
    trace.active_components.push_back(active_count(resp, 0.01));
    if (it > 0 &&
        std::abs(value - prev) <= tol * std::max(std::abs(prev), 1e-12)) {
      trace.converged = true;
      break;
    }
    prev = value;
    m_step_impl(model, view, resp);
  }
  trace.iterations = static_cast<int>(trace.elbo.size());
  return trace;
}

}  // namespace detail

/// Batch VBEM to ELBO convergence.
inline std::pair<ILRModel, FitTrace> fit(const Dataset& data,
                                         const ILRConfig& config,
                                         RngStream& rng) {
  auto [model, resp] = init(data, config, rng);
  const auto view = detail::make_view(model.feature_spec, data);
  FitTrace trace = detail::ascend(model, view, resp, config.tol,
                                  config.max_iters);
  return {std::move(model), std::move(trace)};
}

namespace detail {

struct NwNaturals {
  VectorXd n1;
  double n2 = 0.0;
  MatrixXd n3;
  double n4 = 0.0;
};

inline NwNaturals nw_naturals(const NormalWishartParams& p) {
  NwNaturals n;
  n.n1 = p.kappa * p.m;
  n.n2 = p.kappa;
  n.n3 = spd_inverse(p.Psi, "nw_naturals") + p.kappa * p.m * p.m.transpose();
  n.n4 = p.nu;
  return n;
}

inline NormalWishartParams nw_from_naturals(const NwNaturals& n) {
  NormalWishartParams p;
  p.kappa = n.n2;
  p.m = n.n1 / n.n2;
  p.Psi = spd_inverse(n.n3 - n.n1 * n.n1.transpose() / n.n2,
                      "nw_from_naturals");
  p.nu = n.n4;
  return p;
}

struct MnwNaturals {
  MatrixXd n1;  // M K
  MatrixXd n2;  // K
  MatrixXd n3;  // Phi^-1 + M K M'
  double n4 = 0.0;
};

inline MnwNaturals mnw_naturals(const MatrixNormalWishartParams& p) {
  MnwNaturals n;
  n.n1 = p.M * p.K;
  n.n2 = p.K;
  n.n3 = spd_inverse(p.Phi, "mnw_naturals") + p.M * p.K * p.M.transpose();
  n.n4 = p.eta;
  return n;
}

inline MatrixNormalWishartParams mnw_from_naturals(const MnwNaturals& n) {
  MatrixNormalWishartParams p;
  p.K = symmetrize(n.n2);
  const auto kllt = spd_cholesky(p.K, "mnw_from_naturals: K");
  p.M = kllt.solve(n.n1.transpose()).transpose();
  p.Phi = spd_inverse(n.n3 - p.M * p.K * p.M.transpose(),
                      "mnw_from_naturals: Phi");
  p.eta = n.n4;
  return p;
}

}  // namespace detail

/* Stochastic variational inference: each step rescales a minibatch's
 * sufficient statistics to full-data size and blends them into the posterior
 * natural parameters with step size rho_t = (t + tau_delay)^(-kappa_step).
 * With batch_size == N and rho == 1 a step is exactly one batch VBEM
 * iteration. */
inline std::pair<ILRModel, FitTrace> fit_stochastic(const Dataset& data,
                                                    const ILRConfig& config,
                                                    RngStream& rng) {
  config.validate();
  const int n = static_cast<int>(data.rows());
  const int batch = config.batch_size == 0 ? n : config.batch_size;
  if (batch > n)
    throw std::invalid_argument("fit_stochastic: batch_size exceeds N");

  auto [model, resp0] = init(data, config, rng);
  const auto view = detail::make_view(model.feature_spec, data);
  const double scale = static_cast<double>(n) / batch;
  const int k = model.truncation;
  const int f = view.F;

  FitTrace trace;
  double prev = 0.0;
  int calm_steps = 0;
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);

  for (int t = 0; t < config.max_iters; ++t) {
    const double rho = std::pow(t + config.tau_delay, -config.kappa_step);

    // Assemble the minibatch (identity when batch == N keeps the degenerate
    // schedule bit-exact against one batch VBEM iteration).
    detail::View bview;
    bview.F = f;
    if (batch == n) {
      bview.U = view.U;
      bview.Y = view.Y;
    } else {
      for (int i = 0; i < batch; ++i) {
        const int j = i + static_cast<int>(rng.integer(n - i));
        std::swap(order[i], order[j]);
      }
      bview.U.resize(batch, view.U.cols());
      bview.Y.resize(batch, view.Y.cols());
      for (int i = 0; i < batch; ++i) {
        bview.U.row(i) = view.U.row(order[i]);
        bview.Y.row(i) = view.Y.row(order[i]);
      }
    }

    const Responsibilities resp_b =
        detail::normalize_rows(detail::loglik_matrix(model, bview));
    const VectorXd counts = scale * resp_b.colwise().sum().transpose();
    const auto xa = bview.U.leftCols(f);

    // Sticks blend directly: shape parameters are natural up to a shift.
    const TruncatedStickBreaking hat_sticks =
        stick_update(model.sticks_prior, counts);
    model.sticks_post.gamma =
        (1.0 - rho) * model.sticks_post.gamma + rho * hat_sticks.gamma;
    model.sticks_post.alpha =
        (1.0 - rho) * model.sticks_post.alpha + rho * hat_sticks.alpha;

    for (int j = 0; j < k; ++j) {
      const VectorXd w = resp_b.col(j);
      auto nat = detail::nw_naturals(model.activation_post[j]);
      const auto nat0 = detail::nw_naturals(model.activation_prior[j]);
      const double wsum = scale * w.sum();
      nat.n1 = (1.0 - rho) * nat.n1 +
               rho * (nat0.n1 + scale * (xa.transpose() * w));
      nat.n2 = (1.0 - rho) * nat.n2 + rho * (nat0.n2 + wsum);
      nat.n3 = (1.0 - rho) * nat.n3 +
               rho * (nat0.n3 +
                      scale * (xa.transpose() * w.asDiagonal() * xa));
      nat.n4 = (1.0 - rho) * nat.n4 + rho * (nat0.n4 + wsum);
      model.activation_post[j] = detail::nw_from_naturals(nat);

      auto rnat = detail::mnw_naturals(model.regression_post[j]);
      const auto rnat0 = detail::mnw_naturals(model.regression_prior[j]);
      const MatrixXd xw = bview.U.transpose() * w.asDiagonal();
      rnat.n1 = (1.0 - rho) * rnat.n1 +
                rho * (rnat0.n1 + scale * (xw * bview.Y).transpose());
      rnat.n2 = (1.0 - rho) * rnat.n2 + rho * (rnat0.n2 + scale * (xw * bview.U));
      rnat.n3 = (1.0 - rho) * rnat.n3 +
                rho * (rnat0.n3 + scale * (bview.Y.transpose() *
                                           w.asDiagonal() * bview.Y));
      rnat.n4 = (1.0 - rho) * rnat.n4 + rho * (rnat0.n4 + wsum);
      model.regression_post[j] = detail::mnw_from_naturals(rnat);
    }

    // Full-data ELBO, so the trace is comparable with batch fits.
    const MatrixXd loglik = detail::loglik_matrix(model, view);
    const Responsibilities resp = detail::normalize_rows(loglik);
    const double value = detail::elbo_impl(model, loglik, resp);
    trace.elbo.push_back(value);
    trace.active_components.push_back(detail::active_count(resp, 0.01));
    if (t > 0 &&
        std::abs(value - prev) <= config.tol * std::max(std::abs(prev), 1e-12))
      ++calm_steps;
    else
      calm_steps = 0;
    prev = value;
    if (calm_steps >= 5) {
      trace.converged = true;
      break;
    }
  }
  trace.iterations = static_cast<int>(trace.elbo.size());
  return {std::move(model), std::move(trace)};
}

/* Bayesian sequential update: the posterior over every block becomes the
 * prior, then batch VBEM runs on the new data alone. Established components
 * keep their E-step assignments; data that no established component claims
 * is spread over the still-fresh components by k-means, which breaks the
 * symmetry between them (identical fresh components cannot otherwise
 * specialize to a newly visited input region). */
inline std::pair<ILRModel, FitTrace> sequential_update(const ILRModel& model,
                                                       const Dataset& new_data,
                                                       const ILRConfig& config) {
  new_data.validate();
  if (new_data.rows() == 0) return {model, FitTrace{}};
  if (new_data.input_dim() != model.feature_spec.raw_input_dim() ||
      new_data.output_dim() != model.feature_spec.output_dim())
    throw std::invalid_argument("sequential_update: feature_spec mismatch");

  ILRModel next = model;
  next.sticks_prior = model.sticks_post;
  next.activation_prior = model.activation_post;
  next.regression_prior = model.regression_post;

  const auto view = detail::make_view(model.feature_spec, new_data);
  Responsibilities resp =
      detail::normalize_rows(detail::loglik_matrix(next, view));

  // Fresh components carry less than half a point of historical stick mass.
  std::vector<int> fresh, established;
  for (int k = 0; k < next.truncation; ++k) {
    if (next.sticks_prior.gamma(k) - 1.0 < 0.5)
      fresh.push_back(k);
    else
      established.push_back(k);
  }
  if (!fresh.empty()) {
    // A point is claimed only when some established component holds it both
    // in the softmax sense and within its receptive field in the absolute
    // Mahalanobis sense; softmax alone would hand arbitrarily distant inputs
    // to the nearest veteran.
    const auto xa = view.U.leftCols(view.F);
    VectorXd min_quad =
        VectorXd::Constant(xa.rows(), std::numeric_limits<double>::infinity());
    for (int k : established) {
      const auto& nw = next.activation_post[k];
      const MatrixXd lpsi =
          spd_cholesky(nw.Psi, "sequential_update: Psi").matrixL();
      const VectorXd quad =
          ((xa.rowwise() - nw.m.transpose()) * lpsi).rowwise().squaredNorm() *
          nw.nu;
      min_quad = min_quad.cwiseMin(quad);
    }
    const double quad_limit = 25.0 * view.F;
    std::vector<int> unclaimed;
    for (Eigen::Index i = 0; i < resp.rows(); ++i) {
      double claimed = 0.0;
      for (int k : established) claimed += resp(i, k);
      if (claimed < 0.5 || min_quad(i) > quad_limit)
        unclaimed.push_back(static_cast<int>(i));
    }
    if (!unclaimed.empty()) {
      MatrixXd sub(unclaimed.size(), view.F);
      for (std::size_t i = 0; i < unclaimed.size(); ++i)
        sub.row(i) = view.U.row(unclaimed[i]).head(view.F);
      const int kc = static_cast<int>(
          std::min(fresh.size(), unclaimed.size()));
      RngStream seed_rng(0x5e9u);  // deterministic; no rng in the contract
      const auto km = dplr::detail::kmeans_pp(sub, kc, seed_rng);
      for (std::size_t i = 0; i < unclaimed.size(); ++i) {
        resp.row(unclaimed[i]).setConstant(0.01 / next.truncation);
        resp(unclaimed[i], fresh[km.labels[i]]) += 0.99;
      }
    }
  }

  detail::m_step_impl(next, view, resp);
  FitTrace trace =
      detail::ascend(next, view, resp, config.tol, config.max_iters);
  return {std::move(next), std::move(trace)};
}

// ---------------------------------------------------------------------------
// Prediction
// ---------------------------------------------------------------------------

/* Normalized activation of each component at a point in feature space
 * (bias slot optional): expected stick weight times the activation
 * Student-t density. */
inline VectorXd activation_weights(const ILRModel& model, const VectorXd& x,
                                   bool* underflow = nullptr) {
  const int f = model.feature_dim();
  VectorXd xa;
  if (x.size() == f)
    xa = x;
  else if (x.size() == f + 1)
    xa = x.head(f);
  else
    throw std::invalid_argument("activation_weights: feature dim mismatch");

  const VectorXd stick_w = expected_stick_weights(model.sticks_post);
  VectorXd logw(model.truncation);
  for (int j = 0; j < model.truncation; ++j) {
    const StudentT t =
        nw_predictive(model.activation_post[j], model.dof_convention);
    logw(j) = std::log(stick_w(j)) + student_t_logpdf(t, xa);
  }
  return detail::normalize_log_weights(logw, underflow);
}

/// Full predictive mixture at a raw input, in raw output space.
inline PredictiveMixture predictive_mixture(const ILRModel& model,
                                            const VectorXd& x_raw) {
  if (!x_raw.allFinite())
    throw std::invalid_argument("predict: non-finite input");
  const VectorXd u = apply(model.feature_spec, x_raw);
  PredictiveMixture mix;
  mix.weights = activation_weights(model, u, &mix.underflow_fallback);
  mix.components.reserve(model.truncation);
  for (int j = 0; j < model.truncation; ++j)
    mix.components.push_back(detail::unstandardize(
        model.feature_spec,
        mnw_predictive(model.regression_post[j], u, model.dof_convention)));
  return mix;
}

inline std::pair<PredictiveMixture, PointPrediction> predict(
    const ILRModel& model, const VectorXd& x_raw, PredictMode mode) {
  PredictiveMixture mix = predictive_mixture(model, x_raw);
  PointPrediction point;
  detail::mixture_summary(mix, mode, point);
  return {std::move(mix), std::move(point)};
}

/// Components carrying more than threshold * N responsibility mass.
inline int active_components(const ILRModel& model, const Dataset& data,
                             double threshold) {
  const Responsibilities resp = e_step(model, data);
  const VectorXd mass = resp.colwise().sum();
  return static_cast<int>(
      (mass.array() > threshold * static_cast<double>(data.rows())).count());
}

/* Precomputed prediction engine. Flattens every per-component matrix into
 * stacked buffers so a query is a handful of tall matrix-vector products,
 * which is what makes the high-K latency target reachable. */
class Predictor {
 public:
  explicit Predictor(const ILRModel& model)
      : spec_(model.feature_spec),
        k_(model.truncation),
        f_(model.feature_dim()),
        dy_(model.output_dim()) {
    const VectorXd stick_w = expected_stick_weights(model.sticks_post);
    log_stick_w_ = stick_w.array().max(1e-300).log();

    const int packed = f_ * (f_ + 1) / 2;
    act_packed_.resize(k_, packed);
    act_pm_.resize(k_, f_);
    act_c0_.resize(k_);
    act_dof_.resize(k_);
    act_logconst_.resize(k_);
    reg_m_.resize(k_ * dy_, f_ + 1);
    reg_kinv_.resize(k_ * (f_ + 1), f_ + 1);
    reg_covdiag_.resize(k_, dy_);

    for (int j = 0; j < k_; ++j) {
      const StudentT ta =
          nw_predictive(model.activation_post[j], model.dof_convention);
      // Packed upper triangle with doubled off-diagonals, so that the
      // quadratic form is a single dot product against packed(x x').
      int idx = 0;
      for (int a = 0; a < f_; ++a)
        for (int b = a; b < f_; ++b)
          act_packed_(j, idx++) = (a == b ? 1.0 : 2.0) * ta.scale(a, b);
      act_pm_.row(j) = (ta.scale * ta.loc).transpose();
      act_c0_(j) = ta.loc.dot(ta.scale * ta.loc);
      act_dof_(j) = ta.dof;
      act_logconst_(j) = std::lgamma(0.5 * (ta.dof + f_)) -
                         std::lgamma(0.5 * ta.dof) -
                         0.5 * f_ * std::log(ta.dof * M_PI) +
                         0.5 * spd_logdet(ta.scale, "Predictor: act scale");

      const auto& mnw = model.regression_post[j];
      reg_m_.middleRows(j * dy_, dy_) = mnw.M;
      reg_kinv_.middleRows(j * (f_ + 1), f_ + 1) =
          spd_inverse(mnw.K, "Predictor: K");
      const double dof = model.dof_convention == DofConvention::paper
                             ? mnw.eta + 1.0
                             : mnw.eta + 1.0 - dy_;
      // Base covariance diagonal before the query-dependent 1/a factor:
      // (a Phi dof)^{-1} dof/(dof-2) = Phi^{-1} / (a (dof-2)).
      const VectorXd phi_inv_diag =
          spd_inverse(mnw.Phi, "Predictor: Phi").diagonal();
      if (dof > 2.0)
        reg_covdiag_.row(j) = (phi_inv_diag / (dof - 2.0)).transpose();
      else
        reg_covdiag_.row(j).setConstant(-1.0);  // marks undefined covariance
    }
  }

  int components() const { return k_; }

  PointPrediction predict(const VectorXd& x_raw, PredictMode mode) const {
    const VectorXd u = apply(spec_, x_raw);
    const VectorXd xa = u.head(f_);

    // Activation log weights: one tall product against packed(x x').
    VectorXd xx(f_ * (f_ + 1) / 2);
    {
      int idx = 0;
      for (int a = 0; a < f_; ++a)
        for (int b = a; b < f_; ++b) xx(idx++) = xa(a) * xa(b);
    }
    const VectorXd xpx = act_packed_ * xx;  // K
    const VectorXd bx = act_pm_ * xa;       // K
    VectorXd logw(k_);
    for (int j = 0; j < k_; ++j) {
      const double quad = xpx(j) - 2.0 * bx(j) + act_c0_(j);
      logw(j) = log_stick_w_(j) + act_logconst_(j) -
                0.5 * (act_dof_(j) + f_) *
                    std::log1p(std::max(quad, 0.0) / act_dof_(j));
    }
    const VectorXd w = dplr::detail::normalize_log_weights(logw, nullptr);

    PointPrediction out;
    out.top_component = dplr::detail::argmax_lowest(w);
    out.top_weight = w(out.top_component);

    // Regression blocks are touched only for weight-bearing components.
    const auto component_loc = [&](int j) {
      return reg_m_.middleRows(j * dy_, dy_) * u;
    };
    const auto scale_factor = [&](int j) {
      return 1.0 / (1.0 + u.dot(reg_kinv_.middleRows(j * (f_ + 1), f_ + 1) * u));
    };

    VectorXd mean_std(dy_), var_std(dy_);
    bool cov_defined = true;
    if (mode == PredictMode::mode) {
      const int j = out.top_component;
      mean_std = component_loc(j);
      cov_defined = reg_covdiag_(j, 0) >= 0.0;
      var_std = cov_defined
                    ? (reg_covdiag_.row(j).transpose() / scale_factor(j)).eval()
                    : VectorXd::Zero(dy_).eval();
    } else {
      mean_std.setZero();
      VectorXd second = VectorXd::Zero(dy_);
      for (int j = 0; j < k_; ++j) {
        if (w(j) <= 1e-12) continue;
        const VectorXd loc = component_loc(j);
        mean_std += w(j) * loc;
        if (reg_covdiag_(j, 0) < 0.0) {
          cov_defined = false;
          continue;
        }
        second += w(j) * (reg_covdiag_.row(j).transpose() / scale_factor(j) +
                          loc.cwiseProduct(loc));
      }
      var_std = cov_defined
                    ? (second - mean_std.cwiseProduct(mean_std))
                          .cwiseMax(0.0)
                          .eval()
                    : VectorXd::Zero(dy_).eval();
    }

    out.mean = invert_output(spec_, mean_std);
    out.cov_defined = cov_defined;
    out.stddev =
        cov_defined
            ? var_std.cwiseSqrt().cwiseProduct(spec_.output_scale).eval()
            : VectorXd::Zero(dy_).eval();
    return out;
  }

 private:
  FeatureSpec spec_;
  int k_, f_, dy_;
  VectorXd log_stick_w_;
  MatrixXd act_packed_, act_pm_;
  VectorXd act_c0_, act_dof_, act_logconst_;
  MatrixXd reg_m_, reg_kinv_;
  MatrixXd reg_covdiag_;
};

}  // namespace dplr::ilr
