#pragma once

#include <Eigen/Core>

#include <cmath>
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

namespace dplr::hilr {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct HILRConfig {
  int upper_truncation = 5;  // M
  int lower_truncation = 5;  // K per upper component
  double beta0 = 1.0;
  double alpha0 = 1.0;
  int degree = 1;
  double tol = 1e-6;
  int max_iters = 200;
  InitMethod init = InitMethod::kmeans;
  DofConvention dof_convention = DofConvention::paper;

  double lambda0 = 1e-2;  // meta-center precision scale
  double kappa0 = 1e-2;   // activation-center precision scale
  double rho0 = 1e-2;     // bias precision scale
  double k0_scale = 1e-2;
  double phi0_scale = 1.0;

  void validate() const {
    if (upper_truncation < 1 || lower_truncation < 1)
      throw std::invalid_argument("HILRConfig: truncations >= 1");
    if (!(beta0 > 0.0 && alpha0 > 0.0))
      throw std::invalid_argument("HILRConfig: concentrations > 0");
    if (degree < 1) throw std::invalid_argument("HILRConfig: degree >= 1");
    if (!(tol > 0.0)) throw std::invalid_argument("HILRConfig: tol > 0");
    if (max_iters < 1) throw std::invalid_argument("HILRConfig: max_iters >= 1");
    if (!(lambda0 > 0.0 && kappa0 > 0.0 && rho0 > 0.0 && k0_scale > 0.0 &&
          phi0_scale > 0.0))
      throw std::invalid_argument("HILRConfig: prior scales must be positive");
  }
};

/* Two-level tied mixture: each upper component m owns a shared slope A_m,
 * output precision V_m, input precision Lambda_m and a meta-center tau_m;
 * its K lower activations contribute centers mu_mk and biases c_mk whose
 * precisions are scalar multiples of the tied matrices. */
struct HILRModel {
  int upper_truncation = 1;
  int lower_truncation = 1;
  double beta0 = 1.0;
  double alpha0 = 1.0;
  FeatureSpec feature_spec;
  DofConvention dof_convention = DofConvention::paper;

  TruncatedStickBreaking upper_sticks_prior, upper_sticks;
  std::vector<TruncatedStickBreaking> lower_sticks;  // M entries, length K

  NormalWishartParams meta_prior;            // (m0, lambda0, Psi0, nu0)
  std::vector<NormalWishartParams> meta;     // (m_m, lambda_m, Psi_m, nu_m)

  double kappa0 = 1e-2;
  std::vector<std::vector<GaussianMeanParams>> centers;  // M x K, scale=kappa_mk

  MatrixNormalWishartParams slope_prior;          // (M0, K0, Phi0, eta0)
  std::vector<MatrixNormalWishartParams> slopes;  // M, input dim F (no bias)

  VectorXd theta0;
  double rho0 = 1e-2;
  std::vector<std::vector<GaussianMeanParams>> biases;  // M x K, scale=rho_mk

  int feature_dim() const { return feature_spec.feature_dim(); }
  int output_dim() const { return feature_spec.output_dim(); }

  void validate() const {
    feature_spec.validate();
    const int m = upper_truncation, k = lower_truncation;
    if (upper_sticks.truncation() != m ||
        static_cast<int>(lower_sticks.size()) != m ||
        static_cast<int>(meta.size()) != m ||
        static_cast<int>(centers.size()) != m ||
        static_cast<int>(slopes.size()) != m ||
        static_cast<int>(biases.size()) != m)
      throw std::invalid_argument("HILRModel: upper block count mismatch");
    for (int i = 0; i < m; ++i) {
      if (lower_sticks[i].truncation() != k ||
          static_cast<int>(centers[i].size()) != k ||
          static_cast<int>(biases[i].size()) != k)
        throw std::invalid_argument("HILRModel: lower block count mismatch");
      lower_sticks[i].validate();
      meta[i].validate();
      slopes[i].validate();
      for (const auto& c : centers[i]) c.validate();
      for (const auto& b : biases[i]) b.validate();
    }
    upper_sticks.validate();
    meta_prior.validate();
    slope_prior.validate();
  }
};

/// Upper responsibilities g (rows sum to 1) and conditional lower
/// responsibilities r[m] (each row of each slice sums to 1).
struct HierResponsibilities {
  MatrixXd g;
  std::vector<MatrixXd> r;
};

namespace detail {

using dplr::detail::argmax_lowest;
using dplr::detail::mixture_summary;
using dplr::detail::normalize_log_weights;
using dplr::detail::unstandardize;

struct View {
  MatrixXd X;  // N x F features (no bias; biases live in their own block)
  MatrixXd Y;  // N x d_y standardized
};

inline View make_view(const FeatureSpec& spec, const Dataset& data) {
  data.validate();
  if (data.input_dim() != spec.raw_input_dim() ||
      data.output_dim() != spec.output_dim())
    throw std::invalid_argument("HILR: dataset does not match feature_spec");
  View v;
  const MatrixXd u = apply_all(spec, data.X);
  v.X = u.leftCols(spec.feature_dim());
  v.Y = standardize_outputs(spec, data.Y);
  return v;
}

/* Per-(m,k) unnormalized log responsibilities:
 * E[log pi_mk] + E[log N(x | mu_mk, Lambda_m)] + E[log N(y | A_m x + c_mk, V_m)].
 * Returned as M slices of N x K. */
inline std::vector<MatrixXd> cell_loglik(const HILRModel& model,
                                         const View& view) {
  const int n = static_cast<int>(view.X.rows());
  const int mm = model.upper_truncation, kk = model.lower_truncation;
  const int f = static_cast<int>(view.X.cols());
  const int dy = static_cast<int>(view.Y.cols());

  std::vector<MatrixXd> out(mm, MatrixXd(n, kk));
  for (int m = 0; m < mm; ++m) {
    const auto& nw = model.meta[m];
    const auto psi_llt = spd_cholesky(nw.Psi, "h_e_step: Psi");
    const double elogdet_l =
        mvdigamma_sum(f, nw.nu) + f * std::log(2.0) + logdet_from_llt(psi_llt);
    const MatrixXd lpsi = psi_llt.matrixL();

    const auto& mnw = model.slopes[m];
    const auto phi_llt = spd_cholesky(mnw.Phi, "h_e_step: Phi");
    const double elogdet_v = mvdigamma_sum(dy, mnw.eta) +
                             dy * std::log(2.0) + logdet_from_llt(phi_llt);
    const MatrixXd lphi = phi_llt.matrixL();
    const MatrixXd resid0 = view.Y - view.X * mnw.M.transpose();
    const MatrixXd kin =
        spd_cholesky(mnw.K, "h_e_step: K").solve(view.X.transpose());
    const VectorXd x_quad =
        (view.X.array() * kin.transpose().array()).rowwise().sum() * dy;

    const VectorXd logpi = expected_log_weights(model.lower_sticks[m]);
    for (int k = 0; k < kk; ++k) {
      const auto& center = model.centers[m][k];
      const auto& bias = model.biases[m][k];
      const VectorXd act_quad =
          ((view.X.rowwise() - center.mean.transpose()) * lpsi)
              .rowwise()
              .squaredNorm() *
          nw.nu;
      const VectorXd reg_quad =
          ((resid0.rowwise() - bias.mean.transpose()) * lphi)
              .rowwise()
              .squaredNorm() *
          mnw.eta;
      const double consts =
          logpi(k) +
          0.5 * (elogdet_l - f * kLog2Pi - f / center.scale) +
          0.5 * (elogdet_v - dy * kLog2Pi - dy / bias.scale);
      out[m].col(k) =
          consts - 0.5 * (act_quad + reg_quad + x_quad).array();
    }
  }
  return out;
}

inline MatrixXd normalize_rows_checked(const MatrixXd& loglik,
                                       const char* who) {
  MatrixXd r(loglik.rows(), loglik.cols());
  for (Eigen::Index i = 0; i < loglik.rows(); ++i) {
    const VectorXd row = loglik.row(i).transpose();
    for (Eigen::Index j = 0; j < row.size(); ++j)
      if (std::isnan(row(j)))
        throw NumericalError(std::string(who) + ": non-finite term at datum " +
                             std::to_string(i) + ", index " +
                             std::to_string(j));
    const double lse = logsumexp(row);
    if (!std::isfinite(lse))
      throw NumericalError(std::string(who) + ": underflow at datum " +
                           std::to_string(i));
    r.row(i) = (row.array() - lse).exp();
  }
  return r;
}

/// Structured collapse: g_nm ∝ exp(E[log omega_m]) sum_k exp(cell_nmk).
inline HierResponsibilities e_step_impl(const HILRModel& model,
                                        const View& view,
                                        const std::vector<MatrixXd>& cells) {
  const int n = static_cast<int>(view.X.rows());
  const int mm = model.upper_truncation;
  HierResponsibilities resp;
  resp.r.resize(mm);
  MatrixXd logg(n, mm);
  const VectorXd logomega = expected_log_weights(model.upper_sticks);
  for (int m = 0; m < mm; ++m) {
    resp.r[m] = normalize_rows_checked(cells[m], "h_e_step (lower)");
    logg.col(m) = logomega(m) + logsumexp_rows(cells[m]).array();
  }
  resp.g = normalize_rows_checked(logg, "h_e_step (upper)");
  return resp;
}

inline void reset_component(HILRModel& model, int m) {
  model.lower_sticks[m] = TruncatedStickBreaking::prior(
      model.lower_truncation, model.alpha0);
  model.meta[m] = model.meta_prior;
  model.slopes[m] = model.slope_prior;
  for (int k = 0; k < model.lower_truncation; ++k) {
    model.centers[m][k] = {model.meta_prior.m, model.kappa0};
    model.biases[m][k] = {model.theta0, model.rho0};
  }
}

/* Coupled M-step in the order q(s), q(mu), q(tau,Lambda), q(c), q(A,V); each
 * sub-update is an exact coordinate-ascent step under the structured family.
 * Upper components with exactly zero mass fall back to their priors. */
inline void m_step_impl(HILRModel& model, const View& view,
                        const HierResponsibilities& resp) {
  const int mm = model.upper_truncation, kk = model.lower_truncation;
  const int f = static_cast<int>(view.X.cols());
  const int dy = static_cast<int>(view.Y.cols());

  const VectorXd upper_mass = resp.g.colwise().sum();
  model.upper_sticks =
      stick_update(model.upper_sticks_prior, upper_mass);

  const NormalWishartParams& mp = model.meta_prior;
  const MatrixNormalWishartParams& sp = model.slope_prior;

  for (int m = 0; m < mm; ++m) {
    if (upper_mass(m) == 0.0) {
      reset_component(model, m);
      continue;
    }

    MatrixXd w(view.X.rows(), kk);  // joint responsibilities g * r
    for (int k = 0; k < kk; ++k)
      w.col(k) = resp.g.col(m).cwiseProduct(resp.r[m].col(k));
    const VectorXd cell_mass = w.colwise().sum();

    model.lower_sticks[m] = stick_update(model.alpha0, cell_mass);

    // q(mu_mk): data pull against the current meta-center expectation.
    const VectorXd tau_mean = model.meta[m].m;
    for (int k = 0; k < kk; ++k) {
      GaussianMeanParams& c = model.centers[m][k];
      c.scale = model.kappa0 + cell_mass(k);
      c.mean = (model.kappa0 * tau_mean + view.X.transpose() * w.col(k)) /
               c.scale;
    }

    // q(tau_m, Lambda_m): absorbs the data scatter around the new centers
    // plus the K center-prior couplings.
    NormalWishartParams meta;
    meta.kappa = mp.kappa + kk * model.kappa0;
    VectorXd center_sum = VectorXd::Zero(f);
    MatrixXd center_sq = MatrixXd::Zero(f, f);
    MatrixXd scatter = MatrixXd::Zero(f, f);
    for (int k = 0; k < kk; ++k) {
      const VectorXd& mu = model.centers[m][k].mean;
      center_sum += mu;
      center_sq += mu * mu.transpose();
      const MatrixXd xc = view.X.rowwise() - mu.transpose();
      scatter.noalias() += xc.transpose() * w.col(k).asDiagonal() * xc;
    }
    meta.m = (mp.kappa * mp.m + model.kappa0 * center_sum) / meta.kappa;
    meta.nu = mp.nu + upper_mass(m);
    MatrixXd psi_inv = spd_inverse(mp.Psi, "h_m_step: Psi0") + scatter +
                       mp.kappa * mp.m * mp.m.transpose() +
                       model.kappa0 * center_sq -
                       meta.kappa * meta.m * meta.m.transpose();
    meta.Psi = spd_inverse(psi_inv, "h_m_step: Psi");
    model.meta[m] = meta;

    // q(c_mk): weighted residuals against the current slope.
    const MatrixXd resid0 = view.Y - view.X * model.slopes[m].M.transpose();
    for (int k = 0; k < kk; ++k) {
      GaussianMeanParams& b = model.biases[m][k];
      b.scale = model.rho0 + cell_mass(k);
      b.mean = (model.rho0 * model.theta0 + resid0.transpose() * w.col(k)) /
               b.scale;
    }

    // q(A_m, V_m): bias-corrected regression plus the K bias-prior couplings.
    MatrixNormalWishartParams slope;
    slope.K = symmetrize(
        sp.K + view.X.transpose() * resp.g.col(m).asDiagonal() * view.X);
    MatrixXd cross = sp.M * sp.K;
    MatrixXd y_scatter = MatrixXd::Zero(dy, dy);
    MatrixXd bias_sq = MatrixXd::Zero(dy, dy);
    for (int k = 0; k < kk; ++k) {
      const VectorXd& theta = model.biases[m][k].mean;
      const MatrixXd yc = view.Y.rowwise() - theta.transpose();
      cross.noalias() +=
          (view.X.transpose() * w.col(k).asDiagonal() * yc).transpose();
      y_scatter.noalias() += yc.transpose() * w.col(k).asDiagonal() * yc;
      const VectorXd dtheta = theta - model.theta0;
      bias_sq.noalias() += model.rho0 * dtheta * dtheta.transpose();
    }
    const auto kllt = spd_cholesky(slope.K, "h_m_step: K");
    slope.M = kllt.solve(cross.transpose()).transpose();
    slope.eta = sp.eta + upper_mass(m);
    MatrixXd phi_inv = spd_inverse(sp.Phi, "h_m_step: Phi0") + y_scatter +
                       sp.M * sp.K * sp.M.transpose() + bias_sq -
                       slope.M * slope.K * slope.M.transpose();
    slope.Phi = spd_inverse(phi_inv, "h_m_step: Phi");
    model.slopes[m] = slope;
  }
}

inline double elbo_impl(const HILRModel& model,
                        const std::vector<MatrixXd>& cells,
                        const HierResponsibilities& resp) {
  const int mm = model.upper_truncation, kk = model.lower_truncation;
  const int f = model.feature_dim();
  const int dy = model.output_dim();
  const VectorXd logomega = expected_log_weights(model.upper_sticks);

  double value = 0.0;
  for (int m = 0; m < mm; ++m) {
    for (Eigen::Index i = 0; i < resp.g.rows(); ++i) {
      const double g = resp.g(i, m);
      if (g <= 0.0) continue;
      double inner = logomega(m) - std::log(g);
      for (int k = 0; k < kk; ++k) {
        const double r = resp.r[m](i, k);
        if (r > 0.0) inner += r * (cells[m](i, k) - std::log(r));
      }
      value += g * inner;
    }
  }

  for (int m = 0; m + 1 < mm; ++m)
    value -= kl_beta(model.upper_sticks.gamma(m), model.upper_sticks.alpha(m),
                     model.upper_sticks_prior.gamma(m),
                     model.upper_sticks_prior.alpha(m));
  for (int m = 0; m < mm; ++m) {
    for (int k = 0; k + 1 < kk; ++k)
      value -= kl_beta(model.lower_sticks[m].gamma(k),
                       model.lower_sticks[m].alpha(k), 1.0, model.alpha0);
    value -= kl_normal_wishart(model.meta[m], model.meta_prior);
    value -= kl_matrix_normal_wishart(model.slopes[m], model.slope_prior);

    // Cross terms of the conditional center and bias factors against their
    // hierarchical priors (these do not reduce to standalone KLs).
    const auto& meta = model.meta[m];
    const auto& slope = model.slopes[m];
    for (int k = 0; k < kk; ++k) {
      const auto& c = model.centers[m][k];
      const VectorXd dc = c.mean - meta.m;
      value += 0.5 * f * std::log(model.kappa0 / c.scale) -
               0.5 * (model.kappa0 * meta.nu * quad_form(meta.Psi, dc) +
                      model.kappa0 * f / c.scale +
                      model.kappa0 * f / meta.kappa) +
               0.5 * f;
      const auto& b = model.biases[m][k];
      const VectorXd db = b.mean - model.theta0;
      value += 0.5 * dy * std::log(model.rho0 / b.scale) -
               0.5 * (model.rho0 * slope.eta * quad_form(slope.Phi, db) +
                      model.rho0 * dy / b.scale) +
               0.5 * dy;
    }
  }
  if (!std::isfinite(value)) throw NumericalError("h_elbo: non-finite value");
  return value;
}

inline HILRModel make_prior_model(const View& view, const FeatureSpec& spec,
                                  const HILRConfig& config) {
  const int f = static_cast<int>(view.X.cols());
  const int dy = static_cast<int>(view.Y.cols());
  HILRModel model;
  model.upper_truncation = config.upper_truncation;
  model.lower_truncation = config.lower_truncation;
  model.beta0 = config.beta0;
  model.alpha0 = config.alpha0;
  model.feature_spec = spec;
  model.dof_convention = config.dof_convention;
  model.kappa0 = config.kappa0;
  model.rho0 = config.rho0;
  model.theta0 = VectorXd::Zero(dy);

  model.meta_prior.m = view.X.colwise().mean();
  VectorXd var = (view.X.rowwise() - model.meta_prior.m.transpose())
                     .colwise()
                     .squaredNorm() /
                 static_cast<double>(view.X.rows());
  var = var.cwiseMax(1e-6);
  model.meta_prior.Psi = var.cwiseInverse().asDiagonal();
  model.meta_prior.nu = f + 1.0;
  model.meta_prior.kappa = config.lambda0;

  model.slope_prior.M = MatrixXd::Zero(dy, f);
  model.slope_prior.K = config.k0_scale * MatrixXd::Identity(f, f);
  model.slope_prior.Phi = config.phi0_scale * MatrixXd::Identity(dy, dy);
  model.slope_prior.eta = dy + 1.0;

  model.upper_sticks_prior =
      TruncatedStickBreaking::prior(config.upper_truncation, config.beta0);
  model.upper_sticks = model.upper_sticks_prior;
  model.lower_sticks.assign(
      config.upper_truncation,
      TruncatedStickBreaking::prior(config.lower_truncation, config.alpha0));
  model.meta.assign(config.upper_truncation, model.meta_prior);
  model.slopes.assign(config.upper_truncation, model.slope_prior);
  model.centers.assign(
      config.upper_truncation,
      std::vector<GaussianMeanParams>(
          config.lower_truncation, {model.meta_prior.m, config.kappa0}));
  model.biases.assign(config.upper_truncation,
                      std::vector<GaussianMeanParams>(
                          config.lower_truncation,
                          {model.theta0, config.rho0}));
  return model;
}

/* Two-stage seeding. A fine k-means partition of the input space supplies
 * local least-squares slope estimates; fine clusters are then agglomerated
 * by slope similarity into at most M upper groups, so that shift-invariant
 * regions sharing a slope start under the same upper component (a purely
 * input-local coarse stage cannot discover that sharing). Lower cells come
 * from k-means within each group. */
inline HierResponsibilities init_responsibilities(const View& view,
                                                  const HILRConfig& config,
                                                  RngStream& rng) {
  const int n = static_cast<int>(view.X.rows());
  const int f = static_cast<int>(view.X.cols());
  const int dy = static_cast<int>(view.Y.cols());
  const int mm = config.upper_truncation, kk = config.lower_truncation;
  HierResponsibilities resp;
  resp.g.resize(n, mm);
  resp.r.assign(mm, MatrixXd::Constant(n, kk, 1.0 / kk));
  if (config.init == InitMethod::random) {
    if (mm == 1) {
      resp.g.setOnes();
    } else {
      for (int i = 0; i < n; ++i) {
        double total = 0.0;
        for (int m = 0; m < mm; ++m) {
          resp.g(i, m) = -std::log(rng.uniform());
          total += resp.g(i, m);
        }
        resp.g.row(i) /= total;
      }
    }
    return resp;
  }

  // Stage 1: fine partition with per-cluster ridge OLS slopes.
  const int n_fine =
      std::max(mm, std::min(mm * kk, std::max(1, n / 8)));
  const auto fine = dplr::detail::kmeans_pp(view.X, n_fine, rng);
  MatrixXd slopes = MatrixXd::Zero(n_fine, f * dy);
  VectorXd slope_se = VectorXd::Constant(n_fine, 1e30);
  std::vector<std::vector<int>> members(n_fine);
  for (int i = 0; i < n; ++i) members[fine.labels[i]].push_back(i);
  for (int c = 0; c < n_fine; ++c) {
    const int nc = static_cast<int>(members[c].size());
    if (nc < f + 2) continue;
    MatrixXd xc(nc, f), yc(nc, dy);
    for (int i = 0; i < nc; ++i) {
      xc.row(i) = view.X.row(members[c][i]);
      yc.row(i) = view.Y.row(members[c][i]);
    }
    xc.rowwise() -= xc.colwise().mean().eval();
    yc.rowwise() -= yc.colwise().mean().eval();
    MatrixXd gram = xc.transpose() * xc;
    gram.diagonal().array() += 1e-8 * std::max(gram.trace() / f, 1e-12);
    const auto llt = spd_cholesky(gram, "hilr init: gram");
    const MatrixXd slope = llt.solve(xc.transpose() * yc);  // f x dy
    for (int a = 0; a < f; ++a)
      for (int b = 0; b < dy; ++b) slopes(c, a * dy + b) = slope(a, b);
    const double sigma2 =
        (yc - xc * slope).squaredNorm() / std::max(nc - f, 1) / dy;
    const double tr_inv =
        llt.solve(MatrixXd::Identity(f, f)).trace();
    slope_se(c) = std::sqrt(std::max(sigma2, 1e-12) * tr_inv * dy);
  }

  // Stage 2: agglomerate fine clusters by slope into at most M groups.
  std::vector<double> ses;
  for (int c = 0; c < n_fine; ++c)
    if (slope_se(c) < 1e29) ses.push_back(slope_se(c));
  std::sort(ses.begin(), ses.end());
  const double med_se = ses.empty() ? 0.0 : ses[ses.size() / 2];
  double range = 0.0;
  for (int a = 0; a < n_fine; ++a)
    for (int b = a + 1; b < n_fine; ++b)
      range = std::max(range, (slopes.row(a) - slopes.row(b)).norm());
  const double merge_tol = std::max(3.0 * med_se, 0.25 * range);

  std::vector<int> group(n_fine);
  std::vector<double> weight(n_fine);
  std::vector<Eigen::RowVectorXd> center(n_fine);
  for (int c = 0; c < n_fine; ++c) {
    group[c] = c;
    weight[c] = static_cast<double>(std::max<std::size_t>(members[c].size(), 1));
    center[c] = slopes.row(c);
  }
  std::vector<int> alive;
  for (int c = 0; c < n_fine; ++c) alive.push_back(c);
  while (static_cast<int>(alive.size()) > 1) {
    int best_a = -1, best_b = -1;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t p = 0; p < alive.size(); ++p)
      for (std::size_t q = p + 1; q < alive.size(); ++q) {
        const double d = (center[alive[p]] - center[alive[q]]).norm();
        if (d < best_d) {
          best_d = d;
          best_a = alive[p];
          best_b = alive[q];
        }
      }
    if (static_cast<int>(alive.size()) <= mm && best_d > merge_tol) break;
    const double wa = weight[best_a], wb = weight[best_b];
    center[best_a] = (wa * center[best_a] + wb * center[best_b]) / (wa + wb);
    weight[best_a] = wa + wb;
    for (int c = 0; c < n_fine; ++c)
      if (group[c] == best_b) group[c] = best_a;
    alive.erase(std::find(alive.begin(), alive.end(), best_b));
  }
  std::vector<int> compact(n_fine, -1);
  int n_groups = 0;
  for (int root : alive) compact[root] = n_groups++;

  // Upper responsibilities from the slope groups.
  if (mm == 1) {
    resp.g.setOnes();
  } else {
    resp.g.setConstant(0.01 / mm);
    for (int i = 0; i < n; ++i)
      resp.g(i, compact[group[fine.labels[i]]]) += 0.99;
  }
  if (kk == 1) return resp;

  // Lower responsibilities: k-means over each group's inputs.
  for (int gi = 0; gi < n_groups; ++gi) {
    std::vector<int> pts;
    for (int i = 0; i < n; ++i)
      if (compact[group[fine.labels[i]]] == gi) pts.push_back(i);
    if (pts.empty()) continue;
    MatrixXd sub(pts.size(), f);
    for (std::size_t i = 0; i < pts.size(); ++i)
      sub.row(i) = view.X.row(pts[i]);
    const auto cells = dplr::detail::kmeans_pp(sub, kk, rng);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      resp.r[gi].row(pts[i]).setConstant(0.01 / kk);
      resp.r[gi](pts[i], cells.labels[i]) += 0.99;
    }
  }
  return resp;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

inline HierResponsibilities h_e_step(const HILRModel& model,
                                     const Dataset& data) {
  const auto view = detail::make_view(model.feature_spec, data);
  return detail::e_step_impl(model, view, detail::cell_loglik(model, view));
}

inline HILRModel h_m_step(const HILRModel& model, const Dataset& data,
                          const HierResponsibilities& resp) {
  const auto view = detail::make_view(model.feature_spec, data);
  if (resp.g.rows() != view.X.rows() ||
      resp.g.cols() != model.upper_truncation ||
      static_cast<int>(resp.r.size()) != model.upper_truncation)
    throw std::invalid_argument("h_m_step: responsibility shape mismatch");
  HILRModel next = model;
  detail::m_step_impl(next, view, resp);
  return next;
}

inline double h_elbo(const HILRModel& model, const Dataset& data,
                     const HierResponsibilities& resp) {
  const auto view = detail::make_view(model.feature_spec, data);
  return detail::elbo_impl(model, detail::cell_loglik(model, view), resp);
}

inline std::pair<HILRModel, FitTrace> h_fit(const Dataset& data,
                                            const HILRConfig& config,
                                            RngStream& rng) {
  config.validate();
  data.validate();
  if (data.rows() < 1) throw std::invalid_argument("h_fit: empty dataset");
  const FeatureSpec spec = fit_spec(data.X, data.Y, config.degree);
  const auto view = detail::make_view(spec, data);
  HILRModel model = detail::make_prior_model(view, spec, config);
  HierResponsibilities resp =
      detail::init_responsibilities(view, config, rng);
  detail::m_step_impl(model, view, resp);

  FitTrace trace;
  double prev = 0.0;
  for (int it = 0; it < config.max_iters; ++it) {
    const auto cells = detail::cell_loglik(model, view);
    resp = detail::e_step_impl(model, view, cells);
    const double value = detail::elbo_impl(model, cells, resp);
    trace.elbo.push_back(value);
    const VectorXd mass = resp.g.colwise().sum();
    trace.active_components.push_back(static_cast<int>(
        (mass.array() > 0.01 * static_cast<double>(data.rows())).count()));
    if (it > 0 && std::abs(value - prev) <=
                      config.tol * std::max(std::abs(prev), 1e-12)) {
      trace.converged = true;
      break;
    }
    prev = value;
    detail::m_step_impl(model, view, resp);
  }
  trace.iterations = static_cast<int>(trace.elbo.size());
  return {std::move(model), std::move(trace)};
}

// ---------------------------------------------------------------------------
// Prediction
// ---------------------------------------------------------------------------

/// Normalized M x K activation grid at a feature-space point.
inline MatrixXd h_activation_weights(const HILRModel& model, const VectorXd& x,
                                     bool* underflow = nullptr) {
  const int f = model.feature_dim();
  VectorXd xa;
  if (x.size() == f)
    xa = x;
  else if (x.size() == f + 1)
    xa = x.head(f);
  else
    throw std::invalid_argument("h_activation_weights: feature dim mismatch");

  const int mm = model.upper_truncation, kk = model.lower_truncation;
  const VectorXd omega = expected_stick_weights(model.upper_sticks);
  VectorXd logw(mm * kk);
  for (int m = 0; m < mm; ++m) {
    const VectorXd pi = expected_stick_weights(model.lower_sticks[m]);
    for (int k = 0; k < kk; ++k) {
      NormalWishartParams cell;
      cell.m = model.centers[m][k].mean;
      cell.kappa = model.centers[m][k].scale;
      cell.Psi = model.meta[m].Psi;
      cell.nu = model.meta[m].nu;
      const StudentT t = nw_predictive(cell, model.dof_convention);
      logw(m * kk + k) = std::log(std::max(omega(m) * pi(k), 1e-300)) +
                         student_t_logpdf(t, xa);
    }
  }
  const VectorXd flat = detail::normalize_log_weights(logw, underflow);
  MatrixXd out(mm, kk);
  for (int m = 0; m < mm; ++m)
    out.row(m) = flat.segment(m * kk, kk).transpose();
  return out;
}

/* Component predictive for cell (m,k): T(M_m x + theta_mk, a_mk Phi_m,
 * eta_m + 1) with a_mk from the block form Block(K_m, rho_mk); the block
 * structure makes u'L^{-1}u = x'K^{-1}x + 1/rho. */
inline PredictiveMixture h_predictive_mixture(const HILRModel& model,
                                              const VectorXd& x_raw) {
  if (!x_raw.allFinite())
    throw std::invalid_argument("h_predict: non-finite input");
  const VectorXd u = apply(model.feature_spec, x_raw);
  const VectorXd xa = u.head(model.feature_dim());
  const int mm = model.upper_truncation, kk = model.lower_truncation;

  PredictiveMixture mix;
  const MatrixXd w = h_activation_weights(model, xa, &mix.underflow_fallback);
  mix.weights.resize(mm * kk);
  mix.components.reserve(mm * kk);
  for (int m = 0; m < mm; ++m) {
    const auto& slope = model.slopes[m];
    const auto kllt = spd_cholesky(slope.K, "h_predict: K");
    const double xkx = xa.dot(kllt.solve(xa));
    const VectorXd base_loc = slope.M * xa;
    for (int k = 0; k < kk; ++k) {
      mix.weights(m * kk + k) = w(m, k);
      const double a =
          1.0 / (1.0 + xkx + 1.0 / model.biases[m][k].scale);
      StudentT t;
      t.loc = base_loc + model.biases[m][k].mean;
      t.dof = model.dof_convention == DofConvention::paper
                  ? slope.eta + 1.0
                  : slope.eta + 1.0 - model.output_dim();
      t.scale = t.dof * a * slope.Phi;
      mix.components.push_back(
          detail::unstandardize(model.feature_spec, t));
    }
  }
  return mix;
}

inline std::pair<PredictiveMixture, PointPrediction> h_predict(
    const HILRModel& model, const VectorXd& x_raw, PredictMode mode) {
  PredictiveMixture mix = h_predictive_mixture(model, x_raw);
  PointPrediction point;
  detail::mixture_summary(mix, mode, point);
  return {std::move(mix), std::move(point)};
}

/// Responsibility mass per upper component and per (m,k) cell.
struct MassSummary {
  VectorXd upper;   // M
  MatrixXd cells;   // M x K
};

inline MassSummary h_responsibility_mass(const HILRModel& model,
                                         const Dataset& data) {
  const auto resp = h_e_step(model, data);
  MassSummary mass;
  mass.upper = resp.g.colwise().sum();
  mass.cells.resize(model.upper_truncation, model.lower_truncation);
  for (int m = 0; m < model.upper_truncation; ++m)
    for (int k = 0; k < model.lower_truncation; ++k)
      mass.cells(m, k) = resp.g.col(m).dot(resp.r[m].col(k));
  return mass;
}

/// Upper components carrying more than threshold * N responsibility mass.
inline int h_active_components(const HILRModel& model, const Dataset& data,
                               double threshold) {
  const MassSummary mass = h_responsibility_mass(model, data);
  return static_cast<int>(
      (mass.upper.array() > threshold * static_cast<double>(data.rows()))
          .count());
}

}  // namespace dplr::hilr
