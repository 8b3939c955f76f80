#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dplr/mathutils.hpp"
#include "dplr/random.hpp"

namespace dplr {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// ---------------------------------------------------------------------------
// Parameter records
// ---------------------------------------------------------------------------

/* Normal-Wishart over a Gaussian's mean and precision:
 *   N(mu | m, kappa * Lambda) W(Lambda | Psi, nu).
 * Also used as a prior/posterior record, so it doubles as the hyperparameter
 * bundle (m0, kappa0, Psi0, nu0). */
struct NormalWishartParams {
  VectorXd m;
  double kappa = 1.0;
  MatrixXd Psi;
  double nu = 1.0;

  int dim() const { return static_cast<int>(m.size()); }

  void validate() const {
    const int d = dim();
    if (Psi.rows() != d || Psi.cols() != d)
      throw std::invalid_argument("NormalWishartParams: Psi shape mismatch");
    if (!(kappa > 0.0))
      throw std::invalid_argument("NormalWishartParams: kappa must be > 0");
    if (!(nu > d - 1))
      throw std::invalid_argument("NormalWishartParams: nu must exceed d - 1");
    const double scale = std::max(Psi.cwiseAbs().maxCoeff(), 1e-300);
    if (((Psi - Psi.transpose()).cwiseAbs().maxCoeff()) > 1e-10 * scale)
      throw std::invalid_argument("NormalWishartParams: Psi not symmetric");
    spd_cholesky(Psi, "NormalWishartParams::Psi");  // throws if not SPD
  }
};

/* Matrix-normal-Wishart over a linear map and its output precision:
 *   MN(A | M, V, K) W(V | Phi, eta),
 * with V the d_y x d_y row precision and K the d_u x d_u column precision. */
struct MatrixNormalWishartParams {
  MatrixXd M;    // d_y x d_u
  MatrixXd K;    // d_u x d_u
  MatrixXd Phi;  // d_y x d_y
  double eta = 1.0;

  int input_dim() const { return static_cast<int>(M.cols()); }
  int output_dim() const { return static_cast<int>(M.rows()); }

  void validate() const {
    const int du = input_dim(), dy = output_dim();
    if (K.rows() != du || K.cols() != du)
      throw std::invalid_argument("MatrixNormalWishartParams: K shape mismatch");
    if (Phi.rows() != dy || Phi.cols() != dy)
      throw std::invalid_argument(
          "MatrixNormalWishartParams: Phi shape mismatch");
    if (!(eta > dy - 1))
      throw std::invalid_argument(
          "MatrixNormalWishartParams: eta must exceed d_y - 1");
    spd_cholesky(K, "MatrixNormalWishartParams::K");
    spd_cholesky(Phi, "MatrixNormalWishartParams::Phi");
  }
};

/* Gaussian over a mean-type parameter whose precision is a scalar multiple of
 * a precision matrix owned elsewhere (the tied Lambda_m / V_m of the
 * hierarchical model): N(c | mean, scale * V). */
struct GaussianMeanParams {
  VectorXd mean;
  double scale = 1.0;

  int dim() const { return static_cast<int>(mean.size()); }
  void validate() const {
    if (!(scale > 0.0))
      throw std::invalid_argument("GaussianMeanParams: scale must be > 0");
  }
};

/* Beta posteriors over stick lengths of a truncated stick-breaking process.
 * The final stick is treated as deterministically 1 when weights are formed,
 * so the expected weights sum to exactly one. */
struct TruncatedStickBreaking {
  VectorXd gamma;
  VectorXd alpha;

  int truncation() const { return static_cast<int>(gamma.size()); }

  static TruncatedStickBreaking prior(int truncation, double alpha0) {
    if (truncation < 1)
      throw std::invalid_argument("TruncatedStickBreaking: truncation >= 1");
    if (!(alpha0 > 0.0))
      throw std::invalid_argument("TruncatedStickBreaking: alpha0 must be > 0");
    TruncatedStickBreaking sb;
    sb.gamma = VectorXd::Ones(truncation);
    sb.alpha = VectorXd::Constant(truncation, alpha0);
    return sb;
  }

  void validate() const {
    if (gamma.size() != alpha.size() || gamma.size() < 1)
      throw std::invalid_argument("TruncatedStickBreaking: shape mismatch");
    if ((gamma.array() <= 0.0).any() || (alpha.array() <= 0.0).any())
      throw std::invalid_argument(
          "TruncatedStickBreaking: shapes must be positive");
  }
};

/* Multivariate Student-t parameterized by a precision-type shape matrix:
 *   p(x) ∝ |scale|^{1/2} (1 + (x-loc)' scale (x-loc) / dof)^{-(dof+d)/2}.
 * The Gaussian limit (dof -> inf) has precision equal to `scale`. */
struct StudentT {
  VectorXd loc;
  MatrixXd scale;
  double dof = 1.0;

  int dim() const { return static_cast<int>(loc.size()); }
};

/// Which degrees-of-freedom convention predictives follow. `paper` keeps the
/// nu+1 / eta+1 form verbatim; `textbook` uses the exact d-dimensional
/// marginal (dof nu+1-d with the matching dof-scaled shape).
enum class DofConvention { paper, textbook };

// ---------------------------------------------------------------------------
// Weighted conjugate updates
// ---------------------------------------------------------------------------

namespace detail {

inline void check_weights(const VectorXd& w, Eigen::Index n, const char* who) {
  if (w.size() != n)
    throw std::invalid_argument(std::string(who) + ": weight count mismatch");
  if (!w.allFinite())
    throw std::invalid_argument(std::string(who) + ": non-finite weights");
  if ((w.array() < 0.0).any())
    throw std::invalid_argument(std::string(who) + ": negative weights");
}

}  // namespace detail

/* Weighted Gaussian observations under a normal-Wishart prior. General prior
 * mean handled by natural-parameter addition: kappa0*m0 joins the first
 * moment and kappa0*m0*m0' joins the scatter inside the Psi inverse. */
inline NormalWishartParams nw_update(const NormalWishartParams& prior,
                                     const MatrixXd& points,
                                     const VectorXd& weights) {
  const int d = prior.dim();
  if (points.cols() != d)
    throw std::invalid_argument("nw_update: point dimension mismatch");
  detail::check_weights(weights, points.rows(), "nw_update");

  const double wsum = weights.sum();
  NormalWishartParams post;
  post.kappa = prior.kappa + wsum;
  post.nu = prior.nu + wsum;
  const VectorXd s1 = prior.kappa * prior.m + points.transpose() * weights;
  post.m = s1 / post.kappa;

  const MatrixXd scatter =
      points.transpose() * weights.asDiagonal() * points;
  MatrixXd psi_inv = spd_inverse(prior.Psi, "nw_update: prior Psi");
  psi_inv += prior.kappa * prior.m * prior.m.transpose() + scatter -
             post.kappa * post.m * post.m.transpose();
  try {
    post.Psi = spd_inverse(psi_inv, "nw_update: posterior Psi^-1");
  } catch (const NumericalError&) {
    throw NumericalError("nw_update: posterior scale degenerate");
  }
  return post;
}

/* Weighted linear-Gaussian observations under a matrix-normal-Wishart prior.
 * Rows of `inputs`/`outputs` are observation pairs. */
inline MatrixNormalWishartParams mnw_update(
    const MatrixNormalWishartParams& prior, const MatrixXd& inputs,
    const MatrixXd& outputs, const VectorXd& weights) {
  if (inputs.cols() != prior.input_dim())
    throw std::invalid_argument("mnw_update: input dimension mismatch");
  if (outputs.cols() != prior.output_dim())
    throw std::invalid_argument("mnw_update: output dimension mismatch");
  if (inputs.rows() != outputs.rows())
    throw std::invalid_argument("mnw_update: row count mismatch");
  detail::check_weights(weights, inputs.rows(), "mnw_update");

  const MatrixXd xw = inputs.transpose() * weights.asDiagonal();
  MatrixNormalWishartParams post;
  post.eta = prior.eta + weights.sum();
  post.K = symmetrize(prior.K + xw * inputs);
  const MatrixXd rhs = prior.M * prior.K + (xw * outputs).transpose();
  const auto kllt = spd_cholesky(post.K, "mnw_update: posterior K");
  post.M = kllt.solve(rhs.transpose()).transpose();

  MatrixXd phi_inv = spd_inverse(prior.Phi, "mnw_update: prior Phi");
  phi_inv += prior.M * prior.K * prior.M.transpose() +
             outputs.transpose() * weights.asDiagonal() * outputs -
             post.M * post.K * post.M.transpose();
  try {
    post.Phi = spd_inverse(phi_inv, "mnw_update: posterior Phi^-1");
  } catch (const NumericalError&) {
    throw NumericalError("mnw_update: posterior scale degenerate");
  }
  return post;
}

/// Stick posterior from per-component responsibility mass under a general
/// beta prior (per-stick shapes; used for sequential carry-over).
inline TruncatedStickBreaking stick_update(const TruncatedStickBreaking& prior,
                                           const VectorXd& weight_sums) {
  const int t = prior.truncation();
  if (weight_sums.size() != t)
    throw std::invalid_argument("stick_update: truncation mismatch");
  if (!weight_sums.allFinite() || (weight_sums.array() < 0.0).any())
    throw std::invalid_argument("stick_update: invalid weight sums");

  TruncatedStickBreaking post;
  post.gamma = prior.gamma + weight_sums;
  post.alpha = prior.alpha;
  double tail = 0.0;
  for (int k = t - 1; k >= 0; --k) {
    post.alpha(k) += tail;
    tail += weight_sums(k);
  }
  return post;
}

inline TruncatedStickBreaking stick_update(double alpha0,
                                           const VectorXd& weight_sums) {
  return stick_update(
      TruncatedStickBreaking::prior(static_cast<int>(weight_sums.size()),
                                    alpha0),
      weight_sums);
}

// ---------------------------------------------------------------------------
// Stick expectations
// ---------------------------------------------------------------------------

/// (E[log s_k], E[log(1 - s_k)]) under the beta posteriors.
inline std::pair<VectorXd, VectorXd> expected_log_sticks(
    const TruncatedStickBreaking& sb) {
  const int t = sb.truncation();
  VectorXd els(t), elns(t);
  for (int k = 0; k < t; ++k) {
    const double psum = digamma(sb.gamma(k) + sb.alpha(k));
    els(k) = digamma(sb.gamma(k)) - psum;
    elns(k) = digamma(sb.alpha(k)) - psum;
  }
  return {els, elns};
}

/* E[log pi_k] with the truncation convention q(s_K = 1) = 1: the last
 * component contributes log 1 = 0 for its own stick. */
inline VectorXd expected_log_weights(const TruncatedStickBreaking& sb) {
  const int t = sb.truncation();
  auto [els, elns] = expected_log_sticks(sb);
  VectorXd out(t);
  double acc = 0.0;
  for (int k = 0; k < t; ++k) {
    out(k) = (k == t - 1 ? 0.0 : els(k)) + acc;
    acc += elns(k);
  }
  return out;
}

/// Mean stick weights gamma/(gamma+alpha) composed into mixture weights,
/// last stick pinned to 1. Sums to exactly one.
inline VectorXd expected_stick_weights(const TruncatedStickBreaking& sb) {
  const int t = sb.truncation();
  VectorXd out(t);
  double remaining = 1.0;
  for (int k = 0; k < t; ++k) {
    const double s =
        (k == t - 1) ? 1.0 : sb.gamma(k) / (sb.gamma(k) + sb.alpha(k));
    out(k) = s * remaining;
    remaining *= (1.0 - s);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Variational expectations of data log-likelihoods
// ---------------------------------------------------------------------------

/// E[log |Lambda|] under W(Lambda | Psi, nu).
inline double expected_logdet_wishart(const MatrixXd& psi, double nu) {
  const int d = static_cast<int>(psi.rows());
  return mvdigamma_sum(d, nu) + d * std::log(2.0) +
         spd_logdet(psi, "expected_logdet_wishart");
}

/// E[log N(x | mu, Lambda)] under the normal-Wishart posterior.
inline double expected_gaussian_loglik(const NormalWishartParams& nw,
                                       const VectorXd& x) {
  const int d = nw.dim();
  if (x.size() != d)
    throw std::invalid_argument("expected_gaussian_loglik: dim mismatch");
  const double elogdet = expected_logdet_wishart(nw.Psi, nw.nu);
  const VectorXd delta = x - nw.m;
  const double quad = d / nw.kappa + nw.nu * quad_form(nw.Psi, delta);
  return 0.5 * elogdet - 0.5 * d * kLog2Pi - 0.5 * quad;
}

/// E[log N(y | A u, V)] under the matrix-normal-Wishart posterior.
inline double expected_linear_gaussian_loglik(
    const MatrixNormalWishartParams& mnw, const VectorXd& u,
    const VectorXd& y) {
  const int dy = mnw.output_dim();
  if (u.size() != mnw.input_dim() || y.size() != dy)
    throw std::invalid_argument(
        "expected_linear_gaussian_loglik: dim mismatch");
  const double elogdet = expected_logdet_wishart(mnw.Phi, mnw.eta);
  const VectorXd resid = y - mnw.M * u;
  const auto kllt = spd_cholesky(mnw.K, "expected_linear_gaussian_loglik: K");
  const double quad =
      mnw.eta * quad_form(mnw.Phi, resid) + dy * u.dot(kllt.solve(u));
  return 0.5 * elogdet - 0.5 * dy * kLog2Pi - 0.5 * quad;
}

// ---------------------------------------------------------------------------
// Posterior predictives
// ---------------------------------------------------------------------------

/* Joint activation marginal T(m, kappa/(1+kappa) Psi, nu + 1). The returned
 * StudentT is the conventional parameterization, so the precision-style
 * matrix kappa/(1+kappa) Psi is scaled by the dof; recover it as scale/dof.
 * `textbook` swaps in the exact d-dimensional marginal dof nu + 1 - d. */
inline StudentT nw_predictive(const NormalWishartParams& nw,
                              DofConvention conv = DofConvention::paper) {
  const double c = nw.kappa / (1.0 + nw.kappa);
  StudentT t;
  t.loc = nw.m;
  t.dof = conv == DofConvention::paper ? nw.nu + 1.0 : nw.nu + 1.0 - nw.dim();
  t.scale = t.dof * c * nw.Psi;
  return t;
}

/* Predictive scale factor a = 1 - u'(L + uu')^{-1}u computed in its
 * Sherman-Morrison form 1/(1 + u'L^{-1}u), which is stable for small L. */
inline double predictive_scale_factor(const MatrixXd& l, const VectorXd& u) {
  const auto llt = spd_cholesky(l, "predictive_scale_factor");
  return 1.0 / (1.0 + u.dot(llt.solve(u)));
}

/// Component predictive T(M u, a Phi, eta + 1) at an augmented input u, in
/// the same dof-scaled conventional form as nw_predictive.
inline StudentT mnw_predictive(const MatrixNormalWishartParams& mnw,
                               const VectorXd& u,
                               DofConvention conv = DofConvention::paper) {
  if (u.size() != mnw.input_dim())
    throw std::invalid_argument("mnw_predictive: input dim mismatch");
  const double a = predictive_scale_factor(mnw.K, u);
  StudentT t;
  t.loc = mnw.M * u;
  t.dof = conv == DofConvention::paper ? mnw.eta + 1.0
                                       : mnw.eta + 1.0 - mnw.output_dim();
  t.scale = t.dof * a * mnw.Phi;
  return t;
}

inline double student_t_logpdf(const StudentT& t, const VectorXd& x) {
  const int d = t.dim();
  if (x.size() != d)
    throw std::invalid_argument("student_t_logpdf: dim mismatch");
  const double q = quad_form(t.scale, x - t.loc);
  return std::lgamma(0.5 * (t.dof + d)) - std::lgamma(0.5 * t.dof) -
         0.5 * d * std::log(t.dof * M_PI) +
         0.5 * spd_logdet(t.scale, "student_t_logpdf") -
         0.5 * (t.dof + d) * std::log1p(q / t.dof);
}

/// Covariance scale^{-1} * dof/(dof-2); only defined for dof > 2.
inline MatrixXd student_t_covariance(const StudentT& t) {
  if (!(t.dof > 2.0))
    throw std::invalid_argument("student_t_covariance: requires dof > 2");
  return spd_inverse(t.scale, "student_t_covariance") * (t.dof / (t.dof - 2.0));
}

// ---------------------------------------------------------------------------
// Samplers (Monte-Carlo oracles and generative round trips)
// ---------------------------------------------------------------------------

struct GaussianDraw {
  VectorXd mean;
  MatrixXd precision;
};

struct LinearGaussianDraw {
  MatrixXd coeffs;
  MatrixXd precision;
};

/// Bartlett draw from W(scale, dof); E equals dof * scale.
inline MatrixXd wishart_sample(RngStream& rng, const MatrixXd& scale,
                               double dof) {
  const int d = static_cast<int>(scale.rows());
  const MatrixXd l = spd_cholesky(scale, "wishart_sample").matrixL();
  MatrixXd a = MatrixXd::Zero(d, d);
  for (int i = 0; i < d; ++i) {
    a(i, i) = std::sqrt(rng.chi_squared(dof - i));
    for (int j = 0; j < i; ++j) a(i, j) = rng.normal();
  }
  const MatrixXd la = l * a;
  return la * la.transpose();
}

/// Draw x ~ N(mean, precision^{-1}).
inline VectorXd gaussian_sample(RngStream& rng, const VectorXd& mean,
                                const MatrixXd& precision) {
  const MatrixXd l = spd_cholesky(precision, "gaussian_sample").matrixL();
  return mean + l.transpose()
                    .triangularView<Eigen::Upper>()
                    .solve(rng.normal_vector(static_cast<int>(mean.size())));
}

inline GaussianDraw nw_sample(RngStream& rng, const NormalWishartParams& nw) {
  GaussianDraw draw;
  draw.precision = wishart_sample(rng, nw.Psi, nw.nu);
  draw.mean = gaussian_sample(rng, nw.m, nw.kappa * draw.precision);
  return draw;
}

inline LinearGaussianDraw mnw_sample(RngStream& rng,
                                     const MatrixNormalWishartParams& mnw) {
  LinearGaussianDraw draw;
  draw.precision = wishart_sample(rng, mnw.Phi, mnw.eta);
  const MatrixXd lv =
      spd_cholesky(draw.precision, "mnw_sample: V").matrixL();
  const MatrixXd lk = spd_cholesky(mnw.K, "mnw_sample: K").matrixL();
  const MatrixXd z = rng.normal_matrix(mnw.output_dim(), mnw.input_dim());
  // A = M + Lv^{-T} Z Lk^{-1} has row precision V and column precision K.
  const MatrixXd left = lv.transpose().triangularView<Eigen::Upper>().solve(z);
  draw.coeffs = mnw.M + lk.triangularView<Eigen::Lower>()
                            .solve(left.transpose())
                            .transpose();
  return draw;
}

/// Truncated GEM draw: T weights from Beta(1, alpha0) sticks, last stick 1.
inline VectorXd gem_sample(RngStream& rng, double alpha0, int truncation) {
  if (truncation < 1 || !(alpha0 > 0.0))
    throw std::invalid_argument("gem_sample: bad arguments");
  VectorXd pi(truncation);
  double remaining = 1.0;
  for (int k = 0; k < truncation; ++k) {
    const double s = (k == truncation - 1) ? 1.0 : rng.beta(1.0, alpha0);
    pi(k) = s * remaining;
    remaining *= (1.0 - s);
  }
  return pi;
}

inline VectorXd student_t_sample(RngStream& rng, const StudentT& t) {
  const VectorXd z =
      gaussian_sample(rng, VectorXd::Zero(t.dim()), t.scale);
  const double g = rng.chi_squared(t.dof);
  return t.loc + z * std::sqrt(t.dof / g);
}

// ---------------------------------------------------------------------------
// Log densities (exact, for oracles and round trips)
// ---------------------------------------------------------------------------

inline double gaussian_logpdf(const VectorXd& x, const VectorXd& mean,
                              const MatrixXd& precision) {
  const int d = static_cast<int>(x.size());
  return 0.5 * spd_logdet(precision, "gaussian_logpdf") - 0.5 * d * kLog2Pi -
         0.5 * quad_form(precision, x - mean);
}

inline double wishart_logpdf(const MatrixXd& x, const MatrixXd& scale,
                             double dof) {
  const int d = static_cast<int>(x.rows());
  const auto sllt = spd_cholesky(scale, "wishart_logpdf: scale");
  return 0.5 * (dof - d - 1) * spd_logdet(x, "wishart_logpdf: x") -
         0.5 * sllt.solve(x).trace() - 0.5 * dof * d * std::log(2.0) -
         0.5 * dof * logdet_from_llt(sllt) - lmvgamma(d, 0.5 * dof);
}

inline double matrix_normal_logpdf(const MatrixXd& a, const MatrixXd& m,
                                   const MatrixXd& row_precision,
                                   const MatrixXd& col_precision) {
  const int dy = static_cast<int>(a.rows()), du = static_cast<int>(a.cols());
  const MatrixXd delta = a - m;
  return 0.5 * du * spd_logdet(row_precision, "matrix_normal_logpdf: V") +
         0.5 * dy * spd_logdet(col_precision, "matrix_normal_logpdf: K") -
         0.5 * dy * du * kLog2Pi -
         0.5 * (col_precision * delta.transpose() * row_precision * delta)
                   .trace();
}

inline double beta_logpdf(double s, double a, double b) {
  if (!(s > 0.0 && s < 1.0)) return -std::numeric_limits<double>::infinity();
  return (a - 1.0) * std::log(s) + (b - 1.0) * std::log1p(-s) - lbeta(a, b);
}

// ---------------------------------------------------------------------------
// KL divergences between posterior and prior factors (ELBO bookkeeping)
// ---------------------------------------------------------------------------

inline double kl_beta(double g1, double a1, double g0, double a0) {
  return lbeta(g0, a0) - lbeta(g1, a1) + (g1 - g0) * digamma(g1) +
         (a1 - a0) * digamma(a1) +
         (g0 - g1 + a0 - a1) * digamma(g1 + a1);
}

inline double kl_wishart(const MatrixXd& psi1, double nu1,
                         const MatrixXd& psi0, double nu0) {
  const int d = static_cast<int>(psi1.rows());
  const auto llt1 = spd_cholesky(psi1, "kl_wishart: psi1");
  const auto llt0 = spd_cholesky(psi0, "kl_wishart: psi0");
  const double elogdet =
      mvdigamma_sum(d, nu1) + d * std::log(2.0) + logdet_from_llt(llt1);
  const double log_z1 = 0.5 * nu1 * d * std::log(2.0) +
                        0.5 * nu1 * logdet_from_llt(llt1) +
                        lmvgamma(d, 0.5 * nu1);
  const double log_z0 = 0.5 * nu0 * d * std::log(2.0) +
                        0.5 * nu0 * logdet_from_llt(llt0) +
                        lmvgamma(d, 0.5 * nu0);
  const double tr = nu1 * llt0.solve(psi1).trace();
  return 0.5 * (nu1 - nu0) * elogdet - 0.5 * nu1 * d + 0.5 * tr - log_z1 +
         log_z0;
}

inline double kl_normal_wishart(const NormalWishartParams& q,
                                const NormalWishartParams& p) {
  const int d = q.dim();
  const VectorXd delta = q.m - p.m;
  const double mean_part =
      0.5 * (d * p.kappa / q.kappa - d + d * std::log(q.kappa / p.kappa) +
             p.kappa * q.nu * quad_form(q.Psi, delta));
  return mean_part + kl_wishart(q.Psi, q.nu, p.Psi, p.nu);
}

inline double kl_matrix_normal_wishart(const MatrixNormalWishartParams& q,
                                       const MatrixNormalWishartParams& p) {
  const int dy = q.output_dim(), du = q.input_dim();
  const auto kllt = spd_cholesky(q.K, "kl_matrix_normal_wishart: K");
  const MatrixXd delta = q.M - p.M;
  const double mean_part =
      0.5 * (dy * kllt.solve(p.K).trace() - dy * du +
             dy * (logdet_from_llt(kllt) -
                   spd_logdet(p.K, "kl_matrix_normal_wishart: K0")) +
             q.eta * (p.K * delta.transpose() * q.Phi * delta).trace());
  return mean_part + kl_wishart(q.Phi, q.eta, p.Phi, p.eta);
}

}  // namespace dplr
