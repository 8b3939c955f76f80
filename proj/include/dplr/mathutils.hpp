#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace dplr {

/// Raised when a posterior scale matrix loses positive definiteness or an
/// expectation turns non-finite. Carries enough context to locate the culprit.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

constexpr double kLog2Pi = 1.8378770664093454836;

inline Eigen::MatrixXd symmetrize(const Eigen::MatrixXd& m) {
  return 0.5 * (m + m.transpose());
}

/* Cholesky with jitter escalation. The matrix is symmetrized first; on
 * failure a scaled identity is added in increasing steps before giving up. */
inline Eigen::LLT<Eigen::MatrixXd> spd_cholesky(const Eigen::MatrixXd& m,
                                                const char* what = "matrix") {
  Eigen::MatrixXd s = symmetrize(m);
  Eigen::LLT<Eigen::MatrixXd> llt(s);
  if (llt.info() == Eigen::Success) return llt;

  const double scale = std::max(s.diagonal().cwiseAbs().maxCoeff(), 1.0);
  for (double jitter = 1e-10; jitter <= 1e-6 + 1e-18; jitter *= 100.0) {
    Eigen::MatrixXd patched = s;
    patched.diagonal().array() += jitter * scale;
    llt.compute(patched);
    if (llt.info() == Eigen::Success) return llt;
  }
  throw NumericalError(std::string(what) +
                       ": not positive definite after jitter escalation");
}

inline double logdet_from_llt(const Eigen::LLT<Eigen::MatrixXd>& llt) {
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

inline double spd_logdet(const Eigen::MatrixXd& m, const char* what = "matrix") {
  return logdet_from_llt(spd_cholesky(m, what));
}

inline Eigen::MatrixXd spd_inverse(const Eigen::MatrixXd& m,
                                   const char* what = "matrix") {
  const auto llt = spd_cholesky(m, what);
  Eigen::MatrixXd inv =
      llt.solve(Eigen::MatrixXd::Identity(m.rows(), m.cols()));
  return symmetrize(inv);
}

/// x' P x for symmetric P.
inline double quad_form(const Eigen::MatrixXd& p, const Eigen::VectorXd& x) {
  return x.dot(p * x);
}

inline double logsumexp(const Eigen::VectorXd& v) {
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;  // all -inf (or a nan propagates)
  return m + std::log((v.array() - m).exp().sum());
}

/// Row-wise logsumexp of a matrix.
inline Eigen::VectorXd logsumexp_rows(const Eigen::MatrixXd& m) {
  Eigen::VectorXd out(m.rows());
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    out(i) = logsumexp(m.row(i).transpose());
  return out;
}

/* Digamma via upward recurrence into the asymptotic regime. Accurate to
 * ~1e-14 for x > 0, which is all the beta/Wishart bookkeeping needs. */
inline double digamma(double x) {
  if (!(x > 0.0))
    throw std::invalid_argument("digamma: requires x > 0");
  double acc = 0.0;
  while (x < 10.0) {
    acc -= 1.0 / x;
    x += 1.0;
  }
  const double inv = 1.0 / x, inv2 = inv * inv;
  // Bernoulli tail: ln x - 1/2x - 1/12x^2 + 1/120x^4 - 1/252x^6 + 1/240x^8 - ...
  double tail = std::log(x) - 0.5 * inv;
  tail -= inv2 * (1.0 / 12.0 - inv2 * (1.0 / 120.0 - inv2 * (1.0 / 252.0 -
                  inv2 * (1.0 / 240.0 - inv2 * (1.0 / 132.0)))));
  return acc + tail;
}

/// log of the multivariate gamma function, Gamma_d(a).
inline double lmvgamma(int d, double a) {
  double out = 0.25 * d * (d - 1) * std::log(M_PI);
  for (int i = 1; i <= d; ++i) out += std::lgamma(a + 0.5 * (1 - i));
  return out;
}

/// sum_{i=1}^{d} digamma((nu + 1 - i) / 2) — the digamma part of E[log|Lambda|].
inline double mvdigamma_sum(int d, double nu) {
  double out = 0.0;
  for (int i = 1; i <= d; ++i) out += digamma(0.5 * (nu + 1 - i));
  return out;
}

inline double lbeta(double a, double b) {
  return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
}

}  // namespace dplr
