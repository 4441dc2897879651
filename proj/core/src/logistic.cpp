#include "crate/logistic.hpp"

#include <algorithm>
#include <cmath>

#include "crate/error.hpp"

namespace crate {

namespace {

double log_likelihood(const Eigen::MatrixXd& X, std::span<const int> a, std::span<const double> w,
                      const Eigen::VectorXd& beta) {
  const Eigen::VectorXd eta = X * beta;
  double ll = 0.0;
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const double wi = w.empty() ? 1.0 : w[static_cast<std::size_t>(i)];
    // log(1 + exp(eta)) evaluated stably
    const double e = eta(i);
    const double log1pexp = e > 0 ? e + std::log1p(std::exp(-e)) : std::log1p(std::exp(e));
    ll += wi * (a[static_cast<std::size_t>(i)] * e - log1pexp);
  }
  return ll;
}

struct ScoreInfo {
  Eigen::VectorXd score;
  Eigen::MatrixXd information;
};

ScoreInfo score_information(const Eigen::MatrixXd& X, std::span<const int> a, std::span<const double> w,
                            const Eigen::VectorXd& beta) {
  const Eigen::Index p = X.cols();
  ScoreInfo out{Eigen::VectorXd::Zero(p), Eigen::MatrixXd::Zero(p, p)};
  const Eigen::VectorXd eta = X * beta;
  Eigen::VectorXd resid(X.rows());
  Eigen::VectorXd curv(X.rows());
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const double wi = w.empty() ? 1.0 : w[static_cast<std::size_t>(i)];
    const double pi = expit(eta(i));
    resid(i) = wi * (a[static_cast<std::size_t>(i)] - pi);
    curv(i) = wi * pi * (1.0 - pi);
  }
  out.score = X.transpose() * resid;
  out.information = X.transpose() * curv.asDiagonal() * X;
  return out;
}

}  // namespace

Eigen::MatrixXd with_intercept(const Eigen::MatrixXd& design) {
  Eigen::MatrixXd X(design.rows(), design.cols() + 1);
  X.col(0).setOnes();
  X.rightCols(design.cols()) = design;
  return X;
}

LogisticFit fit_logistic(const Eigen::MatrixXd& design, std::span<const int> treatment,
                         std::span<const double> weights, const LogisticOptions& options) {
  if (static_cast<std::size_t>(design.rows()) != treatment.size()) {
    throw ValidationError("logistic: design rows and treatment length differ");
  }
  if (!weights.empty() && weights.size() != treatment.size()) {
    throw ValidationError("logistic: weights length differs from treatment length");
  }
  std::size_t ones = 0;
  for (int a : treatment) ones += a == 1 ? 1 : 0;
  if (ones == 0 || ones == treatment.size()) {
    throw ValidationError("logistic: treatment must contain both 0 and 1");
  }

  const Eigen::MatrixXd X = with_intercept(design);
  LogisticFit fit;
  fit.coefficients = Eigen::VectorXd::Zero(X.cols());
  fit.log_likelihood = log_likelihood(X, treatment, weights, fit.coefficients);
  auto si = score_information(X, treatment, weights, fit.coefficients);
  const Eigen::VectorXd info0 = si.information.diagonal();

  for (int iter = 0; iter < options.max_iterations; ++iter) {
    if (si.score.lpNorm<Eigen::Infinity>() < options.tolerance) {
      fit.converged = true;
      break;
    }
    const Eigen::LDLT<Eigen::MatrixXd> ldlt(si.information);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || ldlt.vectorD().minCoeff() <= 0.0) {
      throw ConvergenceError("logistic: singular information matrix");
    }
    const Eigen::VectorXd step = ldlt.solve(si.score);
    double scale = 1.0;
    Eigen::VectorXd candidate = fit.coefficients + step;
    double ll = log_likelihood(X, treatment, weights, candidate);
    // Step-halving keeps the log-likelihood non-decreasing up to rounding.
    const double floor = fit.log_likelihood - 1e-10 * (1.0 + std::abs(fit.log_likelihood));
    for (int h = 0; h < 30 && !(ll >= floor); ++h) {
      scale *= 0.5;
      candidate = fit.coefficients + scale * step;
      ll = log_likelihood(X, treatment, weights, candidate);
    }
    if (!(ll >= floor)) break;
    fit.coefficients = candidate;
    fit.log_likelihood = ll;
    fit.iterations = iter + 1;
    if (fit.coefficients.lpNorm<Eigen::Infinity>() > options.divergence_bound) {
      throw ConvergenceError("logistic: coefficients diverge (separation detected)");
    }
    si = score_information(X, treatment, weights, fit.coefficients);
  }
  if (!fit.converged && si.score.lpNorm<Eigen::Infinity>() < options.tolerance) fit.converged = true;
  // Under separation the score vanishes as |beta| grows, so Newton can look
  // converged while the information has collapsed towards zero.
  if ((si.information.diagonal().array() < 1e-8 * info0.array()).any()) {
    throw ConvergenceError("logistic: coefficients diverge (separation detected)");
  }
  fit.fisher_information = si.information;
  return fit;
}

Eigen::VectorXd predict_propensity(const LogisticFit& fit, const Eigen::MatrixXd& design,
                                   std::optional<Truncation> truncation) {
  const Eigen::VectorXd eta = with_intercept(design) * fit.coefficients;
  Eigen::VectorXd pi(eta.size());
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    double p = expit(eta(i));
    if (truncation) p = std::clamp(p, truncation->lo, truncation->hi);
    pi(i) = p;
  }
  return pi;
}

Eigen::MatrixXd logistic_influence(const LogisticFit& fit, const Eigen::MatrixXd& design,
                                   std::span<const int> treatment) {
  const Eigen::MatrixXd X = with_intercept(design);
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(fit.fisher_information);
  if (ldlt.info() != Eigen::Success || ldlt.vectorD().minCoeff() <= 0.0) {
    throw ConvergenceError("logistic: singular information matrix");
  }
  const Eigen::VectorXd eta = X * fit.coefficients;
  Eigen::MatrixXd scores(X.rows(), X.cols());
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    scores.row(i) = X.row(i) * (treatment[static_cast<std::size_t>(i)] - expit(eta(i)));
  }
  return ldlt.solve(scores.transpose()).transpose();
}

}  // namespace crate
