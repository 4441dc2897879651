#pragma once

#include <cmath>
#include <optional>
#include <span>

#include <Eigen/Dense>

namespace crate {

/// Propensity model P(A = 1 | W) fitted by Newton-Raphson.
/// `coefficients(0)` is the intercept; the rest follow the design columns.
struct LogisticFit {
  Eigen::VectorXd coefficients;
  Eigen::MatrixXd fisher_information;  // at the returned coefficients
  double log_likelihood = 0.0;
  bool converged = false;
  int iterations = 0;
};

struct LogisticOptions {
  double tolerance = 1e-8;  // max-norm of the score
  int max_iterations = 25;
  double divergence_bound = 30.0;  // |beta| beyond this signals separation
};

struct Truncation {
  double lo = 0.0;
  double hi = 1.0;
};

/// `design` excludes the intercept column, which is added internally.
/// Optional nonnegative case weights (empty = all ones).
LogisticFit fit_logistic(const Eigen::MatrixXd& design, std::span<const int> treatment,
                         std::span<const double> weights = {}, const LogisticOptions& options = {});

Eigen::VectorXd predict_propensity(const LogisticFit& fit, const Eigen::MatrixXd& design,
                                   std::optional<Truncation> truncation = std::nullopt);

/// Per-subject contributions to the coefficient estimator: row i equals
/// I^{-1} x_i (A_i - pi_i) with I the total Fisher information, so that the
/// rows sum to zero and beta_hat - beta ~ sum of rows. Multiply by n for the
/// usual influence-function scale.
Eigen::MatrixXd logistic_influence(const LogisticFit& fit, const Eigen::MatrixXd& design,
                                   std::span<const int> treatment);

/// Design with a leading column of ones.
Eigen::MatrixXd with_intercept(const Eigen::MatrixXd& design);

inline double expit(double eta) { return 1.0 / (1.0 + std::exp(-eta)); }

}  // namespace crate
