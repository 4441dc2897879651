#include <random>

#include <gtest/gtest.h>

#include "crate/error.hpp"
#include "crate/logistic.hpp"

using namespace crate;

namespace {

struct Sample {
  Eigen::MatrixXd x;
  std::vector<int> a;
};

Sample random_sample(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Sample s{Eigen::MatrixXd(static_cast<Eigen::Index>(n), 2), {}};
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    s.x(r, 0) = normal(rng);
    s.x(r, 1) = u(rng) < 0.4 ? 1.0 : 0.0;
    s.a.push_back(u(rng) < expit(-0.2 + 0.8 * s.x(r, 0) - 0.5 * s.x(r, 1)) ? 1 : 0);
  }
  return s;
}

double logit(double p) { return std::log(p / (1.0 - p)); }

}  // namespace

TEST(Logistic, SaturatedModelGivesEmpiricalLogOdds) {
  // 0/1 covariate: intercept = log-odds in group 0, slope = log odds ratio.
  const std::vector<int> a{1, 0, 0, 0, 1, 1, 1, 0, 1, 1, 0, 1, 0};
  const std::vector<double> x{0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1, 1, 1};
  Eigen::MatrixXd design(static_cast<Eigen::Index>(x.size()), 1);
  for (std::size_t i = 0; i < x.size(); ++i) design(static_cast<Eigen::Index>(i), 0) = x[i];
  const LogisticFit fit = fit_logistic(design, a);
  ASSERT_TRUE(fit.converged);
  const double p0 = 2.0 / 5.0, p1 = 5.0 / 8.0;
  EXPECT_NEAR(fit.coefficients(0), logit(p0), 1e-10);
  EXPECT_NEAR(fit.coefficients(1), logit(p1) - logit(p0), 1e-10);
  const Eigen::VectorXd pi = predict_propensity(fit, design);
  EXPECT_NEAR(pi(0), p0, 1e-10);
  EXPECT_NEAR(pi(12), p1, 1e-10);
}

TEST(Logistic, InterceptOnlyIsMarginalProportion) {
  const Sample s = random_sample(300, 1);
  const LogisticFit fit = fit_logistic(Eigen::MatrixXd(300, 0), s.a);
  double mean = 0.0;
  for (int v : s.a) mean += v;
  mean /= 300.0;
  EXPECT_NEAR(expit(fit.coefficients(0)), mean, 1e-12);
}

TEST(Logistic, ScoreVanishesAtEstimate) {
  const Sample s = random_sample(500, 2);
  const LogisticFit fit = fit_logistic(s.x, s.a);
  const Eigen::MatrixXd X = with_intercept(s.x);
  Eigen::VectorXd score = Eigen::VectorXd::Zero(3);
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    score += X.row(i).transpose() * (s.a[static_cast<std::size_t>(i)] - expit(X.row(i).dot(fit.coefficients)));
  }
  EXPECT_LT(score.lpNorm<Eigen::Infinity>(), 1e-8);
  EXPECT_LE(fit.iterations, 10);
}

TEST(Logistic, IntegerWeightsEqualDuplicatedRows) {
  const Sample s = random_sample(100, 3);
  std::vector<double> w(100, 1.0);
  Eigen::MatrixXd dup(110, 2);
  dup.topRows(100) = s.x;
  std::vector<int> a = s.a;
  for (int k = 0; k < 10; ++k) {
    w[static_cast<std::size_t>(k)] = 2.0;
    dup.row(100 + k) = s.x.row(k);
    a.push_back(s.a[static_cast<std::size_t>(k)]);
  }
  const auto weighted = fit_logistic(s.x, s.a, w);
  const auto duplicated = fit_logistic(dup, a);
  EXPECT_LT((weighted.coefficients - duplicated.coefficients).lpNorm<Eigen::Infinity>(), 1e-9);
}

TEST(Logistic, TruncationClipsPropensities) {
  LogisticFit fit;
  fit.coefficients = Eigen::Vector2d(0.0, 1.0);
  Eigen::MatrixXd x(3, 1);
  x << 10.0, -10.0, 0.0;
  const Eigen::VectorXd pi = predict_propensity(fit, x, Truncation{0.01, 0.99});
  EXPECT_EQ(pi(0), 0.99);
  EXPECT_EQ(pi(1), 0.01);
  EXPECT_EQ(pi(2), 0.5);
}

TEST(Logistic, SeparationIsAConvergenceError) {
  Eigen::MatrixXd x(6, 1);
  x << -3, -2, -1, 1, 2, 3;
  const std::vector<int> a{0, 0, 0, 1, 1, 1};
  EXPECT_THROW(fit_logistic(x, a), ConvergenceError);
  const std::vector<int> all_ones(6, 1);
  EXPECT_THROW(fit_logistic(x, all_ones), ValidationError);
}

TEST(Logistic, InfluenceRowsMatchJackknife) {
  const Sample s = random_sample(150, 4);
  const LogisticFit fit = fit_logistic(s.x, s.a);
  const Eigen::MatrixXd inf = logistic_influence(fit, s.x, s.a);
  EXPECT_LT(inf.colwise().sum().lpNorm<Eigen::Infinity>(), 1e-10);
  double worst = 0.0, scale = inf.lpNorm<Eigen::Infinity>();
  for (Eigen::Index i = 0; i < 150; i += 7) {
    Eigen::MatrixXd x(149, 2);
    std::vector<int> a;
    for (Eigen::Index j = 0, r = 0; j < 150; ++j) {
      if (j == i) continue;
      x.row(r++) = s.x.row(j);
      a.push_back(s.a[static_cast<std::size_t>(j)]);
    }
    const LogisticFit loo = fit_logistic(x, a);
    const Eigen::VectorXd diff = fit.coefficients - loo.coefficients;
    worst = std::max(worst, (diff - inf.row(i).transpose()).lpNorm<Eigen::Infinity>());
  }
  // first-order agreement: the remainder is O(1/n^2)
  EXPECT_LT(worst, 0.05 * scale);
}
