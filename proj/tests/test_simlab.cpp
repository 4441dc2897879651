#include <sstream>

#include <gtest/gtest.h>

#include "crate/error.hpp"
#include "crate/logistic.hpp"
#include "crate/simlab.hpp"

using namespace crate;

namespace {

DgmSpec plain_weibull(double effect1) {
  DgmSpec s;
  s.cause1.scale = 0.01;
  s.cause1.treatment_effect = effect1;
  s.cause2.scale = 0.005;
  s.censoring.scale = 0.004;
  return s;
}

ScenarioSpec quick_scenario() {
  ScenarioSpec spec;
  spec.n = 200;
  spec.replicates = 6;
  spec.oracle_size = 100000;
  spec.aiptw_variances = {VarianceVariant::Tilde, VarianceVariant::PartialPhi};
  return spec;
}

}  // namespace

TEST(Simulate, StreamsAreReproducibleAndDistinct) {
  const DgmSpec spec = DgmSpec::default_spec();
  const auto a = simulate(spec, 50, 3), b = simulate(spec, 50, 3), c = simulate(spec, 50, 4);
  for (std::size_t i = 0; i < 50; ++i) {
    EXPECT_EQ(a.samples[i].time, b.samples[i].time);
    EXPECT_EQ(a.samples[i].covariates, b.samples[i].covariates);
  }
  EXPECT_NE(a.samples[0].time, c.samples[0].time);
  DgmSpec other = spec;
  other.seed += 1;
  EXPECT_NE(simulate(other, 5, 3).samples[0].time, a.samples[0].time);
}

TEST(Simulate, CovariateAndTreatmentDistributions) {
  const DgmSpec spec = DgmSpec::default_spec();
  const auto data = simulate(spec, 40000, 1);
  std::array<double, 12> mean{}, sq{};
  double treated = 0, expected_treated = 0;
  for (const auto& s : data.samples) {
    for (std::size_t k = 0; k < 12; ++k) {
      mean[k] += s.covariates[k];
      sq[k] += s.covariates[k] * s.covariates[k];
    }
    double eta = spec.treatment[0];
    for (std::size_t k = 0; k < 6; ++k) {
      eta += spec.treatment[1 + k] * s.covariates[k] + spec.treatment[7 + k] * s.covariates[k] * s.covariates[k];
      eta += spec.treatment[13 + k] * s.covariates[6 + k];
    }
    expected_treated += expit(eta);
    treated += s.treatment;
  }
  const double n = 40000.0;
  for (std::size_t k = 0; k < 6; ++k) {
    EXPECT_NEAR(mean[k] / n, 0.0, 0.02);
    EXPECT_NEAR(sq[k] / n, 1.0, 0.03);
  }
  for (std::size_t k = 6; k < 12; ++k) EXPECT_NEAR(mean[k] / n, 0.5, 0.01);
  EXPECT_NEAR(treated / n, expected_treated / n, 0.01);
}

TEST(Simulate, PotentialOutcomesAreConsistent) {
  const auto data = simulate(DgmSpec::default_spec(), 500, 2);
  std::size_t censored = 0;
  for (std::size_t i = 0; i < 500; ++i) {
    const auto& s = data.samples[i];
    const double t = s.treatment ? data.potential.time1[i] : data.potential.time0[i];
    const int c = s.treatment ? data.potential.cause1[i] : data.potential.cause0[i];
    // no treatment effect in the default design: both worlds coincide
    EXPECT_EQ(data.potential.time0[i], data.potential.time1[i]);
    if (s.event == 0) {
      EXPECT_LT(s.time, t);
      ++censored;
    } else {
      EXPECT_EQ(s.time, t);
      EXPECT_EQ(s.event, c);
    }
  }
  EXPECT_GT(censored, 0u);
}

TEST(Simulate, WeibullMarginalMatchesClosedForm) {
  // no covariate effects: cause-specific cumulative hazards s_j t^k
  const DgmSpec spec = plain_weibull(0.0);
  const auto data = simulate(spec, 50000, 5);
  for (double t : {3.0, 8.0, 12.0}) {
    const double l1 = 0.01 * t * t, l2 = 0.005 * t * t;
    const double f1 = l1 / (l1 + l2) * (1.0 - std::exp(-(l1 + l2)));
    double hits = 0;
    for (std::size_t i = 0; i < 50000; ++i) {
      hits += data.potential.time0[i] <= t && data.potential.cause0[i] == 1;
    }
    EXPECT_NEAR(hits / 50000.0, f1, 0.008) << "t=" << t;
  }
}

TEST(Oracle, MatchesClosedFormWithEffect) {
  const DgmSpec spec = plain_weibull(0.5);
  const double tau = 8.0;
  const OracleValue v = true_ate_oracle(spec, tau, 200000);
  auto risk = [&](double rate1) {
    const double l1 = rate1 * tau * tau, l2 = 0.005 * tau * tau;
    return l1 / (l1 + l2) * (1.0 - std::exp(-(l1 + l2)));
  };
  const double truth = risk(0.01 * std::exp(0.5)) - risk(0.01);
  EXPECT_NEAR(v.ate, truth, 4.0 * v.se + 1e-3);
  EXPECT_GT(v.se, 0.0);
  EXPECT_THROW(true_ate_oracle(spec, tau, 99999), ValidationError);
}

TEST(Formulas, DegradeSemantics) {
  const ModelFormula full = full_simulation_formula();
  EXPECT_EQ(full.columns(), 18u);
  EXPECT_EQ(degrade_formula(full, Degrade::DropSquares).columns(), 12u);
  const ModelFormula dropped = degrade_formula(full, Degrade::DropCovariates);
  EXPECT_EQ(dropped.terms.size(), 6u);
  EXPECT_EQ(dropped.columns(), 9u);  // X1..X3 keep their squares
  EXPECT_EQ(degrade_formula(full, Degrade::Both).columns(), 6u);
  const FormulaSpec t = scenario_formulas(Misspecification::Treatment);
  EXPECT_EQ(t.treatment.columns(), 6u);
  EXPECT_EQ(t.cause1, full);
  const FormulaSpec c = scenario_formulas(Misspecification::Censoring);
  EXPECT_EQ(c.censoring.columns(), 12u);
  EXPECT_EQ(c.treatment, full);
  EXPECT_EQ(scenario_formulas(Misspecification::Outcome).cause2.columns(), 6u);
}

TEST(ScenarioConfig, ParsesKeys) {
  std::istringstream in(
      "# quadrant\n"
      "name = trial\n"
      "n = 300\n"
      "replicates = 12\n"
      "tau = 7.5\n"
      "seed = 99\n"
      "workers = 3\n"
      "misspecified = outcome\n"
      "estimators = g-formula, aiptw-aipcw\n"
      "variance = both\n"
      "cause1.X4 = 0.7\n"
      "cause1.effect = -0.2\n"
      "treatment.X1^2 = 0.1\n");
  const ScenarioSpec s = parse_scenario_config(in);
  EXPECT_EQ(s.name, "trial");
  EXPECT_EQ(s.n, 300u);
  EXPECT_EQ(s.replicates, 12u);
  EXPECT_EQ(s.tau, 7.5);
  EXPECT_EQ(s.dgm.seed, 99u);
  EXPECT_EQ(s.workers, 3u);
  EXPECT_EQ(s.formulas, scenario_formulas(Misspecification::Outcome));
  EXPECT_EQ(s.estimators.size(), 2u);
  EXPECT_EQ(s.aiptw_variances.size(), 2u);
  EXPECT_EQ(s.dgm.cause1.coefficients[4], 0.7);
  EXPECT_EQ(s.dgm.cause1.treatment_effect, -0.2);
  EXPECT_EQ(s.dgm.treatment[7], 0.1);

  auto fails = [](const std::string& text) {
    std::istringstream bad(text);
    EXPECT_THROW(parse_scenario_config(bad), ValidationError) << text;
  };
  fails("replicates = 0\n");
  fails("bogus = 1\n");
  fails("n = -3\n");
  fails("tau = abc\n");
  fails("cause1.X99 = 1\n");
  fails("cause2.scale = 0\n");
  fails("misspecified = everything\n");
  fails("estimators = aipw\n");
  fails("just text\n");
  EXPECT_THROW(load_scenario_config("/nonexistent/scenario.txt"), IoError);
}

TEST(RunScenario, SummaryRowsAndDeterminismAcrossWorkers) {
  ScenarioSpec spec = quick_scenario();
  spec.workers = 1;
  const SimSummary one = run_scenario(spec);
  spec.workers = 3;
  std::size_t calls = 0;
  const SimSummary three = run_scenario(spec, [&](std::size_t done, std::size_t total) {
    ++calls;
    EXPECT_LE(done, total);
  });
  EXPECT_EQ(calls, spec.replicates);
  EXPECT_TRUE(one == three);
  // five estimators, two variants for each AIPTW type
  EXPECT_EQ(one.rows.size(), 7u);
  EXPECT_EQ(one.row(Estimator::AiptwAipcw, "partial-phi").variance, "partial-phi");
  EXPECT_EQ(one.row(Estimator::GFormula).variance, "tilde+phi");
  EXPECT_EQ(one.row(Estimator::IptwIpcw).variance, "tilde+treatment");
  for (const auto& r : one.rows) {
    EXPECT_EQ(r.successes + one.failures, spec.replicates);
    EXPECT_NEAR(r.bias, r.mean_estimate - one.truth.ate, 1e-15);
    EXPECT_GE(r.coverage, 0.0);
    EXPECT_LE(r.coverage, 1.0);
  }
  spec.dgm.seed += 1;
  EXPECT_FALSE(run_scenario(spec) == one);
}

TEST(RunScenario, RejectsEmptyStudies) {
  ScenarioSpec spec = quick_scenario();
  spec.replicates = 0;
  EXPECT_THROW(run_scenario(spec), ValidationError);
  spec.replicates = 2;
  spec.estimators.clear();
  EXPECT_THROW(run_scenario(spec), ValidationError);
}

TEST(RunCoverage, OneSummaryPerSize) {
  ScenarioSpec spec = quick_scenario();
  spec.replicates = 3;
  const std::vector<std::size_t> sizes{100, 150};
  const auto out = run_coverage(spec, sizes);
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[1].n, 150u);
}
