// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits non-zero when any criterion fails.

#include <chrono>
#include <cstdio>
#include <iostream>
#include <random>
#include <sstream>
#include <string>

#include <boost/math/tools/minima.hpp>

#include "crate/ate.hpp"
#include "crate/coxph.hpp"
#include "crate/error.hpp"
#include "crate/logistic.hpp"
#include "crate/report.hpp"
#include "crate/risk.hpp"
#include "crate/simlab.hpp"
#include "test_support.hpp"

using namespace crate;

namespace {

using Clock = std::chrono::steady_clock;

int failures = 0;

void verdict(int id, bool ok, const std::string& title, const std::string& detail) {
  if (!ok) ++failures;
  std::cout << (ok ? "PASS" : "FAIL") << "  criterion " << id << "  " << title << "  " << detail << std::endl;
}

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(const char* pattern, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, pattern, args...);
  return buf;
}

const AteEstimate& pick(const std::vector<AteEstimate>& all, Estimator e) {
  for (const auto& a : all) {
    if (a.estimator == e) return a;
  }
  throw std::runtime_error("estimator missing from results");
}

FormulaSpec full(const Dataset& d) { return FormulaSpec::uniform(all_covariates(d.covariate_names())); }

// ---------------------------------------------------------------------------

void reductions() {
  const Dataset d = testkit::toy_data({.n = 1000, .seed = 101, .censoring_rate = 0.0});
  const double tau = 6.0;
  const auto start = Clock::now();
  const auto est = estimate_ate(d, full(d), tau, all_estimators());
  const double elapsed = seconds_since(start);

  // Uncensored AIPTW written out from independently predicted nuisances.
  const NuisanceModels models = fit_nuisance_models(d, full(d), requirements(all_estimators()));
  const RiskPredictor predictor(*models.outcome, RiskMode::ProductLimit, ExtremeHazard::Cap);
  const Eigen::VectorXd pi =
      predict_propensity(*models.treatment, design_matrix(d, full(d), NuisanceModel::Treatment).values);
  double r1 = 0, r0 = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto& s = d[i];
    const double y = s.outcome(tau);
    const double f1 = predictor.risk(1, s.covariates, tau), f0 = predictor.risk(0, s.covariates, tau);
    const double p = pi(static_cast<Eigen::Index>(i));
    r1 += f1 + s.treatment / p * (y - f1);
    r0 += f0 + (1 - s.treatment) / (1 - p) * (y - f0);
  }
  const double aiptw = (r1 - r0) / static_cast<double>(d.size());

  const double a = std::abs(pick(est, Estimator::AiptwAipcw).ate - pick(est, Estimator::AiptwIpcw).ate);
  const double b = std::abs(pick(est, Estimator::AiptwIpcw).ate - aiptw);
  const double c = std::abs(pick(est, Estimator::IptwAipcw).ate - pick(est, Estimator::IptwIpcw).ate);
  const double worst = std::max({a, b, c});
  verdict(1, worst <= 1e-12 && elapsed < 1.0, "reduction identities (uncensored, n=1000)",
          fmt("max|diff|=%.2e tol=1e-12; all five estimators in %.3f s (limit 1 s)", worst, elapsed));
}

void collapse() {
  ModelFormula strata;
  strata.by_arm = true;
  FormulaSpec spec = FormulaSpec::uniform(strata);
  spec.treatment = ModelFormula{};
  double worst = 0.0;
  for (std::uint64_t seed = 201; seed < 211; ++seed) {
    const Dataset d = testkit::toy_data({.n = 300, .seed = seed, .censoring_rate = 0.08, .round_times = seed % 2 == 0});
    const double tau = 4.0 + static_cast<double>(seed % 3);
    const double aj = testkit::naive_aalen_johansen(d, tau, 1) - testkit::naive_aalen_johansen(d, tau, 0);
    for (const auto& e : estimate_ate(d, spec, tau, all_estimators())) worst = std::max(worst, std::abs(e.ate - aj));
  }
  verdict(2, worst <= 1e-10, "nonparametric collapse to Aalen-Johansen",
          fmt("10 datasets x 5 estimators, max|diff|=%.2e tol=1e-10", worst));
}

void martingale() {
  std::mt19937_64 rng(301);
  double worst = 0.0;
  std::size_t datasets = 0, subjects = 0;
  for (std::uint64_t rep = 0; datasets < 100; ++rep) {
    const Dataset d = testkit::toy_data({.n = 12 + rep % 10, .seed = 3000 + rep, .censoring_rate = 0.15,
                                         .round_times = true});
    const FormulaSpec spec = full(d);
    ArmedCoxModel cens;
    try {
      cens = fit_armed_cox(d, spec.censoring, kCensored);
    } catch (const Error&) {
      continue;
    }
    ++datasets;
    const DesignBuilder builder(d, spec.censoring, true);
    const double tau = std::uniform_real_distribution<double>(1.0, 8.0)(rng);
    for (std::size_t i = 0; i < d.size(); ++i) {
      const auto& s = d[i];
      const CoxFit& fit = cens.fit(s.treatment);
      const double lp = fit.coefficients.size() ? builder.row(s).dot(fit.coefficients) : 0.0;
      const StepFunction cumhaz = fit.baseline.scaled(std::exp(lp));
      const StepFunction G = censoring_survival(cumhaz);
      const double end = std::min(s.time, tau);
      if (G.value(end) == 0.0) continue;
      // 1[C > min(T, tau)]: the subject was not censored by min(T, tau).
      const bool uncensored = s.time > tau || s.event != kCensored;
      const double g_end = s.time > tau ? G.value(tau) : G.left_value(s.time);
      const double expected = 1.0 - (uncensored ? 1.0 / g_end : 0.0);
      double total = 0.0;
      for (const auto& inc : martingale_increments(s, cumhaz, G, tau, 0.0)) total += inc.weight;
      worst = std::max(worst, std::abs(total - expected));
      ++subjects;
    }
  }
  verdict(3, worst <= 1e-12, "discrete censoring martingale identity",
          fmt("%zu datasets, %zu subjects, max|diff|=%.2e tol=1e-12", datasets, subjects, worst));
}

ScenarioSpec scenario(Misspecification m, std::size_t n, std::size_t replicates) {
  ScenarioSpec s;
  s.name = std::string(misspecification_name(m));
  s.formulas = scenario_formulas(m);
  s.n = n;
  s.replicates = replicates;
  return s;
}

bool exceeds(const SimRow& r) { return std::abs(r.bias) > 3.0 * r.mc_se; }

void double_robustness() {
  const auto start = Clock::now();
  bool ok = true;
  std::ostringstream detail;
  for (Misspecification m :
       {Misspecification::None, Misspecification::Treatment, Misspecification::Outcome, Misspecification::Censoring}) {
    ScenarioSpec s = scenario(m, 500, 300);
    s.estimators = {Estimator::GFormula, Estimator::IptwIpcw, Estimator::AiptwAipcw};
    const SimSummary sum = run_scenario(s);
    const SimRow& g = sum.row(Estimator::GFormula);
    const SimRow& w = sum.row(Estimator::IptwIpcw);
    const SimRow& dr = sum.row(Estimator::AiptwAipcw);
    ok &= std::abs(dr.bias) < std::max(0.01, 3.0 * dr.mc_se);
    ok &= exceeds(g) == (m == Misspecification::Outcome);
    if (m == Misspecification::Treatment) ok &= exceeds(w);
    detail << fmt("\n        %-10s failures=%zu  bias/mcse: g-formula %+.4f/%.4f  iptw-ipcw %+.4f/%.4f  "
                  "aiptw-aipcw %+.4f/%.4f",
                  sum.name.c_str(), sum.failures, g.bias, g.mc_se, w.bias, w.mc_se, dr.bias, dr.mc_se);
  }
  verdict(4, ok, "double robustness (n=500, 300 replicates, 4 scenarios)",
          fmt("%.0f s", seconds_since(start)) + detail.str());
}

void coverage_and_calibration() {
  const auto start = Clock::now();
  ScenarioSpec base = scenario(Misspecification::None, 0, 1000);
  base.estimators = {Estimator::GFormula, Estimator::AiptwAipcw};
  base.aiptw_variances = {VarianceVariant::Tilde, VarianceVariant::PartialPhi};
  const std::vector<std::size_t> sizes{100, 500, 1000};
  const auto summaries = run_coverage(base, sizes);

  bool coverage_ok = true, calibration_ok = true;
  std::ostringstream cov, cal;
  for (const auto& sum : summaries) {
    cov << fmt("\n        n=%-5zu failures=%zu ", sum.n, sum.failures);
    for (const auto& r : sum.rows) {
      cov << fmt(" %s[%s]=%.3f", std::string(estimator_name(r.estimator)).c_str(), r.variance.c_str(), r.coverage);
      if (sum.n >= 500) coverage_ok &= r.coverage >= 0.925 && r.coverage <= 0.975;
      if (sum.n == 1000) {
        const double ratio = r.mean_se / r.sd;
        calibration_ok &= ratio >= 0.85 && ratio <= 1.15;
        cal << fmt("\n        %s[%s] mean SE %.5f / SD %.5f = %.3f", std::string(estimator_name(r.estimator)).c_str(),
                   r.variance.c_str(), r.mean_se, r.sd, ratio);
      }
    }
  }
  verdict(5, coverage_ok, "95% CI coverage in [0.925, 0.975] at n >= 500 (1000 replicates)",
          fmt("%.0f s", seconds_since(start)) + cov.str());
  verdict(6, calibration_ok, "mean SE / empirical SD in [0.85, 1.15] at n=1000", cal.str());
}

void solver_oracles() {
  // Cox: scalar maximisation of the partial likelihood on tie-free data.
  double cox_worst = 0.0;
  for (std::uint64_t seed = 701; seed < 706; ++seed) {
    const Dataset d = testkit::toy_data({.n = 100, .seed = seed, .covariates = 1});
    std::vector<double> time, x;
    std::vector<int> event;
    Eigen::MatrixXd design(static_cast<Eigen::Index>(d.size()), 1);
    for (std::size_t i = 0; i < d.size(); ++i) {
      time.push_back(d[i].time);
      event.push_back(d[i].event == 1);
      x.push_back(d[i].covariates[0]);
      design(static_cast<Eigen::Index>(i), 0) = x.back();
    }
    auto negll = [&](double b) { return -testkit::naive_cox_loglik(time, event, x, b); };
    const double ref = boost::math::tools::brent_find_minima(negll, -5.0, 5.0, 40).first;
    cox_worst = std::max(cox_worst, std::abs(fit_cox(d, design, 1).coefficients(0) - ref));
  }

  // Logistic: saturated binary covariate gives empirical log-odds.
  const std::vector<int> a{1, 0, 0, 0, 1, 1, 1, 0, 1, 1, 0, 1, 0, 0, 1};
  Eigen::MatrixXd design(15, 1);
  for (Eigen::Index i = 0; i < 15; ++i) design(i, 0) = i < 6 ? 0.0 : 1.0;
  const LogisticFit fit = fit_logistic(design, a);
  auto logit = [](double p) { return std::log(p / (1.0 - p)); };
  const double p0 = 3.0 / 6.0, p1 = 5.0 / 9.0;
  const double logistic_worst = std::max(std::abs(fit.coefficients(0) - logit(p0)),
                                         std::abs(fit.coefficients(1) - (logit(p1) - logit(p0))));

  // Absolute risk: constant hazards on a fine grid vs competing exponentials.
  const double dt = 1e-3, horizon = 10.0;
  std::vector<double> grid;
  for (double t = dt; t <= horizon + 1e-12; t += dt) grid.push_back(t);
  auto constant = [&](double rate) {
    CoxFit f;
    f.coefficients = Eigen::VectorXd::Zero(1);
    f.baseline = StepFunction::from_increments(grid, std::vector<double>(grid.size(), rate * dt));
    f.converged = true;
    return f;
  };
  const Dataset layout({{1.0, 1, 0, {0.0}}, {2.0, 1, 1, {1.0}}}, {"x"});
  const ModelFormula formula = all_covariates(layout.covariate_names());
  ArmedCoxModel c1, c2;
  c1.fits = {constant(0.2), constant(0.2)};
  c2.fits = {constant(0.1), constant(0.1)};
  const CauseSpecificModel model{c1, c2, DesignBuilder(layout, formula, true), DesignBuilder(layout, formula, true)};
  double risk_worst = 0.0;
  for (RiskMode mode : {RiskMode::ProductLimit, RiskMode::Exponential}) {
    const RiskCurve curve = absolute_risk(model, 0, std::vector<double>{0.0}, mode);
    for (double t = 0.0; t <= horizon; t += 0.01) {
      const double f1 = 0.2 / 0.3 * (1.0 - std::exp(-0.3 * t));
      risk_worst = std::max(risk_worst, std::abs(curve.F1.value(t) - f1));
    }
  }
  verdict(7, cox_worst <= 1e-6 && logistic_worst <= 1e-10 && risk_worst <= 1e-3, "solver oracles",
          fmt("cox %.2e (1e-6), logistic %.2e (1e-10), absolute risk %.2e (1e-3)", cox_worst, logistic_worst,
              risk_worst));
}

double sd(const std::vector<double>& v) {
  double m = 0.0, ss = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

void bootstrap() {
  const auto start = Clock::now();
  const Dataset d = testkit::toy_data({.n = 300, .seed = 801, .censoring_rate = 0.05});
  const FormulaSpec spec = full(d);
  const double tau = 5.0;
  const std::vector<double> x0{0.5, 1.0};
  const std::vector<Estimator> g{Estimator::GFormula};

  const double se_g = estimate_ate(d, spec, tau, g).front().se;
  const CauseSpecificModel model = fit_cause_specific(d, spec);
  const CauseSpecificInfluence inf = cause_specific_influence(model, d, spec);
  std::array<double, 2> se_f{};
  for (int arm : {0, 1}) {
    se_f[static_cast<std::size_t>(arm)] =
        std::sqrt(risk_influence(model, inf, arm, x0, tau).squaredNorm()) / static_cast<double>(d.size());
  }

  std::mt19937_64 rng(802);
  std::uniform_int_distribution<std::size_t> draw(0, d.size() - 1);
  std::vector<double> boot_g, boot_f0, boot_f1;
  std::size_t skipped = 0;
  while (boot_g.size() < 200) {
    std::vector<std::size_t> index(d.size());
    for (auto& i : index) i = draw(rng);
    const Dataset b = testkit::resample(d, index);
    try {
      const double ate = estimate_ate(b, spec, tau, g).front().ate;
      const RiskPredictor p(fit_cause_specific(b, spec));
      const double f0 = p.risk(0, x0, tau), f1 = p.risk(1, x0, tau);
      boot_g.push_back(ate);
      boot_f0.push_back(f0);
      boot_f1.push_back(f1);
    } catch (const Error&) {
      ++skipped;
    }
  }
  const double rg = se_g / sd(boot_g), r0 = se_f[0] / sd(boot_f0), r1 = se_f[1] / sd(boot_f1);
  const bool ok = std::abs(rg - 1.0) <= 0.15 && std::abs(r0 - 1.0) <= 0.15 && std::abs(r1 - 1.0) <= 0.15;
  verdict(8, ok, "influence-function SE vs 200-resample bootstrap (n=300)",
          fmt("IF/bootstrap: g-formula ATE %.3f, F1(tau|0,x0) %.3f, F1(tau|1,x0) %.3f (within 15%%); "
              "%zu resamples skipped; %.0f s",
              rg, r0, r1, skipped, seconds_since(start)));
}

void determinism() {
  ScenarioSpec s = scenario(Misspecification::Outcome, 200, 24);
  std::vector<std::string> outputs;
  std::vector<SimSummary> sums;
  for (unsigned workers : {1u, 2u, 4u}) {
    s.workers = workers;
    sums.push_back(run_scenario(s));
    std::ostringstream out;
    write_summary_json(out, std::span<const SimSummary>(&sums.back(), 1));
    outputs.push_back(out.str());
  }
  const bool ok = sums[0] == sums[1] && sums[0] == sums[2] && outputs[0] == outputs[1] && outputs[0] == outputs[2];
  verdict(9, ok, "determinism across worker counts", "workers 1, 2, 4: summaries and serialized output identical");
}

}  // namespace

int main() {
  std::cout.setf(std::ios::unitbuf);
  const auto start = Clock::now();
  const std::vector<void (*)()> criteria{reductions, collapse,       martingale, double_robustness,
                                         coverage_and_calibration, solver_oracles, bootstrap,  determinism};
  for (auto criterion : criteria) {
    try {
      criterion();
    } catch (const std::exception& e) {
      ++failures;
      std::cout << "FAIL  criterion raised: " << e.what() << std::endl;
    }
  }
  std::cout << (failures ? "FAILED" : "ALL PASSED") << "  (" << failures << " failing, "
            << fmt("%.0f s total)", seconds_since(start)) << std::endl;
  return failures ? 1 : 0;
}
