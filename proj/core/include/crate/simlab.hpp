#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "crate/ate.hpp"
#include "crate/dataset.hpp"

namespace crate {

/// Coefficients over the simulated terms, ordered
///   [intercept, X1..X6, X1^2..X6^2, X7..X12].
/// X1..X6 are standard normal, X7..X12 Bernoulli(1/2).
using Coefficients = std::array<double, 19>;

inline constexpr std::size_t kSimCovariates = 12;

/// Weibull proportional-hazards latent time:
///   hazard(t) = scale * shape * t^(shape-1) * exp(intercept + beta'Z + effect * A).
struct LatentTime {
  Coefficients coefficients{};
  double treatment_effect = 0.0;
  double shape = 2.0;
  double scale = 0.004;
};

struct DgmSpec {
  Coefficients treatment{};  // logit of P(A = 1 | X)
  LatentTime cause1;
  LatentTime cause2;
  LatentTime censoring;
  std::uint64_t seed = 20240531;

  /// Moderate confounding through X1, X4, X5, X1^2, X10, X11 and no
  /// treatment effect.
  static DgmSpec default_spec();
  void validate() const;
};

/// Term label for a coefficient index ("intercept", "X3", "X2^2", ...).
std::string coefficient_name(std::size_t index);
std::vector<std::string> simulated_covariate_names();

/// Potential outcomes without censoring for both arms of every subject.
struct PotentialOutcomes {
  std::vector<double> time0, time1;
  std::vector<int> cause0, cause1;
};

struct SimulatedData {
  std::vector<ObservedSample> samples;
  PotentialOutcomes potential;
};

/// Draws n subjects from stream `stream` of the spec's seed. Potential
/// outcomes share the latent uniforms of the observed data.
SimulatedData simulate(const DgmSpec& spec, std::size_t n, std::uint64_t stream = 0);
Dataset simulate_dataset(const DgmSpec& spec, std::size_t n, std::uint64_t stream = 0);

struct OracleValue {
  double ate = 0.0;
  double se = 0.0;  // Monte Carlo standard error
  double risk1 = 0.0;
  double risk0 = 0.0;
};

/// Monte Carlo mean of Y^1(tau) - Y^0(tau); requires m >= 1e5.
OracleValue true_ate_oracle(const DgmSpec& spec, double tau, std::size_t m = 200000);

enum class Degrade { None, DropCovariates, DropSquares, Both };

/// drop-squares removes every squared term; drop-covariates removes X4-X6
/// and X10-X12 (with their squares).
ModelFormula degrade_formula(const ModelFormula& formula, Degrade mode);
FormulaSpec degrade_formula(const FormulaSpec& spec, Degrade mode);

/// All twelve covariates with squares on X1..X6: the correct working model
/// for every nuisance.
ModelFormula full_simulation_formula();

enum class Misspecification { None, Treatment, Outcome, Censoring };

std::string_view misspecification_name(Misspecification m);
/// Correct formulas with the named model degraded (treatment and outcome:
/// both covariates and squares; censoring: squares).
FormulaSpec scenario_formulas(Misspecification m);

struct ScenarioSpec {
  std::string name = "correct";
  DgmSpec dgm = DgmSpec::default_spec();
  FormulaSpec formulas = scenario_formulas(Misspecification::None);
  std::size_t n = 500;
  std::size_t replicates = 100;
  double tau = 10.0;
  std::vector<Estimator> estimators = all_estimators();
  std::vector<VarianceVariant> aiptw_variances{VarianceVariant::Tilde};
  AteOptions options;
  std::size_t oracle_size = 200000;
  unsigned workers = 1;
};

struct ReplicateResult {
  bool ok = false;
  bool positivity_failure = false;
  std::string error;
  std::vector<double> estimate;  // one per summary row
  std::vector<double> se;
};

struct SimRow {
  Estimator estimator = Estimator::GFormula;
  std::string variance;
  std::size_t successes = 0;
  double truth = 0.0;
  double mean_estimate = 0.0;
  double bias = 0.0;
  double sd = 0.0;
  double mc_se = 0.0;  // sd / sqrt(successes)
  double mean_se = 0.0;
  double coverage = 0.0;
};

struct SimSummary {
  std::string name;
  std::size_t n = 0;
  std::size_t replicates = 0;
  double tau = 0.0;
  std::uint64_t seed = 0;
  OracleValue truth;
  std::size_t failures = 0;
  std::size_t positivity_failures = 0;
  std::vector<SimRow> rows;
  std::vector<ReplicateResult> details;

  const SimRow& row(Estimator estimator, std::string_view variance = {}) const;
  friend bool operator==(const SimSummary&, const SimSummary&);
};

/// Called after each finished replicate with (done, total).
using ProgressCallback = std::function<void(std::size_t, std::size_t)>;

SimSummary run_scenario(const ScenarioSpec& spec, const ProgressCallback& progress = {});

/// One scenario per sample size, otherwise identical.
std::vector<SimSummary> run_coverage(const ScenarioSpec& base, std::span<const std::size_t> sizes,
                                     const ProgressCallback& progress = {});

/// Reads "key = value" lines ('#' starts a comment) on top of `base`.
ScenarioSpec parse_scenario_config(std::istream& in, ScenarioSpec base = {});
ScenarioSpec load_scenario_config(const std::string& path, ScenarioSpec base = {});

}  // namespace crate
