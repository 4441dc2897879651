#pragma once

#include <array>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "crate/coxph.hpp"
#include "crate/dataset.hpp"
#include "crate/logistic.hpp"
#include "crate/risk.hpp"
#include "crate/step_function.hpp"

namespace crate {

enum class Estimator { GFormula, IptwIpcw, AiptwIpcw, IptwAipcw, AiptwAipcw };

/// CLI spelling: "g-formula", "iptw-ipcw", "aiptw-ipcw", "iptw-aipcw", "aiptw-aipcw".
std::string_view estimator_name(Estimator estimator);
std::optional<Estimator> parse_estimator(std::string_view name);
std::vector<Estimator> all_estimators();

enum class VarianceVariant { Tilde, PartialPhi };

std::string_view variance_name(VarianceVariant variant);

struct AteOptions {
  RiskMode mode = RiskMode::ProductLimit;
  /// Product-limit steps whose hazard increments exceed 1 (extreme linear
  /// predictors) end the predicted curve instead of failing the estimate.
  ExtremeHazard extreme = ExtremeHazard::Cap;
  std::optional<Truncation> truncation;
  double eps_G = 1e-6;
  double eps_S = 1e-6;
  /// Variance of the AIPTW-type estimators. G-formula and IPTW-type
  /// estimators always include their treatment/outcome model terms.
  VarianceVariant variance = VarianceVariant::Tilde;
  bool stabilized = false;  // Hajek normalisation of IPTW-type arm risks
  double level = 0.95;
  CoxOptions cox;
  LogisticOptions logistic;
};

// ---------------------------------------------------------------------------
// Nuisance models

struct NuisanceRequest {
  bool outcome = false;
  bool treatment = false;
  bool censoring = false;
};

/// Models needed by a set of estimators: the G-formula only needs the
/// outcome models, IPTW,IPCW only treatment and censoring.
NuisanceRequest requirements(std::span<const Estimator> estimators);

/// Newton iterations per fitted model; -1 when the model was not fitted.
struct ModelIterations {
  int cause1 = -1;
  int cause2 = -1;
  int censoring = -1;
  int treatment = -1;
};

struct NuisanceModels {
  FormulaSpec formulas;
  std::optional<CauseSpecificModel> outcome;
  std::optional<LogisticFit> treatment;
  std::optional<ArmedCoxModel> censoring;
  std::vector<std::string> warnings;

  ModelIterations iterations() const;
};

/// Fits the requested models. Failures are rethrown naming the model.
NuisanceModels fit_nuisance_models(const Dataset& data, const FormulaSpec& formulas, NuisanceRequest request,
                                   const AteOptions& options = {});

// ---------------------------------------------------------------------------
// Censoring quantities for one subject

/// Product-limit survival prod(1 - dLambda) of a cumulative hazard.
StepFunction censoring_survival(const StepFunction& cumhaz);

/// 1[T <= tau, event] / G(T-), or 0. Throws PositivityError when the
/// evaluated G is <= eps_G.
double ipcw_weight(const ObservedSample& sample, const StepFunction& G, double tau, double eps_G = 1e-6,
                   std::size_t subject = 0);

/// N^C(t) - integral over [0, t] of Y^C(s) dLambda^C(s). A subject whose
/// event coincides with a censoring jump is no longer at risk for censoring
/// at that time.
double censoring_martingale(const ObservedSample& sample, const StepFunction& cumhaz, double t);

/// dM^C(s) / G(s) at each censoring jump s <= min(T, tau), ascending; the
/// subject's own censoring time is always included when it is <= tau.
std::vector<MartingaleIncrement> martingale_increments(const ObservedSample& sample, const StepFunction& cumhaz,
                                                       const StepFunction& G, double tau, double eps_G = 1e-6,
                                                       std::size_t subject = 0);

/// sum over increments of (F1(tau) - F1(s)) / S(s) * dM^C(s) / G(s).
double augmentation_term(std::span<const MartingaleIncrement> increments, const RiskCurve& curve, double tau,
                         double eps_S = 1e-6, std::size_t subject = 0);

// ---------------------------------------------------------------------------
// Bundle

struct BundleDiagnostics {
  double min_G = std::numeric_limits<double>::quiet_NaN();   // min_i G(min(T_i, tau)- | A_i, X_i)
  double min_pi = std::numeric_limits<double>::quiet_NaN();  // min_i min(pi_i, 1 - pi_i)
  double max_weight = std::numeric_limits<double>::quiet_NaN();
};

/// Per-subject nuisance quantities at horizon tau. Vectors are empty when
/// the model they depend on was not fitted.
struct NuisanceBundle {
  double tau = 0.0;
  std::array<std::vector<double>, 2> risk;  // F1(tau | a, X_i)
  std::vector<double> propensity;           // pi(X_i) after truncation
  std::vector<char> truncated;              // propensity hit a truncation bound
  std::vector<double> ipcw;                 // ipcw_weight of subject i
  std::vector<double> augmentation;         // I_i
  std::vector<std::vector<MartingaleIncrement>> increments;
  BundleDiagnostics diagnostics;

  bool has_outcome() const { return !risk[0].empty(); }
  bool has_treatment() const { return !propensity.empty(); }
  bool has_censoring() const { return !ipcw.empty(); }
};

NuisanceBundle build_bundle(const Dataset& data, const NuisanceModels& models, double tau,
                            const AteOptions& options = {});

// ---------------------------------------------------------------------------
// Estimators

struct EstimateDiagnostics {
  ModelIterations iterations;
  double positivity_min_G = std::numeric_limits<double>::quiet_NaN();
  double min_pi = std::numeric_limits<double>::quiet_NaN();
  double max_weight = std::numeric_limits<double>::quiet_NaN();
};

struct AteEstimate {
  Estimator estimator = Estimator::GFormula;
  double tau = 0.0;
  std::size_t n = 0;
  double risk1 = 0.0;
  double risk0 = 0.0;
  double ate = 0.0;
  /// Influence values (estimate - truth ~ mean of values) of the ATE and of
  /// each arm risk.
  Eigen::VectorXd if_values;
  Eigen::VectorXd if1;
  Eigen::VectorXd if0;
  std::string variance = "tilde";
  double se = std::numeric_limits<double>::quiet_NaN();
  double ci_lower = std::numeric_limits<double>::quiet_NaN();
  double ci_upper = std::numeric_limits<double>::quiet_NaN();
  double se1 = std::numeric_limits<double>::quiet_NaN();
  double se0 = std::numeric_limits<double>::quiet_NaN();
  EstimateDiagnostics diagnostics;
};

/// Point estimates with the plug-in ("tilde") influence values; the
/// standard errors are filled from those values.
AteEstimate gformula(const NuisanceBundle& bundle);
AteEstimate iptw_ipcw(const NuisanceBundle& bundle, const Dataset& data, bool stabilized = false);
AteEstimate aiptw_ipcw(const NuisanceBundle& bundle, const Dataset& data);
AteEstimate iptw_aipcw(const NuisanceBundle& bundle, const Dataset& data, bool stabilized = false);
AteEstimate aiptw_aipcw(const NuisanceBundle& bundle, const Dataset& data);
AteEstimate compute_estimator(Estimator estimator, const NuisanceBundle& bundle, const Dataset& data,
                              bool stabilized = false);

/// Estimates at horizon `tau` from already fitted models, with standard
/// errors.
std::vector<AteEstimate> estimate_with_models(const Dataset& data, const NuisanceModels& models, double tau,
                                              std::span<const Estimator> estimators, const AteOptions& options = {});

/// Fits the nuisance models needed by `estimators`, builds the bundle and
/// returns one estimate per requested estimator with standard errors.
std::vector<AteEstimate> estimate_ate(const Dataset& data, const FormulaSpec& formulas, double tau,
                                      std::span<const Estimator> estimators, const AteOptions& options = {});

}  // namespace crate
