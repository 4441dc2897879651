#pragma once

#include <array>
#include <optional>
#include <string>

#include <Eigen/Dense>

#include "crate/ate.hpp"
#include "crate/dataset.hpp"
#include "crate/risk.hpp"

namespace crate {

struct InfluenceVector {
  Eigen::VectorXd values;
  std::string variant;
  Estimator estimator = Estimator::AiptwAipcw;
};

struct WaldInterval {
  double se = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

/// se = sqrt(sum IF^2) / n, CI = estimate -/+ z * se.
WaldInterval wald_ci(double estimate, const Eigen::VectorXd& if_values, double level = 0.95);

/// Plug-in influence values of the AIPTW,AIPCW estimator computed directly
/// from the bundle.
InfluenceVector if_tilde_aiptw(const NuisanceBundle& bundle, const Dataset& data, const AteEstimate& estimate);

/// mean_j IF of F1(tau | arm, X_j), for every subject.
Eigen::VectorXd gformula_phi(const RiskPredictor& predictor, const CauseSpecificInfluence& influence,
                             const Dataset& data, int arm, double tau);

/// Lazily computes the model-estimation terms needed to turn plug-in
/// influence values into the variants reported for each estimator.
class InferenceContext {
 public:
  InferenceContext(const Dataset& data, const NuisanceModels& models, const NuisanceBundle& bundle,
                   const AteOptions& options);

  /// Replaces if_values/if1/if0 and recomputes se and the interval.
  ///   G-formula:            plug-in + outcome-model term
  ///   IPTW,IPCW / IPTW,AIPCW: plug-in + treatment-model term
  ///   AIPTW types:          plug-in, or with partial-phi the outcome- and
  ///                         treatment-model terms as well
  void attach(AteEstimate& estimate, std::optional<VarianceVariant> variant = std::nullopt);

  InfluenceVector if_gformula(const AteEstimate& estimate);
  InfluenceVector if_iptw_ipcw(const AteEstimate& estimate);
  InfluenceVector if_aiptw_partial(const AteEstimate& estimate);

  /// Influence of the treatment model on mean_j q_a(X_j) r_j, with
  /// q_1 = A / pi, q_0 = (1 - A) / (1 - pi). `centre` is subtracted from r
  /// and the result divided by mean(q) when `normalised`.
  Eigen::VectorXd treatment_phi(int arm, const Eigen::VectorXd& residual, double centre, bool normalised);

 private:
  std::array<Eigen::VectorXd, 2> aiptw_partial_phi(const AteEstimate& estimate);
  const CauseSpecificInfluence& outcome_influence();
  const RiskPredictor& predictor();
  const Eigen::MatrixXd& logistic_if();

  const Dataset& data_;
  const NuisanceModels& models_;
  const NuisanceBundle& bundle_;
  AteOptions options_;
  std::optional<CauseSpecificInfluence> influence_;
  std::optional<RiskPredictor> predictor_;
  std::optional<Eigen::MatrixXd> treatment_design_;  // with intercept
  std::optional<Eigen::MatrixXd> logistic_if_;       // n x p, full-sample scale
};

}  // namespace crate
