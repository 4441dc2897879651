#pragma once

#include <array>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "crate/coxph.hpp"
#include "crate/dataset.hpp"
#include "crate/step_function.hpp"

namespace crate {

/// How cause-specific hazard increments are composed into event-free
/// survival. Product-limit conserves mass exactly (F1 + F2 + S = 1);
/// exponential uses S = exp(-Lambda1 - Lambda2).
enum class RiskMode { ProductLimit, Exponential };

/// What product-limit composition does when the hazard increments at one
/// time sum to more than 1: fail, or end the curve there by splitting the
/// remaining mass between the causes in proportion to their increments.
enum class ExtremeHazard { Fail, Cap };

/// Absolute risks of both causes and event-free survival on a shared grid.
struct RiskCurve {
  StepFunction F1;
  StepFunction F2;
  StepFunction S;
};

RiskCurve compose_risk(const StepFunction& cumhaz1, const StepFunction& cumhaz2,
                       RiskMode mode = RiskMode::ProductLimit, ExtremeHazard extreme = ExtremeHazard::Fail);

/// Cox models for both causes plus the design builders that map a covariate
/// vector onto each model's design row.
struct CauseSpecificModel {
  ArmedCoxModel cause1;
  ArmedCoxModel cause2;
  DesignBuilder design1;
  DesignBuilder design2;
};

CauseSpecificModel fit_cause_specific(const Dataset& data, const FormulaSpec& formulas,
                                      const CoxOptions& options = {});

/// Influence objects for both causes, indexed by model slot.
struct CauseSpecificInfluence {
  std::array<CoxInfluence, 2> cause1;
  std::array<CoxInfluence, 2> cause2;
};

CauseSpecificInfluence cause_specific_influence(const CauseSpecificModel& model, const Dataset& data,
                                                const FormulaSpec& formulas);

/// Linear functionals of the four possible baseline hazards, [cause][slot].
struct RiskSensitivity {
  std::array<std::array<HazardFunctional, 2>, 2> functionals;
};

/// Censoring-martingale increment dM(t)/G(t) used by the augmentation term.
struct MartingaleIncrement {
  double time = 0.0;
  double weight = 0.0;
};

/// Predictions from a CauseSpecificModel on per-arm merged jump grids.
class RiskPredictor {
 public:
  RiskPredictor(const CauseSpecificModel& model, RiskMode mode = RiskMode::ProductLimit,
                ExtremeHazard extreme = ExtremeHazard::Fail);

  RiskMode mode() const { return mode_; }
  ExtremeHazard extreme() const { return extreme_; }

  /// Risk curve for treatment `arm` and raw covariates (dataset layout),
  /// truncated at `horizon`.
  RiskCurve curve(int arm, std::span<const double> covariates,
                  double horizon = std::numeric_limits<double>::infinity()) const;
  double risk(int arm, std::span<const double> covariates, double t) const;

  /// Empty functionals sized to the model's baseline jumps.
  RiskSensitivity empty_sensitivity() const;

  /// Adds `weight` times the derivative of F1(horizon | arm, x) with respect
  /// to the baseline hazards and coefficients. When `integrator` is given,
  /// also adds `integrator_weight` times the derivative of
  ///   sum_l k_l (F1(horizon) - F1(t_l)) / S(t_l)
  /// (the augmentation integral) with S held fixed.
  void accumulate(RiskSensitivity& acc, int arm, std::span<const double> covariates, double horizon,
                  double weight, std::span<const MartingaleIncrement> integrator = {},
                  double integrator_weight = 0.0) const;

 private:
  struct ArmGrid {
    std::vector<double> times;
    std::vector<double> dlambda01;
    std::vector<double> dlambda02;
    std::vector<std::ptrdiff_t> jump1;
    std::vector<std::ptrdiff_t> jump2;
  };
  struct Evaluated {
    std::size_t count = 0;  // grid points <= horizon
    std::vector<double> d1, d2, s_after, f1_after, f2_after;
    double lp1 = 0.0, lp2 = 0.0;
  };
  Evaluated evaluate(int arm, const Eigen::RowVectorXd& x1, const Eigen::RowVectorXd& x2, double horizon) const;

  CauseSpecificModel model_;
  RiskMode mode_;
  ExtremeHazard extreme_;
  std::array<ArmGrid, 2> grids_;
};

RiskCurve absolute_risk(const CauseSpecificModel& model, int arm, std::span<const double> covariates,
                        RiskMode mode = RiskMode::ProductLimit);

/// Per-subject influence function (full-sample scale) of F1(t | arm, x).
Eigen::VectorXd risk_influence(const CauseSpecificModel& model, const CauseSpecificInfluence& influence, int arm,
                               std::span<const double> covariates, double t,
                               RiskMode mode = RiskMode::ProductLimit);

/// Applies accumulated functionals to the Cox influence functions.
Eigen::VectorXd apply_sensitivity(const RiskSensitivity& sensitivity, const CauseSpecificInfluence& influence);

/// Nonparametric cumulative incidence (product-limit of Nelson-Aalen
/// increments), optionally restricted to one treatment arm.
RiskCurve aalen_johansen(const Dataset& data, std::optional<int> arm = std::nullopt);

}  // namespace crate
