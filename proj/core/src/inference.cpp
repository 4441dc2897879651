#include "crate/inference.hpp"

#include <cmath>

#include <boost/math/distributions/normal.hpp>

#include "crate/error.hpp"

namespace crate {

WaldInterval wald_ci(double estimate, const Eigen::VectorXd& if_values, double level) {
  if (!(level > 0.0 && level < 1.0)) throw ValidationError("confidence level must lie in (0, 1)");
  const auto n = static_cast<double>(if_values.size());
  WaldInterval w;
  w.se = n > 0 ? std::sqrt(if_values.squaredNorm()) / n : 0.0;
  const double z = boost::math::quantile(boost::math::normal(), 0.5 + level / 2.0);
  w.lower = estimate - z * w.se;
  w.upper = estimate + z * w.se;
  return w;
}

InfluenceVector if_tilde_aiptw(const NuisanceBundle& bundle, const Dataset& data, const AteEstimate& estimate) {
  if (!bundle.has_outcome() || !bundle.has_treatment() || !bundle.has_censoring()) {
    throw ValidationError("AIPTW influence values need outcome, treatment and censoring models");
  }
  const std::size_t n = data.size();
  InfluenceVector out;
  out.variant = "tilde";
  out.estimator = Estimator::AiptwAipcw;
  out.values.resize(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = data[i];
    const double pi = bundle.propensity[i];
    const double contrast = s.treatment == 1 ? 1.0 / pi : -1.0 / (1.0 - pi);
    const double f_obs = bundle.risk[static_cast<std::size_t>(s.treatment)][i];
    const double bracket = bundle.ipcw[i] * s.outcome(bundle.tau) - f_obs + bundle.augmentation[i];
    out.values(static_cast<Eigen::Index>(i)) = bundle.risk[1][i] - bundle.risk[0][i] - estimate.ate + contrast * bracket;
  }
  return out;
}

Eigen::VectorXd gformula_phi(const RiskPredictor& predictor, const CauseSpecificInfluence& influence,
                             const Dataset& data, int arm, double tau) {
  RiskSensitivity acc = predictor.empty_sensitivity();
  const double w = 1.0 / static_cast<double>(data.size());
  for (const auto& s : data.samples()) predictor.accumulate(acc, arm, s.covariates, tau, w);
  return apply_sensitivity(acc, influence);
}

// ---------------------------------------------------------------------------

InferenceContext::InferenceContext(const Dataset& data, const NuisanceModels& models, const NuisanceBundle& bundle,
                                   const AteOptions& options)
    : data_(data), models_(models), bundle_(bundle), options_(options) {}

const CauseSpecificInfluence& InferenceContext::outcome_influence() {
  if (!influence_) {
    if (!models_.outcome) throw ValidationError("outcome model required for its influence function");
    influence_ = cause_specific_influence(*models_.outcome, data_, models_.formulas);
  }
  return *influence_;
}

const RiskPredictor& InferenceContext::predictor() {
  if (!predictor_) {
    if (!models_.outcome) throw ValidationError("outcome model required for risk predictions");
    predictor_.emplace(*models_.outcome, options_.mode, options_.extreme);
  }
  return *predictor_;
}

const Eigen::MatrixXd& InferenceContext::logistic_if() {
  if (!logistic_if_) {
    const DesignMatrix design = design_matrix(data_, models_.formulas, NuisanceModel::Treatment);
    std::vector<int> a(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i) a[i] = data_[i].treatment;
    treatment_design_ = with_intercept(design.values);
    logistic_if_ = logistic_influence(*models_.treatment, design.values, a) * static_cast<double>(data_.size());
  }
  return *logistic_if_;
}

Eigen::VectorXd InferenceContext::treatment_phi(int arm, const Eigen::VectorXd& residual, double centre,
                                                bool normalised) {
  const std::size_t n = data_.size();
  if (!models_.treatment) return Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  const Eigen::MatrixXd& infl = logistic_if();
  const Eigen::MatrixXd& X = *treatment_design_;
  Eigen::VectorXd gradient = Eigen::VectorXd::Zero(X.cols());
  double q_sum = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    if (data_[j].treatment != arm) continue;
    const double pi = bundle_.propensity[j];
    const double q = arm == 1 ? 1.0 / pi : 1.0 / (1.0 - pi);
    q_sum += q;
    if (!bundle_.truncated.empty() && bundle_.truncated[j]) continue;
    // d q / d gamma = -q (1 - pi) x for the treated arm, q pi x for controls
    const double dq = arm == 1 ? -q * (1.0 - pi) : q * pi;
    gradient += (residual(static_cast<Eigen::Index>(j)) - centre) * dq * X.row(static_cast<Eigen::Index>(j)).transpose();
  }
  gradient /= static_cast<double>(n);
  if (normalised) gradient /= q_sum / static_cast<double>(n);
  return infl * gradient;
}

InfluenceVector InferenceContext::if_gformula(const AteEstimate& estimate) {
  const auto& infl = outcome_influence();
  const auto& pred = predictor();
  InfluenceVector out;
  out.estimator = Estimator::GFormula;
  out.variant = "tilde+phi";
  out.values = estimate.if_values + gformula_phi(pred, infl, data_, 1, estimate.tau) -
               gformula_phi(pred, infl, data_, 0, estimate.tau);
  return out;
}

namespace {

Eigen::VectorXd observed_weighted_outcome(const NuisanceBundle& bundle, const Dataset& data, bool augmented) {
  Eigen::VectorXd z(static_cast<Eigen::Index>(data.size()));
  for (std::size_t i = 0; i < data.size(); ++i) {
    z(static_cast<Eigen::Index>(i)) =
        bundle.ipcw[i] * data[i].outcome(bundle.tau) + (augmented ? bundle.augmentation[i] : 0.0);
  }
  return z;
}

}  // namespace

InfluenceVector InferenceContext::if_iptw_ipcw(const AteEstimate& estimate) {
  const bool augmented = estimate.estimator == Estimator::IptwAipcw;
  const Eigen::VectorXd z = observed_weighted_outcome(bundle_, data_, augmented);
  const bool stab = options_.stabilized;
  InfluenceVector out;
  out.estimator = estimate.estimator;
  out.variant = "tilde+treatment";
  out.values = estimate.if_values + treatment_phi(1, z, stab ? estimate.risk1 : 0.0, stab) -
               treatment_phi(0, z, stab ? estimate.risk0 : 0.0, stab);
  return out;
}

std::array<Eigen::VectorXd, 2> InferenceContext::aiptw_partial_phi(const AteEstimate& estimate) {
  const bool augmented = estimate.estimator == Estimator::AiptwAipcw;
  const Eigen::VectorXd z = observed_weighted_outcome(bundle_, data_, augmented);
  const std::size_t n = data_.size();
  const double inv_n = 1.0 / static_cast<double>(n);
  const auto& infl = outcome_influence();
  const auto& pred = predictor();
  std::array<Eigen::VectorXd, 2> phi;
  for (int arm = 0; arm < 2; ++arm) {
    const auto& f = bundle_.risk[static_cast<std::size_t>(arm)];
    Eigen::VectorXd residual(static_cast<Eigen::Index>(n));
    RiskSensitivity acc = pred.empty_sensitivity();
    for (std::size_t j = 0; j < n; ++j) {
      const auto& s = data_[j];
      residual(static_cast<Eigen::Index>(j)) = z(static_cast<Eigen::Index>(j)) - f[j];
      double q = 0.0;
      if (s.treatment == arm) q = arm == 1 ? 1.0 / bundle_.propensity[j] : 1.0 / (1.0 - bundle_.propensity[j]);
      if (augmented && q != 0.0) {
        pred.accumulate(acc, arm, s.covariates, bundle_.tau, (1.0 - q) * inv_n, bundle_.increments[j], q * inv_n);
      } else {
        pred.accumulate(acc, arm, s.covariates, bundle_.tau, (1.0 - q) * inv_n);
      }
    }
    phi[static_cast<std::size_t>(arm)] = apply_sensitivity(acc, infl) + treatment_phi(arm, residual, 0.0, false);
  }
  return phi;
}

InfluenceVector InferenceContext::if_aiptw_partial(const AteEstimate& estimate) {
  const auto phi = aiptw_partial_phi(estimate);
  InfluenceVector out;
  out.estimator = estimate.estimator;
  out.variant = "partial-phi";
  out.values = estimate.if_values + phi[1] - phi[0];
  return out;
}

void InferenceContext::attach(AteEstimate& e, std::optional<VarianceVariant> variant) {
  std::array<Eigen::VectorXd, 2> arm_phi;
  switch (e.estimator) {
    case Estimator::GFormula: {
      const auto& infl = outcome_influence();
      const auto& pred = predictor();
      for (int a = 0; a < 2; ++a) arm_phi[static_cast<std::size_t>(a)] = gformula_phi(pred, infl, data_, a, e.tau);
      e.variance = "tilde+phi";
      break;
    }
    case Estimator::IptwIpcw:
    case Estimator::IptwAipcw: {
      const bool augmented = e.estimator == Estimator::IptwAipcw;
      const Eigen::VectorXd z = observed_weighted_outcome(bundle_, data_, augmented);
      const bool stab = options_.stabilized;
      arm_phi[1] = treatment_phi(1, z, stab ? e.risk1 : 0.0, stab);
      arm_phi[0] = treatment_phi(0, z, stab ? e.risk0 : 0.0, stab);
      e.variance = "tilde+treatment";
      break;
    }
    case Estimator::AiptwIpcw:
    case Estimator::AiptwAipcw: {
      if (variant.value_or(options_.variance) == VarianceVariant::Tilde) {
        e.variance = "tilde";
        break;
      }
      arm_phi = aiptw_partial_phi(e);
      e.variance = "partial-phi";
      break;
    }
  }
  if (arm_phi[0].size() > 0) {
    e.if1 += arm_phi[1];
    e.if0 += arm_phi[0];
    e.if_values = e.if1 - e.if0;
  }
  const WaldInterval w = wald_ci(e.ate, e.if_values, options_.level);
  e.se = w.se;
  e.ci_lower = w.lower;
  e.ci_upper = w.upper;
  e.se1 = wald_ci(e.risk1, e.if1, options_.level).se;
  e.se0 = wald_ci(e.risk0, e.if0, options_.level).se;
}

}  // namespace crate
