#include "crate/ate.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "crate/error.hpp"
#include "crate/inference.hpp"

namespace crate {

namespace {

constexpr std::array<std::string_view, 5> kNames{"g-formula", "iptw-ipcw", "aiptw-ipcw", "iptw-aipcw", "aiptw-aipcw"};

std::string subject_label(std::size_t subject) { return "subject " + std::to_string(subject + 1); }

void require(bool ok, Estimator e, const char* what) {
  if (!ok) throw ValidationError(std::string(estimator_name(e)) + " needs the " + what + " model");
}

// 1[A_i = arm] / P(A = arm | X_i)
Eigen::VectorXd treatment_weights(const NuisanceBundle& bundle, const Dataset& data, int arm) {
  const std::size_t n = data.size();
  Eigen::VectorXd q(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const double pa = arm == 1 ? bundle.propensity[i] : 1.0 - bundle.propensity[i];
    q(static_cast<Eigen::Index>(i)) = data[i].treatment == arm ? 1.0 / pa : 0.0;
  }
  return q;
}

// w_i Y_i(tau)
Eigen::VectorXd weighted_outcome(const NuisanceBundle& bundle, const Dataset& data) {
  Eigen::VectorXd z(static_cast<Eigen::Index>(data.size()));
  for (std::size_t i = 0; i < data.size(); ++i) {
    z(static_cast<Eigen::Index>(i)) = bundle.ipcw[i] * data[i].outcome(bundle.tau);
  }
  return z;
}

Eigen::VectorXd as_vector(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

AteEstimate finish(Estimator e, double tau, const Eigen::VectorXd& h1, const Eigen::VectorXd& h0) {
  AteEstimate out;
  out.estimator = e;
  out.tau = tau;
  out.n = static_cast<std::size_t>(h1.size());
  out.risk1 = h1.mean();
  out.risk0 = h0.mean();
  out.ate = out.risk1 - out.risk0;
  out.if1 = h1.array() - out.risk1;
  out.if0 = h0.array() - out.risk0;
  out.if_values = out.if1 - out.if0;
  return out;
}

void fill_intervals(AteEstimate& e, double level) {
  const WaldInterval w = wald_ci(e.ate, e.if_values, level);
  e.se = w.se;
  e.ci_lower = w.lower;
  e.ci_upper = w.upper;
  e.se1 = wald_ci(e.risk1, e.if1, level).se;
  e.se0 = wald_ci(e.risk0, e.if0, level).se;
}

AteEstimate weighted_estimator(Estimator e, const NuisanceBundle& bundle, const Dataset& data, const Eigen::VectorXd& z,
                               bool stabilized) {
  std::array<Eigen::VectorXd, 2> h;
  std::array<double, 2> risk{};
  std::array<Eigen::VectorXd, 2> infl;
  for (int arm = 0; arm < 2; ++arm) {
    const Eigen::VectorXd q = treatment_weights(bundle, data, arm);
    const auto a = static_cast<std::size_t>(arm);
    if (stabilized) {
      risk[a] = q.dot(z) / q.sum();
      infl[a] = q.cwiseProduct((z.array() - risk[a]).matrix()) / q.mean();
    } else {
      h[a] = q.cwiseProduct(z);
    }
  }
  if (!stabilized) return finish(e, bundle.tau, h[1], h[0]);
  AteEstimate out;
  out.estimator = e;
  out.tau = bundle.tau;
  out.n = data.size();
  out.risk1 = risk[1];
  out.risk0 = risk[0];
  out.ate = risk[1] - risk[0];
  out.if1 = infl[1];
  out.if0 = infl[0];
  out.if_values = out.if1 - out.if0;
  return out;
}

AteEstimate augmented_estimator(Estimator e, const NuisanceBundle& bundle, const Dataset& data,
                                const Eigen::VectorXd& z) {
  std::array<Eigen::VectorXd, 2> h;
  for (int arm = 0; arm < 2; ++arm) {
    const auto a = static_cast<std::size_t>(arm);
    const Eigen::VectorXd q = treatment_weights(bundle, data, arm);
    const Eigen::VectorXd f = as_vector(bundle.risk[a]);
    h[a] = f + q.cwiseProduct(z - f);
  }
  return finish(e, bundle.tau, h[1], h[0]);
}

}  // namespace

std::string_view estimator_name(Estimator estimator) { return kNames[static_cast<std::size_t>(estimator)]; }

std::optional<Estimator> parse_estimator(std::string_view name) {
  for (std::size_t k = 0; k < kNames.size(); ++k) {
    if (kNames[k] == name) return static_cast<Estimator>(k);
  }
  return std::nullopt;
}

std::vector<Estimator> all_estimators() {
  return {Estimator::GFormula, Estimator::IptwIpcw, Estimator::AiptwIpcw, Estimator::IptwAipcw,
          Estimator::AiptwAipcw};
}

std::string_view variance_name(VarianceVariant variant) {
  return variant == VarianceVariant::Tilde ? "tilde" : "partial-phi";
}

NuisanceRequest requirements(std::span<const Estimator> estimators) {
  NuisanceRequest r;
  for (Estimator e : estimators) {
    switch (e) {
      case Estimator::GFormula:
        r.outcome = true;
        break;
      case Estimator::IptwIpcw:
        r.treatment = r.censoring = true;
        break;
      default:
        r.outcome = r.treatment = r.censoring = true;
    }
  }
  return r;
}

ModelIterations NuisanceModels::iterations() const {
  ModelIterations it;
  if (outcome) {
    it.cause1 = outcome->cause1.iterations();
    it.cause2 = outcome->cause2.iterations();
  }
  if (censoring) it.censoring = censoring->iterations();
  if (treatment) it.treatment = treatment->iterations;
  return it;
}

NuisanceModels fit_nuisance_models(const Dataset& data, const FormulaSpec& formulas, NuisanceRequest request,
                                   const AteOptions& options) {
  NuisanceModels models;
  models.formulas = formulas;
  auto named = [](const char* model, auto&& fit) {
    try {
      return fit();
    } catch (const ConvergenceError& e) {
      throw ConvergenceError(std::string(model) + ": " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError(std::string(model) + ": " + e.what());
    }
  };
  auto check_cox = [](const char* model, const ArmedCoxModel& m) {
    if (!m.converged()) {
      throw ConvergenceError(std::string(model) + ": Newton-Raphson did not converge in " +
                             std::to_string(m.iterations()) + " iterations");
    }
  };
  auto note_constant = [&](const char* model, const DesignMatrix& design) {
    for (const auto& w : design.warnings) models.warnings.push_back(std::string(model) + ": " + w);
  };

  if (request.outcome) {
    auto c1 = named("cause-1 outcome model", [&] {
      return fit_armed_cox(data, formulas.cause1, kCauseOfInterest, options.cox);
    });
    check_cox("cause-1 outcome model", c1);
    auto c2 = named("cause-2 outcome model", [&] {
      return fit_armed_cox(data, formulas.cause2, kCompetingCause, options.cox);
    });
    check_cox("cause-2 outcome model", c2);
    models.outcome = CauseSpecificModel{std::move(c1), std::move(c2),
                                        DesignBuilder(data, formulas.cause1, !formulas.cause1.by_arm),
                                        DesignBuilder(data, formulas.cause2, !formulas.cause2.by_arm)};
    if (!formulas.cause1.by_arm) note_constant("cause-1 outcome model", design_matrix(data, formulas, NuisanceModel::Cause1));
  }
  if (request.treatment) {
    const DesignMatrix design = design_matrix(data, formulas, NuisanceModel::Treatment);
    note_constant("treatment model", design);
    std::vector<int> a(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) a[i] = data[i].treatment;
    models.treatment = named("treatment model", [&] { return fit_logistic(design.values, a, {}, options.logistic); });
    if (!models.treatment->converged) {
      throw ConvergenceError("treatment model: Newton-Raphson did not converge in " +
                             std::to_string(models.treatment->iterations) + " iterations");
    }
  }
  if (request.censoring) {
    models.censoring = named("censoring model", [&] {
      return fit_armed_cox(data, formulas.censoring, kCensored, options.cox);
    });
    check_cox("censoring model", *models.censoring);
  }
  return models;
}

// ---------------------------------------------------------------------------

StepFunction censoring_survival(const StepFunction& cumhaz) {
  std::vector<double> values(cumhaz.size());
  double g = 1.0;
  for (std::size_t k = 0; k < values.size(); ++k) {
    g *= std::max(0.0, 1.0 - cumhaz.increment(k));
    values[k] = g;
  }
  const auto jt = cumhaz.jump_times();
  return StepFunction::from_values(std::vector<double>(jt.begin(), jt.end()), std::move(values), 1.0);
}

double ipcw_weight(const ObservedSample& sample, const StepFunction& G, double tau, double eps_G, std::size_t subject) {
  if (!(sample.time <= tau) || sample.event == kCensored) return 0.0;
  const double g = G.left_value(sample.time);
  if (!(g > eps_G)) {
    throw PositivityError(subject_label(subject) + ": censoring survival G(T-)=" + std::to_string(g) +
                          " at T=" + std::to_string(sample.time) + " is below the positivity bound");
  }
  return 1.0 / g;
}

double censoring_martingale(const ObservedSample& sample, const StepFunction& cumhaz, double t) {
  const bool censored = sample.event == kCensored;
  const double counting = censored && sample.time <= t ? 1.0 : 0.0;
  double compensator = 0.0;
  if (t < sample.time) {
    compensator = cumhaz.value(t);
  } else {
    compensator = censored ? cumhaz.value(sample.time) : cumhaz.left_value(sample.time);
  }
  return counting - compensator;
}

std::vector<MartingaleIncrement> martingale_increments(const ObservedSample& sample, const StepFunction& cumhaz,
                                                       const StepFunction& G, double tau, double eps_G,
                                                       std::size_t subject) {
  const bool censored = sample.event == kCensored;
  const double horizon = std::min(sample.time, tau);
  const bool own = censored && sample.time <= tau;
  std::vector<MartingaleIncrement> out;
  const auto jt = cumhaz.jump_times();
  bool own_done = false;
  auto add = [&](double s, double dm) {
    const double g = G.value(s);
    if (!(g > eps_G)) {
      throw PositivityError(subject_label(subject) + ": censoring survival G=" + std::to_string(g) +
                            " at t=" + std::to_string(s) + " is below the positivity bound");
    }
    out.push_back({s, dm / g});
  };
  for (std::size_t k = 0; k < jt.size() && jt[k] <= horizon; ++k) {
    const double s = jt[k];
    if (s == sample.time && !censored) break;  // failed subjects leave before censorings at ties
    double dm = -cumhaz.increment(k);
    if (own && s == sample.time) {
      dm += 1.0;
      own_done = true;
    }
    add(s, dm);
  }
  if (own && !own_done) add(sample.time, 1.0);
  return out;
}

double augmentation_term(std::span<const MartingaleIncrement> increments, const RiskCurve& curve, double tau,
                         double eps_S, std::size_t subject) {
  const double f_tau = curve.F1.value(tau);
  double total = 0.0;
  for (const auto& inc : increments) {
    const double s = curve.S.value(inc.time);
    if (!(s > eps_S)) {
      throw PositivityError(subject_label(subject) + ": event-free survival S=" + std::to_string(s) +
                            " at t=" + std::to_string(inc.time) + " is below the positivity bound");
    }
    total += (f_tau - curve.F1.value(inc.time)) / s * inc.weight;
  }
  return total;
}

NuisanceBundle build_bundle(const Dataset& data, const NuisanceModels& models, double tau, const AteOptions& options) {
  const TauFeasibility feasible = tau_feasibility(data, tau);
  if (!feasible.feasible) throw ValidationError("tau=" + std::to_string(tau) + ": " + feasible.message);

  const std::size_t n = data.size();
  NuisanceBundle b;
  b.tau = tau;
  std::optional<RiskPredictor> predictor;
  if (models.outcome) {
    predictor.emplace(*models.outcome, options.mode, options.extreme);
    for (int arm = 0; arm < 2; ++arm) {
      auto& r = b.risk[static_cast<std::size_t>(arm)];
      r.resize(n);
      for (std::size_t i = 0; i < n; ++i) r[i] = predictor->risk(arm, data[i].covariates, tau);
    }
  }

  if (models.treatment) {
    const DesignMatrix design = design_matrix(data, models.formulas, NuisanceModel::Treatment);
    const Eigen::VectorXd raw = predict_propensity(*models.treatment, design.values);
    b.propensity.resize(n);
    b.truncated.assign(n, 0);
    double min_pi = 1.0;
    for (std::size_t i = 0; i < n; ++i) {
      double p = raw(static_cast<Eigen::Index>(i));
      if (options.truncation) {
        const double clamped = std::clamp(p, options.truncation->lo, options.truncation->hi);
        b.truncated[i] = clamped != p ? 1 : 0;
        p = clamped;
      }
      if (!(p > 0.0 && p < 1.0)) {
        throw PositivityError(subject_label(i) + ": propensity " + std::to_string(p) + " outside (0, 1)");
      }
      b.propensity[i] = p;
      min_pi = std::min({min_pi, p, 1.0 - p});
    }
    b.diagnostics.min_pi = min_pi;
  }

  if (models.censoring) {
    const ArmedCoxModel& cens = *models.censoring;
    const DesignBuilder builder(data, models.formulas.censoring, !models.formulas.censoring.by_arm);
    b.ipcw.resize(n);
    b.increments.resize(n);
    if (predictor) b.augmentation.resize(n);
    double min_g = 1.0;
    for (std::size_t i = 0; i < n; ++i) {
      const ObservedSample& s = data[i];
      const CoxFit& fit = cens.fit(s.treatment);
      const double lp = fit.coefficients.size() > 0 ? builder.row(s).dot(fit.coefficients) : 0.0;
      const double horizon = std::min(s.time, tau);
      const StepFunction cumhaz = fit.baseline.truncated(horizon).scaled(std::exp(lp));
      const StepFunction G = censoring_survival(cumhaz);
      min_g = std::min(min_g, G.left_value(horizon));
      b.ipcw[i] = ipcw_weight(s, G, tau, options.eps_G, i);
      b.increments[i] = martingale_increments(s, cumhaz, G, tau, options.eps_G, i);
      if (predictor) {
        const RiskCurve curve = predictor->curve(s.treatment, s.covariates, tau);
        b.augmentation[i] = augmentation_term(b.increments[i], curve, tau, options.eps_S, i);
      }
    }
    b.diagnostics.min_G = min_g;
  }

  if (b.has_treatment() || b.has_censoring()) {
    double max_w = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double w = 1.0;
      if (b.has_treatment()) w /= data[i].treatment == 1 ? b.propensity[i] : 1.0 - b.propensity[i];
      if (b.has_censoring() && b.ipcw[i] > 0.0) w *= b.ipcw[i];
      max_w = std::max(max_w, w);
    }
    b.diagnostics.max_weight = max_w;
  }
  return b;
}

// ---------------------------------------------------------------------------

AteEstimate gformula(const NuisanceBundle& bundle) {
  require(bundle.has_outcome(), Estimator::GFormula, "outcome");
  AteEstimate e = finish(Estimator::GFormula, bundle.tau, as_vector(bundle.risk[1]), as_vector(bundle.risk[0]));
  fill_intervals(e, 0.95);
  return e;
}

AteEstimate iptw_ipcw(const NuisanceBundle& bundle, const Dataset& data, bool stabilized) {
  require(bundle.has_treatment(), Estimator::IptwIpcw, "treatment");
  require(bundle.has_censoring(), Estimator::IptwIpcw, "censoring");
  AteEstimate e = weighted_estimator(Estimator::IptwIpcw, bundle, data, weighted_outcome(bundle, data), stabilized);
  fill_intervals(e, 0.95);
  return e;
}

AteEstimate iptw_aipcw(const NuisanceBundle& bundle, const Dataset& data, bool stabilized) {
  require(bundle.has_treatment(), Estimator::IptwAipcw, "treatment");
  require(bundle.has_censoring() && bundle.has_outcome(), Estimator::IptwAipcw, "outcome and censoring");
  const Eigen::VectorXd z = weighted_outcome(bundle, data) + as_vector(bundle.augmentation);
  AteEstimate e = weighted_estimator(Estimator::IptwAipcw, bundle, data, z, stabilized);
  fill_intervals(e, 0.95);
  return e;
}

AteEstimate aiptw_ipcw(const NuisanceBundle& bundle, const Dataset& data) {
  require(bundle.has_treatment(), Estimator::AiptwIpcw, "treatment");
  require(bundle.has_outcome(), Estimator::AiptwIpcw, "outcome");
  require(bundle.has_censoring(), Estimator::AiptwIpcw, "censoring");
  AteEstimate e = augmented_estimator(Estimator::AiptwIpcw, bundle, data, weighted_outcome(bundle, data));
  fill_intervals(e, 0.95);
  return e;
}

AteEstimate aiptw_aipcw(const NuisanceBundle& bundle, const Dataset& data) {
  require(bundle.has_treatment(), Estimator::AiptwAipcw, "treatment");
  require(bundle.has_outcome(), Estimator::AiptwAipcw, "outcome");
  require(bundle.has_censoring(), Estimator::AiptwAipcw, "censoring");
  const Eigen::VectorXd z = weighted_outcome(bundle, data) + as_vector(bundle.augmentation);
  AteEstimate e = augmented_estimator(Estimator::AiptwAipcw, bundle, data, z);
  fill_intervals(e, 0.95);
  return e;
}

AteEstimate compute_estimator(Estimator estimator, const NuisanceBundle& bundle, const Dataset& data,
                              bool stabilized) {
  switch (estimator) {
    case Estimator::GFormula: return gformula(bundle);
    case Estimator::IptwIpcw: return iptw_ipcw(bundle, data, stabilized);
    case Estimator::AiptwIpcw: return aiptw_ipcw(bundle, data);
    case Estimator::IptwAipcw: return iptw_aipcw(bundle, data, stabilized);
    case Estimator::AiptwAipcw: return aiptw_aipcw(bundle, data);
  }
  throw ValidationError("unknown estimator");
}

std::vector<AteEstimate> estimate_ate(const Dataset& data, const FormulaSpec& formulas, double tau,
                                      std::span<const Estimator> estimators, const AteOptions& options) {
  if (estimators.empty()) throw ValidationError("no estimator requested");
  const TauFeasibility feasible = tau_feasibility(data, tau);
  if (!feasible.feasible) throw ValidationError("tau=" + std::to_string(tau) + ": " + feasible.message);

  const NuisanceModels models = fit_nuisance_models(data, formulas, requirements(estimators), options);
  return estimate_with_models(data, models, tau, estimators, options);
}

std::vector<AteEstimate> estimate_with_models(const Dataset& data, const NuisanceModels& models, double tau,
                                              std::span<const Estimator> estimators, const AteOptions& options) {
  const NuisanceBundle bundle = build_bundle(data, models, tau, options);
  InferenceContext inference(data, models, bundle, options);

  std::vector<AteEstimate> out;
  out.reserve(estimators.size());
  for (Estimator e : estimators) {
    AteEstimate est = compute_estimator(e, bundle, data, options.stabilized);
    inference.attach(est);
    est.diagnostics.iterations = models.iterations();
    est.diagnostics.positivity_min_G = bundle.diagnostics.min_G;
    est.diagnostics.min_pi = bundle.diagnostics.min_pi;
    est.diagnostics.max_weight = bundle.diagnostics.max_weight;
    out.push_back(std::move(est));
  }
  return out;
}

}  // namespace crate
