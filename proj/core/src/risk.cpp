#include "crate/risk.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "crate/error.hpp"

namespace crate {

namespace {

struct Composition {
  std::vector<double> s_after, f1_after, f2_after;
};

// Composes hazard increments on a common grid into S, F1, F2 (values right
// after each grid point).
Composition compose(std::span<const double> times, std::span<const double> d1, std::span<const double> d2,
                    RiskMode mode, ExtremeHazard extreme) {
  Composition c;
  const std::size_t K = d1.size();
  c.s_after.resize(K);
  c.f1_after.resize(K);
  c.f2_after.resize(K);
  double s = 1.0, f1 = 0.0, f2 = 0.0, cum = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    const double factor = 1.0 - d1[k] - d2[k];
    if (mode == RiskMode::ProductLimit && factor < 0.0) {
      if (extreme == ExtremeHazard::Fail) {
        throw PositivityError("absolute risk: hazard increments exceed 1 at t=" + std::to_string(times[k]) +
                              " (extreme prediction); use exponential mode");
      }
      const double total = d1[k] + d2[k];
      f1 += s * d1[k] / total;
      f2 += s * d2[k] / total;
      s = 0.0;
    } else if (mode == RiskMode::ProductLimit) {
      f1 += s * d1[k];
      f2 += s * d2[k];
      s *= factor;
    } else {
      f1 += s * d1[k];
      f2 += s * d2[k];
      cum += d1[k] + d2[k];
      s = std::exp(-cum);
    }
    c.s_after[k] = s;
    c.f1_after[k] = f1;
    c.f2_after[k] = f2;
  }
  return c;
}

RiskCurve to_curve(const std::vector<double>& times, Composition c) {
  RiskCurve out;
  out.F1 = StepFunction::from_values(times, std::move(c.f1_after), 0.0);
  out.F2 = StepFunction::from_values(times, std::move(c.f2_after), 0.0);
  out.S = StepFunction::from_values(times, std::move(c.s_after), 1.0);
  return out;
}

std::vector<double> merge_times(std::span<const double> a, std::span<const double> b) {
  std::vector<double> out;
  out.reserve(a.size() + b.size());
  std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

// Increments of `f` placed on `grid` (which contains all jumps of f).
std::vector<double> increments_on(const StepFunction& f, const std::vector<double>& grid) {
  std::vector<double> out(grid.size(), 0.0);
  const auto jt = f.jump_times();
  std::size_t k = 0;
  for (std::size_t j = 0; j < jt.size(); ++j) {
    while (grid[k] != jt[j]) ++k;
    out[k] = f.increment(j);
  }
  return out;
}

}  // namespace

RiskCurve compose_risk(const StepFunction& cumhaz1, const StepFunction& cumhaz2, RiskMode mode,
                       ExtremeHazard extreme) {
  const auto grid = merge_times(cumhaz1.jump_times(), cumhaz2.jump_times());
  const auto d1 = increments_on(cumhaz1, grid);
  const auto d2 = increments_on(cumhaz2, grid);
  return to_curve(grid, compose(grid, d1, d2, mode, extreme));
}

CauseSpecificModel fit_cause_specific(const Dataset& data, const FormulaSpec& formulas, const CoxOptions& options) {
  return CauseSpecificModel{
      fit_armed_cox(data, formulas.cause1, kCauseOfInterest, options),
      fit_armed_cox(data, formulas.cause2, kCompetingCause, options),
      DesignBuilder(data, formulas.cause1, !formulas.cause1.by_arm),
      DesignBuilder(data, formulas.cause2, !formulas.cause2.by_arm),
  };
}

CauseSpecificInfluence cause_specific_influence(const CauseSpecificModel& model, const Dataset& data,
                                                const FormulaSpec& formulas) {
  return CauseSpecificInfluence{
      armed_cox_influence(model.cause1, data, formulas.cause1, kCauseOfInterest),
      armed_cox_influence(model.cause2, data, formulas.cause2, kCompetingCause),
  };
}

// ---------------------------------------------------------------------------

RiskPredictor::RiskPredictor(const CauseSpecificModel& model, RiskMode mode, ExtremeHazard extreme)
    : model_(model), mode_(mode), extreme_(extreme) {
  for (int arm = 0; arm < 2; ++arm) {
    const StepFunction& b1 = model_.cause1.fit(arm).baseline;
    const StepFunction& b2 = model_.cause2.fit(arm).baseline;
    ArmGrid& g = grids_[static_cast<std::size_t>(arm)];
    g.times = merge_times(b1.jump_times(), b2.jump_times());
    g.dlambda01 = increments_on(b1, g.times);
    g.dlambda02 = increments_on(b2, g.times);
    g.jump1.assign(g.times.size(), -1);
    g.jump2.assign(g.times.size(), -1);
    for (std::size_t k = 0, j1 = 0, j2 = 0; k < g.times.size(); ++k) {
      if (j1 < b1.size() && b1.jump_times()[j1] == g.times[k]) g.jump1[k] = static_cast<std::ptrdiff_t>(j1++);
      if (j2 < b2.size() && b2.jump_times()[j2] == g.times[k]) g.jump2[k] = static_cast<std::ptrdiff_t>(j2++);
    }
  }
}

RiskPredictor::Evaluated RiskPredictor::evaluate(int arm, const Eigen::RowVectorXd& x1, const Eigen::RowVectorXd& x2,
                                                 double horizon) const {
  const ArmGrid& g = grids_[static_cast<std::size_t>(arm)];
  const CoxFit& fit1 = model_.cause1.fit(arm);
  const CoxFit& fit2 = model_.cause2.fit(arm);
  Evaluated e;
  e.lp1 = fit1.coefficients.size() > 0 ? x1.dot(fit1.coefficients) : 0.0;
  e.lp2 = fit2.coefficients.size() > 0 ? x2.dot(fit2.coefficients) : 0.0;
  e.count = static_cast<std::size_t>(std::upper_bound(g.times.begin(), g.times.end(), horizon) - g.times.begin());
  const double r1 = std::exp(e.lp1), r2 = std::exp(e.lp2);
  e.d1.resize(e.count);
  e.d2.resize(e.count);
  for (std::size_t k = 0; k < e.count; ++k) {
    e.d1[k] = r1 * g.dlambda01[k];
    e.d2[k] = r2 * g.dlambda02[k];
  }
  auto c = compose(std::span<const double>(g.times).first(e.count), e.d1, e.d2, mode_, extreme_);
  e.s_after = std::move(c.s_after);
  e.f1_after = std::move(c.f1_after);
  e.f2_after = std::move(c.f2_after);
  return e;
}

RiskCurve RiskPredictor::curve(int arm, std::span<const double> covariates, double horizon) const {
  const Evaluated e = evaluate(arm, model_.design1.row(covariates, arm), model_.design2.row(covariates, arm), horizon);
  const ArmGrid& g = grids_[static_cast<std::size_t>(arm)];
  std::vector<double> times(g.times.begin(), g.times.begin() + static_cast<std::ptrdiff_t>(e.count));
  return to_curve(times, Composition{e.s_after, e.f1_after, e.f2_after});
}

double RiskPredictor::risk(int arm, std::span<const double> covariates, double t) const {
  const Evaluated e = evaluate(arm, model_.design1.row(covariates, arm), model_.design2.row(covariates, arm), t);
  return e.count == 0 ? 0.0 : e.f1_after[e.count - 1];
}

RiskSensitivity RiskPredictor::empty_sensitivity() const {
  RiskSensitivity out;
  const std::array<const ArmedCoxModel*, 2> models{&model_.cause1, &model_.cause2};
  for (std::size_t c = 0; c < 2; ++c) {
    for (std::size_t slot = 0; slot < 2; ++slot) {
      if (slot == 1 && !models[c]->by_arm) continue;
      const CoxFit& fit = models[c]->fits[slot];
      out.functionals[c][slot].jump_weights = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(fit.baseline.size()));
      out.functionals[c][slot].beta_weights = Eigen::VectorXd::Zero(fit.coefficients.size());
    }
  }
  return out;
}

void RiskPredictor::accumulate(RiskSensitivity& acc, int arm, std::span<const double> covariates, double horizon,
                               double weight, std::span<const MartingaleIncrement> integrator,
                               double integrator_weight) const {
  const Eigen::RowVectorXd x1 = model_.design1.row(covariates, arm);
  const Eigen::RowVectorXd x2 = model_.design2.row(covariates, arm);
  const Evaluated e = evaluate(arm, x1, x2, horizon);
  if (e.count == 0) return;
  const ArmGrid& g = grids_[static_cast<std::size_t>(arm)];
  const double f_end = e.f1_after[e.count - 1];

  // Augmentation integrand k_l = weight_l / S(t_l); P = sum over t_l < t_m,
  // Q = sum over t_l >= t_m of k_l (F(horizon) - F(t_l)).
  const bool augment = !integrator.empty() && integrator_weight != 0.0;
  std::vector<double> k_val, k_gap;
  double q_total = 0.0;
  if (augment) {
    k_val.resize(integrator.size());
    k_gap.resize(integrator.size());
    for (std::size_t l = 0; l < integrator.size(); ++l) {
      const auto idx = static_cast<std::size_t>(
          std::upper_bound(g.times.begin(), g.times.begin() + static_cast<std::ptrdiff_t>(e.count), integrator[l].time) -
          g.times.begin());
      const double s = idx == 0 ? 1.0 : e.s_after[idx - 1];
      const double f = idx == 0 ? 0.0 : e.f1_after[idx - 1];
      k_val[l] = s > 0.0 ? integrator[l].weight / s : 0.0;
      k_gap[l] = k_val[l] * (f_end - f);
      q_total += k_gap[l];
    }
  }

  const std::size_t s1 = model_.cause1.slot(arm), s2 = model_.cause2.slot(arm);
  HazardFunctional& h1 = acc.functionals[0][s1];
  HazardFunctional& h2 = acc.functionals[1][s2];
  const double r1 = std::exp(e.lp1), r2 = std::exp(e.lp2);
  double beta1 = 0.0, beta2 = 0.0;
  double p_before = 0.0;  // sum of k_l with t_l < t_m
  double q_from = q_total;
  std::size_t l = 0;
  for (std::size_t m = 0; m < e.count; ++m) {
    const double s_before = m == 0 ? 1.0 : e.s_after[m - 1];
    const double factor = s_before > 0.0 ? e.s_after[m] / s_before : 0.0;
    const double gap = f_end - e.f1_after[m];
    double rho_gap = 0.0;
    if (mode_ == RiskMode::Exponential) {
      rho_gap = gap;
    } else if (factor > 0.0) {
      rho_gap = gap / factor;
    }
    double c1 = weight * (s_before - rho_gap);
    double c2 = -weight * rho_gap;
    const double total = e.d1[m] + e.d2[m];
    if (mode_ == RiskMode::ProductLimit && total > 1.0) {
      // capped step: F jumps by s_before * d_j / (d1 + d2)
      c1 = weight * s_before * e.d2[m] / (total * total);
      c2 = -weight * s_before * e.d1[m] / (total * total);
    }
    if (augment) {
      while (l < integrator.size() && integrator[l].time < g.times[m]) {
        p_before += k_val[l];
        q_from -= k_gap[l];
        ++l;
      }
      const double rho = mode_ == RiskMode::Exponential ? 1.0 : (factor > 0.0 ? 1.0 / factor : 0.0);
      const double tail = rho * q_from;
      c1 += integrator_weight * ((s_before - rho_gap) * p_before - tail);
      c2 += integrator_weight * (-rho_gap * p_before - tail);
    }
    if (g.jump1[m] >= 0) {
      h1.jump_weights(g.jump1[m]) += c1 * r1;
      beta1 += c1 * e.d1[m];
    }
    if (g.jump2[m] >= 0) {
      h2.jump_weights(g.jump2[m]) += c2 * r2;
      beta2 += c2 * e.d2[m];
    }
  }
  if (h1.beta_weights.size() > 0 && beta1 != 0.0) h1.beta_weights += beta1 * x1.transpose();
  if (h2.beta_weights.size() > 0 && beta2 != 0.0) h2.beta_weights += beta2 * x2.transpose();
}

RiskCurve absolute_risk(const CauseSpecificModel& model, int arm, std::span<const double> covariates, RiskMode mode) {
  return RiskPredictor(model, mode).curve(arm, covariates);
}

Eigen::VectorXd risk_influence(const CauseSpecificModel& model, const CauseSpecificInfluence& influence, int arm,
                               std::span<const double> covariates, double t, RiskMode mode) {
  const RiskPredictor predictor(model, mode);
  RiskSensitivity acc = predictor.empty_sensitivity();
  predictor.accumulate(acc, arm, covariates, t, 1.0);
  return apply_sensitivity(acc, influence);
}

Eigen::VectorXd apply_sensitivity(const RiskSensitivity& sensitivity, const CauseSpecificInfluence& influence) {
  Eigen::VectorXd out;
  const std::array<const std::array<CoxInfluence, 2>*, 2> parts{&influence.cause1, &influence.cause2};
  for (std::size_t c = 0; c < 2; ++c) {
    for (std::size_t slot = 0; slot < 2; ++slot) {
      const CoxInfluence& inf = (*parts[c])[slot];
      if (inf.subjects() == 0) continue;
      const HazardFunctional& f = sensitivity.functionals[c][slot];
      if (inf.jumps() > 0 && static_cast<std::size_t>(f.jump_weights.size()) != inf.jumps()) {
        throw ValidationError("risk sensitivity does not match the influence object");
      }
      const Eigen::VectorXd v = inf.apply(f);
      if (out.size() == 0) {
        out = v;
      } else {
        out += v;
      }
    }
  }
  return out;
}

RiskCurve aalen_johansen(const Dataset& data, std::optional<int> arm) {
  std::vector<std::size_t> subset;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!arm || data[i].treatment == *arm) subset.push_back(i);
  }
  return compose_risk(nelson_aalen(cox_response(data, kCauseOfInterest, subset)),
                      nelson_aalen(cox_response(data, kCompetingCause, subset)), RiskMode::ProductLimit);
}

}  // namespace crate
