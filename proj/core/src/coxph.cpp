#include "crate/coxph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "crate/error.hpp"

namespace crate {

namespace {

// Risk-set sums at each distinct target-event time for one coefficient
// vector. Sums are accumulated on the exp(lp - offset) scale and returned on
// the natural scale.
struct RiskSetPass {
  std::vector<double> times;  // ascending
  std::vector<double> deaths;
  std::vector<double> s0;
  Eigen::MatrixXd s1;  // K x p
  double log_lik = 0.0;
  Eigen::VectorXd score;
  Eigen::MatrixXd information;
};

std::vector<std::size_t> descending_order(const CoxResponse& r) {
  std::vector<std::size_t> order(r.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return r.time[a] > r.time[b]; });
  return order;
}

RiskSetPass risk_set_pass(const CoxResponse& r, const Eigen::MatrixXd& X, const Eigen::VectorXd& beta,
                          const std::vector<std::size_t>& order, bool need_information) {
  const Eigen::Index p = X.cols();
  const std::size_t n = r.size();
  Eigen::VectorXd lp = p > 0 ? Eigen::VectorXd(X * beta) : Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  const double offset = n > 0 ? lp.maxCoeff() : 0.0;
  Eigen::VectorXd w = (lp.array() - offset).exp();

  RiskSetPass pass;
  pass.score = Eigen::VectorXd::Zero(p);
  pass.information = Eigen::MatrixXd::Zero(p, p);
  std::vector<Eigen::VectorXd> s1_rows;

  double S0 = 0.0;
  Eigen::VectorXd S1 = Eigen::VectorXd::Zero(p);
  Eigen::MatrixXd S2 = Eigen::MatrixXd::Zero(p, p);
  auto add = [&](std::size_t i) {
    const Eigen::Index ii = static_cast<Eigen::Index>(i);
    S0 += w(ii);
    if (p > 0) {
      S1.noalias() += w(ii) * X.row(ii).transpose();
      if (need_information) S2.noalias() += w(ii) * X.row(ii).transpose() * X.row(ii);
    }
  };

  std::size_t g = 0;
  while (g < n) {
    const double u = r.time[order[g]];
    std::size_t end = g;
    while (end < n && r.time[order[end]] == u) ++end;
    double d = 0.0;
    Eigen::VectorXd xsum = Eigen::VectorXd::Zero(p);
    double lpsum = 0.0;
    for (std::size_t k = g; k < end; ++k) {
      const std::size_t i = order[k];
      if (!r.exits_before_ties[i]) add(i);
      if (r.is_event[i]) {
        d += 1.0;
        lpsum += lp(static_cast<Eigen::Index>(i)) - offset;
        if (p > 0) xsum += X.row(static_cast<Eigen::Index>(i)).transpose();
      }
    }
    if (d > 0.0) {
      pass.times.push_back(u);
      pass.deaths.push_back(d);
      pass.s0.push_back(S0);
      s1_rows.push_back(S1);
      pass.log_lik += lpsum - d * std::log(S0);
      if (p > 0) {
        const Eigen::VectorXd xbar = S1 / S0;
        pass.score += xsum - d * xbar;
        if (need_information) pass.information += d * (S2 / S0 - xbar * xbar.transpose());
      }
    }
    for (std::size_t k = g; k < end; ++k) {
      if (r.exits_before_ties[order[k]]) add(order[k]);
    }
    g = end;
  }

  std::reverse(pass.times.begin(), pass.times.end());
  std::reverse(pass.deaths.begin(), pass.deaths.end());
  std::reverse(pass.s0.begin(), pass.s0.end());
  std::reverse(s1_rows.begin(), s1_rows.end());
  const double back = std::exp(offset);
  pass.s1.resize(static_cast<Eigen::Index>(s1_rows.size()), p);
  for (std::size_t k = 0; k < s1_rows.size(); ++k) {
    pass.s0[k] *= back;
    pass.s1.row(static_cast<Eigen::Index>(k)) = s1_rows[k].transpose() * back;
  }
  return pass;
}

StepFunction breslow(const RiskSetPass& pass) {
  std::vector<double> inc(pass.times.size());
  for (std::size_t k = 0; k < inc.size(); ++k) inc[k] = pass.deaths[k] / pass.s0[k];
  return StepFunction::from_increments(pass.times, inc);
}

}  // namespace

CoxResponse cox_response(const Dataset& data, int cause) {
  std::vector<std::size_t> all(data.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return cox_response(data, cause, all);
}

CoxResponse cox_response(const Dataset& data, int cause, std::span<const std::size_t> subset) {
  if (cause < 0 || cause > 2) throw ValidationError("cox: cause must be 0, 1 or 2");
  CoxResponse r;
  r.time.reserve(subset.size());
  for (std::size_t i : subset) {
    const auto& s = data[i];
    r.time.push_back(s.time);
    r.is_event.push_back(s.event == cause ? 1 : 0);
    r.exits_before_ties.push_back(cause == kCensored && s.event != kCensored ? 1 : 0);
  }
  return r;
}

CoxFit null_cox_fit(Eigen::Index columns) {
  CoxFit fit;
  fit.coefficients = Eigen::VectorXd::Zero(columns);
  fit.information = Eigen::MatrixXd::Zero(columns, columns);
  fit.converged = true;
  return fit;
}

CoxFit fit_cox(const CoxResponse& response, const Eigen::MatrixXd& design, const CoxOptions& options) {
  if (static_cast<std::size_t>(design.rows()) != response.size()) {
    throw ValidationError("cox: design rows and response length differ");
  }
  if (!design.allFinite()) throw ValidationError("cox: design matrix has non-finite entries");
  const std::size_t events =
      static_cast<std::size_t>(std::count(response.is_event.begin(), response.is_event.end(), 1));
  if (events == 0) throw ValidationError("cox: no events of the target cause");

  const auto order = descending_order(response);
  const Eigen::Index p = design.cols();
  CoxFit fit;
  fit.events = events;
  fit.coefficients = Eigen::VectorXd::Zero(p);
  RiskSetPass pass = risk_set_pass(response, design, fit.coefficients, order, true);
  const Eigen::VectorXd info0 = pass.information.diagonal();

  if (p == 0) {
    fit.converged = true;
  }
  for (int iter = 0; p > 0 && iter < options.max_iterations; ++iter) {
    if (pass.score.lpNorm<Eigen::Infinity>() < options.tolerance) {
      fit.converged = true;
      break;
    }
    const Eigen::LDLT<Eigen::MatrixXd> ldlt(pass.information);
    if (ldlt.info() != Eigen::Success || ldlt.vectorD().minCoeff() <= 1e-12 * pass.information.diagonal().maxCoeff()) {
      throw ConvergenceError("cox: singular information matrix");
    }
    const Eigen::VectorXd step = ldlt.solve(pass.score);
    double scale = 1.0;
    Eigen::VectorXd candidate = fit.coefficients + step;
    RiskSetPass next = risk_set_pass(response, design, candidate, order, true);
    // Near the optimum the change is below rounding noise; accept it.
    const double floor = pass.log_lik - 1e-10 * (1.0 + std::abs(pass.log_lik));
    for (int h = 0; h < 30 && !(next.log_lik >= floor); ++h) {
      scale *= 0.5;
      candidate = fit.coefficients + scale * step;
      next = risk_set_pass(response, design, candidate, order, true);
    }
    if (!(next.log_lik >= floor)) break;
    fit.coefficients = candidate;
    fit.iterations = iter + 1;
    pass = std::move(next);
    if (fit.coefficients.lpNorm<Eigen::Infinity>() > options.divergence_bound) {
      throw ConvergenceError("cox: coefficients diverge (monotone likelihood)");
    }
  }
  if (!fit.converged && pass.score.lpNorm<Eigen::Infinity>() < options.tolerance) fit.converged = true;
  if ((pass.information.diagonal().array() < 1e-8 * info0.array()).any()) {
    throw ConvergenceError("cox: coefficients diverge (monotone likelihood)");
  }
  fit.log_partial_likelihood = pass.log_lik;
  fit.information = pass.information;
  fit.baseline = breslow(pass);
  return fit;
}

CoxFit fit_cox(const Dataset& data, const Eigen::MatrixXd& design, int cause, const CoxOptions& options) {
  return fit_cox(cox_response(data, cause), design, options);
}

StepFunction predict_cumhazard(const CoxFit& fit, const Eigen::RowVectorXd& x) {
  const double lp = fit.coefficients.size() > 0 ? x.dot(fit.coefficients) : 0.0;
  return fit.baseline.scaled(std::exp(lp));
}

StepFunction nelson_aalen(const CoxResponse& response) {
  const auto order = descending_order(response);
  std::vector<double> times;
  std::vector<double> inc;
  double at_risk = 0.0;
  std::size_t g = 0;
  const std::size_t n = response.size();
  while (g < n) {
    const double u = response.time[order[g]];
    std::size_t end = g;
    double d = 0.0;
    while (end < n && response.time[order[end]] == u) {
      const std::size_t i = order[end];
      if (!response.exits_before_ties[i]) at_risk += 1.0;
      if (response.is_event[i]) d += 1.0;
      ++end;
    }
    if (d > 0.0) {
      times.push_back(u);
      inc.push_back(d / at_risk);
    }
    for (std::size_t k = g; k < end; ++k) {
      if (response.exits_before_ties[order[k]]) at_risk += 1.0;
    }
    g = end;
  }
  std::reverse(times.begin(), times.end());
  std::reverse(inc.begin(), inc.end());
  return StepFunction::from_increments(std::move(times), inc);
}

StepFunction nelson_aalen(const Dataset& data, int cause) { return nelson_aalen(cox_response(data, cause)); }

// ---------------------------------------------------------------------------
// Influence functions

CoxInfluence::CoxInfluence(const CoxFit& fit, const CoxResponse& response, const Eigen::MatrixXd& design)
    : CoxInfluence(fit, response, design, response.size(), {}) {}

CoxInfluence::CoxInfluence(const CoxFit& fit, const CoxResponse& response, const Eigen::MatrixXd& design,
                           std::size_t total_subjects, std::span<const std::size_t> subject_index)
    : total_(total_subjects) {
  const std::size_t m = response.size();
  const Eigen::Index p = design.cols();
  if (subject_index.empty()) {
    members_.resize(m);
    std::iota(members_.begin(), members_.end(), std::size_t{0});
  } else {
    members_.assign(subject_index.begin(), subject_index.end());
  }
  if (members_.size() != m) throw ValidationError("cox influence: subject index length mismatch");
  beta_ = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(total_), p);
  event_jump_.assign(m, -1);
  last_at_risk_.assign(m, -1);
  risk_.assign(m, 1.0);
  scale_ = m > 0 ? static_cast<double>(total_) / static_cast<double>(m) : 1.0;
  if (fit.events == 0 || m == 0) {
    dlambda0_.resize(0);
    inv_s0_.resize(0);
    dH_.resize(0, p);
    return;
  }

  const auto order = descending_order(response);
  const RiskSetPass pass = risk_set_pass(response, design, fit.coefficients, order, false);
  const std::size_t K = pass.times.size();
  jump_times_ = pass.times;
  dlambda0_.resize(static_cast<Eigen::Index>(K));
  inv_s0_.resize(static_cast<Eigen::Index>(K));
  dH_.resize(static_cast<Eigen::Index>(K), p);
  for (std::size_t k = 0; k < K; ++k) {
    const auto kk = static_cast<Eigen::Index>(k);
    dlambda0_(kk) = pass.deaths[k] / pass.s0[k];
    inv_s0_(kk) = static_cast<double>(m) / pass.s0[k];
    if (p > 0) dH_.row(kk) = pass.s1.row(kk) / pass.s0[k] * dlambda0_(kk);
  }

  // Prefix sums of dLambda0 and dH for the compensator part of the score.
  Eigen::VectorXd cum_lambda(static_cast<Eigen::Index>(K));
  Eigen::MatrixXd cum_H(static_cast<Eigen::Index>(K), p);
  double running = 0.0;
  Eigen::RowVectorXd running_H = Eigen::RowVectorXd::Zero(p);
  for (Eigen::Index k = 0; k < static_cast<Eigen::Index>(K); ++k) {
    running += dlambda0_(k);
    if (p > 0) running_H += dH_.row(k);
    cum_lambda(k) = running;
    cum_H.row(k) = running_H;
  }

  Eigen::MatrixXd scores = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(m), p);
  for (std::size_t i = 0; i < m; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    const double lp = p > 0 ? design.row(ii).dot(fit.coefficients) : 0.0;
    risk_[i] = std::exp(lp);
    const double t = response.time[i];
    auto it = response.exits_before_ties[i] ? std::lower_bound(jump_times_.begin(), jump_times_.end(), t)
                                            : std::upper_bound(jump_times_.begin(), jump_times_.end(), t);
    last_at_risk_[i] = static_cast<std::ptrdiff_t>(it - jump_times_.begin()) - 1;
    if (response.is_event[i]) {
      auto e = std::lower_bound(jump_times_.begin(), jump_times_.end(), t);
      event_jump_[i] = static_cast<std::ptrdiff_t>(e - jump_times_.begin());
    }
    if (p == 0) continue;
    Eigen::RowVectorXd u = Eigen::RowVectorXd::Zero(p);
    if (event_jump_[i] >= 0) {
      const auto k = static_cast<Eigen::Index>(event_jump_[i]);
      u += design.row(ii) - dH_.row(k) / dlambda0_(k);
    }
    if (last_at_risk_[i] >= 0) {
      const auto k = static_cast<Eigen::Index>(last_at_risk_[i]);
      u -= risk_[i] * (design.row(ii) * cum_lambda(k) - cum_H.row(k));
    }
    scores.row(ii) = u;
  }
  if (p > 0) {
    const Eigen::LDLT<Eigen::MatrixXd> ldlt(fit.information);
    if (ldlt.info() != Eigen::Success || ldlt.vectorD().minCoeff() <= 0.0) {
      throw ConvergenceError("cox influence: singular information matrix");
    }
    const Eigen::MatrixXd sub = ldlt.solve(scores.transpose()).transpose() * static_cast<double>(m);
    for (std::size_t i = 0; i < m; ++i) {
      beta_.row(static_cast<Eigen::Index>(members_[i])) = scale_ * sub.row(static_cast<Eigen::Index>(i));
    }
  }
}

StepFunction CoxInfluence::baseline(std::size_t subject) const {
  std::vector<double> inc(jump_times_.size(), 0.0);
  const auto it = std::find(members_.begin(), members_.end(), subject);
  if (it == members_.end()) return StepFunction::from_increments(jump_times_, inc);
  const std::size_t i = static_cast<std::size_t>(it - members_.begin());
  const auto row = beta_.row(static_cast<Eigen::Index>(subject));
  for (std::size_t k = 0; k < inc.size(); ++k) {
    const auto kk = static_cast<Eigen::Index>(k);
    double dm = event_jump_[i] == static_cast<std::ptrdiff_t>(k) ? 1.0 : 0.0;
    if (static_cast<std::ptrdiff_t>(k) <= last_at_risk_[i]) dm -= risk_[i] * dlambda0_(kk);
    inc[k] = scale_ * dm * inv_s0_(kk);
    if (dH_.cols() > 0) inc[k] -= dH_.row(kk).dot(row);
  }
  return StepFunction::from_increments(jump_times_, inc);
}

Eigen::VectorXd CoxInfluence::apply(const HazardFunctional& functional) const {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(total_));
  const auto K = static_cast<Eigen::Index>(jump_times_.size());
  if (K == 0) return out;
  if (functional.jump_weights.size() != K) throw ValidationError("hazard functional: wrong number of jump weights");
  const Eigen::Index p = beta_.cols();

  Eigen::VectorXd prefix(K);
  double running = 0.0;
  for (Eigen::Index k = 0; k < K; ++k) {
    running += functional.jump_weights(k) * dlambda0_(k) * inv_s0_(k);
    prefix(k) = running;
  }
  Eigen::VectorXd direction = Eigen::VectorXd::Zero(p);
  if (p > 0) {
    direction = -(dH_.transpose() * functional.jump_weights);
    if (functional.beta_weights.size() == p) direction += functional.beta_weights;
  }
  for (std::size_t i = 0; i < members_.size(); ++i) {
    double v = 0.0;
    if (event_jump_[i] >= 0) {
      const auto k = static_cast<Eigen::Index>(event_jump_[i]);
      v += functional.jump_weights(k) * inv_s0_(k);
    }
    if (last_at_risk_[i] >= 0) v -= risk_[i] * prefix(static_cast<Eigen::Index>(last_at_risk_[i]));
    out(static_cast<Eigen::Index>(members_[i])) = scale_ * v;
  }
  if (p > 0) out += beta_ * direction;
  return out;
}

// ---------------------------------------------------------------------------

ArmedCoxModel fit_armed_cox(const Dataset& data, const ModelFormula& formula, int cause, const CoxOptions& options) {
  ArmedCoxModel model;
  model.by_arm = formula.by_arm;
  const DesignMatrix design = design_matrix(data, formula, !formula.by_arm);
  if (!formula.by_arm) {
    const CoxResponse r = cox_response(data, cause);
    const bool any = std::find(r.is_event.begin(), r.is_event.end(), 1) != r.is_event.end();
    model.fits[0] = any ? fit_cox(r, design.values, options) : null_cox_fit(design.values.cols());
    model.fits[1] = model.fits[0];
    return model;
  }
  for (int arm = 0; arm < 2; ++arm) {
    std::vector<std::size_t> subset;
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (data[i].treatment == arm) subset.push_back(i);
    }
    const CoxResponse r = cox_response(data, cause, subset);
    Eigen::MatrixXd X(static_cast<Eigen::Index>(subset.size()), design.values.cols());
    for (std::size_t k = 0; k < subset.size(); ++k) {
      X.row(static_cast<Eigen::Index>(k)) = design.values.row(static_cast<Eigen::Index>(subset[k]));
    }
    const bool any = std::find(r.is_event.begin(), r.is_event.end(), 1) != r.is_event.end();
    model.fits[static_cast<std::size_t>(arm)] = any ? fit_cox(r, X, options) : null_cox_fit(X.cols());
  }
  return model;
}

std::array<CoxInfluence, 2> armed_cox_influence(const ArmedCoxModel& model, const Dataset& data,
                                                const ModelFormula& formula, int cause) {
  std::array<CoxInfluence, 2> out;
  const DesignMatrix design = design_matrix(data, formula, !formula.by_arm);
  if (!model.by_arm) {
    out[0] = CoxInfluence(model.fits[0], cox_response(data, cause), design.values);
    return out;
  }
  for (int arm = 0; arm < 2; ++arm) {
    std::vector<std::size_t> subset;
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (data[i].treatment == arm) subset.push_back(i);
    }
    Eigen::MatrixXd X(static_cast<Eigen::Index>(subset.size()), design.values.cols());
    for (std::size_t k = 0; k < subset.size(); ++k) {
      X.row(static_cast<Eigen::Index>(k)) = design.values.row(static_cast<Eigen::Index>(subset[k]));
    }
    out[static_cast<std::size_t>(arm)] =
        CoxInfluence(model.fits[static_cast<std::size_t>(arm)], cox_response(data, cause, subset), X, data.size(), subset);
  }
  return out;
}

}  // namespace crate
