#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "crate/dataset.hpp"
#include "crate/step_function.hpp"

namespace crate {

/// Survival response for one Cox model.
///
/// At a clock time shared by a target event and another subject's exit, the
/// exiting subject normally stays in the risk set. Subjects flagged
/// `exits_before_ties` leave first: the censoring model uses this so that a
/// subject whose event coincides with a censoring time counts as already
/// failed.
struct CoxResponse {
  std::vector<double> time;
  std::vector<char> is_event;
  std::vector<char> exits_before_ties;

  std::size_t size() const { return time.size(); }
  /// True when subject `i` is in the risk set at a target-event time `t`.
  bool at_risk(std::size_t i, double t) const {
    return time[i] > t || (time[i] == t && !exits_before_ties[i]);
  }
};

/// Response treating event code `cause` as the event; cause 0 yields the
/// censoring model with the events-first tie convention.
CoxResponse cox_response(const Dataset& data, int cause);
CoxResponse cox_response(const Dataset& data, int cause, std::span<const std::size_t> subset);

/// Fitted Cox model with Breslow ties and Breslow baseline hazard at x = 0.
struct CoxFit {
  Eigen::VectorXd coefficients;
  StepFunction baseline;        // cumulative baseline hazard
  Eigen::MatrixXd information;  // observed information at the estimate
  double log_partial_likelihood = 0.0;
  bool converged = false;
  int iterations = 0;
  std::size_t events = 0;
};

struct CoxOptions {
  double tolerance = 1e-8;
  int max_iterations = 25;
  double divergence_bound = 30.0;
};

CoxFit fit_cox(const CoxResponse& response, const Eigen::MatrixXd& design, const CoxOptions& options = {});
CoxFit fit_cox(const Dataset& data, const Eigen::MatrixXd& design, int cause, const CoxOptions& options = {});

/// Zero hazard with zero coefficients; stands in when a cause has no events.
CoxFit null_cox_fit(Eigen::Index columns);

/// Lambda(t | x) = Lambda0(t) exp(x'beta) on the baseline jump times.
StepFunction predict_cumhazard(const CoxFit& fit, const Eigen::RowVectorXd& x);

/// Nelson-Aalen estimator of the cumulative hazard of `cause`, with the
/// same tie conventions as `cox_response`.
StepFunction nelson_aalen(const Dataset& data, int cause);
StepFunction nelson_aalen(const CoxResponse& response);

/// Linear functional  sum_k jump_weights[k] * dLambda0(t_k) + beta_weights' beta
/// of a fitted Cox model; its influence function is obtained from
/// `CoxInfluence::apply`.
struct HazardFunctional {
  Eigen::VectorXd jump_weights;
  Eigen::VectorXd beta_weights;
};

/// Martingale-based influence functions of beta_hat and the Breslow baseline.
///
/// Values are on the full-sample scale: estimate - limit ~ (1/n) sum_i IF_i,
/// where n is `total_subjects`. When the model was fitted on a subset, rows
/// of non-members are zero.
class CoxInfluence {
 public:
  CoxInfluence() = default;
  CoxInfluence(const CoxFit& fit, const CoxResponse& response, const Eigen::MatrixXd& design);
  CoxInfluence(const CoxFit& fit, const CoxResponse& response, const Eigen::MatrixXd& design,
               std::size_t total_subjects, std::span<const std::size_t> subject_index);

  std::size_t subjects() const { return total_; }
  std::size_t jumps() const { return jump_times_.size(); }
  const Eigen::MatrixXd& beta() const { return beta_; }

  /// Per-subject influence function of Lambda0 as a step function on the
  /// baseline jump times.
  StepFunction baseline(std::size_t subject) const;

  /// Influence function of a linear functional, one value per subject.
  Eigen::VectorXd apply(const HazardFunctional& functional) const;

 private:
  std::size_t total_ = 0;
  std::vector<std::size_t> members_;     // full-sample index of each fitted subject
  std::vector<double> jump_times_;
  Eigen::VectorXd dlambda0_;
  Eigen::VectorXd inv_s0_;               // m / S0 at each jump
  Eigen::MatrixXd dH_;                   // K x p, xbar(t_k) dLambda0(t_k)
  std::vector<std::ptrdiff_t> event_jump_;  // own event jump or -1
  std::vector<std::ptrdiff_t> last_at_risk_;
  std::vector<double> risk_;             // exp(x'beta)
  Eigen::MatrixXd beta_;                 // total x p
  double scale_ = 1.0;                   // total / m
};

/// A Cox model that is either shared by both arms (treatment is the last
/// design column) or fitted separately within each arm.
struct ArmedCoxModel {
  std::array<CoxFit, 2> fits;
  bool by_arm = false;

  const CoxFit& fit(int arm) const { return fits[by_arm ? static_cast<std::size_t>(arm) : 0]; }
  std::size_t slot(int arm) const { return by_arm ? static_cast<std::size_t>(arm) : 0; }
  int iterations() const { return by_arm ? fits[0].iterations + fits[1].iterations : fits[0].iterations; }
  bool converged() const { return fits[0].converged && (!by_arm || fits[1].converged); }
};

/// Fits `formula` for event code `cause`. Causes without events get a null
/// fit (zero hazard).
ArmedCoxModel fit_armed_cox(const Dataset& data, const ModelFormula& formula, int cause,
                            const CoxOptions& options = {});

/// Influence objects per model slot (slot 1 is empty unless fitted by arm).
std::array<CoxInfluence, 2> armed_cox_influence(const ArmedCoxModel& model, const Dataset& data,
                                                const ModelFormula& formula, int cause);

}  // namespace crate
