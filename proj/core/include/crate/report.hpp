#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "crate/ate.hpp"
#include "crate/risk.hpp"
#include "crate/simlab.hpp"

namespace crate {

/// %.17g, so that re-reading reproduces the double exactly.
std::string format_number(double value);

/// JSON array with one object per estimate:
///   {estimator, tau, n, risk1, risk0, ate, se, lower, upper,
///    diagnostics{iterations{cause1, cause2, censoring, treatment},
///                positivity_min_G, min_pi, max_weight}}
/// Non-finite numbers and unfitted models are written as null.
void write_estimates_json(std::ostream& out, std::span<const AteEstimate> estimates);
/// Header plus one row per estimate; non-finite numbers are written as NA.
void write_estimates_csv(std::ostream& out, std::span<const AteEstimate> estimates);

void write_summary_json(std::ostream& out, std::span<const SimSummary> summaries);
/// One row per (scenario, estimator, variance).
void write_summary_csv(std::ostream& out, std::span<const SimSummary> summaries);

/// Arm-wise risk at one grid time.
struct RiskPoint {
  double time = 0.0;
  double risk1 = 0.0;
  double risk0 = 0.0;
  double se1 = 0.0;
  double se0 = 0.0;
  double lower1 = 0.0, upper1 = 0.0;
  double lower0 = 0.0, upper0 = 0.0;
  std::string warning;  // e.g. time beyond follow-up
};

struct RiskTable {
  Estimator estimator = Estimator::GFormula;
  std::vector<RiskPoint> points;
};

/// Arm-wise G-formula and AIPTW,AIPCW risks at each grid time, fitting the
/// nuisance models once. Times <= 0 give zero risk and zero SE; times where
/// an arm has nobody at risk give NaN with a warning.
std::vector<RiskTable> risk_tables(const Dataset& data, const FormulaSpec& formulas, std::span<const double> times,
                                   const AteOptions& options = {});

void write_risk_csv(std::ostream& out, std::span<const RiskTable> tables);
void write_risk_json(std::ostream& out, std::span<const RiskTable> tables);

/// time, F1, F2, S on the curve's jump grid (plus t = 0).
void write_curve_csv(std::ostream& out, const RiskCurve& curve);

}  // namespace crate
