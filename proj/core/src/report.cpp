#include "crate/report.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>

#include <boost/math/distributions/normal.hpp>

#include "crate/error.hpp"

namespace crate {

namespace {

std::string json_number(double v) { return std::isfinite(v) ? format_number(v) : "null"; }
std::string csv_number(double v) { return std::isfinite(v) ? format_number(v) : "NA"; }
std::string json_count(int v) { return v < 0 ? "null" : std::to_string(v); }

std::string json_string(std::string_view s) {
  std::string out = "\"";
  for (char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\t': out += "\\t"; break;
      default:
        if (static_cast<unsigned char>(c) < 0x20) {
          char buf[8];
          std::snprintf(buf, sizeof buf, "\\u%04x", c);
          out += buf;
        } else {
          out += c;
        }
    }
  }
  return out + "\"";
}

std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

std::string format_number(double value) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  return buf;
}

void write_estimates_json(std::ostream& out, std::span<const AteEstimate> estimates) {
  out << "[";
  for (std::size_t k = 0; k < estimates.size(); ++k) {
    const AteEstimate& e = estimates[k];
    const auto& d = e.diagnostics;
    out << (k ? ",\n " : "\n ") << "{\"estimator\": " << json_string(estimator_name(e.estimator))
        << ", \"tau\": " << json_number(e.tau) << ", \"n\": " << e.n << ", \"risk1\": " << json_number(e.risk1)
        << ", \"risk0\": " << json_number(e.risk0) << ", \"ate\": " << json_number(e.ate)
        << ", \"se\": " << json_number(e.se) << ", \"lower\": " << json_number(e.ci_lower)
        << ", \"upper\": " << json_number(e.ci_upper) << ", \"diagnostics\": {\"iterations\": {\"cause1\": "
        << json_count(d.iterations.cause1) << ", \"cause2\": " << json_count(d.iterations.cause2)
        << ", \"censoring\": " << json_count(d.iterations.censoring)
        << ", \"treatment\": " << json_count(d.iterations.treatment)
        << "}, \"positivity_min_G\": " << json_number(d.positivity_min_G)
        << ", \"min_pi\": " << json_number(d.min_pi) << ", \"max_weight\": " << json_number(d.max_weight) << "}}";
  }
  out << (estimates.empty() ? "]\n" : "\n]\n");
}

void write_estimates_csv(std::ostream& out, std::span<const AteEstimate> estimates) {
  out << "estimator,tau,n,risk1,risk0,ate,se,lower,upper,iterations_cause1,iterations_cause2,"
         "iterations_censoring,iterations_treatment,positivity_min_G,min_pi,max_weight\n";
  auto count = [](int v) { return v < 0 ? std::string("NA") : std::to_string(v); };
  for (const AteEstimate& e : estimates) {
    const auto& d = e.diagnostics;
    out << estimator_name(e.estimator) << ',' << csv_number(e.tau) << ',' << e.n << ',' << csv_number(e.risk1) << ','
        << csv_number(e.risk0) << ',' << csv_number(e.ate) << ',' << csv_number(e.se) << ','
        << csv_number(e.ci_lower) << ',' << csv_number(e.ci_upper) << ',' << count(d.iterations.cause1) << ','
        << count(d.iterations.cause2) << ',' << count(d.iterations.censoring) << ','
        << count(d.iterations.treatment) << ',' << csv_number(d.positivity_min_G) << ',' << csv_number(d.min_pi)
        << ',' << csv_number(d.max_weight) << '\n';
  }
}

void write_summary_json(std::ostream& out, std::span<const SimSummary> summaries) {
  out << "[";
  for (std::size_t s = 0; s < summaries.size(); ++s) {
    const SimSummary& m = summaries[s];
    out << (s ? ",\n " : "\n ") << "{\"scenario\": " << json_string(m.name) << ", \"n\": " << m.n
        << ", \"replicates\": " << m.replicates << ", \"tau\": " << json_number(m.tau) << ", \"seed\": " << m.seed
        << ", \"truth\": " << json_number(m.truth.ate) << ", \"truth_mc_se\": " << json_number(m.truth.se)
        << ", \"failures\": " << m.failures << ", \"positivity_failures\": " << m.positivity_failures
        << ", \"rows\": [";
    for (std::size_t k = 0; k < m.rows.size(); ++k) {
      const SimRow& r = m.rows[k];
      out << (k ? ",\n  " : "\n  ") << "{\"estimator\": " << json_string(estimator_name(r.estimator))
          << ", \"variance\": " << json_string(r.variance) << ", \"successes\": " << r.successes
          << ", \"mean_estimate\": " << json_number(r.mean_estimate) << ", \"bias\": " << json_number(r.bias)
          << ", \"sd\": " << json_number(r.sd) << ", \"mc_se\": " << json_number(r.mc_se)
          << ", \"mean_se\": " << json_number(r.mean_se) << ", \"coverage\": " << json_number(r.coverage) << "}";
    }
    out << "]}";
  }
  out << (summaries.empty() ? "]\n" : "\n]\n");
}

void write_summary_csv(std::ostream& out, std::span<const SimSummary> summaries) {
  out << "scenario,n,replicates,tau,seed,estimator,variance,successes,failures,positivity_failures,truth,"
         "mean_estimate,bias,sd,mc_se,mean_se,coverage\n";
  for (const SimSummary& m : summaries) {
    for (const SimRow& r : m.rows) {
      out << csv_field(m.name) << ',' << m.n << ',' << m.replicates << ',' << csv_number(m.tau) << ',' << m.seed
          << ',' << estimator_name(r.estimator) << ',' << r.variance << ',' << r.successes << ',' << m.failures
          << ',' << m.positivity_failures << ',' << csv_number(r.truth) << ',' << csv_number(r.mean_estimate) << ','
          << csv_number(r.bias) << ',' << csv_number(r.sd) << ',' << csv_number(r.mc_se) << ','
          << csv_number(r.mean_se) << ',' << csv_number(r.coverage) << '\n';
    }
  }
}

// ---------------------------------------------------------------------------

std::vector<RiskTable> risk_tables(const Dataset& data, const FormulaSpec& formulas, std::span<const double> times,
                                   const AteOptions& options) {
  const std::array<Estimator, 2> estimators{Estimator::GFormula, Estimator::AiptwAipcw};
  const NuisanceModels models = fit_nuisance_models(data, formulas, requirements(estimators), options);
  const double z = boost::math::quantile(boost::math::normal(), 0.5 + options.level / 2.0);
  const double nan = std::numeric_limits<double>::quiet_NaN();

  std::vector<RiskTable> tables(estimators.size());
  for (std::size_t k = 0; k < estimators.size(); ++k) tables[k].estimator = estimators[k];
  for (double t : times) {
    std::array<RiskPoint, 2> points;
    for (auto& p : points) p.time = t;
    if (t <= 0.0) {
      for (std::size_t k = 0; k < points.size(); ++k) tables[k].points.push_back(points[k]);
      continue;
    }
    const TauFeasibility feasible = tau_feasibility(data, t);
    if (!feasible.feasible) {
      for (std::size_t k = 0; k < points.size(); ++k) {
        RiskPoint p = points[k];
        p.risk1 = p.risk0 = p.se1 = p.se0 = p.lower1 = p.upper1 = p.lower0 = p.upper0 = nan;
        p.warning = "beyond follow-up: " + feasible.message;
        tables[k].points.push_back(p);
      }
      continue;
    }
    const auto estimates = estimate_with_models(data, models, t, estimators, options);
    for (std::size_t k = 0; k < estimates.size(); ++k) {
      const AteEstimate& e = estimates[k];
      RiskPoint p = points[k];
      p.risk1 = e.risk1;
      p.risk0 = e.risk0;
      p.se1 = e.se1;
      p.se0 = e.se0;
      p.lower1 = e.risk1 - z * e.se1;
      p.upper1 = e.risk1 + z * e.se1;
      p.lower0 = e.risk0 - z * e.se0;
      p.upper0 = e.risk0 + z * e.se0;
      if (t > data.max_time()) p.warning = "beyond follow-up";
      tables[k].points.push_back(p);
    }
  }
  return tables;
}

void write_risk_csv(std::ostream& out, std::span<const RiskTable> tables) {
  out << "estimator,time,risk1,risk0,se1,se0,lower1,upper1,lower0,upper0,warning\n";
  for (const RiskTable& t : tables) {
    for (const RiskPoint& p : t.points) {
      out << estimator_name(t.estimator) << ',' << csv_number(p.time) << ',' << csv_number(p.risk1) << ','
          << csv_number(p.risk0) << ',' << csv_number(p.se1) << ',' << csv_number(p.se0) << ','
          << csv_number(p.lower1) << ',' << csv_number(p.upper1) << ',' << csv_number(p.lower0) << ','
          << csv_number(p.upper0) << ',' << csv_field(p.warning) << '\n';
    }
  }
}

void write_risk_json(std::ostream& out, std::span<const RiskTable> tables) {
  out << "[";
  bool first = true;
  for (const RiskTable& t : tables) {
    for (const RiskPoint& p : t.points) {
      out << (first ? "\n " : ",\n ") << "{\"estimator\": " << json_string(estimator_name(t.estimator))
          << ", \"time\": " << json_number(p.time) << ", \"risk1\": " << json_number(p.risk1)
          << ", \"risk0\": " << json_number(p.risk0) << ", \"se1\": " << json_number(p.se1)
          << ", \"se0\": " << json_number(p.se0) << ", \"lower1\": " << json_number(p.lower1)
          << ", \"upper1\": " << json_number(p.upper1) << ", \"lower0\": " << json_number(p.lower0)
          << ", \"upper0\": " << json_number(p.upper0) << ", \"warning\": " << json_string(p.warning) << "}";
      first = false;
    }
  }
  out << (first ? "]\n" : "\n]\n");
}

void write_curve_csv(std::ostream& out, const RiskCurve& curve) {
  out << "time,F1,F2,S\n";
  out << "0," << format_number(curve.F1.value(0.0)) << ',' << format_number(curve.F2.value(0.0)) << ','
      << format_number(curve.S.value(0.0)) << '\n';
  for (double t : curve.S.jump_times()) {
    if (t <= 0.0) continue;
    out << format_number(t) << ',' << format_number(curve.F1.value(t)) << ',' << format_number(curve.F2.value(t))
        << ',' << format_number(curve.S.value(t)) << '\n';
  }
}

}  // namespace crate
