#pragma once

#include <array>
#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace crate {

inline constexpr int kCensored = 0;
inline constexpr int kCauseOfInterest = 1;
inline constexpr int kCompetingCause = 2;

/// One subject: observed time, event code, binary treatment and baseline
/// covariates.
struct ObservedSample {
  double time = 0.0;
  int event = kCensored;
  int treatment = 0;
  std::vector<double> covariates;

  bool uncensored() const { return event != kCensored; }
  /// Indicator of a cause-1 event by `tau`.
  int outcome(double tau) const {
    return (time <= tau && event == kCauseOfInterest) ? 1 : 0;
  }
};

/// Validated, immutable competing-risks sample.
///
/// Invariants: n >= 2, both treatment arms present, at least one cause-1
/// event, every covariate vector of the same finite length.
class Dataset {
 public:
  Dataset(std::vector<ObservedSample> samples, std::vector<std::string> covariate_names);

  std::size_t size() const { return samples_.size(); }
  std::size_t dimension() const { return names_.size(); }
  const ObservedSample& operator[](std::size_t i) const { return samples_[i]; }
  std::span<const ObservedSample> samples() const { return samples_; }
  const std::vector<std::string>& covariate_names() const { return names_; }

  /// Column of `name` in the covariate vectors; throws ValidationError.
  std::size_t covariate_index(std::string_view name) const;

  /// Distinct observed times, ascending.
  const std::vector<double>& distinct_times() const { return distinct_times_; }
  /// Subject indices ordered by (time, event code).
  const std::vector<std::size_t>& time_order() const { return time_order_; }

  double max_time() const { return distinct_times_.back(); }
  std::array<std::size_t, 2> arm_sizes() const;

 private:
  std::vector<ObservedSample> samples_;
  std::vector<std::string> names_;
  std::vector<double> distinct_times_;
  std::vector<std::size_t> time_order_;
};

/// Column names for CSV ingestion. An empty covariate list means "every
/// remaining column, in file order".
struct CsvSchema {
  std::string time = "time";
  std::string event = "event";
  std::string treatment = "treatment";
  std::vector<std::string> covariates;
};

Dataset load_csv(const std::string& path, const CsvSchema& schema = {});
Dataset read_csv(std::istream& in, const CsvSchema& schema = {});
/// Writes with 17 significant digits so that reloading is bit-exact.
void write_csv(const Dataset& data, std::ostream& out, const CsvSchema& schema = {});
void save_csv(const Dataset& data, const std::string& path, const CsvSchema& schema = {});

// ---------------------------------------------------------------------------
// Formulas and design matrices

struct Term {
  std::string name;
  bool squared = false;  // adds name^2 right after name

  friend bool operator==(const Term&, const Term&) = default;
};

/// Covariate selection for one working model. `by_arm` fits a separate
/// model in each treatment arm instead of adding a treatment column.
struct ModelFormula {
  std::vector<Term> terms;
  bool by_arm = false;

  std::size_t columns() const;
  friend bool operator==(const ModelFormula&, const ModelFormula&) = default;
};

enum class NuisanceModel { Cause1, Cause2, Censoring, Treatment };

struct FormulaSpec {
  ModelFormula cause1;
  ModelFormula cause2;
  ModelFormula censoring;
  ModelFormula treatment;

  const ModelFormula& for_model(NuisanceModel model) const;
  /// Same formula for every model.
  static FormulaSpec uniform(const ModelFormula& formula);
  friend bool operator==(const FormulaSpec&, const FormulaSpec&) = default;
};

/// Parses "X1 + X2^2 + strata(treatment)" (',' also separates terms).
/// "." selects every covariate, "1" or an empty string selects none.
ModelFormula parse_formula(std::string_view text, std::span<const std::string> names);
ModelFormula all_covariates(std::span<const std::string> names);
std::string format_formula(const ModelFormula& formula);

/// Maps samples onto design rows for one formula. Resolves names once.
class DesignBuilder {
 public:
  DesignBuilder(const Dataset& data, const ModelFormula& formula, bool append_treatment);

  std::size_t columns() const { return column_names_.size(); }
  const std::vector<std::string>& column_names() const { return column_names_; }
  bool appends_treatment() const { return append_treatment_; }

  /// Row for `sample` with the treatment column (if any) set to `arm`.
  Eigen::RowVectorXd row(const ObservedSample& sample, int arm) const;
  /// Row with the observed treatment.
  Eigen::RowVectorXd row(const ObservedSample& sample) const { return row(sample, sample.treatment); }
  /// Row from a raw covariate vector in dataset layout.
  Eigen::RowVectorXd row(std::span<const double> covariates, int arm) const;

 private:
  std::vector<std::size_t> index_;
  std::vector<bool> squared_;
  std::vector<std::string> column_names_;
  bool append_treatment_;
};

struct DesignMatrix {
  Eigen::MatrixXd values;
  std::vector<std::string> columns;
  std::vector<std::string> warnings;  // e.g. constant columns
};

/// Selected covariates (with squares where flagged) in formula order; the
/// treatment column is appended for outcome and censoring models unless the
/// formula is fitted by arm.
DesignMatrix design_matrix(const Dataset& data, const FormulaSpec& spec, NuisanceModel model);
DesignMatrix design_matrix(const Dataset& data, const ModelFormula& formula, bool append_treatment);

// ---------------------------------------------------------------------------

struct TauFeasibility {
  double tau = 0.0;
  std::array<std::size_t, 2> at_risk{};  // per arm, time >= tau
  /// events_before[arm][code]: subjects with time <= tau and that event code.
  std::array<std::array<std::size_t, 3>, 2> events_before{};
  bool feasible = false;
  std::string message;
};

TauFeasibility tau_feasibility(const Dataset& data, double tau);

}  // namespace crate
