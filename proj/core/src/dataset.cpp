#include "crate/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "crate/error.hpp"

namespace crate {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? pos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

bool parse_double(std::string_view text, double& out) {
  if (text.empty()) return false;
  if (text.front() == '+') text.remove_prefix(1);
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, out);
  return ec == std::errc() && ptr == end;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

// ---------------------------------------------------------------------------
// Dataset

Dataset::Dataset(std::vector<ObservedSample> samples, std::vector<std::string> covariate_names)
    : samples_(std::move(samples)), names_(std::move(covariate_names)) {
  if (samples_.size() < 2) throw ValidationError("dataset needs at least 2 subjects");
  const std::size_t d = names_.size();
  std::array<std::size_t, 2> arms{};
  std::size_t cause1 = 0;
  for (std::size_t i = 0; i < samples_.size(); ++i) {
    const auto& s = samples_[i];
    const auto where = "subject " + std::to_string(i + 1) + ": ";
    if (!std::isfinite(s.time) || s.time < 0.0) throw ValidationError(where + "time must be finite and >= 0");
    if (s.event < 0 || s.event > 2) throw ValidationError(where + "event code must be 0, 1 or 2");
    if (s.treatment != 0 && s.treatment != 1) throw ValidationError(where + "treatment must be 0 or 1");
    if (s.covariates.size() != d) throw ValidationError(where + "wrong number of covariates");
    for (double x : s.covariates) {
      if (!std::isfinite(x)) throw ValidationError(where + "non-finite covariate");
    }
    ++arms[static_cast<std::size_t>(s.treatment)];
    if (s.event == kCauseOfInterest) ++cause1;
  }
  if (arms[0] == 0 || arms[1] == 0) throw ValidationError("both treatment arms required");
  if (cause1 == 0) throw ValidationError("at least one event of cause 1 required");

  time_order_.resize(samples_.size());
  std::iota(time_order_.begin(), time_order_.end(), std::size_t{0});
  std::stable_sort(time_order_.begin(), time_order_.end(), [this](std::size_t a, std::size_t b) {
    if (samples_[a].time != samples_[b].time) return samples_[a].time < samples_[b].time;
    return samples_[a].event > samples_[b].event;
  });
  for (std::size_t i : time_order_) {
    if (distinct_times_.empty() || distinct_times_.back() != samples_[i].time) {
      distinct_times_.push_back(samples_[i].time);
    }
  }
}

std::size_t Dataset::covariate_index(std::string_view name) const {
  const auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) throw ValidationError("unknown covariate '" + std::string(name) + "'");
  return static_cast<std::size_t>(it - names_.begin());
}

std::array<std::size_t, 2> Dataset::arm_sizes() const {
  std::array<std::size_t, 2> arms{};
  for (const auto& s : samples_) ++arms[static_cast<std::size_t>(s.treatment)];
  return arms;
}

// ---------------------------------------------------------------------------
// CSV

Dataset read_csv(std::istream& in, const CsvSchema& schema) {
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("CSV input is empty (header row required)");
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // BOM
  const auto header_views = split(line, ',');
  std::vector<std::string> header(header_views.begin(), header_views.end());

  auto find_column = [&](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw ValidationError("missing column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t time_col = find_column(schema.time);
  const std::size_t event_col = find_column(schema.event);
  const std::size_t treat_col = find_column(schema.treatment);

  std::vector<std::size_t> cov_cols;
  std::vector<std::string> cov_names;
  if (schema.covariates.empty()) {
    for (std::size_t c = 0; c < header.size(); ++c) {
      if (c == time_col || c == event_col || c == treat_col) continue;
      cov_cols.push_back(c);
      cov_names.push_back(header[c]);
    }
  } else {
    for (const auto& name : schema.covariates) {
      cov_cols.push_back(find_column(name));
      cov_names.push_back(name);
    }
  }

  std::vector<ObservedSample> samples;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    ++row;
    const auto fields = split(line, ',');
    if (fields.size() != header.size()) {
      throw ValidationError("row " + std::to_string(row) + ": expected " + std::to_string(header.size()) +
                            " fields, found " + std::to_string(fields.size()));
    }
    auto number = [&](std::size_t col) {
      double v = 0.0;
      if (!parse_double(fields[col], v) || !std::isfinite(v)) {
        throw ValidationError("row " + std::to_string(row) + ", column '" + header[col] +
                              "': non-finite or malformed value '" + std::string(fields[col]) + "'");
      }
      return v;
    };
    ObservedSample s;
    s.time = number(time_col);
    if (s.time < 0.0) {
      throw ValidationError("row " + std::to_string(row) + ", column '" + header[time_col] + "': negative time");
    }
    const double event = number(event_col);
    if (event != 0.0 && event != 1.0 && event != 2.0) {
      throw ValidationError("row " + std::to_string(row) + ", column '" + header[event_col] +
                            "': event code must be 0, 1 or 2");
    }
    s.event = static_cast<int>(event);
    const double treat = number(treat_col);
    if (treat != 0.0 && treat != 1.0) {
      throw ValidationError("row " + std::to_string(row) + ", column '" + header[treat_col] +
                            "': treatment must be 0 or 1");
    }
    s.treatment = static_cast<int>(treat);
    s.covariates.reserve(cov_cols.size());
    for (std::size_t c : cov_cols) s.covariates.push_back(number(c));
    samples.push_back(std::move(s));
  }
  return Dataset(std::move(samples), std::move(cov_names));
}

Dataset load_csv(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  return read_csv(in, schema);
}

void write_csv(const Dataset& data, std::ostream& out, const CsvSchema& schema) {
  out << schema.time << ',' << schema.event << ',' << schema.treatment;
  for (const auto& name : data.covariate_names()) out << ',' << name;
  out << '\n';
  for (const auto& s : data.samples()) {
    out << format_double(s.time) << ',' << s.event << ',' << s.treatment;
    for (double x : s.covariates) out << ',' << format_double(x);
    out << '\n';
  }
}

void save_csv(const Dataset& data, const std::string& path, const CsvSchema& schema) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  write_csv(data, out, schema);
  if (!out) throw IoError("write failed for '" + path + "'");
}

// ---------------------------------------------------------------------------
// Formulas

std::size_t ModelFormula::columns() const {
  std::size_t k = 0;
  for (const auto& t : terms) k += t.squared ? 2 : 1;
  return k;
}

const ModelFormula& FormulaSpec::for_model(NuisanceModel model) const {
  switch (model) {
    case NuisanceModel::Cause1: return cause1;
    case NuisanceModel::Cause2: return cause2;
    case NuisanceModel::Censoring: return censoring;
    case NuisanceModel::Treatment: return treatment;
  }
  return cause1;
}

FormulaSpec FormulaSpec::uniform(const ModelFormula& formula) {
  return FormulaSpec{formula, formula, formula, formula};
}

ModelFormula all_covariates(std::span<const std::string> names) {
  ModelFormula f;
  for (const auto& n : names) f.terms.push_back({n, false});
  return f;
}

ModelFormula parse_formula(std::string_view text, std::span<const std::string> names) {
  ModelFormula f;
  auto add = [&](std::string_view name, bool squared) {
    if (std::find(names.begin(), names.end(), name) == names.end()) {
      throw ValidationError("formula references unknown covariate '" + std::string(name) + "'");
    }
    for (auto& t : f.terms) {
      if (t.name == name) {
        t.squared = t.squared || squared;
        return;
      }
    }
    f.terms.push_back({std::string(name), squared});
  };
  std::string normalized(text);
  std::replace(normalized.begin(), normalized.end(), ',', '+');
  const auto tilde = normalized.find('~');
  if (tilde != std::string::npos) normalized.erase(0, tilde + 1);
  for (auto token : split(normalized, '+')) {
    if (token.empty() || token == "1") continue;
    if (token == ".") {
      for (const auto& n : names) add(n, false);
    } else if (token == "strata(treatment)") {
      f.by_arm = true;
    } else if (token.size() > 2 && token.substr(token.size() - 2) == "^2") {
      add(trim(token.substr(0, token.size() - 2)), true);
    } else {
      add(token, false);
    }
  }
  return f;
}

std::string format_formula(const ModelFormula& formula) {
  std::string out;
  for (const auto& t : formula.terms) {
    if (!out.empty()) out += " + ";
    out += t.name;
    if (t.squared) out += " + " + t.name + "^2";
  }
  if (formula.by_arm) out += out.empty() ? "strata(treatment)" : " + strata(treatment)";
  return out.empty() ? "1" : out;
}

DesignBuilder::DesignBuilder(const Dataset& data, const ModelFormula& formula, bool append_treatment)
    : append_treatment_(append_treatment) {
  for (const auto& t : formula.terms) {
    const auto idx = data.covariate_index(t.name);
    index_.push_back(idx);
    squared_.push_back(false);
    column_names_.push_back(t.name);
    if (t.squared) {
      index_.push_back(idx);
      squared_.push_back(true);
      column_names_.push_back(t.name + "^2");
    }
  }
  if (append_treatment_) column_names_.push_back("treatment");
}

Eigen::RowVectorXd DesignBuilder::row(const ObservedSample& sample, int arm) const {
  return row(std::span<const double>(sample.covariates), arm);
}

Eigen::RowVectorXd DesignBuilder::row(std::span<const double> covariates, int arm) const {
  Eigen::RowVectorXd r(static_cast<Eigen::Index>(columns()));
  for (std::size_t c = 0; c < index_.size(); ++c) {
    const double x = covariates[index_[c]];
    r(static_cast<Eigen::Index>(c)) = squared_[c] ? x * x : x;
  }
  if (append_treatment_) r(r.size() - 1) = static_cast<double>(arm);
  return r;
}

DesignMatrix design_matrix(const Dataset& data, const ModelFormula& formula, bool append_treatment) {
  const DesignBuilder builder(data, formula, append_treatment);
  DesignMatrix out;
  out.columns = builder.column_names();
  out.values.resize(static_cast<Eigen::Index>(data.size()), static_cast<Eigen::Index>(builder.columns()));
  for (std::size_t i = 0; i < data.size(); ++i) out.values.row(static_cast<Eigen::Index>(i)) = builder.row(data[i]);
  for (Eigen::Index c = 0; c < out.values.cols(); ++c) {
    if (out.values.rows() > 0 && (out.values.col(c).array() == out.values(0, c)).all()) {
      out.warnings.push_back("column '" + out.columns[static_cast<std::size_t>(c)] + "' is constant");
    }
  }
  return out;
}

DesignMatrix design_matrix(const Dataset& data, const FormulaSpec& spec, NuisanceModel model) {
  const auto& formula = spec.for_model(model);
  const bool append = model != NuisanceModel::Treatment && !formula.by_arm;
  return design_matrix(data, formula, append);
}

// ---------------------------------------------------------------------------

TauFeasibility tau_feasibility(const Dataset& data, double tau) {
  TauFeasibility report;
  report.tau = tau;
  for (const auto& s : data.samples()) {
    const auto arm = static_cast<std::size_t>(s.treatment);
    if (s.time >= tau) ++report.at_risk[arm];
    if (s.time <= tau) ++report.events_before[arm][static_cast<std::size_t>(s.event)];
  }
  std::ostringstream msg;
  if (!(tau > 0.0)) {
    msg << "horizon must be positive";
  } else if (report.at_risk[0] == 0 || report.at_risk[1] == 0) {
    msg << "no subject at risk at tau=" << tau << " in arm " << (report.at_risk[0] == 0 ? 0 : 1);
  } else {
    report.feasible = true;
    msg << "at risk at tau: " << report.at_risk[0] << " (arm 0), " << report.at_risk[1] << " (arm 1)";
  }
  report.message = msg.str();
  return report;
}

}  // namespace crate
