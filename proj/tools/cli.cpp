#include "cli.hpp"

#include <cstdlib>
#include <fstream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "crate/ate.hpp"
#include "crate/dataset.hpp"
#include "crate/error.hpp"
#include "crate/report.hpp"
#include "crate/simlab.hpp"

namespace crate::cli {

namespace {

constexpr const char* kWorkersEnv = "CRATE_WORKERS";

struct DataFlags {
  std::string path;
  std::string time_col = "time";
  std::string event_col = "event";
  std::string treatment_col = "treatment";
  std::vector<std::string> covariates;
};

struct ModelFlags {
  std::string outcome = ".";
  std::string cause1;
  std::string cause2;
  std::string treatment = ".";
  std::string censoring = ".";
  std::vector<double> truncation;
  std::string risk_mode = "product-limit";
  double level = 0.95;
};

struct OutputFlags {
  std::string path;
  std::string format = "json";
};

struct SimFlags {
  std::string scenario_file;
  std::string misspecified;
  std::vector<std::size_t> n;
  std::size_t replicates = 0;
  double tau = 0.0;
  std::uint64_t seed = 0;
  unsigned workers = 0;
  std::size_t oracle_size = 0;
  std::vector<std::string> estimators;
  std::string variance;
  std::string outcome, treatment, censoring;
};

void add_data_flags(CLI::App* cmd, DataFlags& f) {
  cmd->add_option("--data", f.path, "CSV file with a header row")->required();
  cmd->add_option("--time-col", f.time_col, "Column holding the observed time");
  cmd->add_option("--event-col", f.event_col, "Column holding the event code (0 censored, 1, 2)");
  cmd->add_option("--treatment-col", f.treatment_col, "Column holding the 0/1 treatment");
  cmd->add_option("--covariates", f.covariates, "Covariate columns (default: all remaining)")->delimiter(',');
}

void add_model_flags(CLI::App* cmd, ModelFlags& f) {
  cmd->add_option("--outcome-formula", f.outcome, "Terms of both cause-specific Cox models");
  cmd->add_option("--cause1-formula", f.cause1, "Overrides --outcome-formula for cause 1");
  cmd->add_option("--cause2-formula", f.cause2, "Overrides --outcome-formula for cause 2");
  cmd->add_option("--treatment-formula", f.treatment, "Terms of the propensity model");
  cmd->add_option("--censoring-formula", f.censoring, "Terms of the censoring Cox model");
  cmd->add_option("--truncate-propensity", f.truncation, "Clip propensities to lo,hi")
      ->delimiter(',')
      ->expected(2);
  cmd->add_option("--risk-mode", f.risk_mode, "Absolute risk composition")
      ->check(CLI::IsMember({"product-limit", "exponential"}));
  cmd->add_option("--level", f.level, "Confidence level")->check(CLI::Range(0.5, 0.999999));
}

void add_output_flags(CLI::App* cmd, OutputFlags& f, const std::string& default_format) {
  f.format = default_format;
  cmd->add_option("--out", f.path, "Output file (default: standard output)");
  cmd->add_option("--format", f.format, "Output format")->check(CLI::IsMember({"json", "csv"}));
}

void add_sim_flags(CLI::App* cmd, SimFlags& f, bool many_sizes) {
  cmd->add_option("--scenario-file", f.scenario_file, "key = value scenario description");
  cmd->add_option("--misspecified", f.misspecified, "Working-model scenario")
      ->check(CLI::IsMember({"correct", "treatment", "outcome", "censoring"}));
  if (many_sizes) {
    cmd->add_option("--n", f.n, "Sample sizes")->delimiter(',');
  } else {
    cmd->add_option("--n", f.n, "Sample size")->expected(1);
  }
  cmd->add_option("--replicates", f.replicates, "Monte Carlo replicates");
  cmd->add_option("--tau", f.tau, "Time horizon");
  cmd->add_option("--seed", f.seed, "Base seed");
  cmd->add_option("--workers", f.workers, std::string("Worker threads (default: $") + kWorkersEnv + " or 1)");
  cmd->add_option("--oracle-size", f.oracle_size, "Monte Carlo size of the true-ATE oracle");
  cmd->add_option("--estimator", f.estimators, "Estimators, or 'all'")->delimiter(',');
  cmd->add_option("--variance", f.variance, "AIPTW variance variant")
      ->check(CLI::IsMember({"tilde", "partial-phi", "both"}));
  cmd->add_option("--outcome-formula", f.outcome, "Outcome working models");
  cmd->add_option("--treatment-formula", f.treatment, "Propensity working model");
  cmd->add_option("--censoring-formula", f.censoring, "Censoring working model");
}

Dataset load_data(const DataFlags& f) {
  CsvSchema schema;
  schema.time = f.time_col;
  schema.event = f.event_col;
  schema.treatment = f.treatment_col;
  schema.covariates = f.covariates;
  return load_csv(f.path, schema);
}

FormulaSpec build_formulas(const Dataset& data, const ModelFlags& f) {
  const auto& names = data.covariate_names();
  FormulaSpec spec;
  spec.cause1 = parse_formula(f.cause1.empty() ? f.outcome : f.cause1, names);
  spec.cause2 = parse_formula(f.cause2.empty() ? f.outcome : f.cause2, names);
  spec.treatment = parse_formula(f.treatment, names);
  spec.censoring = parse_formula(f.censoring, names);
  return spec;
}

std::optional<Truncation> parse_truncation(const std::vector<double>& values) {
  if (values.empty()) return std::nullopt;
  const Truncation t{values[0], values[1]};
  if (!(t.lo >= 0.0 && t.lo < t.hi && t.hi <= 1.0)) {
    throw ValidationError("--truncate-propensity: need 0 <= lo < hi <= 1");
  }
  return t;
}

void apply_model_flags(AteOptions& options, const ModelFlags& f) {
  options.mode = f.risk_mode == "exponential" ? RiskMode::Exponential : RiskMode::ProductLimit;
  options.truncation = parse_truncation(f.truncation);
  options.level = f.level;
}

std::vector<Estimator> parse_estimators(const std::vector<std::string>& names) {
  std::vector<Estimator> out;
  for (const auto& name : names) {
    if (name == "all") return all_estimators();
    const auto e = parse_estimator(name);
    if (!e) throw ValidationError("unknown estimator '" + name + "'");
    out.push_back(*e);
  }
  return out;
}

// Writes the whole report at once so that a failed run leaves no partial file.
void emit(const OutputFlags& f, const std::string& text, std::ostream& out) {
  if (f.path.empty()) {
    out << text;
    return;
  }
  std::ofstream file(f.path, std::ios::binary);
  if (!file) throw IoError("cannot open output file '" + f.path + "'");
  file << text;
  file.close();
  if (!file) throw IoError("failed writing output file '" + f.path + "'");
}

unsigned env_workers() {
  const char* value = std::getenv(kWorkersEnv);
  if (!value || !*value) return 1;
  char* end = nullptr;
  const unsigned long w = std::strtoul(value, &end, 10);
  if (*end != '\0' || w == 0) {
    throw ValidationError(std::string(kWorkersEnv) + " must be a positive integer, got '" + value + "'");
  }
  return static_cast<unsigned>(w);
}

// Flags are layered over the scenario file through the same key = value
// parser, so both paths validate identically.
ScenarioSpec build_scenario(const SimFlags& f, const CLI::App* cmd, const ModelFlags& model) {
  ScenarioSpec base;
  base.workers = env_workers();
  if (!f.scenario_file.empty()) base = load_scenario_config(f.scenario_file, base);

  std::ostringstream lines;
  auto given = [&](const char* flag) { return cmd->count(flag) > 0; };
  if (given("--misspecified")) lines << "misspecified = " << f.misspecified << '\n';
  if (given("--n") && f.n.size() == 1) lines << "n = " << f.n.front() << '\n';
  if (given("--replicates")) lines << "replicates = " << f.replicates << '\n';
  if (given("--tau")) lines << "tau = " << format_number(f.tau) << '\n';
  if (given("--seed")) lines << "seed = " << f.seed << '\n';
  if (given("--workers")) lines << "workers = " << f.workers << '\n';
  if (given("--oracle-size")) lines << "oracle_size = " << f.oracle_size << '\n';
  if (given("--variance")) lines << "variance = " << f.variance << '\n';
  if (given("--outcome-formula")) lines << "outcome_formula = " << f.outcome << '\n';
  if (given("--treatment-formula")) lines << "treatment_formula = " << f.treatment << '\n';
  if (given("--censoring-formula")) lines << "censoring_formula = " << f.censoring << '\n';
  if (given("--estimator")) {
    lines << "estimators = ";
    for (std::size_t k = 0; k < f.estimators.size(); ++k) lines << (k ? "," : "") << f.estimators[k];
    lines << '\n';
  }
  std::istringstream in(lines.str());
  ScenarioSpec spec = parse_scenario_config(in, base);
  if (given("--replicates") && f.replicates == 0) throw ValidationError("replicates must be at least 1");
  if (spec.workers == 0) throw ValidationError("workers must be at least 1");
  if (given("--truncate-propensity")) spec.options.truncation = parse_truncation(model.truncation);
  if (given("--risk-mode")) {
    spec.options.mode = model.risk_mode == "exponential" ? RiskMode::Exponential : RiskMode::ProductLimit;
  }
  return spec;
}

ProgressCallback progress_printer(std::ostream& err, std::string label) {
  return [&err, label = std::move(label)](std::size_t done, std::size_t total) {
    const std::size_t batch = std::max<std::size_t>(1, total / 10);
    if (done % batch == 0 || done == total) err << label << ": " << done << "/" << total << " replicates\n";
  };
}

std::string summary_text(const OutputFlags& f, const std::vector<SimSummary>& summaries) {
  std::ostringstream text;
  if (f.format == "csv") {
    write_summary_csv(text, summaries);
  } else {
    write_summary_json(text, summaries);
  }
  return text.str();
}

struct Failure {
  const char* kind;
  int code;
};

void report_error(std::ostream& err, Failure failure, const std::string& message) {
  nlohmann::json j;
  j["error"] = failure.kind;
  j["exit_code"] = failure.code;
  j["message"] = message;
  err << j.dump() << '\n';
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Treatment effects on absolute risks from censored competing-risks data", "crate"};
  app.require_subcommand(1);
  app.set_config("--config", "", "TOML/INI file with option defaults; flags given on the command line win");

  DataFlags data_flags;
  ModelFlags model_flags;
  OutputFlags output_flags;
  OutputFlags risk_output;
  SimFlags sim_flags;
  std::vector<std::string> estimator_names{"all"};
  std::string variance = "tilde";
  bool stabilized = false;
  double tau = 0.0;
  std::vector<double> times;

  CLI::App* ate = app.add_subcommand("ate", "Estimate the average treatment effect at a horizon");
  add_data_flags(ate, data_flags);
  add_model_flags(ate, model_flags);
  add_output_flags(ate, output_flags, "json");
  ate->add_option("--tau", tau, "Time horizon")->required();
  ate->add_option("--estimator", estimator_names, "Estimators, or 'all'")->delimiter(',');
  ate->add_option("--variance", variance, "AIPTW variance variant")
      ->check(CLI::IsMember({"tilde", "partial-phi"}));
  ate->add_flag("--stabilized", stabilized, "Normalise IPTW-type arm risks by their weight sums");

  CLI::App* risk = app.add_subcommand("risk", "Arm-wise absolute risks on a time grid");
  add_data_flags(risk, data_flags);
  add_model_flags(risk, model_flags);
  add_output_flags(risk, risk_output, "csv");
  risk->add_option("--times", times, "Grid times")->delimiter(',')->required();

  CLI::App* simulate = app.add_subcommand("simulate", "Run one Monte Carlo scenario");
  add_sim_flags(simulate, sim_flags, false);
  add_output_flags(simulate, output_flags, "json");
  simulate->add_option("--truncate-propensity", model_flags.truncation, "Clip propensities to lo,hi")
      ->delimiter(',')
      ->expected(2);
  simulate->add_option("--risk-mode", model_flags.risk_mode, "Absolute risk composition")
      ->check(CLI::IsMember({"product-limit", "exponential"}));

  CLI::App* coverage = app.add_subcommand("coverage", "Coverage study over several sample sizes");
  add_sim_flags(coverage, sim_flags, true);
  add_output_flags(coverage, output_flags, "json");
  coverage->add_option("--truncate-propensity", model_flags.truncation, "Clip propensities to lo,hi")
      ->delimiter(',')
      ->expected(2);
  coverage->add_option("--risk-mode", model_flags.risk_mode, "Absolute risk composition")
      ->check(CLI::IsMember({"product-limit", "exponential"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e, out, err);
  } catch (const CLI::FileError& e) {
    report_error(err, {"io", kExitIo}, e.what());
    return kExitIo;
  } catch (const CLI::ParseError& e) {
    report_error(err, {"validation", kExitValidation}, e.what());
    return kExitValidation;
  }

  try {
    if (ate->parsed()) {
      const Dataset data = load_data(data_flags);
      AteOptions options;
      apply_model_flags(options, model_flags);
      options.variance = variance == "partial-phi" ? VarianceVariant::PartialPhi : VarianceVariant::Tilde;
      options.stabilized = stabilized;
      const auto estimators = parse_estimators(estimator_names);
      const auto estimates = estimate_ate(data, build_formulas(data, model_flags), tau, estimators, options);
      std::ostringstream text;
      if (output_flags.format == "csv") {
        write_estimates_csv(text, estimates);
      } else {
        write_estimates_json(text, estimates);
      }
      emit(output_flags, text.str(), out);
    } else if (risk->parsed()) {
      const Dataset data = load_data(data_flags);
      AteOptions options;
      apply_model_flags(options, model_flags);
      const auto tables = risk_tables(data, build_formulas(data, model_flags), times, options);
      for (const auto& table : tables) {
        for (const auto& point : table.points) {
          if (!point.warning.empty()) {
            err << "warning: " << estimator_name(table.estimator) << " t=" << format_number(point.time) << ": "
                << point.warning << '\n';
          }
        }
      }
      std::ostringstream text;
      if (risk_output.format == "csv") {
        write_risk_csv(text, tables);
      } else {
        write_risk_json(text, tables);
      }
      emit(risk_output, text.str(), out);
    } else if (simulate->parsed()) {
      const ScenarioSpec spec = build_scenario(sim_flags, simulate, model_flags);
      const std::vector<SimSummary> summaries{run_scenario(spec, progress_printer(err, spec.name))};
      emit(output_flags, summary_text(output_flags, summaries), out);
    } else if (coverage->parsed()) {
      ScenarioSpec spec = build_scenario(sim_flags, coverage, model_flags);
      if (coverage->count("--variance") == 0) {
        spec.aiptw_variances = {VarianceVariant::Tilde, VarianceVariant::PartialPhi};
      }
      std::vector<std::size_t> sizes = sim_flags.n;
      if (sizes.empty()) sizes = {100, 500, 1000};
      if (coverage->count("--replicates") == 0 && sim_flags.scenario_file.empty()) spec.replicates = 1000;
      std::vector<SimSummary> summaries;
      for (std::size_t n : sizes) {
        spec.n = n;
        summaries.push_back(run_scenario(spec, progress_printer(err, spec.name + " n=" + std::to_string(n))));
      }
      emit(output_flags, summary_text(output_flags, summaries), out);
    }
  } catch (const ValidationError& e) {
    report_error(err, {"validation", kExitValidation}, e.what());
    return kExitValidation;
  } catch (const ConvergenceError& e) {
    report_error(err, {"convergence", kExitConvergence}, e.what());
    return kExitConvergence;
  } catch (const PositivityError& e) {
    report_error(err, {"positivity", kExitPositivity}, e.what());
    return kExitPositivity;
  } catch (const IoError& e) {
    report_error(err, {"io", kExitIo}, e.what());
    return kExitIo;
  } catch (const std::exception& e) {
    report_error(err, {"internal", 1}, e.what());
    return 1;
  }
  return 0;
}

}  // namespace crate::cli
