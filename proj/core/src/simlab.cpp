#include "crate/simlab.hpp"

#include <atomic>
#include <bit>
#include <cmath>
#include <fstream>
#include <istream>
#include <mutex>
#include <random>
#include <sstream>
#include <thread>

#include <boost/math/distributions/normal.hpp>

#include "crate/error.hpp"
#include "crate/inference.hpp"

namespace crate {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t kOracleStream = 0xFFFFFFFFFFFFFFFFULL;

// Term values in coefficient order, without the intercept.
using Terms = std::array<double, 18>;

class SubjectGenerator {
 public:
  SubjectGenerator(const DgmSpec& spec, std::uint64_t stream)
      : spec_(spec), rng_(splitmix64(spec.seed ^ splitmix64(stream))) {}

  struct Draw {
    std::array<double, kSimCovariates> x{};
    int treatment = 0;
    double u1 = 0.0, u2 = 0.0, uc = 0.0;
  };

  Draw next() {
    Draw d;
    for (std::size_t k = 0; k < 6; ++k) d.x[k] = normal_(rng_);
    for (std::size_t k = 6; k < 12; ++k) d.x[k] = uniform() < 0.5 ? 1.0 : 0.0;
    const Terms z = terms(d.x);
    d.treatment = uniform() < expit(linear(spec_.treatment, z)) ? 1 : 0;
    d.u1 = uniform();
    d.u2 = uniform();
    d.uc = uniform();
    last_terms_ = z;
    return d;
  }

  // Latent time of `model` for the last draw under treatment `arm`.
  double latent(const LatentTime& model, double u, int arm) const {
    const double rate = model.scale * std::exp(linear(model.coefficients, last_terms_) + model.treatment_effect * arm);
    return std::pow(-std::log1p(-u) / rate, 1.0 / model.shape);
  }

  static Terms terms(const std::array<double, kSimCovariates>& x) {
    Terms z{};
    for (std::size_t k = 0; k < 6; ++k) {
      z[k] = x[k];
      z[6 + k] = x[k] * x[k];
      z[12 + k] = x[6 + k];
    }
    return z;
  }

  static double linear(const Coefficients& c, const Terms& z) {
    double v = c[0];
    for (std::size_t k = 0; k < z.size(); ++k) v += c[k + 1] * z[k];
    return v;
  }

 private:
  double uniform() { return std::generate_canonical<double, 53>(rng_); }

  const DgmSpec& spec_;
  std::mt19937_64 rng_;
  std::normal_distribution<double> normal_;
  Terms last_terms_{};
};

// Competing latent times: earliest wins, cause 1 on exact ties.
std::pair<double, int> first_event(double t1, double t2) { return t2 < t1 ? std::pair{t2, 2} : std::pair{t1, 1}; }

bool same(double a, double b) { return std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(b); }

Coefficients coef(std::initializer_list<std::pair<const char*, double>> entries) {
  Coefficients c{};
  for (const auto& [name, value] : entries) {
    for (std::size_t k = 0; k < c.size(); ++k) {
      if (coefficient_name(k) == name) c[k] = value;
    }
  }
  return c;
}

bool is_aiptw(Estimator e) { return e == Estimator::AiptwIpcw || e == Estimator::AiptwAipcw; }

std::string fixed_variance_tag(Estimator e) {
  return e == Estimator::GFormula ? "tilde+phi" : "tilde+treatment";
}

}  // namespace

DgmSpec DgmSpec::default_spec() {
  DgmSpec s;
  s.treatment = coef({{"intercept", -0.5}, {"X1", 0.5}, {"X4", 0.5}, {"X5", -0.5}, {"X1^2", 0.5},
                      {"X10", 0.5}, {"X11", -0.5}});
  s.cause1.coefficients = coef({{"X1", 0.3}, {"X2", -0.3}, {"X4", 0.3}, {"X5", -0.3}, {"X1^2", 0.3},
                                {"X7", 0.3}, {"X10", 0.3}, {"X11", -0.3}});
  s.cause1.scale = 0.004;
  s.cause2.coefficients = coef({{"X1", -0.3}, {"X3", 0.3}, {"X6", 0.3}, {"X3^2", 0.3}, {"X8", -0.3}, {"X12", 0.3}});
  s.cause2.scale = 0.002;
  s.censoring.coefficients = coef({{"X2", 0.3}, {"X2^2", 0.3}, {"X9", -0.3}});
  s.censoring.scale = 0.003;
  return s;
}

void DgmSpec::validate() const {
  for (const LatentTime* m : {&cause1, &cause2, &censoring}) {
    if (!(m->shape > 0.0) || !(m->scale > 0.0) || !std::isfinite(m->shape) || !std::isfinite(m->scale)) {
      throw ValidationError("simulation: Weibull shape and scale must be positive");
    }
  }
}

std::string coefficient_name(std::size_t index) {
  if (index == 0) return "intercept";
  if (index <= 6) return "X" + std::to_string(index);
  if (index <= 12) return "X" + std::to_string(index - 6) + "^2";
  if (index <= 18) return "X" + std::to_string(index - 6);
  throw ValidationError("coefficient index out of range");
}

std::vector<std::string> simulated_covariate_names() {
  std::vector<std::string> names;
  for (std::size_t k = 1; k <= kSimCovariates; ++k) names.push_back("X" + std::to_string(k));
  return names;
}

SimulatedData simulate(const DgmSpec& spec, std::size_t n, std::uint64_t stream) {
  spec.validate();
  SimulatedData out;
  out.samples.reserve(n);
  auto& po = out.potential;
  po.time0.resize(n);
  po.time1.resize(n);
  po.cause0.resize(n);
  po.cause1.resize(n);
  SubjectGenerator gen(spec, stream);
  for (std::size_t i = 0; i < n; ++i) {
    const auto d = gen.next();
    for (int arm = 0; arm < 2; ++arm) {
      const auto [t, c] = first_event(gen.latent(spec.cause1, d.u1, arm), gen.latent(spec.cause2, d.u2, arm));
      (arm == 0 ? po.time0 : po.time1)[i] = t;
      (arm == 0 ? po.cause0 : po.cause1)[i] = c;
    }
    const auto a = static_cast<std::size_t>(d.treatment);
    const double t = a == 1 ? po.time1[i] : po.time0[i];
    const int cause = a == 1 ? po.cause1[i] : po.cause0[i];
    const double c = gen.latent(spec.censoring, d.uc, d.treatment);
    ObservedSample s;
    s.treatment = d.treatment;
    s.covariates.assign(d.x.begin(), d.x.end());
    if (c < t) {
      s.time = c;
      s.event = kCensored;
    } else {
      s.time = t;
      s.event = cause;
    }
    out.samples.push_back(std::move(s));
  }
  return out;
}

Dataset simulate_dataset(const DgmSpec& spec, std::size_t n, std::uint64_t stream) {
  return Dataset(simulate(spec, n, stream).samples, simulated_covariate_names());
}

OracleValue true_ate_oracle(const DgmSpec& spec, double tau, std::size_t m) {
  if (m < 100000) throw ValidationError("oracle sample size must be at least 1e5");
  spec.validate();
  SubjectGenerator gen(spec, kOracleStream);
  double sum1 = 0.0, sum0 = 0.0, sum_d = 0.0, sum_d2 = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const auto d = gen.next();
    std::array<double, 2> y{};
    for (int arm = 0; arm < 2; ++arm) {
      const auto [t, c] = first_event(gen.latent(spec.cause1, d.u1, arm), gen.latent(spec.cause2, d.u2, arm));
      y[static_cast<std::size_t>(arm)] = (t <= tau && c == 1) ? 1.0 : 0.0;
    }
    sum1 += y[1];
    sum0 += y[0];
    const double diff = y[1] - y[0];
    sum_d += diff;
    sum_d2 += diff * diff;
  }
  const auto mm = static_cast<double>(m);
  OracleValue v;
  v.risk1 = sum1 / mm;
  v.risk0 = sum0 / mm;
  v.ate = sum_d / mm;
  const double var = (sum_d2 - mm * v.ate * v.ate) / (mm - 1.0);
  v.se = std::sqrt(std::max(var, 0.0) / mm);
  return v;
}

// ---------------------------------------------------------------------------

ModelFormula degrade_formula(const ModelFormula& formula, Degrade mode) {
  if (mode == Degrade::None) return formula;
  const bool drop_cov = mode == Degrade::DropCovariates || mode == Degrade::Both;
  const bool drop_sq = mode == Degrade::DropSquares || mode == Degrade::Both;
  static const std::array<std::string_view, 6> dropped{"X4", "X5", "X6", "X10", "X11", "X12"};
  ModelFormula out;
  out.by_arm = formula.by_arm;
  for (const Term& t : formula.terms) {
    if (drop_cov && std::find(dropped.begin(), dropped.end(), t.name) != dropped.end()) continue;
    out.terms.push_back({t.name, drop_sq ? false : t.squared});
  }
  return out;
}

FormulaSpec degrade_formula(const FormulaSpec& spec, Degrade mode) {
  return FormulaSpec{degrade_formula(spec.cause1, mode), degrade_formula(spec.cause2, mode),
                     degrade_formula(spec.censoring, mode), degrade_formula(spec.treatment, mode)};
}

ModelFormula full_simulation_formula() {
  ModelFormula f;
  for (std::size_t k = 1; k <= kSimCovariates; ++k) f.terms.push_back({"X" + std::to_string(k), k <= 6});
  return f;
}

std::string_view misspecification_name(Misspecification m) {
  switch (m) {
    case Misspecification::None: return "correct";
    case Misspecification::Treatment: return "treatment";
    case Misspecification::Outcome: return "outcome";
    case Misspecification::Censoring: return "censoring";
  }
  return "correct";
}

FormulaSpec scenario_formulas(Misspecification m) {
  FormulaSpec f = FormulaSpec::uniform(full_simulation_formula());
  switch (m) {
    case Misspecification::None:
      break;
    case Misspecification::Treatment:
      f.treatment = degrade_formula(f.treatment, Degrade::Both);
      break;
    case Misspecification::Outcome:
      f.cause1 = degrade_formula(f.cause1, Degrade::Both);
      f.cause2 = degrade_formula(f.cause2, Degrade::Both);
      break;
    case Misspecification::Censoring:
      f.censoring = degrade_formula(f.censoring, Degrade::DropSquares);
      break;
  }
  return f;
}

// ---------------------------------------------------------------------------

const SimRow& SimSummary::row(Estimator estimator, std::string_view variance) const {
  for (const auto& r : rows) {
    if (r.estimator == estimator && (variance.empty() || r.variance == variance)) return r;
  }
  throw ValidationError("summary has no row for " + std::string(estimator_name(estimator)));
}

bool operator==(const SimSummary& a, const SimSummary& b) {
  if (a.name != b.name || a.n != b.n || a.replicates != b.replicates || !same(a.tau, b.tau) || a.seed != b.seed ||
      !same(a.truth.ate, b.truth.ate) || !same(a.truth.se, b.truth.se) || a.failures != b.failures ||
      a.positivity_failures != b.positivity_failures || a.rows.size() != b.rows.size() ||
      a.details.size() != b.details.size()) {
    return false;
  }
  for (std::size_t k = 0; k < a.rows.size(); ++k) {
    const SimRow& x = a.rows[k];
    const SimRow& y = b.rows[k];
    if (x.estimator != y.estimator || x.variance != y.variance || x.successes != y.successes ||
        !same(x.mean_estimate, y.mean_estimate) || !same(x.bias, y.bias) || !same(x.sd, y.sd) ||
        !same(x.mc_se, y.mc_se) || !same(x.mean_se, y.mean_se) || !same(x.coverage, y.coverage)) {
      return false;
    }
  }
  for (std::size_t r = 0; r < a.details.size(); ++r) {
    const auto& x = a.details[r];
    const auto& y = b.details[r];
    if (x.ok != y.ok || x.error != y.error || x.estimate.size() != y.estimate.size()) return false;
    for (std::size_t k = 0; k < x.estimate.size(); ++k) {
      if (!same(x.estimate[k], y.estimate[k]) || !same(x.se[k], y.se[k])) return false;
    }
  }
  return true;
}

namespace {

struct RowKey {
  Estimator estimator;
  std::optional<VarianceVariant> variant;  // AIPTW types only
  std::string tag;
};

std::vector<RowKey> row_layout(const ScenarioSpec& spec) {
  std::vector<RowKey> rows;
  for (Estimator e : spec.estimators) {
    if (is_aiptw(e)) {
      for (VarianceVariant v : spec.aiptw_variances) rows.push_back({e, v, std::string(variance_name(v))});
    } else {
      rows.push_back({e, std::nullopt, fixed_variance_tag(e)});
    }
  }
  return rows;
}

ReplicateResult run_replicate(const ScenarioSpec& spec, const std::vector<RowKey>& layout, std::size_t rep) {
  ReplicateResult result;
  try {
    const Dataset data = simulate_dataset(spec.dgm, spec.n, rep + 1);
    const NuisanceModels models = fit_nuisance_models(data, spec.formulas, requirements(spec.estimators), spec.options);
    const NuisanceBundle bundle = build_bundle(data, models, spec.tau, spec.options);
    InferenceContext inference(data, models, bundle, spec.options);
    for (const RowKey& key : layout) {
      AteEstimate est = compute_estimator(key.estimator, bundle, data, spec.options.stabilized);
      inference.attach(est, key.variant);
      result.estimate.push_back(est.ate);
      result.se.push_back(est.se);
    }
    result.ok = true;
  } catch (const PositivityError& e) {
    result.positivity_failure = true;
    result.error = e.what();
  } catch (const Error& e) {
    result.error = e.what();
  }
  if (!result.ok) {
    result.estimate.clear();
    result.se.clear();
  }
  return result;
}

}  // namespace

SimSummary run_scenario(const ScenarioSpec& spec, const ProgressCallback& progress) {
  if (spec.replicates < 1) throw ValidationError("replicates must be at least 1");
  if (spec.n < 2) throw ValidationError("sample size must be at least 2");
  if (spec.estimators.empty()) throw ValidationError("no estimator requested");
  if (!(spec.tau > 0.0)) throw ValidationError("tau must be positive");
  spec.dgm.validate();

  SimSummary summary;
  summary.name = spec.name;
  summary.n = spec.n;
  summary.replicates = spec.replicates;
  summary.tau = spec.tau;
  summary.seed = spec.dgm.seed;
  summary.truth = true_ate_oracle(spec.dgm, spec.tau, spec.oracle_size);

  const auto layout = row_layout(spec);
  summary.details.resize(spec.replicates);
  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> done{0};
  std::mutex progress_mutex;
  auto worker = [&] {
    for (std::size_t r = next++; r < spec.replicates; r = next++) {
      summary.details[r] = run_replicate(spec, layout, r);
      const std::size_t finished = ++done;
      if (progress) {
        const std::lock_guard lock(progress_mutex);
        progress(finished, spec.replicates);
      }
    }
  };
  const unsigned workers = std::max(1u, std::min<unsigned>(spec.workers, static_cast<unsigned>(spec.replicates)));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  // Ordered reduction over replicate index.
  const double z = boost::math::quantile(boost::math::normal(), 0.5 + spec.options.level / 2.0);
  for (const auto& d : summary.details) {
    if (!d.ok) {
      ++summary.failures;
      if (d.positivity_failure) ++summary.positivity_failures;
    }
  }
  const double truth = summary.truth.ate;
  for (std::size_t k = 0; k < layout.size(); ++k) {
    SimRow row;
    row.estimator = layout[k].estimator;
    row.variance = layout[k].tag;
    row.truth = truth;
    double sum = 0.0, sum_se = 0.0, covered = 0.0;
    for (const auto& d : summary.details) {
      if (!d.ok) continue;
      ++row.successes;
      sum += d.estimate[k];
      sum_se += d.se[k];
      if (std::abs(d.estimate[k] - truth) <= z * d.se[k]) covered += 1.0;
    }
    const auto m = static_cast<double>(row.successes);
    if (row.successes > 0) {
      row.mean_estimate = sum / m;
      row.bias = row.mean_estimate - truth;
      row.mean_se = sum_se / m;
      row.coverage = covered / m;
      double ss = 0.0;
      for (const auto& d : summary.details) {
        if (d.ok) ss += (d.estimate[k] - row.mean_estimate) * (d.estimate[k] - row.mean_estimate);
      }
      row.sd = row.successes > 1 ? std::sqrt(ss / (m - 1.0)) : 0.0;
      row.mc_se = row.sd / std::sqrt(m);
    } else {
      row.mean_estimate = row.bias = row.sd = row.mc_se = row.mean_se = row.coverage =
          std::numeric_limits<double>::quiet_NaN();
    }
    summary.rows.push_back(std::move(row));
  }
  return summary;
}

std::vector<SimSummary> run_coverage(const ScenarioSpec& base, std::span<const std::size_t> sizes,
                                     const ProgressCallback& progress) {
  std::vector<SimSummary> out;
  for (std::size_t n : sizes) {
    ScenarioSpec spec = base;
    spec.n = n;
    out.push_back(run_scenario(spec, progress));
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

std::string trim_copy(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

double to_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size() || !std::isfinite(v)) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ValidationError("scenario config: '" + key + "' expects a number, got '" + value + "'");
  }
}

std::uint64_t to_count(const std::string& key, const std::string& value) {
  const double v = to_double(key, value);
  if (v < 0.0 || v != std::floor(v)) {
    throw ValidationError("scenario config: '" + key + "' expects a nonnegative integer, got '" + value + "'");
  }
  return static_cast<std::uint64_t>(v);
}

LatentTime* latent_by_prefix(DgmSpec& dgm, const std::string& prefix) {
  if (prefix == "cause1") return &dgm.cause1;
  if (prefix == "cause2") return &dgm.cause2;
  if (prefix == "censoring") return &dgm.censoring;
  return nullptr;
}

}  // namespace

ScenarioSpec parse_scenario_config(std::istream& in, ScenarioSpec spec) {
  const auto names = simulated_covariate_names();
  std::string line;
  std::size_t lineno = 0;
  bool replicates_set = false;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim_copy(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ValidationError("scenario config line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim_copy(line.substr(0, eq));
    const std::string value = trim_copy(line.substr(eq + 1));
    const auto dot = key.find('.');
    if (key == "name") {
      spec.name = value;
    } else if (key == "n") {
      spec.n = to_count(key, value);
    } else if (key == "replicates") {
      spec.replicates = to_count(key, value);
      replicates_set = true;
    } else if (key == "tau") {
      spec.tau = to_double(key, value);
    } else if (key == "seed") {
      spec.dgm.seed = to_count(key, value);
    } else if (key == "workers") {
      spec.workers = static_cast<unsigned>(to_count(key, value));
    } else if (key == "oracle_size") {
      spec.oracle_size = to_count(key, value);
    } else if (key == "misspecified") {
      bool found = false;
      for (auto m : {Misspecification::None, Misspecification::Treatment, Misspecification::Outcome,
                     Misspecification::Censoring}) {
        if (value == misspecification_name(m)) {
          spec.formulas = scenario_formulas(m);
          found = true;
        }
      }
      if (!found) throw ValidationError("scenario config: unknown misspecification '" + value + "'");
      if (spec.name == "correct") spec.name = value;
    } else if (key == "estimators") {
      spec.estimators.clear();
      std::stringstream ss(value);
      std::string item;
      while (std::getline(ss, item, ',')) {
        item = trim_copy(item);
        if (item == "all") {
          spec.estimators = all_estimators();
          continue;
        }
        const auto e = parse_estimator(item);
        if (!e) throw ValidationError("scenario config: unknown estimator '" + item + "'");
        spec.estimators.push_back(*e);
      }
    } else if (key == "variance") {
      if (value == "tilde") {
        spec.aiptw_variances = {VarianceVariant::Tilde};
      } else if (value == "partial-phi") {
        spec.aiptw_variances = {VarianceVariant::PartialPhi};
      } else if (value == "both") {
        spec.aiptw_variances = {VarianceVariant::Tilde, VarianceVariant::PartialPhi};
      } else {
        throw ValidationError("scenario config: variance must be tilde, partial-phi or both");
      }
    } else if (key == "outcome_formula") {
      spec.formulas.cause1 = spec.formulas.cause2 = parse_formula(value, names);
    } else if (key == "treatment_formula") {
      spec.formulas.treatment = parse_formula(value, names);
    } else if (key == "censoring_formula") {
      spec.formulas.censoring = parse_formula(value, names);
    } else if (dot != std::string::npos) {
      // <model>.<field>, e.g. cause1.scale, cause1.X4, treatment.X1^2
      const std::string prefix = key.substr(0, dot);
      const std::string field = key.substr(dot + 1);
      Coefficients* target = nullptr;
      LatentTime* latent = latent_by_prefix(spec.dgm, prefix);
      if (prefix == "treatment") {
        target = &spec.dgm.treatment;
      } else if (latent) {
        target = &latent->coefficients;
        if (field == "scale" || field == "shape" || field == "effect") {
          const double v = to_double(key, value);
          (field == "scale" ? latent->scale : field == "shape" ? latent->shape : latent->treatment_effect) = v;
          continue;
        }
      }
      if (!target) throw ValidationError("scenario config: unknown key '" + key + "'");
      bool found = false;
      for (std::size_t k = 0; k < target->size(); ++k) {
        if (coefficient_name(k) == field) {
          (*target)[k] = to_double(key, value);
          found = true;
        }
      }
      if (!found) throw ValidationError("scenario config: unknown coefficient '" + key + "'");
    } else {
      throw ValidationError("scenario config: unknown key '" + key + "'");
    }
  }
  if (replicates_set && spec.replicates == 0) throw ValidationError("replicates must be at least 1");
  spec.dgm.validate();
  return spec;
}

ScenarioSpec load_scenario_config(const std::string& path, ScenarioSpec base) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open scenario file '" + path + "'");
  return parse_scenario_config(in, std::move(base));
}

}  // namespace crate
