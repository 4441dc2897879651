#pragma once

// Shared fixtures and brute-force reference implementations. Everything here
// is written independently of the library's algorithms so that tests compare
// two unrelated computations.

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "crate/dataset.hpp"

namespace crate::testkit {

struct ToyOptions {
  std::size_t n = 200;
  std::uint64_t seed = 1;
  double censoring_rate = 0.05;  // 0 = uncensored
  bool round_times = false;      // round to 0.1 to create ties
  int covariates = 2;
};

// Exponential competing risks with a binary confounder-driven treatment:
//   x1 ~ N(0,1), x2 ~ Bernoulli(0.5), P(A=1) = expit(0.4 x1 - 0.3 x2),
//   cause 1 rate 0.10 exp(0.5 x1 + 0.3 x2 - 0.4 A), cause 2 rate 0.05 exp(-0.3 x1 + 0.2 A).
inline Dataset toy_data(const ToyOptions& o = {}) {
  std::mt19937_64 rng(o.seed);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<ObservedSample> samples;
  for (std::size_t i = 0; i < o.n; ++i) {
    const double x1 = normal(rng);
    const double x2 = unif(rng) < 0.5 ? 1.0 : 0.0;
    const int a = unif(rng) < 1.0 / (1.0 + std::exp(-(0.4 * x1 - 0.3 * x2))) ? 1 : 0;
    const double r1 = 0.10 * std::exp(0.5 * x1 + 0.3 * x2 - 0.4 * a);
    const double r2 = 0.05 * std::exp(-0.3 * x1 + 0.2 * a);
    const double t1 = -std::log(1.0 - unif(rng)) / r1;
    const double t2 = -std::log(1.0 - unif(rng)) / r2;
    double c = o.censoring_rate > 0 ? -std::log(1.0 - unif(rng)) / o.censoring_rate : INFINITY;
    double t = std::min({t1, t2, c});
    int event = t == t1 ? 1 : t == t2 ? 2 : 0;
    if (o.round_times) t = std::max(0.1, std::round(t * 10.0) / 10.0);
    ObservedSample s;
    s.time = t;
    s.event = event;
    s.treatment = a;
    if (o.covariates >= 1) s.covariates.push_back(x1);
    if (o.covariates >= 2) s.covariates.push_back(x2);
    samples.push_back(std::move(s));
  }
  std::vector<std::string> names{"x1", "x2"};
  names.resize(static_cast<std::size_t>(o.covariates));
  return Dataset(std::move(samples), names);
}

// Resample with replacement (bootstrap) or drop one subject (jackknife).
inline Dataset resample(const Dataset& data, const std::vector<std::size_t>& index) {
  std::vector<ObservedSample> samples;
  samples.reserve(index.size());
  for (std::size_t i : index) samples.push_back(data[i]);
  return Dataset(std::move(samples), data.covariate_names());
}

inline Dataset leave_out(const Dataset& data, std::size_t skip) {
  std::vector<std::size_t> index;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (i != skip) index.push_back(i);
  }
  return resample(data, index);
}

// Aalen-Johansen cumulative incidence of cause 1 at tau in one arm (or all
// subjects when arm < 0), computed by a direct pass over distinct times.
inline double naive_aalen_johansen(const Dataset& data, double tau, int arm = -1) {
  std::vector<double> times;
  for (const auto& s : data.samples()) {
    if (arm < 0 || s.treatment == arm) times.push_back(s.time);
  }
  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end()), times.end());
  double surv = 1.0, f1 = 0.0;
  for (double t : times) {
    if (t > tau) break;
    double at_risk = 0, d1 = 0, d2 = 0;
    for (const auto& s : data.samples()) {
      if (arm >= 0 && s.treatment != arm) continue;
      if (s.time >= t) ++at_risk;
      if (s.time == t && s.event == 1) ++d1;
      if (s.time == t && s.event == 2) ++d2;
    }
    f1 += surv * d1 / at_risk;
    surv *= 1.0 - (d1 + d2) / at_risk;
  }
  return f1;
}

// Kaplan-Meier of censoring in one arm with subjects failing at t removed
// from the censoring risk set at t. Returns G(t-).
inline double naive_censoring_km_left(const Dataset& data, double t, int arm) {
  std::vector<double> times;
  for (const auto& s : data.samples()) {
    if (s.treatment == arm && s.event == 0) times.push_back(s.time);
  }
  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end()), times.end());
  double g = 1.0;
  for (double u : times) {
    if (u >= t) break;
    double at_risk = 0, c = 0;
    for (const auto& s : data.samples()) {
      if (s.treatment != arm) continue;
      if (s.time > u || (s.time == u && s.event == 0)) ++at_risk;
      if (s.time == u && s.event == 0) ++c;
    }
    g *= 1.0 - c / at_risk;
  }
  return g;
}

// Agreement of two influence vectors: correlation and ratio of norms.
struct Agreement {
  double correlation = 0.0;
  double norm_ratio = 0.0;
};

inline Agreement agreement(const std::vector<double>& a, const std::vector<double>& b) {
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<double>(a.size());
  mb /= static_cast<double>(b.size());
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return {sab / std::sqrt(saa * sbb), std::sqrt(saa / sbb)};
}

// Breslow log partial likelihood for one covariate, O(n^2).
inline double naive_cox_loglik(const std::vector<double>& time, const std::vector<int>& event,
                               const std::vector<double>& x, double beta) {
  double ll = 0.0;
  for (std::size_t i = 0; i < time.size(); ++i) {
    if (!event[i]) continue;
    double denom = 0.0;
    for (std::size_t j = 0; j < time.size(); ++j) {
      if (time[j] >= time[i]) denom += std::exp(beta * x[j]);
    }
    ll += beta * x[i] - std::log(denom);
  }
  return ll;
}

}  // namespace crate::testkit
