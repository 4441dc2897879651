#include "crate/step_function.hpp"

#include <algorithm>
#include <cmath>

#include "crate/error.hpp"

namespace crate {

namespace {

void check_increasing(const std::vector<double>& times) {
  for (std::size_t k = 0; k < times.size(); ++k) {
    if (!std::isfinite(times[k])) {
      throw ValidationError("step function jump times must be finite");
    }
    if (k > 0 && !(times[k] > times[k - 1])) {
      throw ValidationError("step function jump times must be strictly increasing");
    }
  }
}

}  // namespace

StepFunction StepFunction::from_increments(std::vector<double> jump_times,
                                           std::span<const double> increments,
                                           double initial) {
  if (jump_times.size() != increments.size()) {
    throw ValidationError("step function: jump times and increments differ in length");
  }
  check_increasing(jump_times);
  StepFunction f;
  f.initial_ = initial;
  f.values_.resize(increments.size());
  double running = initial;
  for (std::size_t k = 0; k < increments.size(); ++k) {
    running += increments[k];
    f.values_[k] = running;
  }
  f.times_ = std::move(jump_times);
  return f;
}

StepFunction StepFunction::from_values(std::vector<double> jump_times,
                                       std::vector<double> values,
                                       double initial) {
  if (jump_times.size() != values.size()) {
    throw ValidationError("step function: jump times and values differ in length");
  }
  check_increasing(jump_times);
  StepFunction f;
  f.initial_ = initial;
  f.times_ = std::move(jump_times);
  f.values_ = std::move(values);
  return f;
}

std::ptrdiff_t StepFunction::last_jump_at_or_before(double t) const {
  auto it = std::upper_bound(times_.begin(), times_.end(), t);
  return static_cast<std::ptrdiff_t>(it - times_.begin()) - 1;
}

double StepFunction::value(double t) const {
  const auto k = last_jump_at_or_before(t);
  return k < 0 ? initial_ : values_[static_cast<std::size_t>(k)];
}

double StepFunction::left_value(double t) const {
  auto it = std::lower_bound(times_.begin(), times_.end(), t);
  const auto k = static_cast<std::ptrdiff_t>(it - times_.begin()) - 1;
  return k < 0 ? initial_ : values_[static_cast<std::size_t>(k)];
}

double StepFunction::increment(std::size_t k) const {
  return values_[k] - (k == 0 ? initial_ : values_[k - 1]);
}

std::vector<double> StepFunction::increments() const {
  std::vector<double> out(values_.size());
  for (std::size_t k = 0; k < values_.size(); ++k) out[k] = increment(k);
  return out;
}

StepFunction StepFunction::scaled(double factor) const {
  StepFunction f = *this;
  f.initial_ *= factor;
  for (double& v : f.values_) v *= factor;
  return f;
}

StepFunction StepFunction::truncated(double horizon) const {
  StepFunction f;
  f.initial_ = initial_;
  const auto k = last_jump_at_or_before(horizon) + 1;
  f.times_.assign(times_.begin(), times_.begin() + k);
  f.values_.assign(values_.begin(), values_.begin() + k);
  return f;
}

}  // namespace crate
