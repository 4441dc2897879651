#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace crate {

/// Right-continuous step function with finitely many jumps.
///
/// Stores the value reached right after each jump; `initial()` is the value
/// on [0, first jump). Cumulative hazards start at 0 and have nonnegative
/// increments; survival curves start at 1 and decrease.
class StepFunction {
 public:
  StepFunction() = default;

  /// `jump_times` must be strictly increasing.
  static StepFunction from_increments(std::vector<double> jump_times,
                                      std::span<const double> increments,
                                      double initial = 0.0);
  static StepFunction from_values(std::vector<double> jump_times,
                                  std::vector<double> values,
                                  double initial = 0.0);

  /// F(t) = initial + sum of increments at jump times <= t.
  double value(double t) const;
  /// F(t-) = initial + sum of increments at jump times < t.
  double left_value(double t) const;

  double initial() const { return initial_; }
  std::span<const double> jump_times() const { return times_; }
  std::span<const double> values() const { return values_; }
  std::size_t size() const { return times_.size(); }
  bool empty() const { return times_.empty(); }

  double increment(std::size_t k) const;
  std::vector<double> increments() const;

  /// Index of the last jump <= t, or -1 when t precedes every jump.
  std::ptrdiff_t last_jump_at_or_before(double t) const;

  /// Multiplies initial value and every value by `factor`.
  StepFunction scaled(double factor) const;
  /// Drops jumps strictly after `horizon`.
  StepFunction truncated(double horizon) const;

 private:
  std::vector<double> times_;
  std::vector<double> values_;
  double initial_ = 0.0;
};

}  // namespace crate
