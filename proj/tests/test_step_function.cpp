#include <random>

#include <gtest/gtest.h>

#include "crate/error.hpp"
#include "crate/step_function.hpp"

using crate::StepFunction;

TEST(StepFunction, RightContinuousWithLeftLimits) {
  const std::vector<double> inc{0.5, 0.25, 1.0};
  const auto f = StepFunction::from_increments({1.0, 2.0, 4.0}, inc);
  EXPECT_EQ(f.value(0.0), 0.0);
  EXPECT_EQ(f.value(0.999), 0.0);
  EXPECT_EQ(f.value(1.0), 0.5);
  EXPECT_EQ(f.left_value(1.0), 0.0);
  EXPECT_EQ(f.value(3.0), 0.75);
  EXPECT_EQ(f.left_value(4.0), 0.75);
  EXPECT_EQ(f.value(4.0), 1.75);
  EXPECT_EQ(f.value(100.0), 1.75);
  EXPECT_EQ(f.last_jump_at_or_before(0.5), -1);
  EXPECT_EQ(f.last_jump_at_or_before(2.0), 1);
  EXPECT_DOUBLE_EQ(f.increment(1), 0.25);
}

TEST(StepFunction, SurvivalStartsAtInitial) {
  const auto s = StepFunction::from_values({1.0, 3.0}, {0.8, 0.4}, 1.0);
  EXPECT_EQ(s.value(0.5), 1.0);
  EXPECT_EQ(s.left_value(1.0), 1.0);
  EXPECT_EQ(s.value(3.0), 0.4);
  EXPECT_DOUBLE_EQ(s.increment(0), -0.2);
  const auto half = s.scaled(0.5);
  EXPECT_EQ(half.initial(), 0.5);
  EXPECT_EQ(half.value(3.0), 0.2);
}

TEST(StepFunction, TruncationDropsLaterJumps) {
  const std::vector<double> inc{1, 1, 1};
  const auto f = StepFunction::from_increments({1.0, 2.0, 3.0}, inc).truncated(2.0);
  EXPECT_EQ(f.size(), 2u);
  EXPECT_EQ(f.value(10.0), 2.0);
}

TEST(StepFunction, RejectsBadGrids) {
  const std::vector<double> two{1, 1};
  EXPECT_THROW(StepFunction::from_increments({2.0, 1.0}, two), crate::ValidationError);
  EXPECT_THROW(StepFunction::from_increments({1.0, 1.0}, two), crate::ValidationError);
  EXPECT_THROW(StepFunction::from_increments({1.0}, two), crate::ValidationError);
  EXPECT_THROW(StepFunction::from_values({1.0, NAN}, {1, 2}), crate::ValidationError);
}

TEST(StepFunction, ValueIsRunningSumOfIncrements) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<double> times, inc;
    double t = 0.0;
    for (int k = 0; k < 20; ++k) {
      t += 0.01 + u(rng);
      times.push_back(t);
      inc.push_back(u(rng));
    }
    const auto f = StepFunction::from_increments(times, inc, 0.3);
    for (int q = 0; q < 30; ++q) {
      const double at = u(rng) * (t + 1.0);
      double expected = 0.3, left = 0.3;
      for (std::size_t k = 0; k < times.size(); ++k) {
        if (times[k] <= at) expected += inc[k];
        if (times[k] < at) left += inc[k];
      }
      EXPECT_NEAR(f.value(at), expected, 1e-12);
      EXPECT_NEAR(f.left_value(at), left, 1e-12);
    }
    const auto back = f.increments();
    for (std::size_t k = 0; k < inc.size(); ++k) EXPECT_NEAR(back[k], inc[k], 1e-12);
  }
}
