#pragma once

#include <span>

namespace kis::sim {

struct TTestResult {
  double t = 0.0;
  double p = 0.0;  // two-sided; NaN when degenerate
  int df = 0;
  double mean_difference = 0.0;
  bool degenerate = false;  // zero variance of the differences
};

/// Two-sided paired t-test on a - b. Throws unless both have the same
/// length >= 2. With zero variance of the differences, t is 0 (all equal) or
/// +-inf and the result is flagged degenerate.
TTestResult paired_t_test(std::span<const double> a, std::span<const double> b);

struct SignTestResult {
  int wins = 0;  // a > b
  int losses = 0;
  int ties = 0;
  double p = 1.0;  // one-sided P(X >= wins) under Binomial(wins + losses, 1/2)
};

/// One-sided sign test that a tends to exceed b; ties are dropped.
SignTestResult sign_test(std::span<const double> a, std::span<const double> b);

}  // namespace kis::sim
