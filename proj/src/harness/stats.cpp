#include "kis/harness/stats.hpp"

#include <boost/math/distributions/binomial.hpp>
#include <boost/math/distributions/students_t.hpp>

#include <cmath>
#include <limits>
#include <stdexcept>

namespace kis::sim {

namespace {

void check_lengths(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("paired samples differ in length");
}

}  // namespace

TTestResult paired_t_test(std::span<const double> a, std::span<const double> b) {
  check_lengths(a, b);
  if (a.size() < 2) throw std::invalid_argument("paired t-test needs at least two pairs");
  const auto n = static_cast<double>(a.size());
  double mean = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) mean += a[i] - b[i];
  mean /= n;
  double ss = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i] - mean;
    ss += d * d;
  }
  TTestResult r;
  r.df = static_cast<int>(a.size()) - 1;
  r.mean_difference = mean;
  const double se = std::sqrt(ss / (n - 1.0) / n);
  if (!(se > 0.0)) {
    r.degenerate = true;
    r.t = mean == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), mean);
    r.p = std::numeric_limits<double>::quiet_NaN();
    return r;
  }
  r.t = mean / se;
  const boost::math::students_t dist(static_cast<double>(r.df));
  r.p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t)));
  return r;
}

SignTestResult sign_test(std::span<const double> a, std::span<const double> b) {
  check_lengths(a, b);
  SignTestResult r;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] > b[i]) {
      ++r.wins;
    } else if (a[i] < b[i]) {
      ++r.losses;
    } else {
      ++r.ties;
    }
  }
  const int n = r.wins + r.losses;
  if (n == 0 || r.wins == 0) return r;
  const boost::math::binomial_distribution<double> dist(n, 0.5);
  r.p = boost::math::cdf(boost::math::complement(dist, r.wins - 1));
  return r;
}

}  // namespace kis::sim
