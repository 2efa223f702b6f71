#pragma once

// Student-t distribution via the regularized incomplete beta function
// (modified Lentz continued fraction), plus the paired t-test used by the
// experiment reports.

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <stdexcept>
#include <vector>

namespace pcs {

inline double mean(const std::vector<double>& v) {
  if (v.empty()) throw std::invalid_argument("mean: empty sample");
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// Unbiased sample standard deviation.
inline double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) throw std::invalid_argument("sample_std: need at least 2 samples");
  double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

namespace detail {

// Modified Lentz algorithm.
inline double continued_fraction(const std::function<double(int)>& numer,
                                 const std::function<double(int)>& denom,
                                 double tolerance, int max_terms) {
  const double tiny = 1e-300;
  double ret = denom(0);
  if (ret == 0.0) ret = tiny;
  double c = ret;
  double d = 0.0;
  for (int n = 1; n < max_terms; ++n) {
    double nn = numer(n);
    double nd = denom(n);
    d = nd + nn * d;
    if (d == 0.0) d = tiny;
    c = nd + nn / c;
    if (c == 0.0) c = tiny;
    d = 1.0 / d;
    double mult = c * d;
    ret *= mult;
    if (std::fabs(mult - 1.0) <= tolerance) break;
  }
  return ret;
}

inline double log_beta(double a, double b) { return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b); }

// Textbook continued fraction terms for the incomplete beta function.
inline double inc_beta_cf(double x, double a, double b) {
  auto numer = [x, a, b](int n) {
    if (n % 2 == 0) {
      double m = n / 2;
      return m * (b - m) * x / (a + 2.0 * m - 1.0) / (a + 2.0 * m);
    }
    double m = (n - 1) / 2;
    return -(a + m) * (a + b + m) * x / (a + 2.0 * m) / (a + 2.0 * m + 1.0);
  };
  auto denom = [](int) { return 1.0; };
  return continued_fraction(numer, denom, 1e-15, 200000);
}

}  // namespace detail

inline double regularized_inc_beta(double x, double a, double b) {
  if (!(x >= 0.0 && x <= 1.0 && a > 0.0 && b > 0.0)) return std::numeric_limits<double>::quiet_NaN();
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  double logx = std::log(x);
  double logy = std::log1p(-x);
  if (x <= (a + 1.0) / (a + b + 2.0))
    return std::exp(logx * a + logy * b - detail::log_beta(a, b)) / a / detail::inc_beta_cf(x, a, b);
  return 1.0 - std::exp(logy * b + logx * a - detail::log_beta(a, b)) / b / detail::inc_beta_cf(1.0 - x, b, a);
}

inline double student_t_cdf(double x, double dof) {
  if (!(dof > 0.0)) return std::numeric_limits<double>::quiet_NaN();
  double r = regularized_inc_beta(dof / (x * x + dof), dof / 2.0, 0.5) / 2.0;
  return x >= 0.0 ? 1.0 - r : r;
}

struct TTestResult {
  double t = 0.0;
  double p = std::numeric_limits<double>::quiet_NaN();
  double delta_mu = 0.0;  // mean(y) - mean(x)
  std::size_t n = 0;
  // All pairwise differences identical: t/p undefined, reported as a sentinel.
  bool zero_variance = false;
};

// Two-sided paired t-test on per-index differences y[i] - x[i].
inline TTestResult paired_ttest(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw std::invalid_argument("paired_ttest: size mismatch");
  if (x.size() < 2) throw std::invalid_argument("paired_ttest: need at least 2 pairs");
  std::size_t n = x.size();
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = y[i] - x[i];
  TTestResult res;
  res.n = n;
  res.delta_mu = mean(d);
  double sd = sample_std(d);
  if (sd == 0.0) {
    res.zero_variance = true;
    res.t = 0.0;
    return res;
  }
  res.t = res.delta_mu / (sd / std::sqrt(static_cast<double>(n)));
  double dof = static_cast<double>(n - 1);
  double tail = res.t >= 0.0 ? 1.0 - student_t_cdf(res.t, dof) : student_t_cdf(res.t, dof);
  res.p = 2.0 * tail;
  return res;
}

}  // namespace pcs
