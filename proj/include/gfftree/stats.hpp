#pragma once

// Scalar-statistic bookkeeping for the Monte Carlo estimators, plus the small
// set of classical tests the suites use (least squares, Kolmogorov-Smirnov
// against Exp(1), chi-square goodness of fit).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace gfftree {

// count/sum/sum-of-squares; merging is associative, so chunked parallel
// reduction in fixed chunk order reproduces the serial result bit for bit.
struct Accumulator {
  long long n = 0;
  double sum = 0.0;
  double sumsq = 0.0;

  void add(double x) {
    ++n;
    sum += x;
    sumsq += x * x;
  }
  void merge(const Accumulator& o) {
    n += o.n;
    sum += o.sum;
    sumsq += o.sumsq;
  }
  double mean() const { return n > 0 ? sum / static_cast<double>(n) : 0.0; }
  double variance() const {
    if (n < 2) return 0.0;
    const double m = mean();
    const double v = (sumsq - static_cast<double>(n) * m * m) / static_cast<double>(n - 1);
    return v > 0.0 ? v : 0.0;
  }
  double std_error() const {
    return n > 0 ? std::sqrt(variance() / static_cast<double>(n)) : 0.0;
  }
};

struct EstimatorResult {
  double mean = 0.0;
  double std_error = 0.0;
  long long n_replicates = 0;
  std::uint64_t seed = 0;
  std::string meta;
};

inline EstimatorResult make_result(const Accumulator& acc, std::uint64_t seed,
                                   std::string meta = {}) {
  if (acc.n < 1) throw std::runtime_error("estimator: no replicates");
  return EstimatorResult{acc.mean(), acc.std_error(), acc.n, seed, std::move(meta)};
}

// z-score of the difference of two independent estimates.
inline double z_difference(const EstimatorResult& a, const EstimatorResult& b) {
  const double se = std::sqrt(a.std_error * a.std_error + b.std_error * b.std_error);
  return se > 0.0 ? (a.mean - b.mean) / se : 0.0;
}

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
};

inline LinearFit least_squares(const std::vector<double>& xs,
                               const std::vector<double>& ys) {
  if (xs.size() != ys.size() || xs.size() < 2)
    throw std::invalid_argument("least_squares: need >= 2 matching points");
  const double n = static_cast<double>(xs.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sx += xs[i];
    sy += ys[i];
    sxx += xs[i] * xs[i];
    sxy += xs[i] * ys[i];
  }
  const double den = n * sxx - sx * sx;
  if (den == 0.0) throw std::invalid_argument("least_squares: degenerate xs");
  LinearFit f;
  f.slope = (n * sxy - sx * sy) / den;
  f.intercept = (sy - f.slope * sx) / n;
  return f;
}

inline double median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median: empty");
  const std::size_t m = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + m, v.end());
  double hi = v[m];
  if (v.size() % 2 == 1) return hi;
  std::nth_element(v.begin(), v.begin() + m - 1, v.begin() + m);
  return 0.5 * (v[m - 1] + hi);
}

// sup |F_hat - F| against the standard exponential.
inline double ks_distance_exp1(std::vector<double> samples) {
  if (samples.empty()) throw std::invalid_argument("ks: empty sample");
  std::sort(samples.begin(), samples.end());
  const double n = static_cast<double>(samples.size());
  double d = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double f = 1.0 - std::exp(-samples[i]);
    d = std::max(d, std::abs(f - static_cast<double>(i) / n));
    d = std::max(d, std::abs(static_cast<double>(i + 1) / n - f));
  }
  return d;
}

// two-sample KS distance
inline double ks_distance_two_sample(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("ks: empty sample");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    if (a[i] <= b[j])
      ++i;
    else
      ++j;
    const double fa = static_cast<double>(i) / static_cast<double>(a.size());
    const double fb = static_cast<double>(j) / static_cast<double>(b.size());
    d = std::max(d, std::abs(fa - fb));
  }
  return d;
}

namespace detail {

// regularized upper incomplete gamma Q(a,x), series + continued fraction
inline double gamma_q(double a, double x) {
  if (a <= 0.0 || x < 0.0) throw std::invalid_argument("gamma_q: bad args");
  if (x == 0.0) return 1.0;
  const double lg = std::lgamma(a);
  if (x < a + 1.0) {
    double ap = a, del = 1.0 / a, sum = del;
    for (int i = 0; i < 500; ++i) {
      ap += 1.0;
      del *= x / ap;
      sum += del;
      if (std::abs(del) < std::abs(sum) * 1e-15) break;
    }
    return 1.0 - sum * std::exp(-x + a * std::log(x) - lg);
  }
  double b = x + 1.0 - a, c = 1e308, d = 1.0 / b, h = d;
  for (int i = 1; i < 500; ++i) {
    const double an = -static_cast<double>(i) * (static_cast<double>(i) - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < 1e-300) d = 1e-300;
    c = b + an / c;
    if (std::abs(c) < 1e-300) c = 1e-300;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < 1e-15) break;
  }
  return std::exp(-x + a * std::log(x) - lg) * h;
}

}  // namespace detail

// p-value of a chi-square statistic with dof degrees of freedom
inline double chi_square_pvalue(double stat, int dof) {
  if (dof < 1) throw std::invalid_argument("chi_square_pvalue: dof < 1");
  return detail::gamma_q(0.5 * dof, 0.5 * stat);
}

// Pearson statistic for observed counts vs expected probabilities; bins with
// expected count below min_expected are pooled into their right neighbour.
struct ChiSquareResult {
  double statistic = 0.0;
  int dof = 0;
  double p_value = 1.0;
};

inline ChiSquareResult chi_square_gof(const std::vector<long long>& observed,
                                      const std::vector<double>& expected_prob,
                                      double min_expected = 5.0) {
  if (observed.size() != expected_prob.size() || observed.empty())
    throw std::invalid_argument("chi_square_gof: size mismatch");
  long long total = 0;
  for (long long o : observed) total += o;
  std::vector<double> exp_pooled;
  std::vector<double> obs_pooled;
  double ecarry = 0.0, ocarry = 0.0;
  for (std::size_t i = 0; i < observed.size(); ++i) {
    ecarry += expected_prob[i] * static_cast<double>(total);
    ocarry += static_cast<double>(observed[i]);
    if (ecarry >= min_expected) {
      exp_pooled.push_back(ecarry);
      obs_pooled.push_back(ocarry);
      ecarry = ocarry = 0.0;
    }
  }
  if (ecarry > 0.0 || ocarry > 0.0) {
    if (exp_pooled.empty()) throw std::invalid_argument("chi_square_gof: too few counts");
    exp_pooled.back() += ecarry;
    obs_pooled.back() += ocarry;
  }
  if (exp_pooled.size() < 2) throw std::invalid_argument("chi_square_gof: <2 usable bins");
  ChiSquareResult r;
  for (std::size_t i = 0; i < exp_pooled.size(); ++i) {
    const double diff = obs_pooled[i] - exp_pooled[i];
    r.statistic += diff * diff / exp_pooled[i];
  }
  r.dof = static_cast<int>(exp_pooled.size()) - 1;
  r.p_value = chi_square_pvalue(r.statistic, r.dof);
  return r;
}

}  // namespace gfftree
