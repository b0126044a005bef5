#include "gqr/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "gqr/common.hpp"

namespace gqr {

double normal_pdf(double x) {
  static const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  return inv_sqrt_2pi * std::exp(-0.5 * x * x);
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x * std::numbers::sqrt2 / 2.0); }

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw ValidationError("normal_quantile: p must lie in (0,1)");

  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double p_low = 0.02425;

  double x;
  if (p < p_low) {
    double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - p_low) {
    double q = p - 0.5;
    double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    double q = std::sqrt(-2.0 * std::log(1.0 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }

  // One Halley step against the exact CDF.
  double e = normal_cdf(x) - p;
  double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
  x -= u / (1.0 + 0.5 * x * u);
  return x;
}

double sample_quantile(std::span<const double> x, double p) {
  if (x.empty()) throw ValidationError("sample_quantile: empty data");
  if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("sample_quantile: p outside [0,1]");
  std::vector<double> s(x.begin(), x.end());
  std::sort(s.begin(), s.end());
  const double h = (static_cast<double>(s.size()) - 1.0) * p;
  const std::size_t lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, s.size() - 1);
  return s[lo] + (h - static_cast<double>(lo)) * (s[hi] - s[lo]);
}

double sample_quantile(const Eigen::VectorXd& x, double p) {
  return sample_quantile(std::span<const double>(x.data(), static_cast<std::size_t>(x.size())), p);
}

double mean(std::span<const double> x) {
  if (x.empty()) throw ValidationError("mean: empty data");
  KahanSum s;
  for (double v : x) s.add(v);
  return s.value() / static_cast<double>(x.size());
}

double variance(std::span<const double> x) {
  if (x.size() < 2) throw ValidationError("variance: need at least two points");
  const double m = mean(x);
  KahanSum s;
  for (double v : x) s.add((v - m) * (v - m));
  return s.value() / static_cast<double>(x.size() - 1);
}

double stddev(std::span<const double> x) { return std::sqrt(variance(x)); }

double hall_sheather_bandwidth(double tau, int n, double alpha) {
  if (!(tau > 0.0 && tau < 1.0)) throw ValidationError("hall_sheather_bandwidth: tau outside (0,1)");
  if (n < 2) throw ValidationError("hall_sheather_bandwidth: n too small");
  const double z_a = normal_quantile(1.0 - alpha / 2.0);
  const double z_t = normal_quantile(tau);
  const double f = normal_pdf(z_t);
  double h = std::pow(static_cast<double>(n), -1.0 / 3.0) * std::pow(z_a, 2.0 / 3.0) *
             std::pow(1.5 * f * f / (2.0 * z_t * z_t + 1.0), 1.0 / 3.0);
  while (tau - h <= 0.0 || tau + h >= 1.0) h /= 2.0;
  return h;
}

double powell_bandwidth(const Eigen::VectorXd& residuals, double tau) {
  const int n = static_cast<int>(residuals.size());
  if (n < 2) throw ValidationError("powell_bandwidth: need at least two residuals");
  const double h_tau = hall_sheather_bandwidth(tau, n);
  std::span<const double> r(residuals.data(), static_cast<std::size_t>(n));
  const double iqr = sample_quantile(r, 0.75) - sample_quantile(r, 0.25);
  const double spread = std::min(stddev(r), iqr / 1.34);
  double h = (normal_quantile(tau + h_tau) - normal_quantile(tau - h_tau)) * spread;
  if (!(h > 0.0)) throw NumericalError("powell_bandwidth: nonpositive bandwidth (degenerate residuals)");
  return h;
}

}  // namespace gqr
