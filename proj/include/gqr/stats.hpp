#pragma once

#include <Eigen/Dense>
#include <span>
#include <vector>

namespace gqr {

double normal_pdf(double x);
double normal_cdf(double x);
/// Inverse standard normal CDF, accurate to full double precision
/// (Acklam's rational approximation plus one Halley refinement).
double normal_quantile(double p);

/// Linear-interpolation sample quantile (R type 7) of unsorted data.
double sample_quantile(std::span<const double> x, double p);
double sample_quantile(const Eigen::VectorXd& x, double p);

double mean(std::span<const double> x);
/// Unbiased (n-1) sample variance.
double variance(std::span<const double> x);
double stddev(std::span<const double> x);

/// Neumaier compensated summation; order-fixed accumulation keeps parallel
/// reductions bit-reproducible when driven in index order.
class KahanSum {
 public:
  void add(double v) {
    double t = sum_ + v;
    if (std::abs(sum_) >= std::abs(v))
      comp_ += (sum_ - t) + v;
    else
      comp_ += (v - t) + sum_;
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

/// Hall-Sheather bandwidth in quantile space for sparsity estimation.
double hall_sheather_bandwidth(double tau, int n, double alpha = 0.05);

/// Powell kernel bandwidth in residual space: the Hall-Sheather quantile
/// window mapped through the normal quantile function and scaled by a
/// robust residual spread, min(sd, IQR/1.34).
double powell_bandwidth(const Eigen::VectorXd& residuals, double tau);

}  // namespace gqr
