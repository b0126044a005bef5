#include "gqr/quadrature.hpp"

#include <cmath>
#include <numbers>

#include "gqr/common.hpp"

namespace gqr {

std::vector<std::pair<double, double>> gauss_legendre(int order) {
  if (order < 1) throw ValidationError("gauss_legendre: order must be >= 1");
  const int n = order;
  std::vector<std::pair<double, double>> nw(n);
  const int m = (n + 1) / 2;
  for (int i = 0; i < m; ++i) {
    // Tricomi initial guess, then Newton on P_n.
    double z = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double pp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p1 = 1.0, p2 = 0.0;
      for (int j = 0; j < n; ++j) {
        double p3 = p2;
        p2 = p1;
        p1 = ((2.0 * j + 1.0) * z * p2 - j * p3) / (j + 1.0);
      }
      pp = n * (z * p1 - p2) / (z * z - 1.0);
      double z1 = z;
      z = z1 - p1 / pp;
      if (std::abs(z - z1) < 1e-15) break;
    }
    const double w = 2.0 / ((1.0 - z * z) * pp * pp);
    nw[i] = {-z, w};
    nw[n - 1 - i] = {z, w};
  }
  return nw;
}

double integrate(const std::function<double(double)>& f, double lo, double hi, int order) {
  const auto nw = gauss_legendre(order);
  const double mid = 0.5 * (lo + hi);
  const double half = 0.5 * (hi - lo);
  double sum = 0.0;
  for (const auto& [x, w] : nw) sum += w * f(mid + half * x);
  return half * sum;
}

double integrate2(const std::function<double(double, double)>& f, double x_lo, double x_hi,
                  double y_lo, double y_hi, int order) {
  return integrate(
      [&](double x) {
        return integrate([&](double y) { return f(x, y); }, y_lo, y_hi, order);
      },
      x_lo, x_hi, order);
}

}  // namespace gqr
