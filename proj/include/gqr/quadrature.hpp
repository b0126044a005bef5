#pragma once

#include <functional>
#include <utility>
#include <vector>

namespace gqr {

/// Gauss-Legendre nodes and weights on [-1, 1].
std::vector<std::pair<double, double>> gauss_legendre(int order);

/// Integrate f over [lo, hi] with a fixed-order Gauss-Legendre rule.
double integrate(const std::function<double(double)>& f, double lo, double hi, int order = 64);

/// Iterated 2-D rule over [x_lo, x_hi] x [y_lo, y_hi].
double integrate2(const std::function<double(double, double)>& f, double x_lo, double x_hi,
                  double y_lo, double y_hi, int order = 64);

}  // namespace gqr
