#pragma once

#include "gqr/common.hpp"

namespace gqr {

/// Analytic asymptotic-variance building blocks for the simulation design
///   Q_Y(tau|X) = beta0(tau) + X1 + beta2(tau) X2,
///   beta0(tau) = e^tau, beta2(tau) = 2 tau^2,
///   X1 ~ U[1,5], X2 ~ U[3,10].
/// a..f are moments of 1/(beta0'(tau) + beta2'(tau) X2) weighted by
/// (1, X2, X2^2, X1, X1 X2).
struct ClosedFormTerms {
  double tau = 0.0;
  double a = 0.0, b = 0.0, c = 0.0, d = 0.0, f = 0.0;
};

namespace dgp_moments {
inline constexpr double e_x1 = 3.0;
inline constexpr double e_x2 = 13.0 / 2.0;
inline constexpr double e_x2_sq = 139.0 / 3.0;
inline constexpr double var_x1 = 4.0 / 3.0;
}  // namespace dgp_moments

ClosedFormTerms abc_terms(double tau);

/// First-step OLS asymptotic variance of the constant slope,
/// (3/4) Var(e^U) + (139/4) Var(2U^2) with U ~ U[0,1]; about 12.5371.
double v_beta1_true();

double v_gqr0_true(double tau);
double v_qr0_true(double tau);
double v_iqr0_true(double tau);  // v_gqr0 with the first-step variance zeroed
double v_beta2_true(double tau);

enum class MomentKind { a, b, c, d, f, e_x1, e_x2, e_x2_sq };

/// Independent check of the printed closed forms by fixed-order
/// Gauss-Legendre quadrature over X2 in [3,10] (and X1 in [1,5] for the
/// two-dimensional moments).
double quadrature_oracle(MomentKind kind, double tau, int order = 64);

}  // namespace gqr
