#include "gqr/closed_form.hpp"

#include <cmath>

#include "gqr/quadrature.hpp"

namespace gqr {

namespace {

void check_tau_open(double tau) {
  if (!(tau > 0.0 && tau < 1.0)) throw ValidationError("closed_form: tau must lie strictly inside (0,1)");
}

}  // namespace

ClosedFormTerms abc_terms(double tau) {
  check_tau_open(tau);
  ClosedFormTerms t;
  t.tau = tau;
  const double et = std::exp(tau);
  const double L = std::log((et + 40.0 * tau) / (et + 12.0 * tau));
  t.a = L / (28.0 * tau);
  t.b = (28.0 * tau - et * L) / (7.0 * 16.0 * tau * tau);
  t.c = (728.0 * tau * tau - 28.0 * tau * et + et * et * L) / (448.0 * tau * tau * tau);
  t.d = 3.0 * t.a;
  t.f = 3.0 * t.b;
  return t;
}

double v_beta1_true() {
  const double e = std::exp(1.0);
  const double var_eps0 = 0.5 * (e * e - 1.0) - (e - 1.0) * (e - 1.0);       // Var(e^U)
  const double var_eps2 = 4.0 / 5.0 - (2.0 / 3.0) * (2.0 / 3.0);             // Var(2U^2)
  return (3.0 / 4.0) * var_eps0 + (139.0 / 4.0) * var_eps2;
}

namespace {

double common_beta0_term(double tau) {
  const ClosedFormTerms t = abc_terms(tau);
  const double det = t.a * t.c - t.b * t.b;
  return tau * (1.0 - tau) / (det * det) *
         (t.c * t.c - 2.0 * t.b * t.c * dgp_moments::e_x2 + t.b * t.b * dgp_moments::e_x2_sq);
}

}  // namespace

double v_gqr0_true(double tau) {
  return common_beta0_term(tau) + dgp_moments::e_x1 * dgp_moments::e_x1 * v_beta1_true();
}

double v_iqr0_true(double tau) { return common_beta0_term(tau); }

double v_qr0_true(double tau) {
  const ClosedFormTerms t = abc_terms(tau);
  const double det = t.a * t.c - t.b * t.b;
  const double num = t.b * t.f - t.d * t.c;
  return common_beta0_term(tau) +
         tau * (1.0 - tau) * num * num / (det * det * t.a * t.a * dgp_moments::var_x1);
}

double v_beta2_true(double tau) {
  const ClosedFormTerms t = abc_terms(tau);
  const double det = t.a * t.c - t.b * t.b;
  return tau * (1.0 - tau) / (det * det) *
         (t.b * t.b - 2.0 * t.a * t.b * dgp_moments::e_x2 + t.a * t.a * dgp_moments::e_x2_sq);
}

double quadrature_oracle(MomentKind kind, double tau, int order) {
  if (kind != MomentKind::e_x1 && kind != MomentKind::e_x2 && kind != MomentKind::e_x2_sq)
    check_tau_open(tau);
  const double et = std::exp(tau);
  auto density_recip = [&](double x2) { return 1.0 / (et + 4.0 * tau * x2); };
  const double x2_density = 1.0 / 7.0;
  const double x1_density = 1.0 / 4.0;
  switch (kind) {
    case MomentKind::a:
      return integrate([&](double x2) { return x2_density * density_recip(x2); }, 3.0, 10.0, order);
    case MomentKind::b:
      return integrate([&](double x2) { return x2_density * x2 * density_recip(x2); }, 3.0, 10.0, order);
    case MomentKind::c:
      return integrate([&](double x2) { return x2_density * x2 * x2 * density_recip(x2); }, 3.0, 10.0,
                       order);
    case MomentKind::d:
      return integrate2(
          [&](double x1, double x2) { return x1_density * x2_density * x1 * density_recip(x2); }, 1.0,
          5.0, 3.0, 10.0, order);
    case MomentKind::f:
      return integrate2(
          [&](double x1, double x2) { return x1_density * x2_density * x1 * x2 * density_recip(x2); },
          1.0, 5.0, 3.0, 10.0, order);
    case MomentKind::e_x1:
      return integrate([&](double x1) { return x1_density * x1; }, 1.0, 5.0, order);
    case MomentKind::e_x2:
      return integrate([&](double x2) { return x2_density * x2; }, 3.0, 10.0, order);
    case MomentKind::e_x2_sq:
      return integrate([&](double x2) { return x2_density * x2 * x2; }, 3.0, 10.0, order);
  }
  throw ValidationError("quadrature_oracle: unknown moment kind");
}

}  // namespace gqr
