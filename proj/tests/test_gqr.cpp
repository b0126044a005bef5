#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gqr/gqr.hpp"
#include "gqr/rng.hpp"
#include "gqr/sim_bench.hpp"

using namespace gqr;

TEST_CASE("compatibility: box-cox requires niv") {
  const Dataset data = draw_dgp(100, 1u);
  ModelSpec spec;
  spec.kind = ModelKind::box_cox;
  spec.response = "y";
  spec.regressors = {"x1", "x2"};
  CHECK_THROWS_AS(fit_gqr(data, spec, {0.5}, FirstStageMethod::ols), ValidationError);
  ModelSpec cs = dgp_model_spec();
  CHECK_THROWS_AS(fit_gqr(data, cs, {0.5}, FirstStageMethod::nlmedian), ValidationError);
}

TEST_CASE("nesting: beta1 forced to zero reproduces plain QR of y on [1, x2]") {
  const Dataset data = draw_dgp(400, 2u);
  const ModelSpec spec = dgp_model_spec();
  const GqrFit forced = fit_infeasible_qr(data, spec, {0.3, 0.7}, VectorXd::Zero(1));
  const MatrixXd X = design_with_intercept(data, {"x2"});
  const VectorXd y = data.column("y");
  const auto plain = fit_qr_grid(X, y, {0.3, 0.7});
  for (int k = 0; k < 2; ++k)
    CHECK((forced.beta[static_cast<std::size_t>(k)] - plain[static_cast<std::size_t>(k)].coef)
              .cwiseAbs()
              .maxCoeff() < 1e-9);
  CHECK(forced.first_stage.psi.cwiseAbs().maxCoeff() == 0.0);
  CHECK(forced.first_stage.method == FirstStageMethod::none);
}

TEST_CASE("profiling identity: GQR at the full-QR slope reproduces the full-QR fit") {
  const Dataset data = draw_dgp(600, 3u);
  const MatrixXd X = design_with_intercept(data, {"x1", "x2"});
  const VectorXd y = data.column("y");
  for (double tau : {0.25, 0.5, 0.75}) {
    const QuantileFit full = fit_qr(X, y, tau);
    VectorXd theta(1);
    theta[0] = full.coef[1];
    const GqrFit prof = fit_infeasible_qr(data, dgp_model_spec(), {tau}, theta);
    CHECK(prof.beta[0][0] == doctest::Approx(full.coef[0]).epsilon(1e-6));
    CHECK(prof.beta[0][1] == doctest::Approx(full.coef[2]).epsilon(1e-6));
  }
}

TEST_CASE("fit_gqr equals fit_infeasible_qr when theta_hat equals theta_true") {
  const Dataset data = draw_dgp(300, 4u);
  const ModelSpec spec = dgp_model_spec();
  const GqrFit fit = fit_gqr(data, spec, {0.4}, FirstStageMethod::ols);
  const GqrFit inf = fit_infeasible_qr(data, spec, {0.4}, fit.first_stage.theta_hat);
  CHECK((fit.beta[0] - inf.beta[0]).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("noiseless constant-slope data: exact recovery at all taus") {
  const int n = 120;
  Rng rng(5u);
  Dataset d;
  d.names = {"y", "x1", "x2"};
  d.values.resize(n, 3);
  for (int i = 0; i < n; ++i) {
    const double x1 = rng.uniform(1.0, 5.0);
    const double x2 = rng.uniform(3.0, 10.0);
    d.values(i, 0) = -1.0 + 2.0 * x1 + 0.75 * x2;
    d.values(i, 1) = x1;
    d.values(i, 2) = x2;
  }
  const GqrFit fit = fit_gqr(d, dgp_model_spec(), {0.2, 0.5, 0.8}, FirstStageMethod::ols);
  CHECK(fit.first_stage.theta_hat[0] == doctest::Approx(2.0).epsilon(1e-9));
  for (const auto& beta : fit.beta) {
    CHECK(beta[0] == doctest::Approx(-1.0).epsilon(1e-7));
    CHECK(beta[1] == doctest::Approx(0.75).epsilon(1e-7));
  }
  CHECK(fit.diagnostics.monotonicity_violations == 0);
}

TEST_CASE("predict_quantile: grid points, interpolation, extrapolation") {
  const Dataset data = draw_dgp(500, 6u);
  const GqrFit fit = fit_gqr(data, dgp_model_spec(), {0.3, 0.5, 0.7}, FirstStageMethod::ols);
  VectorXd x(2);
  x << 1.0, 6.0;
  CHECK(predict_quantile(fit, x, 0.5) == doctest::Approx(x.dot(fit.beta[1])).epsilon(1e-14));
  const double mid = predict_quantile(fit, x, 0.4);
  CHECK(mid == doctest::Approx(0.5 * (x.dot(fit.beta[0]) + x.dot(fit.beta[1]))).epsilon(1e-12));
  CHECK_THROWS_AS(predict_quantile(fit, x, 0.9), ValidationError);
  CHECK_THROWS_AS(predict_quantile(fit, VectorXd::Ones(3), 0.5), ValidationError);
}

TEST_CASE("simulation-design GQR: conditional quantile prediction grows in tau") {
  const Dataset data = draw_dgp(4000, 7u);
  std::vector<double> taus{0.2, 0.4, 0.6, 0.8};
  const GqrFit fit = fit_gqr(data, dgp_model_spec(), taus, FirstStageMethod::ols);
  VectorXd x(2);
  x << 1.0, 6.5;  // E[X2]
  double prev = -1e9;
  for (double tau : taus) {
    const double q = predict_quantile(fit, x, tau);
    CHECK(q > prev);
    prev = q;
  }
  CHECK(fit.diagnostics.monotonicity_violations == 0);
}

TEST_CASE("elliptical pipeline end to end") {
  const int n = 3000;
  Rng rng(8u);
  Dataset d;
  d.names = {"y", "x"};
  d.values.resize(n, 2);
  VectorXd mu(2);
  mu << 1.0, 0.8;
  MatrixXd S(2, 2);
  S << 0.7, 0.1, 0.1, 0.5;
  for (int i = 0; i < n; ++i) {
    const double x = rng.uniform(0.5, 2.0);
    VectorXd xi(2);
    xi << 1.0, x;
    const double v = std::exp(0.4 * rng.normal());  // median 1
    d.values(i, 0) = xi.dot(mu) + (S * xi).norm() * v;
    d.values(i, 1) = x;
  }
  ModelSpec spec;
  spec.kind = ModelKind::elliptical;
  spec.response = "y";
  spec.regressors = {"x"};
  const GqrFit fit = fit_gqr(d, spec, {0.25, 0.5, 0.75}, FirstStageMethod::nlmedian);
  // second stage is intercept-only: xi_hat(tau) estimates the tau-quantile
  // of exp(0.4 Z); at the median that is 1 by the normalization
  CHECK(fit.beta[1][0] == doctest::Approx(1.0).epsilon(0.05));
  CHECK(fit.beta[0][0] < fit.beta[1][0]);
  CHECK(fit.beta[1][0] < fit.beta[2][0]);

  // the composite conditional quantile x'mu + ||Sx|| xi(tau) is the
  // identified object; it must track the true curve at every level
  const EllipticalParams par = unpack_elliptical_theta(fit.first_stage.theta_hat, 2);
  const double z75 = 0.6744897501960817;
  const double zs[] = {-z75, 0.0, z75};
  for (int k = 0; k < 3; ++k) {
    double err = 0.0, scale = 0.0;
    for (Eigen::Index i = 0; i < d.n_rows(); ++i) {
      VectorXd xi(2);
      xi << 1.0, d.values(i, 1);
      const double truth = xi.dot(mu) + (S * xi).norm() * std::exp(0.4 * zs[k]);
      const double fitted = xi.dot(par.mu) +
                            (par.sigma_sqrt * xi).norm() * fit.beta[static_cast<std::size_t>(k)][0];
      err += std::abs(fitted - truth);
      scale += std::abs(truth);
    }
    CHECK(err / scale < 0.05);
  }

  // first-stage parameters land within 3 influence-based standard errors
  const Eigen::Index n_rows = d.n_rows();
  auto se_of = [&](Eigen::Index j) {
    return std::sqrt(fit.first_stage.vcov(j, j) / static_cast<double>(n_rows));
  };
  CHECK(std::abs(par.mu[0] - mu[0]) < 3.0 * se_of(0) + 0.02);
  CHECK(std::abs(par.mu[1] - mu[1]) < 3.0 * se_of(1) + 0.02);
  CHECK(std::abs(par.sigma_sqrt(0, 0) - S(0, 0)) < 3.0 * se_of(2) + 0.02);
  CHECK(std::abs(par.sigma_sqrt(1, 1) - S(1, 1)) < 3.0 * se_of(5) + 0.02);
}

TEST_CASE("box-cox pipeline end to end") {
  const int n = 2500;
  Rng rng(9u);
  Dataset d;
  d.names = {"y", "x"};
  d.values.resize(n, 2);
  for (int i = 0; i < n; ++i) {
    const double x = rng.uniform(0.5, 2.5);
    const double ylam = 1.5 + 0.8 * x + 0.25 * rng.normal();  // Y(lambda) linear, lambda = 0
    d.values(i, 0) = std::exp(ylam);
    d.values(i, 1) = x;
  }
  ModelSpec spec;
  spec.kind = ModelKind::box_cox;
  spec.response = "y";
  spec.regressors = {"x"};
  const GqrFit fit = fit_gqr(d, spec, {0.5}, FirstStageMethod::niv);
  CHECK(std::abs(fit.first_stage.theta_hat[0]) < 0.06);
  // median of Y(lambda_hat) given x is close to 1.5 + 0.8 x at lambda ~ 0
  CHECK(fit.beta[0][0] == doctest::Approx(1.5).epsilon(0.1));
  CHECK(fit.beta[0][1] == doctest::Approx(0.8).epsilon(0.1));
}

TEST_CASE("control-variable pipeline end to end") {
  const int n = 4000;
  Rng rng(10u);
  Dataset d;
  d.names = {"y", "w", "x", "z"};
  d.values.resize(n, 4);
  for (int i = 0; i < n; ++i) {
    const double w = rng.uniform(-1.0, 1.0);
    const double z = rng.uniform(-1.0, 2.0);
    const double eta = 0.6 * rng.normal();
    const double x = 0.4 + 0.9 * z + eta;
    const double u = rng.uniform();
    d.values(i, 0) = u + 0.3 * w + 0.7 * x + 0.5 * eta;  // Q(tau) = tau + .3w + .7x + .5eta
    d.values(i, 1) = w;
    d.values(i, 2) = x;
    d.values(i, 3) = z;
  }
  ModelSpec spec;
  spec.kind = ModelKind::control_variable;
  spec.response = "y";
  spec.regressors = {"w"};
  spec.endogenous = "x";
  spec.instruments = {"z"};
  const GqrFit fit = fit_gqr(d, spec, {0.5}, FirstStageMethod::control_ols);
  REQUIRE(fit.kept_columns.size() == 4);
  CHECK(fit.beta[0][0] == doctest::Approx(0.5).epsilon(0.1));   // intercept = tau
  CHECK(fit.beta[0][1] == doctest::Approx(0.3).epsilon(0.15));  // w
  CHECK(fit.beta[0][2] == doctest::Approx(0.7).epsilon(0.1));   // x
  CHECK(fit.beta[0][3] == doctest::Approx(0.5).epsilon(0.25));  // control
  CHECK(fit.first_stage.theta_hat[1] == doctest::Approx(0.9).epsilon(0.1));
}

TEST_CASE("control-variable with exact first stage drops the zero control column") {
  const int n = 200;
  Rng rng(11u);
  Dataset d;
  d.names = {"y", "w", "x", "z"};
  d.values.resize(n, 4);
  for (int i = 0; i < n; ++i) {
    const double w = rng.uniform(-1.0, 1.0);
    const double z = rng.uniform(-1.0, 2.0);
    const double x = 0.4 + 0.9 * z;  // eta = 0
    d.values(i, 0) = 1.0 + 0.3 * w + 0.7 * x + rng.uniform();
    d.values(i, 1) = w;
    d.values(i, 2) = x;
    d.values(i, 3) = z;
  }
  ModelSpec spec;
  spec.kind = ModelKind::control_variable;
  spec.response = "y";
  spec.regressors = {"w"};
  spec.endogenous = "x";
  spec.instruments = {"z"};
  const GqrFit fit = fit_gqr(d, spec, {0.5}, FirstStageMethod::control_ols);
  REQUIRE(fit.diagnostics.dropped_columns.size() == 1);
  CHECK(fit.diagnostics.dropped_columns[0] == 3);
  CHECK(fit.kept_columns.size() == 3);
  CHECK(fit.beta[0].size() == 3);
}
