#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gqr/first_stage.hpp"
#include "gqr/rng.hpp"
#include "gqr/sim_bench.hpp"
#include "gqr/stats.hpp"

using namespace gqr;

TEST_CASE("ols: perfect fit has zero influence values") {
  const int n = 50;
  Rng rng(3u);
  MatrixXd X(n, 2);
  VectorXd y(n);
  for (int i = 0; i < n; ++i) {
    X(i, 0) = 1.0;
    X(i, 1) = rng.uniform(0.0, 2.0);
    y[i] = 2.0 * X(i, 1);
  }
  const FirstStageFit fit = fit_ols(X, y);
  CHECK(fit.theta_hat[0] == doctest::Approx(0.0).epsilon(1e-10));
  CHECK(fit.theta_hat[1] == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(fit.psi.cwiseAbs().maxCoeff() < 1e-10);
  CHECK(fit.vcov.cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("ols: influence columns average to zero and vcov is PSD") {
  const Dataset data = draw_dgp(800, 99u);
  const MatrixXd X = design_with_intercept(data, {"x1", "x2"});
  const FirstStageFit fit = fit_ols(X, data.column("y"));
  CHECK((fit.psi.colwise().mean()).cwiseAbs().maxCoeff() < 1e-10);
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(fit.vcov);
  CHECK(es.eigenvalues().minCoeff() >= -1e-12);
  CHECK(fit.c_psi_psi.isApprox(fit.c_psi_psi.transpose(), 1e-12));

  MatrixXd singular(X.rows(), 2);
  singular.col(0).setOnes();
  singular.col(1).setConstant(2.0);
  CHECK_THROWS_AS(fit_ols(singular, data.column("y")), SingularDesignError);
}

TEST_CASE("ols on the simulation design: sandwich variance matches the population value") {
  // Population sandwich for the slope, from the error decomposition
  // eps = eps0 + eps2 X2 with eps0 = e^U - E[e^U], eps2 = 2U^2 - E[2U^2]:
  // the (X1,X1) entry of E^{-1}[XX'] E[eps^2 XX'] E^{-1}[XX'].
  const double e = std::exp(1.0);
  const double v00 = 0.5 * (e * e - 1.0) - (e - 1.0) * (e - 1.0);      // Var(e^U)
  const double v22 = 4.0 / 5.0 - 4.0 / 9.0;                           // Var(2U^2)
  const double v02 = 2.0 * (e - 2.0) - (e - 1.0) * (2.0 / 3.0);       // Cov(e^U, 2U^2)
  MatrixXd m_xx(3, 3), m_x2(3, 3), m_x2sq(3, 3);
  const double ex1 = 3.0, ex1sq = 4.0 / 3.0 + 9.0, ex2 = 6.5, ex2sq = 139.0 / 3.0;
  const double ex2cu = (10000.0 - 81.0) / 28.0;    // E[X2^3] on U[3,10]
  m_xx << 1, ex1, ex2, ex1, ex1sq, ex1 * ex2, ex2, ex1 * ex2, ex2sq;
  m_x2 << ex2, ex1 * ex2, ex2sq, ex1 * ex2, ex1sq * ex2, ex1 * ex2sq, ex2sq, ex1 * ex2sq, ex2cu;
  const double ex2qu = (100000.0 - 243.0) / 35.0;  // E[X2^4]
  m_x2sq << ex2sq, ex1 * ex2sq, ex2cu, ex1 * ex2sq, ex1sq * ex2sq, ex1 * ex2cu, ex2cu,
      ex1 * ex2cu, ex2qu;
  const MatrixXd inv = m_xx.inverse();
  const MatrixXd sandwich =
      inv * (v00 * m_xx + 2.0 * v02 * m_x2 + v22 * m_x2sq) * inv;
  const double v_beta1_full = sandwich(1, 1);
  CHECK(v_beta1_full == doctest::Approx(15.3747).epsilon(1e-3));

  const Dataset data = draw_dgp(200000, 12u);
  const MatrixXd X = design_with_intercept(data, {"x1", "x2"});
  const FirstStageFit fit = fit_ols(X, data.column("y"));
  CHECK(fit.theta_hat[1] == doctest::Approx(1.0).epsilon(0.01));
  CHECK(fit.vcov(1, 1) == doctest::Approx(v_beta1_full).epsilon(0.03));
  // sqrt(V/n) reproduces the reported first-step sd 0.1242 at n = 1000
  CHECK(std::sqrt(v_beta1_full / 1000.0) == doctest::Approx(0.1242).epsilon(0.005));
}

TEST_CASE("ols on the simulation design: classical reported SE matches 0.1242 at n=1000") {
  // The reported average first-step standard deviation is the classical
  // homoskedastic OLS standard error, averaged over replications.
  const int reps = 400;
  KahanSum se_sum, est_sum;
  for (int r = 0; r < reps; ++r) {
    const Dataset data = draw_dgp(1000, substream(77u, static_cast<std::uint64_t>(r)));
    const MatrixXd X = design_with_intercept(data, {"x1", "x2"});
    const VectorXd y = data.column("y");
    const FirstStageFit fit = fit_ols(X, y);
    est_sum.add(fit.theta_hat[1]);
    const VectorXd resid = y - X * fit.theta_hat;
    const double sigma2 = resid.squaredNorm() / static_cast<double>(X.rows() - X.cols());
    const MatrixXd xtx_inv = (X.transpose() * X).ldlt().solve(MatrixXd::Identity(3, 3));
    se_sum.add(std::sqrt(sigma2 * xtx_inv(1, 1)));
  }
  CHECK(est_sum.value() / reps == doctest::Approx(1.0).epsilon(0.02));
  CHECK(std::abs(se_sum.value() / reps - 0.1242) < 0.01);
}

TEST_CASE("niv instrument builder") {
  const int n = 40;
  Rng rng(8u);
  MatrixXd X1(n, 2);
  for (int i = 0; i < n; ++i) {
    X1(i, 0) = 1.0;
    X1(i, 1) = rng.uniform(0.5, 2.0);
  }
  const MatrixXd W1 = build_niv_instruments(X1);
  REQUIRE(W1.cols() == 3);
  CHECK((W1.col(2) - X1.col(1).cwiseProduct(X1.col(1))).cwiseAbs().maxCoeff() == 0.0);

  MatrixXd X2(n, 3);
  X2.col(0).setOnes();
  X2.col(1) = X1.col(1);
  for (int i = 0; i < n; ++i) X2(i, 2) = rng.uniform(-1.0, 1.0);
  CHECK(build_niv_instruments(X2).cols() == 6);  // 1, x1, x2, x1^2, x2^2, x1*x2

  // binary column: square duplicates the column and is dropped
  MatrixXd X3(n, 2);
  X3.col(0).setOnes();
  for (int i = 0; i < n; ++i) X3(i, 1) = (i % 2 == 0) ? 1.0 : 0.0;
  CHECK(build_niv_instruments(X3).cols() == 2);
}

TEST_CASE("niv recovers the transformation parameter") {
  const int n = 5000;
  Rng rng(21u);
  MatrixXd X(n, 2);
  VectorXd y_log(n), y_lin(n);
  for (int i = 0; i < n; ++i) {
    X(i, 0) = 1.0;
    X(i, 1) = rng.uniform(0.5, 2.5);
    const double mean = 2.0 + 0.8 * X(i, 1);
    const double eps = 0.2 * rng.normal();
    y_log[i] = std::exp(mean + eps);         // true lambda = 0
    y_lin[i] = std::max(mean + eps + 1.0, 0.05);  // true lambda = 1 (shifted positive)
  }
  const MatrixXd W = build_niv_instruments(X);

  const FirstStageFit f0 = fit_niv(X, y_log, W);
  CHECK(f0.converged);
  const double se0 = std::sqrt(f0.vcov(0, 0) / n);
  CHECK(std::abs(f0.theta_hat[0] - 0.0) < 3.0 * se0 + 0.02);

  const FirstStageFit f1 = fit_niv(X, y_lin, W);
  CHECK(f1.converged);
  const double se1 = std::sqrt(f1.vcov(0, 0) / n);
  CHECK(std::abs(f1.theta_hat[0] - 1.0) < 3.0 * se1 + 0.05);
}

TEST_CASE("niv: identity and 2SLS weighting agree when just identified") {
  const int n = 900;
  Rng rng(33u);
  MatrixXd X(n, 2);
  VectorXd y(n);
  for (int i = 0; i < n; ++i) {
    X(i, 0) = 1.0;
    X(i, 1) = rng.uniform(0.5, 2.0);
    y[i] = std::exp(1.0 + 0.5 * X(i, 1) + 0.3 * rng.normal());
  }
  const MatrixXd W = build_niv_instruments(X);  // m = 3 = p + 1, just identified
  REQUIRE(W.cols() == X.cols() + 1);
  const FirstStageFit ident = fit_niv(X, y, W, NivWeight::identity());
  const FirstStageFit tsls = fit_niv(X, y, W, NivWeight::two_sls());
  CHECK(std::abs(ident.theta_hat[0] - tsls.theta_hat[0]) < 5e-6);

  VectorXd bad = y;
  bad[5] = -0.5;
  CHECK_THROWS_AS(fit_niv(X, bad, W), ValidationError);
}

TEST_CASE("qr-mean and gastwirth slopes on exact data") {
  const int n = 60;
  Rng rng(44u);
  MatrixXd X(n, 3);
  for (int i = 0; i < n; ++i) {
    X(i, 0) = 1.0;
    X(i, 1) = rng.uniform(1.0, 5.0);
    X(i, 2) = rng.uniform(3.0, 10.0);
  }
  VectorXd c(3);
  c << 2.0, 1.5, -0.5;
  const VectorXd y = X * c;
  const FirstStageFit qm = fit_qr_mean_slope(X, y, 1, default_qr_mean_taus(), {}, false);
  CHECK(qm.theta_hat[0] == doctest::Approx(1.5).epsilon(1e-7));
  const FirstStageFit gw = fit_gastwirth_slope(X, y, 1, {}, false);
  CHECK(gw.theta_hat[0] == doctest::Approx(1.5).epsilon(1e-7));
}

TEST_CASE("single-level grid equals the median-regression slope") {
  const Dataset data = draw_dgp(500, 55u);
  const MatrixXd X = design_with_intercept(data, {"x1", "x2"});
  const VectorXd y = data.column("y");
  const FirstStageFit single = fit_qr_mean_slope(X, y, 1, {0.5});
  const QuantileFit median = fit_qr(X, y, 0.5);
  CHECK(single.theta_hat[0] == doctest::Approx(median.coef[1]).epsilon(1e-10));
  // influence columns of QR-based stages are centered at the n^{-1/2} scale
  CHECK(std::abs(single.psi.col(0).mean()) < 5.0 / std::sqrt(static_cast<double>(X.rows())));
}

TEST_CASE("control variable first stage") {
  const int n = 400;
  Rng rng(66u);
  MatrixXd Z(n, 2);
  VectorXd x(n);
  for (int i = 0; i < n; ++i) {
    Z(i, 0) = 1.0;
    Z(i, 1) = rng.uniform(-1.0, 2.0);
    x[i] = 0.4 + 0.9 * Z(i, 1);
  }
  // exact first stage: residuals vanish
  auto [exact, eta_exact] = fit_control_variable(x, Z);
  CHECK(eta_exact.cwiseAbs().maxCoeff() < 1e-12);
  CHECK(exact.method == FirstStageMethod::control_ols);

  // intercept-only instruments: eta = x - mean(x)
  auto [loc, eta_loc] = fit_control_variable(x, MatrixXd::Ones(n, 1));
  CHECK(loc.theta_hat[0] == doctest::Approx(x.mean()).epsilon(1e-12));
  CHECK((eta_loc - (x.array() - x.mean()).matrix()).cwiseAbs().maxCoeff() < 1e-12);

  // noisy triangular system: gamma recovered within 3 MC SEs
  VectorXd x_noisy(n);
  for (int i = 0; i < n; ++i) x_noisy[i] = 0.4 + 0.9 * Z(i, 1) + 0.5 * rng.normal();
  auto [noisy, eta_noisy] = fit_control_variable(x_noisy, Z);
  const double se = std::sqrt(noisy.vcov(1, 1) / n);
  CHECK(std::abs(noisy.theta_hat[1] - 0.9) < 3.0 * se);
  CHECK(std::abs(eta_noisy.mean()) < 1e-10);
}

TEST_CASE("select_coords keeps the requested influence columns") {
  const Dataset data = draw_dgp(200, 5u);
  const MatrixXd X = design_with_intercept(data, {"x1", "x2"});
  const FirstStageFit full = fit_ols(X, data.column("y"));
  const FirstStageFit slope = select_coords(full, {1});
  CHECK(slope.theta_hat.size() == 1);
  CHECK(slope.theta_hat[0] == full.theta_hat[1]);
  CHECK((slope.psi.col(0) - full.psi.col(1)).cwiseAbs().maxCoeff() == 0.0);
  CHECK(slope.c_psi_psi(0, 0) == doctest::Approx(full.c_psi_psi(1, 1)).epsilon(1e-14));
}
