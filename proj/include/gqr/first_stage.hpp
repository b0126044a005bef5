#pragma once

#include <string>
#include <utility>
#include <vector>

#include "gqr/common.hpp"
#include "gqr/qr_solver.hpp"

namespace gqr {

enum class FirstStageMethod { ols, niv, nlmedian, qr_mean, gastwirth, control_ols, none };

std::string to_string(FirstStageMethod m);
FirstStageMethod first_stage_method_from_string(const std::string& name);

/// First-step estimate with per-observation influence values, the summands
/// of the asymptotically linear expansion sqrt(n)(theta - theta0) =
/// n^{-1/2} sum psi(z_i) + o_P(1).
struct FirstStageFit {
  VectorXd theta_hat;
  MatrixXd psi;        // n x q
  MatrixXd c_psi_psi;  // q x q, (1/n) sum psi_i psi_i'
  MatrixXd vcov;       // asymptotic variance of sqrt(n)(theta - theta0) = c_psi_psi
  FirstStageMethod method = FirstStageMethod::ols;
  bool converged = true;
};

/// Keep a subset of theta coordinates (with their influence columns).
FirstStageFit select_coords(const FirstStageFit& fit, const std::vector<int>& coords);

/// Recompute the influence moments after psi is set.
void finalize_moments(FirstStageFit& fit);

FirstStageFit fit_ols(const MatrixXd& X, const VectorXd& y);

/// Instruments for the Box-Cox NIV estimator: X plus squares and pairwise
/// cross-products of its non-constant columns; duplicate and constant
/// generated columns are dropped.
MatrixXd build_niv_instruments(const MatrixXd& X);

struct NivWeight {
  enum class Kind { identity, two_sls, custom };
  Kind kind = Kind::two_sls;
  MatrixXd omega;  // used when kind == custom

  static NivWeight identity() { return {Kind::identity, {}}; }
  static NivWeight two_sls() { return {Kind::two_sls, {}}; }
  static NivWeight custom(MatrixXd om) { return {Kind::custom, std::move(om)}; }
};

struct NivConfig {
  double lambda_lo = -2.0;
  double lambda_hi = 3.0;
  double tol = 1e-8;  // golden-section interval width
  int scan_points = 31;
};

/// Amemiya's nonlinear IV estimator of the Box-Cox model: minimizes the
/// instrumented quadratic form over (lambda, beta), lambda by golden-section
/// over the bracket with the inner beta in closed form.
/// theta_hat = (lambda, beta')'.
FirstStageFit fit_niv(const MatrixXd& X, const VectorXd& y, const MatrixXd& W,
                      const NivWeight& weight = NivWeight::two_sls(), const NivConfig& cfg = {});

std::vector<double> default_qr_mean_taus();  // 0.05, 0.10, ..., 0.95

/// theta = average over the grid of the coord-th quantile-regression
/// coefficient; influence values average the per-level QR summands with a
/// kernel-estimated density weight. with_influence=false skips them
/// (bootstrap resamples need the point estimate only).
FirstStageFit fit_qr_mean_slope(const MatrixXd& X, const VectorXd& y, int coord,
                                const std::vector<double>& taus = default_qr_mean_taus(),
                                const SolverConfig& cfg = {}, bool with_influence = true);

/// Gastwirth-weighted version: levels (1/3, 1/2, 2/3), weights (0.3, 0.4, 0.3).
FirstStageFit fit_gastwirth_slope(const MatrixXd& X, const VectorXd& y, int coord,
                                  const SolverConfig& cfg = {}, bool with_influence = true);

/// OLS of the endogenous column on the instruments; returns the fit for
/// gamma and the control-variable residuals eta.
std::pair<FirstStageFit, VectorXd> fit_control_variable(const VectorXd& x_endog, const MatrixXd& Z);

}  // namespace gqr
