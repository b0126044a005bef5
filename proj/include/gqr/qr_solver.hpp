#pragma once

#include <vector>

#include "gqr/common.hpp"

namespace gqr {

enum class FitStatus { optimal, max_iter, degenerate };

enum class QrMethod { interior_point, smoothed };

struct SolverConfig {
  double tol = 1e-9;  // relative duality gap (interior point) / gradient norm (smoothed)
  int max_iter = 100;
  QrMethod method = QrMethod::interior_point;
};

struct QuantileFit {
  double tau = 0.0;
  VectorXd coef;
  double objective = 0.0;  // attained weighted mean check loss
  FitStatus status = FitStatus::optimal;
  int n_active = 0;  // exactly-interpolated observations
  int iterations = 0;
};

/// Koenker-Bassett check loss rho_tau(u) = (tau - 1[u<0]) u.
double check_loss(double u, double tau);

/// Weighted mean check loss of a residual vector.
double mean_check_loss(const VectorXd& residuals, double tau, const VectorXd& weights = VectorXd());

/// Minimize sum_i w_i rho_tau(y_i - x_i'beta). Interior-point solves the
/// LP dual with Mehrotra predictor-corrector steps; on fat optimal faces
/// it returns the analytic-center solution and flags status=degenerate.
QuantileFit fit_qr(const MatrixXd& X, const VectorXd& y, double tau, const SolverConfig& cfg = {},
                   const VectorXd& weights = VectorXd());

/// One fit per level in taus (strictly increasing, inside (0,1)).
std::vector<QuantileFit> fit_qr_grid(const MatrixXd& X, const VectorXd& y,
                                     const std::vector<double>& taus, const SolverConfig& cfg = {},
                                     const VectorXd& weights = VectorXd());

/// Location and symmetric PSD square-root dispersion of the elliptical
/// random-coefficient model.
struct EllipticalParams {
  VectorXd mu;          // length K+1
  MatrixXd sigma_sqrt;  // (K+1) x (K+1), symmetric PSD
};

struct NonlinearMedianFit {
  EllipticalParams params;
  double objective = 0.0;  // sum_i |y_i - x_i'mu - ||S x_i|||
  FitStatus status = FitStatus::optimal;
  int simplex_iterations = 0;
  int subgradient_iterations = 0;
};

/// Default start: mu from the L1 fit with S = 0, then S = 0.1 I.
EllipticalParams default_elliptical_init(const MatrixXd& X, const VectorXd& y,
                                         const SolverConfig& cfg = {});

/// Median regression of y on x'mu + ||S x||: Nelder-Mead simplex search
/// refined by projected subgradient descent, S projected onto the
/// symmetric PSD cone after every step.
NonlinearMedianFit fit_nonlinear_median(const MatrixXd& X, const VectorXd& y,
                                        const EllipticalParams& init, const SolverConfig& cfg = {});

/// Nearest symmetric PSD matrix (symmetrize, clamp negative eigenvalues).
MatrixXd project_psd(const MatrixXd& A);

}  // namespace gqr
