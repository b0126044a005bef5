#pragma once

#include <vector>

#include "gqr/first_stage.hpp"
#include "gqr/models.hpp"

namespace gqr {

struct GqrDiagnostics {
  int masked_rows = 0;
  std::vector<FitStatus> statuses;       // one per quantile level
  int monotonicity_violations = 0;       // adjacent decreases of xbar'beta(tau)
  double design_condition = 0.0;         // second-stage design condition number
  std::vector<int> dropped_columns;      // screened-out x_theta columns
};

struct GqrFit {
  ModelSpec model;
  FirstStageFit first_stage;
  std::vector<double> taus;
  std::vector<VectorXd> beta;   // one coefficient vector per tau (kept columns)
  GqrDiagnostics diagnostics;
  GeneratedData generated;      // evaluated at theta_hat
  std::vector<int> kept_columns;
};

FirstStageMethod default_first_stage(ModelKind kind);

/// Two-step estimator: first stage for theta, generate variables at the
/// estimate, check-loss regression per quantile level. with_influence=false
/// skips the per-observation influence values (bootstrap resamples only
/// need the point estimates).
GqrFit fit_gqr(const Dataset& data, const ModelSpec& model, const std::vector<double>& taus,
               FirstStageMethod method, const SolverConfig& cfg = {}, bool with_influence = true);

/// Same pipeline with the first stage replaced by the true theta; the
/// influence values are identically zero.
GqrFit fit_infeasible_qr(const Dataset& data, const ModelSpec& model, const std::vector<double>& taus,
                         const VectorXd& theta_true, const SolverConfig& cfg = {});

/// Second-stage design and response restricted to valid rows and kept columns.
MatrixXd second_stage_design(const GqrFit& fit);
VectorXd second_stage_response(const GqrFit& fit);

/// Linear interpolation of x'beta(tau) across the fitted grid. Off-grid
/// extrapolation is refused; non-monotonicity is reported by the fit
/// diagnostics, never repaired.
double predict_quantile(const GqrFit& fit, const VectorXd& x_row, double tau);

}  // namespace gqr
