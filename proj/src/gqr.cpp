#include "gqr/gqr.hpp"

#include <cmath>

#include "gqr/stats.hpp"
#include "gqr/variance.hpp"

namespace gqr {

FirstStageMethod default_first_stage(ModelKind kind) {
  switch (kind) {
    case ModelKind::constant_slope: return FirstStageMethod::ols;
    case ModelKind::elliptical: return FirstStageMethod::nlmedian;
    case ModelKind::box_cox: return FirstStageMethod::niv;
    case ModelKind::control_variable: return FirstStageMethod::control_ols;
  }
  return FirstStageMethod::ols;
}

namespace {

void check_compatibility(ModelKind kind, FirstStageMethod method) {
  bool ok = false;
  switch (kind) {
    case ModelKind::constant_slope:
      ok = method == FirstStageMethod::ols || method == FirstStageMethod::qr_mean ||
           method == FirstStageMethod::gastwirth;
      break;
    case ModelKind::elliptical: ok = method == FirstStageMethod::nlmedian; break;
    case ModelKind::box_cox: ok = method == FirstStageMethod::niv; break;
    case ModelKind::control_variable: ok = method == FirstStageMethod::control_ols; break;
  }
  if (!ok)
    throw ValidationError("first-stage method '" + to_string(method) + "' is not valid for model '" +
                          to_string(kind) + "'");
}

/// Influence values of the nonlinear median estimator in the free
/// (mu, upper-triangle S) coordinates, expanded to the full vec(S) layout
/// used by the packed theta.
MatrixXd nlmedian_influence(const MatrixXd& X, const VectorXd& y, const EllipticalParams& params,
                            const GeneratedData& gen) {
  const Eigen::Index n = X.rows();
  const Eigen::Index d = X.cols();
  const Eigen::Index q_free = d + d * (d + 1) / 2;

  VectorXd fitted(n), resid(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    fitted[i] = X.row(i).dot(params.mu) + gen.norms[i];
    resid[i] = y[i] - fitted[i];
  }

  MatrixXd g_free(n, q_free);
  for (Eigen::Index i = 0; i < n; ++i) {
    g_free.row(i).head(d) = X.row(i);
    Eigen::Index k = d;
    for (Eigen::Index a = 0; a < d; ++a)
      for (Eigen::Index b = a; b < d; ++b) {
        const double full_ab = gen.dnorm_dsigma(i, b * d + a);
        const double full_ba = gen.dnorm_dsigma(i, a * d + b);
        g_free(i, k++) = (a == b) ? full_ab : full_ab + full_ba;
      }
  }

  const double h = powell_bandwidth(resid, 0.5);
  MatrixXd h1 = MatrixXd::Zero(q_free, q_free);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!gen.valid[static_cast<std::size_t>(i)]) continue;
    h1 += (normal_pdf(resid[i] / h) / h) * (g_free.row(i).transpose() * g_free.row(i));
  }
  h1 /= static_cast<double>(n);
  Eigen::LDLT<MatrixXd> ldlt(h1);
  if (ldlt.info() != Eigen::Success)
    throw NumericalError("nlmedian influence: density-weighted Hessian is singular");

  MatrixXd psi_free(n, q_free);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!gen.valid[static_cast<std::size_t>(i)]) {
      psi_free.row(i).setZero();
      continue;
    }
    const double score = 0.5 - (y[i] <= fitted[i] ? 1.0 : 0.0);
    psi_free.row(i) = score * ldlt.solve(g_free.row(i).transpose()).transpose();
  }

  // Expand upper-triangle coordinates to the full vec(S) layout; the
  // (j,k) and (k,j) entries move together, so both inherit the same value.
  MatrixXd psi_full(n, d + d * d);
  psi_full.leftCols(d) = psi_free.leftCols(d);
  Eigen::Index k = d;
  for (Eigen::Index a = 0; a < d; ++a)
    for (Eigen::Index b = a; b < d; ++b) {
      psi_full.col(d + b * d + a) = psi_free.col(k);
      psi_full.col(d + a * d + b) = psi_free.col(k);
      ++k;
    }
  return psi_full;
}

FirstStageFit run_first_stage(const Dataset& data, const ModelSpec& model, FirstStageMethod method,
                              const SolverConfig& cfg, bool with_influence) {
  switch (model.kind) {
    case ModelKind::constant_slope: {
      std::vector<std::string> cols;
      cols.push_back(model.constant_slope_regressor);
      for (const auto& c : model.regressors) cols.push_back(c);
      const MatrixXd X = design_with_intercept(data, cols);
      const VectorXd y = data.column(model.response);
      const int coord = 1;  // the constant-slope regressor sits after the intercept
      if (method == FirstStageMethod::ols) return select_coords(fit_ols(X, y), {coord});
      if (method == FirstStageMethod::qr_mean)
        return fit_qr_mean_slope(X, y, coord, default_qr_mean_taus(), cfg, with_influence);
      return fit_gastwirth_slope(X, y, coord, cfg, with_influence);
    }
    case ModelKind::elliptical: {
      const MatrixXd X = design_with_intercept(data, model.regressors);
      const VectorXd y = data.column(model.response);
      auto nm = fit_nonlinear_median(X, y, default_elliptical_init(X, y, cfg), cfg);
      FirstStageFit fit;
      fit.method = FirstStageMethod::nlmedian;
      fit.converged = nm.status != FitStatus::max_iter;
      fit.theta_hat = pack_elliptical_theta(nm.params);
      if (with_influence) {
        const GeneratedData gen = elliptical_generate(data, model, nm.params);
        fit.psi = nlmedian_influence(X, y, nm.params, gen);
      } else {
        fit.psi.resize(0, fit.theta_hat.size());
      }
      finalize_moments(fit);
      return fit;
    }
    case ModelKind::box_cox: {
      const MatrixXd X = design_with_intercept(data, model.regressors);
      const VectorXd y = data.column(model.response);
      MatrixXd W;
      if (model.instruments.empty()) {
        W = build_niv_instruments(X);
      } else {
        const MatrixXd extra = design_with_intercept(data, model.instruments);
        W.resize(X.rows(), X.cols() + extra.cols() - 1);
        W.leftCols(X.cols()) = X;
        W.rightCols(extra.cols() - 1) = extra.rightCols(extra.cols() - 1);
      }
      NivConfig ncfg;
      ncfg.lambda_lo = model.lambda_lo;
      ncfg.lambda_hi = model.lambda_hi;
      FirstStageFit full = fit_niv(X, y, W, NivWeight::two_sls(), ncfg);
      return select_coords(full, {0});  // theta passed downstream is lambda alone
    }
    case ModelKind::control_variable: {
      const MatrixXd Z = instrument_design(data, model);
      auto [fit, eta] = fit_control_variable(data.column(model.endogenous), Z);
      (void)eta;
      return fit;
    }
  }
  throw ValidationError("fit_gqr: unknown model kind");
}

struct SecondStage {
  MatrixXd X;
  VectorXd y;
  std::vector<int> kept_columns;
  std::vector<int> dropped_columns;
  double condition = 0.0;
};

SecondStage filter_second_stage(const GeneratedData& gen) {
  const Eigen::Index n = gen.x_theta.rows();
  const Eigen::Index p = gen.x_theta.cols();
  std::vector<int> rows;
  for (Eigen::Index i = 0; i < n; ++i)
    if (gen.valid[static_cast<std::size_t>(i)]) rows.push_back(static_cast<int>(i));

  SecondStage out;
  const double scale = gen.x_theta.cwiseAbs().maxCoeff();
  for (Eigen::Index j = 0; j < p; ++j) {
    double col_max = 0.0;
    for (int i : rows) col_max = std::max(col_max, std::abs(gen.x_theta(i, j)));
    if (col_max <= 1e-12 * (1.0 + scale))
      out.dropped_columns.push_back(static_cast<int>(j));
    else
      out.kept_columns.push_back(static_cast<int>(j));
  }

  out.X.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(out.kept_columns.size()));
  out.y.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out.y[static_cast<Eigen::Index>(r)] = gen.y_theta[rows[r]];
    for (std::size_t c = 0; c < out.kept_columns.size(); ++c)
      out.X(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
          gen.x_theta(rows[r], out.kept_columns[c]);
  }

  if (out.X.rows() > 0 && out.X.cols() > 0) {
    Eigen::JacobiSVD<MatrixXd> svd(out.X);
    const auto& sv = svd.singularValues();
    out.condition = sv[sv.size() - 1] > 0.0 ? sv[0] / sv[sv.size() - 1]
                                            : std::numeric_limits<double>::infinity();
  }
  return out;
}

GqrFit finish_fit(const Dataset& data, const ModelSpec& model, const std::vector<double>& taus,
                  FirstStageFit first_stage, const SolverConfig& cfg) {
  GqrFit fit;
  fit.model = model;
  fit.first_stage = std::move(first_stage);
  fit.taus = taus;
  fit.generated = generate(data, model, fit.first_stage.theta_hat);

  SecondStage stage = filter_second_stage(fit.generated);
  fit.kept_columns = stage.kept_columns;
  fit.diagnostics.dropped_columns = stage.dropped_columns;
  fit.diagnostics.masked_rows = fit.generated.n_invalid;
  fit.diagnostics.design_condition = stage.condition;

  const auto qr_fits = fit_qr_grid(stage.X, stage.y, taus, cfg);
  fit.beta.reserve(qr_fits.size());
  for (const auto& qf : qr_fits) {
    fit.beta.push_back(qf.coef);
    fit.diagnostics.statuses.push_back(qf.status);
  }

  if (stage.X.rows() > 0 && qr_fits.size() >= 2) {
    const VectorXd xbar = stage.X.colwise().mean();
    for (std::size_t k = 0; k + 1 < qr_fits.size(); ++k)
      if (xbar.dot(fit.beta[k + 1]) < xbar.dot(fit.beta[k])) ++fit.diagnostics.monotonicity_violations;
  }
  return fit;
}

}  // namespace

GqrFit fit_gqr(const Dataset& data, const ModelSpec& model, const std::vector<double>& taus,
               FirstStageMethod method, const SolverConfig& cfg, bool with_influence) {
  model.validate(data);
  check_compatibility(model.kind, method);
  FirstStageFit first;
  try {
    first = run_first_stage(data, model, method, cfg, with_influence);
  } catch (const ValidationError& e) {
    throw ValidationError(std::string("first stage: ") + e.what());
  } catch (const NumericalError& e) {
    throw NumericalError(std::string("first stage: ") + e.what());
  }
  try {
    return finish_fit(data, model, taus, std::move(first), cfg);
  } catch (const NumericalError& e) {
    throw NumericalError(std::string("second stage: ") + e.what());
  }
}

GqrFit fit_infeasible_qr(const Dataset& data, const ModelSpec& model, const std::vector<double>& taus,
                         const VectorXd& theta_true, const SolverConfig& cfg) {
  model.validate(data);
  if (theta_true.size() != model.theta_dim(data))
    throw ValidationError("fit_infeasible_qr: theta_true has wrong length");
  FirstStageFit first;
  first.method = FirstStageMethod::none;
  first.theta_hat = theta_true;
  first.psi = MatrixXd::Zero(data.n_rows(), theta_true.size());
  finalize_moments(first);
  return finish_fit(data, model, taus, std::move(first), cfg);
}

MatrixXd second_stage_design(const GqrFit& fit) {
  SecondStage stage = filter_second_stage(fit.generated);
  return stage.X;
}

VectorXd second_stage_response(const GqrFit& fit) {
  SecondStage stage = filter_second_stage(fit.generated);
  return stage.y;
}

double predict_quantile(const GqrFit& fit, const VectorXd& x_row, double tau) {
  if (fit.taus.empty()) throw ValidationError("predict_quantile: fit has no quantile levels");
  if (x_row.size() != static_cast<Eigen::Index>(fit.kept_columns.size()))
    throw ValidationError("predict_quantile: x_row length does not match the second-stage design");
  if (tau < fit.taus.front() || tau > fit.taus.back())
    throw ValidationError("predict_quantile: tau outside the fitted grid (no extrapolation)");
  std::size_t k = 0;
  while (k + 1 < fit.taus.size() && fit.taus[k + 1] < tau) ++k;
  if (tau == fit.taus[k]) return x_row.dot(fit.beta[k]);
  const double t0 = fit.taus[k], t1 = fit.taus[k + 1];
  const double w = (tau - t0) / (t1 - t0);
  return (1.0 - w) * x_row.dot(fit.beta[k]) + w * x_row.dot(fit.beta[k + 1]);
}

}  // namespace gqr
