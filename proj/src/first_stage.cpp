#include "gqr/first_stage.hpp"

#include <cmath>

#include "gqr/models.hpp"
#include "gqr/stats.hpp"
#include "gqr/variance.hpp"

namespace gqr {

std::string to_string(FirstStageMethod m) {
  switch (m) {
    case FirstStageMethod::ols: return "ols";
    case FirstStageMethod::niv: return "niv";
    case FirstStageMethod::nlmedian: return "nlmedian";
    case FirstStageMethod::qr_mean: return "qr-mean";
    case FirstStageMethod::gastwirth: return "gastwirth";
    case FirstStageMethod::control_ols: return "control-ols";
    case FirstStageMethod::none: return "none";
  }
  return "?";
}

FirstStageMethod first_stage_method_from_string(const std::string& name) {
  if (name == "ols") return FirstStageMethod::ols;
  if (name == "niv") return FirstStageMethod::niv;
  if (name == "nlmedian") return FirstStageMethod::nlmedian;
  if (name == "qr-mean") return FirstStageMethod::qr_mean;
  if (name == "gastwirth") return FirstStageMethod::gastwirth;
  if (name == "control-ols") return FirstStageMethod::control_ols;
  if (name == "none") return FirstStageMethod::none;
  throw ValidationError("unknown first-stage method '" + name + "'");
}

void finalize_moments(FirstStageFit& fit) {
  const Eigen::Index n = fit.psi.rows();
  if (n == 0) {
    const Eigen::Index q = fit.theta_hat.size();
    fit.c_psi_psi = MatrixXd::Zero(q, q);
    fit.vcov = fit.c_psi_psi;
    return;
  }
  fit.c_psi_psi = fit.psi.transpose() * fit.psi / static_cast<double>(n);
  fit.vcov = fit.c_psi_psi;
}

FirstStageFit select_coords(const FirstStageFit& fit, const std::vector<int>& coords) {
  FirstStageFit out;
  out.method = fit.method;
  out.converged = fit.converged;
  out.theta_hat.resize(static_cast<Eigen::Index>(coords.size()));
  out.psi.resize(fit.psi.rows(), static_cast<Eigen::Index>(coords.size()));
  for (std::size_t k = 0; k < coords.size(); ++k) {
    out.theta_hat[static_cast<Eigen::Index>(k)] = fit.theta_hat[coords[k]];
    if (fit.psi.rows() > 0) out.psi.col(static_cast<Eigen::Index>(k)) = fit.psi.col(coords[k]);
  }
  finalize_moments(out);
  return out;
}

namespace {

Eigen::LDLT<MatrixXd> gram_factor(const MatrixXd& X, const char* what) {
  const MatrixXd gram = X.transpose() * X / static_cast<double>(X.rows());
  Eigen::LDLT<MatrixXd> ldlt(gram);
  if (ldlt.info() != Eigen::Success || (ldlt.vectorD().array() <= 0.0).any())
    throw SingularDesignError(std::string(what) + ": singular normal equations");
  return ldlt;
}

}  // namespace

FirstStageFit fit_ols(const MatrixXd& X, const VectorXd& y) {
  if (X.rows() != y.size()) throw ValidationError("fit_ols: X and y row counts differ");
  const Eigen::Index n = X.rows();
  auto ldlt = gram_factor(X, "fit_ols");

  FirstStageFit fit;
  fit.method = FirstStageMethod::ols;
  fit.theta_hat = ldlt.solve(X.transpose() * y / static_cast<double>(n));
  const VectorXd resid = y - X * fit.theta_hat;
  // psi_i = (X'X/n)^{-1} x_i e_i
  fit.psi = ldlt.solve(X.transpose()).transpose();
  fit.psi.array().colwise() *= resid.array();
  finalize_moments(fit);
  return fit;
}

MatrixXd build_niv_instruments(const MatrixXd& X) {
  const Eigen::Index n = X.rows();
  const Eigen::Index p = X.cols();
  if (p < 1) throw ValidationError("build_niv_instruments: empty design");

  auto is_constant = [&](const VectorXd& col) {
    return (col.maxCoeff() - col.minCoeff()) <= 1e-12 * (1.0 + col.cwiseAbs().maxCoeff());
  };

  std::vector<Eigen::Index> variable_cols;
  for (Eigen::Index j = 0; j < p; ++j)
    if (!is_constant(X.col(j))) variable_cols.push_back(j);

  std::vector<VectorXd> cols;
  for (Eigen::Index j = 0; j < p; ++j) cols.push_back(X.col(j));
  auto duplicated = [&](const VectorXd& cand) {
    for (const auto& c : cols)
      if ((c - cand).cwiseAbs().maxCoeff() <=
          1e-12 * (1.0 + c.cwiseAbs().maxCoeff() + cand.cwiseAbs().maxCoeff()))
        return true;
    return false;
  };
  auto push_unique = [&](const VectorXd& cand) {
    if (is_constant(cand) || duplicated(cand)) return;
    cols.push_back(cand);
  };

  for (Eigen::Index a : variable_cols) push_unique(X.col(a).cwiseProduct(X.col(a)));
  for (std::size_t i = 0; i < variable_cols.size(); ++i)
    for (std::size_t j = i + 1; j < variable_cols.size(); ++j)
      push_unique(X.col(variable_cols[i]).cwiseProduct(X.col(variable_cols[j])));

  MatrixXd W(n, static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) W.col(static_cast<Eigen::Index>(j)) = cols[j];
  return W;
}

namespace {

MatrixXd niv_omega(const NivWeight& weight, const MatrixXd& W) {
  switch (weight.kind) {
    case NivWeight::Kind::identity:
      return MatrixXd::Identity(W.cols(), W.cols());
    case NivWeight::Kind::two_sls: {
      const MatrixXd gram = W.transpose() * W / static_cast<double>(W.rows());
      Eigen::LDLT<MatrixXd> ldlt(gram);
      if (ldlt.info() != Eigen::Success || (ldlt.vectorD().array() <= 0.0).any())
        throw SingularDesignError("fit_niv: W'W is singular");
      return ldlt.solve(MatrixXd::Identity(W.cols(), W.cols()));
    }
    case NivWeight::Kind::custom:
      if (weight.omega.rows() != W.cols() || weight.omega.cols() != W.cols())
        throw ValidationError("fit_niv: custom Omega has wrong dimensions");
      return weight.omega;
  }
  throw ValidationError("fit_niv: unknown weighting");
}

}  // namespace

FirstStageFit fit_niv(const MatrixXd& X, const VectorXd& y, const MatrixXd& W,
                      const NivWeight& weight, const NivConfig& cfg) {
  const Eigen::Index n = X.rows();
  if (y.size() != n || W.rows() != n) throw ValidationError("fit_niv: row counts differ");
  if (W.cols() < X.cols() + 1)
    throw ValidationError("fit_niv: need at least p+1 instruments for (lambda, beta)");
  for (Eigen::Index i = 0; i < n; ++i)
    if (!(y[i] > 0.0))
      throw ValidationError("fit_niv: Box-Cox requires y > 0 (row " + std::to_string(i) + ")");
  if (!(cfg.lambda_lo < cfg.lambda_hi)) throw ValidationError("fit_niv: empty lambda bracket");

  const MatrixXd omega = niv_omega(weight, W);
  const MatrixXd Swx = W.transpose() * X / static_cast<double>(n);  // m x p
  const MatrixXd A = Swx.transpose() * omega * Swx;                 // p x p
  Eigen::LDLT<MatrixXd> ldltA(A);
  if (ldltA.info() != Eigen::Success || (ldltA.vectorD().array() <= 0.0).any())
    throw SingularDesignError("fit_niv: instrumented design is singular");

  // The raw profile degenerates as lambda -> -inf (Y(lambda) tends to a
  // constant and the moment norm collapses), so the search compares moment
  // norms of Y(lambda)/gm^(lambda-1), the geometric-mean standardization.
  // Rescaling Y(lambda) and b together leaves the estimating-equation roots
  // untouched.
  const double mean_log_y = y.array().log().mean();

  VectorXd ylam(n);
  auto profile = [&](double lam, VectorXd* beta_out) {
    for (Eigen::Index i = 0; i < n; ++i) ylam[i] = boxcox_transform(y[i], lam);
    const VectorXd v = W.transpose() * ylam / static_cast<double>(n);
    const VectorXd beta = ldltA.solve(Swx.transpose() * omega * v);
    const VectorXd g = v - Swx * beta;
    if (beta_out) *beta_out = beta;
    const double scale = std::exp((lam - 1.0) * mean_log_y);
    return g.dot(omega * g) / (scale * scale);
  };

  // Coarse scan to bracket the minimum, then golden-section refinement.
  const int k_scan = std::max(cfg.scan_points, 3);
  double best_lam = cfg.lambda_lo;
  double best_q = std::numeric_limits<double>::infinity();
  const double step = (cfg.lambda_hi - cfg.lambda_lo) / (k_scan - 1);
  for (int k = 0; k < k_scan; ++k) {
    const double lam = cfg.lambda_lo + k * step;
    const double q = profile(lam, nullptr);
    if (q < best_q) {
      best_q = q;
      best_lam = lam;
    }
  }
  double lo = std::max(cfg.lambda_lo, best_lam - step);
  double hi = std::min(cfg.lambda_hi, best_lam + step);
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double x1 = hi - inv_phi * (hi - lo);
  double x2 = lo + inv_phi * (hi - lo);
  double f1 = profile(x1, nullptr);
  double f2 = profile(x2, nullptr);
  while (hi - lo > cfg.tol) {
    if (f1 < f2) {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - inv_phi * (hi - lo);
      f1 = profile(x1, nullptr);
    } else {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + inv_phi * (hi - lo);
      f2 = profile(x2, nullptr);
    }
  }
  const double lambda_hat = 0.5 * (lo + hi);

  FirstStageFit fit;
  fit.method = FirstStageMethod::niv;
  VectorXd beta_hat;
  profile(lambda_hat, &beta_hat);
  const double edge = 2.0 * std::max(cfg.tol, step * 1e-3);
  fit.converged =
      (lambda_hat - cfg.lambda_lo > edge) && (cfg.lambda_hi - lambda_hat > edge);

  fit.theta_hat.resize(X.cols() + 1);
  fit.theta_hat[0] = lambda_hat;
  fit.theta_hat.tail(X.cols()) = beta_hat;

  // G = E[W dY(lambda)/dlambda, -W X'];  psi_i = -(G'.Omega.G)^{-1} G'.Omega W_i eps_i
  VectorXd dlam(n), eps(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    dlam[i] = boxcox_dlambda(y[i], lambda_hat);
    eps[i] = boxcox_transform(y[i], lambda_hat) - X.row(i).dot(beta_hat);
  }
  MatrixXd G(W.cols(), X.cols() + 1);
  G.col(0) = W.transpose() * dlam / static_cast<double>(n);
  G.rightCols(X.cols()) = -Swx;
  const MatrixXd GOG = G.transpose() * omega * G;
  Eigen::LDLT<MatrixXd> ldltG(GOG);
  if (ldltG.info() != Eigen::Success)
    throw SingularDesignError("fit_niv: G'Omega G is singular");
  const MatrixXd proj = ldltG.solve(G.transpose() * omega);  // (p+1) x m
  fit.psi = -(W * proj.transpose());
  fit.psi.array().colwise() *= eps.array();
  finalize_moments(fit);
  return fit;
}

std::vector<double> default_qr_mean_taus() {
  std::vector<double> taus;
  for (int k = 1; k <= 19; ++k) taus.push_back(0.05 * k);
  return taus;
}

namespace {

FirstStageFit weighted_qr_slope(const MatrixXd& X, const VectorXd& y, int coord,
                                const std::vector<double>& taus, const std::vector<double>& weights,
                                const SolverConfig& cfg, FirstStageMethod method,
                                bool with_influence) {
  if (coord < 0 || coord >= X.cols()) throw ValidationError("qr slope: coord out of range");
  const Eigen::Index n = X.rows();
  FirstStageFit fit;
  fit.method = method;
  fit.theta_hat = VectorXd::Zero(1);
  fit.psi = MatrixXd::Zero(with_influence ? n : 0, 1);
  for (std::size_t k = 0; k < taus.size(); ++k) {
    const double tau = taus[k];
    const double wk = weights[k];
    const QuantileFit qf = fit_qr(X, y, tau, cfg);
    if (qf.status == FitStatus::max_iter) fit.converged = false;
    fit.theta_hat[0] += wk * qf.coef[coord];
    if (!with_influence) continue;
    const VectorXd resid = y - X * qf.coef;
    const MatrixXd H = estimate_H(X, resid, tau);
    Eigen::LDLT<MatrixXd> ldlt(H);
    if (ldlt.info() != Eigen::Success)
      throw NumericalError("qr slope influence: H estimate is singular");
    // Bahadur summand of the coord-th coefficient at this level.
    VectorXd e = VectorXd::Zero(X.cols());
    e[coord] = 1.0;
    const VectorXd row_weight = ldlt.solve(e);  // H^{-1} e (symmetric H)
    for (Eigen::Index i = 0; i < n; ++i) {
      const double score = tau - (resid[i] <= 0.0 ? 1.0 : 0.0);
      fit.psi(i, 0) += wk * score * row_weight.dot(X.row(i));
    }
  }
  finalize_moments(fit);
  return fit;
}

}  // namespace

FirstStageFit fit_qr_mean_slope(const MatrixXd& X, const VectorXd& y, int coord,
                                const std::vector<double>& taus, const SolverConfig& cfg,
                                bool with_influence) {
  if (taus.empty()) throw ValidationError("fit_qr_mean_slope: empty tau grid");
  std::vector<double> weights(taus.size(), 1.0 / static_cast<double>(taus.size()));
  return weighted_qr_slope(X, y, coord, taus, weights, cfg, FirstStageMethod::qr_mean,
                           with_influence);
}

FirstStageFit fit_gastwirth_slope(const MatrixXd& X, const VectorXd& y, int coord,
                                  const SolverConfig& cfg, bool with_influence) {
  const std::vector<double> taus{1.0 / 3.0, 0.5, 2.0 / 3.0};
  const std::vector<double> weights{0.3, 0.4, 0.3};
  return weighted_qr_slope(X, y, coord, taus, weights, cfg, FirstStageMethod::gastwirth,
                           with_influence);
}

std::pair<FirstStageFit, VectorXd> fit_control_variable(const VectorXd& x_endog, const MatrixXd& Z) {
  FirstStageFit fit = fit_ols(Z, x_endog);
  fit.method = FirstStageMethod::control_ols;
  const VectorXd eta = x_endog - Z * fit.theta_hat;
  return {std::move(fit), eta};
}

}  // namespace gqr
