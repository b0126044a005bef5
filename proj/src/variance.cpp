#include "gqr/variance.hpp"

#include <cmath>

#include "gqr/parallel.hpp"
#include "gqr/rng.hpp"
#include "gqr/stats.hpp"

namespace gqr {

MatrixXd estimate_J(const MatrixXd& x_theta, double tau) {
  const double n = static_cast<double>(x_theta.rows());
  return tau * (1.0 - tau) * (x_theta.transpose() * x_theta) / n;
}

MatrixXd estimate_H(const MatrixXd& x_theta, const VectorXd& residuals, double tau,
                    double bandwidth) {
  if (x_theta.rows() != residuals.size()) throw ValidationError("estimate_H: row mismatch");
  if (bandwidth < 0.0) throw ValidationError("estimate_H: bandwidth must be positive");
  const double h = bandwidth > 0.0 ? bandwidth : powell_bandwidth(residuals, tau);
  if (!(h > 0.0)) throw ValidationError("estimate_H: bandwidth must be positive");
  const Eigen::Index n = x_theta.rows();
  MatrixXd H = MatrixXd::Zero(x_theta.cols(), x_theta.cols());
  for (Eigen::Index i = 0; i < n; ++i)
    H += (normal_pdf(residuals[i] / h) / h) * (x_theta.row(i).transpose() * x_theta.row(i));
  return H / static_cast<double>(n);
}

namespace {

/// Smoothed empirical score mean m(theta) over rows valid in every
/// requested evaluation, restricted to the kept design columns.
VectorXd smoothed_score_mean(const GeneratedData& gen, const VectorXd& beta, double tau,
                             double bandwidth, const std::vector<int>& kept,
                             const std::vector<std::uint8_t>& common_valid) {
  const Eigen::Index p = static_cast<Eigen::Index>(kept.size());
  VectorXd m = VectorXd::Zero(p);
  int used = 0;
  for (Eigen::Index i = 0; i < gen.x_theta.rows(); ++i) {
    if (!common_valid[static_cast<std::size_t>(i)]) continue;
    double xb = 0.0;
    for (Eigen::Index c = 0; c < p; ++c) xb += gen.x_theta(i, kept[c]) * beta[c];
    const double s = normal_cdf((xb - gen.y_theta[i]) / bandwidth) - tau;
    for (Eigen::Index c = 0; c < p; ++c) m[c] += gen.x_theta(i, kept[c]) * s;
    ++used;
  }
  if (used == 0) throw NumericalError("estimate_D: no jointly valid rows");
  return m / static_cast<double>(used);
}

}  // namespace

MatrixXd estimate_D(const Dataset& data, const ModelSpec& model, const VectorXd& theta_hat,
                    const VectorXd& beta_tau, double tau, double bandwidth,
                    const std::vector<int>& kept_columns, const VectorXd& steps) {
  const Eigen::Index q = theta_hat.size();
  const Eigen::Index p = static_cast<Eigen::Index>(kept_columns.size());
  if (beta_tau.size() != p) throw ValidationError("estimate_D: beta length does not match kept columns");
  MatrixXd D(p, q);
  if (q == 0) return D;
  if (!(bandwidth > 0.0)) throw ValidationError("estimate_D: bandwidth must be positive");

  const double n = static_cast<double>(data.n_rows());
  VectorXd h(q);
  for (Eigen::Index j = 0; j < q; ++j) {
    h[j] = steps.size() ? steps[j] : 0.5 / std::sqrt(n) * (1.0 + std::abs(theta_hat[j]));
    if (!(h[j] > 1e-10)) throw NumericalError("estimate_D: step collapsed below 1e-10");
  }

  // Evaluate all perturbations first so every score mean runs over the same
  // jointly valid rows.
  std::vector<GeneratedData> plus(static_cast<std::size_t>(q)), minus(static_cast<std::size_t>(q));
  std::vector<std::uint8_t> common(static_cast<std::size_t>(data.n_rows()), 1);
  for (Eigen::Index j = 0; j < q; ++j) {
    VectorXd tp = theta_hat, tm = theta_hat;
    tp[j] += h[j];
    tm[j] -= h[j];
    plus[static_cast<std::size_t>(j)] = generate(data, model, tp);
    minus[static_cast<std::size_t>(j)] = generate(data, model, tm);
    for (std::size_t i = 0; i < common.size(); ++i)
      common[i] = common[i] && plus[static_cast<std::size_t>(j)].valid[i] &&
                  minus[static_cast<std::size_t>(j)].valid[i];
  }

  for (Eigen::Index j = 0; j < q; ++j) {
    const VectorXd mp =
        smoothed_score_mean(plus[static_cast<std::size_t>(j)], beta_tau, tau, bandwidth, kept_columns, common);
    const VectorXd mm =
        smoothed_score_mean(minus[static_cast<std::size_t>(j)], beta_tau, tau, bandwidth, kept_columns, common);
    D.col(j) = -(mp - mm) / (2.0 * h[j]);
  }
  return D;
}

MatrixXd estimate_C_psi_s(const MatrixXd& psi, const MatrixXd& x_theta, const VectorXd& residuals,
                          double tau) {
  const Eigen::Index n = x_theta.rows();
  if (psi.rows() != n || residuals.size() != n)
    throw ValidationError("estimate_C_psi_s: row mismatch between psi, design and residuals");
  MatrixXd C = MatrixXd::Zero(psi.cols(), x_theta.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    const double score = tau - (residuals[i] <= 0.0 ? 1.0 : 0.0);
    C += score * (psi.row(i).transpose() * x_theta.row(i));
  }
  return C / static_cast<double>(n);
}

VarianceEstimate assemble_V(double tau, const MatrixXd& H, const MatrixXd& J, const MatrixXd& D,
                            const MatrixXd& c_psi_s, const MatrixXd& c_psi_psi, double bandwidth) {
  const Eigen::Index p = H.rows();
  if (H.cols() != p || J.rows() != p || J.cols() != p)
    throw ValidationError("assemble_V: H and J must be square and matching");
  const Eigen::Index q = D.cols();
  if (D.rows() != p || c_psi_s.rows() != q || c_psi_s.cols() != p || c_psi_psi.rows() != q ||
      c_psi_psi.cols() != q)
    throw ValidationError("assemble_V: component dimensions are inconsistent");

  Eigen::SelfAdjointEigenSolver<MatrixXd> es(H);
  const double lo = es.eigenvalues().minCoeff();
  const double hi = es.eigenvalues().maxCoeff();
  if (!(lo > 0.0) || hi / lo > 1e12)
    throw NumericalError("assemble_V: H is singular (condition number above 1e12)");
  const MatrixXd h_inv = es.eigenvectors() * es.eigenvalues().cwiseInverse().asDiagonal() *
                         es.eigenvectors().transpose();

  MatrixXd inner = J;
  if (q > 0) {
    const MatrixXd cross = D * c_psi_s;
    inner += cross + cross.transpose() + D * c_psi_psi * D.transpose();
  }
  VarianceEstimate out;
  out.tau = tau;
  out.method = VarianceMethod::plugin;
  out.bandwidth = bandwidth;
  out.H = H;
  out.J = J;
  out.D = D;
  out.c_psi_s = c_psi_s;
  out.c_psi_psi = c_psi_psi;
  MatrixXd V = h_inv * inner * h_inv;
  out.V = 0.5 * (V + V.transpose());
  return out;
}

VarianceEstimate plugin_variance(const Dataset& data, const GqrFit& fit, std::size_t tau_index) {
  if (tau_index >= fit.taus.size()) throw ValidationError("plugin_variance: tau index out of range");
  const double tau = fit.taus[tau_index];
  const MatrixXd X = second_stage_design(fit);
  const VectorXd y = second_stage_response(fit);
  const VectorXd resid = y - X * fit.beta[tau_index];

  const double h = powell_bandwidth(resid, tau);
  const MatrixXd H = estimate_H(X, resid, tau, h);
  const MatrixXd J = estimate_J(X, tau);
  const MatrixXd D = estimate_D(data, fit.model, fit.first_stage.theta_hat, fit.beta[tau_index], tau,
                                h, fit.kept_columns);

  // Influence rows restricted to the valid second-stage rows.
  const Eigen::Index q = fit.first_stage.theta_hat.size();
  MatrixXd psi(X.rows(), q);
  if (fit.first_stage.psi.rows() != static_cast<Eigen::Index>(fit.generated.valid.size()))
    throw ValidationError("plugin_variance: fit carries no influence values (refit with influence)");
  Eigen::Index r = 0;
  for (std::size_t i = 0; i < fit.generated.valid.size(); ++i)
    if (fit.generated.valid[i]) psi.row(r++) = fit.first_stage.psi.row(static_cast<Eigen::Index>(i));

  const MatrixXd C = estimate_C_psi_s(psi, X, resid, tau);
  const MatrixXd c_psi_psi = psi.transpose() * psi / static_cast<double>(psi.rows());
  return assemble_V(tau, H, J, D, C, c_psi_psi, h);
}

namespace {

std::vector<VarianceEstimate> bootstrap_impl(
    Eigen::Index n, const std::vector<double>& taus, const BootstrapConfig& bcfg,
    const std::function<std::vector<VectorXd>(const std::vector<int>&)>& refit, int threads) {
  const int m = bcfg.m == 0 ? static_cast<int>(n) : bcfg.m;
  if (m < 1 || m > n) throw ValidationError("bootstrap: m must satisfy 1 <= m <= n");
  if (bcfg.B < 2) throw ValidationError("bootstrap: B must be at least 2");

  const int max_attempts = 16;
  std::vector<std::vector<VectorXd>> draws(static_cast<std::size_t>(bcfg.B));
  std::vector<int> failures(static_cast<std::size_t>(bcfg.B), 0);

  parallel_for(
      bcfg.B,
      [&](int b) {
        for (int attempt = 0;; ++attempt) {
          Rng rng(substream(bcfg.seed, static_cast<std::uint64_t>(b), static_cast<std::uint64_t>(attempt)));
          std::vector<int> idx(static_cast<std::size_t>(m));
          for (int i = 0; i < m; ++i) idx[static_cast<std::size_t>(i)] = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
          try {
            draws[static_cast<std::size_t>(b)] = refit(idx);
            return;
          } catch (const NumericalError&) {
            ++failures[static_cast<std::size_t>(b)];
            if (attempt + 1 >= max_attempts)
              throw NumericalError("bootstrap: resample " + std::to_string(b) +
                                   " failed repeatedly");
          }
        }
      },
      threads);

  int total_failures = 0;
  for (int f : failures) total_failures += f;
  if (total_failures > bcfg.B / 20)
    throw NumericalError("bootstrap: more than 5% of resamples failed (" +
                         std::to_string(total_failures) + " of " + std::to_string(bcfg.B) + ")");

  std::vector<VarianceEstimate> out;
  const std::size_t n_tau = taus.size();
  const Eigen::Index p = draws[0][0].size();
  for (std::size_t k = 0; k < n_tau; ++k) {
    // beta_bar then the rescaled covariance, accumulated in resample order
    // with compensated sums.
    VectorXd mean(p);
    for (Eigen::Index c = 0; c < p; ++c) {
      KahanSum s;
      for (int b = 0; b < bcfg.B; ++b) s.add(draws[static_cast<std::size_t>(b)][k][c]);
      mean[c] = s.value() / static_cast<double>(bcfg.B);
    }
    MatrixXd V(p, p);
    for (Eigen::Index r = 0; r < p; ++r)
      for (Eigen::Index c = r; c < p; ++c) {
        KahanSum s;
        for (int b = 0; b < bcfg.B; ++b) {
          const VectorXd& beta = draws[static_cast<std::size_t>(b)][k];
          s.add((beta[r] - mean[r]) * (beta[c] - mean[c]));
        }
        V(r, c) = static_cast<double>(m) * s.value() / static_cast<double>(bcfg.B);
        V(c, r) = V(r, c);
      }
    VarianceEstimate est;
    est.tau = taus[k];
    est.method = VarianceMethod::bootstrap;
    est.V = V;
    est.B = bcfg.B;
    est.m = m;
    est.seed = bcfg.seed;
    est.failed_resamples = total_failures;
    out.push_back(std::move(est));
  }
  return out;
}

}  // namespace

std::vector<VarianceEstimate> bootstrap_variance(const Dataset& data, const ModelSpec& model,
                                                 const std::vector<double>& taus,
                                                 FirstStageMethod method,
                                                 const BootstrapConfig& bcfg,
                                                 const SolverConfig& cfg, int threads) {
  model.validate(data);
  const Eigen::Index base_p = static_cast<Eigen::Index>(
      fit_gqr(data, model, {}, method, cfg, false).kept_columns.size());
  auto refit = [&](const std::vector<int>& idx) {
    const Dataset resampled = data.rows(idx);
    GqrFit fit = fit_gqr(resampled, model, taus, method, cfg, false);
    if (static_cast<Eigen::Index>(fit.kept_columns.size()) != base_p)
      throw NumericalError("bootstrap resample dropped design columns");
    return fit.beta;
  };
  return bootstrap_impl(data.n_rows(), taus, bcfg, refit, threads);
}

std::vector<VarianceEstimate> bootstrap_qr_variance(const MatrixXd& X, const VectorXd& y,
                                                    const std::vector<double>& taus,
                                                    const BootstrapConfig& bcfg,
                                                    const SolverConfig& cfg, int threads) {
  auto refit = [&](const std::vector<int>& idx) {
    MatrixXd Xb(static_cast<Eigen::Index>(idx.size()), X.cols());
    VectorXd yb(static_cast<Eigen::Index>(idx.size()));
    for (std::size_t r = 0; r < idx.size(); ++r) {
      Xb.row(static_cast<Eigen::Index>(r)) = X.row(idx[r]);
      yb[static_cast<Eigen::Index>(r)] = y[idx[r]];
    }
    std::vector<VectorXd> betas;
    for (const auto& fit : fit_qr_grid(Xb, yb, taus, cfg)) betas.push_back(fit.coef);
    return betas;
  };
  return bootstrap_impl(X.rows(), taus, bcfg, refit, threads);
}

bool ci_covers(double beta_hat, double beta_true, double v_jj, Eigen::Index n, double alpha) {
  if (!(v_jj > 0.0)) throw NumericalError("ci_covers: variance must be positive");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("ci_covers: alpha outside (0,1)");
  const double se = std::sqrt(v_jj / static_cast<double>(n));
  return std::abs(beta_hat - beta_true) / se <= normal_quantile(1.0 - alpha / 2.0);
}

}  // namespace gqr
