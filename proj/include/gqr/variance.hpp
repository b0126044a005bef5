#pragma once

#include <cstdint>
#include <vector>

#include "gqr/gqr.hpp"

namespace gqr {

/// J(tau) = tau (1-tau) (1/n) sum x_i x_i'.
MatrixXd estimate_J(const MatrixXd& x_theta, double tau);

/// Powell kernel estimate of the density-weighted design moment
/// H(tau) = E[f(x'beta(tau)|x) x x']: (1/(n h)) sum K(r_i/h) x_i x_i' with a
/// Gaussian kernel. bandwidth <= 0 selects the Hall-Sheather/Powell default.
MatrixXd estimate_H(const MatrixXd& x_theta, const VectorXd& residuals, double tau,
                    double bandwidth = 0.0);

/// First-stage sensitivity D(tau) = -d/dtheta E[{F(x'(theta)beta|x,theta)-tau} x(theta)],
/// by central finite differences of the empirical score mean with the
/// indicator smoothed by a Gaussian CDF of the given bandwidth.
/// steps defaults to 0.5 n^{-1/2} (1+|theta_j|) per coordinate.
MatrixXd estimate_D(const Dataset& data, const ModelSpec& model, const VectorXd& theta_hat,
                    const VectorXd& beta_tau, double tau, double bandwidth,
                    const std::vector<int>& kept_columns, const VectorXd& steps = VectorXd());

/// Cross moment of the first-stage influence values with the second-stage
/// score, (1/n) sum psi_i (tau - 1[r_i <= 0]) x_i'. Stored in score form so
/// that the sandwich below adds the cross terms with positive sign.
MatrixXd estimate_C_psi_s(const MatrixXd& psi, const MatrixXd& x_theta, const VectorXd& residuals,
                          double tau);

enum class VarianceMethod { plugin, bootstrap, closed_form };

struct VarianceEstimate {
  double tau = 0.0;
  MatrixXd V;
  MatrixXd H, J, D, c_psi_s, c_psi_psi;
  VarianceMethod method = VarianceMethod::plugin;
  double bandwidth = 0.0;        // plug-in
  int B = 0, m = 0;              // bootstrap
  std::uint64_t seed = 0;        // bootstrap
  int failed_resamples = 0;      // bootstrap
};

/// V = H^{-1} [J + D C + C' D' + D C_psipsi D'] H^{-1}, symmetrized.
VarianceEstimate assemble_V(double tau, const MatrixXd& H, const MatrixXd& J, const MatrixXd& D,
                            const MatrixXd& c_psi_s, const MatrixXd& c_psi_psi,
                            double bandwidth = 0.0);

/// All plug-in components evaluated from a completed fit at taus[k].
VarianceEstimate plugin_variance(const Dataset& data, const GqrFit& fit, std::size_t tau_index);

struct BootstrapConfig {
  int B = 1000;
  int m = 0;  // 0 means m = n
  std::uint64_t seed = 0;
};

/// m-out-of-n design-matrix bootstrap of the full two-step pipeline:
/// rows resampled jointly, the first stage re-estimated on every resample,
/// V(tau) = n (m/n) (1/B) sum_b (beta_b - beta_bar)(beta_b - beta_bar)'.
/// Resamples that fail numerically are redrawn and counted; more than 5%
/// failures abort. Deterministic given the seed, independent of threads.
std::vector<VarianceEstimate> bootstrap_variance(const Dataset& data, const ModelSpec& model,
                                                 const std::vector<double>& taus,
                                                 FirstStageMethod method,
                                                 const BootstrapConfig& bcfg,
                                                 const SolverConfig& cfg = {}, int threads = 1);

/// Same resampling scheme for a plain (one-step) quantile regression.
std::vector<VarianceEstimate> bootstrap_qr_variance(const MatrixXd& X, const VectorXd& y,
                                                    const std::vector<double>& taus,
                                                    const BootstrapConfig& bcfg,
                                                    const SolverConfig& cfg = {}, int threads = 1);

/// Whether beta_true lies inside the normal-approximation (1-alpha) interval
/// around beta_hat with asymptotic variance v_jj (of sqrt(n)(beta - beta0)).
bool ci_covers(double beta_hat, double beta_true, double v_jj, Eigen::Index n, double alpha);

}  // namespace gqr
