#pragma once

#include <string>
#include <vector>

#include "gqr/csv.hpp"
#include "gqr/variance.hpp"

namespace gqr {

enum class Estimator { gqr, qr, iqr };
std::string to_string(Estimator est);

struct SimConfig {
  int n = 1000;
  int reps = 1000;
  std::vector<double> taus{0.2, 0.4, 0.6, 0.8};
  std::uint64_t seed = 1;
  int B = 1000;
  int m = 0;  // bootstrap resample size; 0 means m = n
  std::vector<Estimator> estimators{Estimator::gqr, Estimator::qr, Estimator::iqr};
  FirstStageMethod first_stage = FirstStageMethod::ols;
  int threads = 0;
  SolverConfig solver;
};

struct SimCell {
  Estimator estimator = Estimator::gqr;
  std::string first_stage;  // set when first stages are compared
  double tau = 0.0;
  std::string coef;
  double true_value = 0.0;
  int reps_used = 0;
  double bias = 0.0;
  double rmse = 0.0;
  double mean_se = -1.0;  // bootstrap SE of sqrt(n)-scaled coefficient
  double cov_se = -1.0;   // sd/mean of the SE across replications
  double coverage90 = -1.0, coverage95 = -1.0, coverage99 = -1.0;
};

struct SimReport {
  SimConfig cfg;
  std::vector<SimCell> cells;
  int failed_reps = 0;
  bool with_bootstrap = false;

  const SimCell& cell(Estimator est, double tau, const std::string& coef,
                      const std::string& first_stage = "") const;
};

/// Simulation design: Y = beta0(U) + X1 + beta2(U) X2 with X1 ~ U[1,5],
/// X2 ~ U[3,10], U ~ U[0,1]; columns (y, x1, x2, u_latent).
Dataset draw_dgp(int n, std::uint64_t seed);
double dgp_beta0(double tau);  // e^tau
double dgp_beta2(double tau);  // 2 tau^2
ModelSpec dgp_model_spec();

/// Bias and RMSE over replications for the requested estimators.
SimReport run_table_bias_rmse(const SimConfig& cfg);

/// Bias/RMSE plus per-replication bootstrap standard errors, their
/// coefficient of variation and empirical coverage at 0.90/0.95/0.99.
SimReport run_table_coverage(const SimConfig& cfg);

/// GQR bootstrap SEs under OLS, QR-mean and Gastwirth first stages.
SimReport run_table_first_stage_comparison(const SimConfig& cfg);

struct BahadurConfig {
  std::vector<int> ns{250, 1000, 4000, 16000};
  int reps = 200;
  std::uint64_t seed = 1;
  std::vector<double> sup_taus{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  std::vector<double> check_taus{0.2, 0.4, 0.6, 0.8};
  int threads = 0;
  SolverConfig solver;
};

struct BahadurRow {
  int n = 0;
  double median_sup = 0.0;
  double q90_sup = 0.0;
  std::vector<double> score_mean_norm;    // per check tau
  std::vector<double> score_cov_rel_err;  // Frobenius error of cov(S) vs J
};

struct BahadurTable {
  BahadurConfig cfg;
  std::vector<BahadurRow> rows;
};

/// Infeasible-pipeline remainder E(tau;theta0) = sqrt(n)(beta_hat - beta)
/// + H^{-1} S_hat, with beta and H from the known design; reports the
/// median and 0.9-quantile of sup_tau ||E|| per sample size.
BahadurTable bahadur_diagnostic(const BahadurConfig& cfg);

// Stable CSV layouts for the reproduced tables.
Csv table_bias_rmse_csv(const SimReport& report, const std::string& coef);
Csv table_coverage_csv(const SimReport& report);
Csv table_se_csv(const SimReport& report, const std::string& coef);  // with closed-form true column
Csv table_first_stage_csv(const SimReport& report);
Csv closed_form_table_csv(const std::vector<double>& taus);
Csv bahadur_csv(const BahadurTable& table);

}  // namespace gqr
