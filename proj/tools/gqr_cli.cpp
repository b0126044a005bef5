// gqr: two-step generated quantile regression from the command line.
//
// Commands: fit, auction, simulate table{1..6}, bahadur, closed-form.
// Exit codes: 0 success, 2 input/validation error, 3 numerical failure,
// 4 internal error. GQR_THREADS caps worker threads (speed only).

#include <CLI11.hpp>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <set>

#include "gqr/closed_form.hpp"
#include "gqr/csv.hpp"
#include "gqr/gqr.hpp"
#include "gqr/parallel.hpp"
#include "gqr/rng.hpp"
#include "gqr/sim_bench.hpp"
#include "gqr/stats.hpp"
#include "gqr/variance.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace gqr;

namespace {

struct Options {
  std::string command;
  std::string table;  // simulate subtable
  std::string input;
  std::string config_path;
  std::string model = "constant-slope";
  std::string first_stage;
  std::string out = ".";
  std::string y = "y";
  std::string x1;
  std::string endogenous;
  std::vector<std::string> xcols;
  std::vector<std::string> instruments;
  std::vector<double> taus;
  int B = -1;
  int m = -1;
  int reps = -1;
  int n = -1;
  std::int64_t seed = -1;
  std::string mode = "mc";  // table5: mc | closed-form
  std::string bid = "bid", appraisal = "appraisal", volume = "volume";
};

/// Fill unset options from the JSON config file (flags override file).
void apply_config(Options& opt, const std::set<std::string>& set_flags) {
  if (opt.config_path.empty()) return;
  std::ifstream in(opt.config_path);
  if (!in) throw ValidationError("cannot open config '" + opt.config_path + "'");
  json cfg;
  try {
    in >> cfg;
  } catch (const json::exception& e) {
    throw ValidationError("config '" + opt.config_path + "': " + e.what());
  }
  auto take = [&](const char* key, auto& field) {
    if (set_flags.count(key) || !cfg.contains(key)) return;
    try {
      cfg.at(key).get_to(field);
    } catch (const json::exception& e) {
      throw ValidationError("config key '" + std::string(key) + "': " + e.what());
    }
  };
  take("input", opt.input);
  take("model", opt.model);
  take("first-stage", opt.first_stage);
  take("out", opt.out);
  take("y", opt.y);
  take("x1", opt.x1);
  take("endogenous", opt.endogenous);
  take("x", opt.xcols);
  take("instruments", opt.instruments);
  take("taus", opt.taus);
  take("B", opt.B);
  take("m", opt.m);
  take("reps", opt.reps);
  take("n", opt.n);
  take("seed", opt.seed);
  take("mode", opt.mode);
  take("bid", opt.bid);
  take("appraisal", opt.appraisal);
  take("volume", opt.volume);
}

std::uint64_t seed_or(const Options& opt, std::uint64_t fallback) {
  return opt.seed >= 0 ? static_cast<std::uint64_t>(opt.seed) : fallback;
}

void ensure_out_dir(const std::string& out) {
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw ValidationError("cannot create output directory '" + out + "': " + ec.message());
}

std::string out_path(const Options& opt, const std::string& name) {
  return (fs::path(opt.out) / name).string();
}

void write_json_file(const std::string& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot open '" + path + "' for writing");
  out << j.dump(2) << '\n';
}

ModelSpec model_from_options(const Options& opt) {
  ModelSpec spec;
  spec.kind = model_kind_from_string(opt.model);
  spec.response = opt.y;
  spec.regressors = opt.xcols;
  spec.constant_slope_regressor = opt.x1;
  spec.endogenous = opt.endogenous;
  spec.instruments = opt.instruments;
  return spec;
}

std::vector<std::string> second_stage_names(const ModelSpec& spec, const std::vector<int>& kept) {
  std::vector<std::string> all;
  switch (spec.kind) {
    case ModelKind::constant_slope:
    case ModelKind::box_cox:
      all.push_back("intercept");
      for (const auto& c : spec.regressors) all.push_back(c);
      break;
    case ModelKind::elliptical:
      all.push_back("xi");
      break;
    case ModelKind::control_variable:
      all.push_back("intercept");
      for (const auto& c : spec.regressors) all.push_back(c);
      all.push_back(spec.endogenous);
      all.push_back("control");
      break;
  }
  std::vector<std::string> names;
  for (int j : kept) names.push_back(all[static_cast<std::size_t>(j)]);
  return names;
}

json diagnostics_json(const GqrFit& fit) {
  json j;
  j["masked_rows"] = fit.diagnostics.masked_rows;
  j["monotonicity_violations"] = fit.diagnostics.monotonicity_violations;
  j["design_condition"] = fit.diagnostics.design_condition;
  j["dropped_columns"] = fit.diagnostics.dropped_columns;
  std::vector<std::string> statuses;
  for (auto s : fit.diagnostics.statuses)
    statuses.push_back(s == FitStatus::optimal ? "optimal"
                       : s == FitStatus::degenerate ? "degenerate"
                                                    : "max-iter");
  j["solver_statuses"] = statuses;
  j["first_stage_method"] = to_string(fit.first_stage.method);
  j["first_stage_converged"] = fit.first_stage.converged;
  std::vector<double> theta(fit.first_stage.theta_hat.data(),
                            fit.first_stage.theta_hat.data() + fit.first_stage.theta_hat.size());
  j["theta_hat"] = theta;
  return j;
}

int cmd_fit(const Options& opt) {
  if (opt.input.empty()) throw ValidationError("fit: --input is required");
  ensure_out_dir(opt.out);
  const Dataset data = read_dataset_file(opt.input);
  const ModelSpec spec = model_from_options(opt);
  const FirstStageMethod method = opt.first_stage.empty()
                                      ? default_first_stage(spec.kind)
                                      : first_stage_method_from_string(opt.first_stage);
  const std::vector<double> taus = opt.taus.empty() ? std::vector<double>{0.2, 0.4, 0.6, 0.8} : opt.taus;
  const int B = opt.B > 0 ? opt.B : 200;

  const GqrFit fit = fit_gqr(data, spec, taus, method);
  BootstrapConfig bcfg;
  bcfg.B = B;
  bcfg.m = opt.m > 0 ? opt.m : 0;
  bcfg.seed = seed_or(opt, 1);
  const auto boot = bootstrap_variance(data, spec, taus, method, bcfg, {}, worker_count());

  const auto names = second_stage_names(spec, fit.kept_columns);
  const double z975 = normal_quantile(0.975);
  const double n = static_cast<double>(data.n_rows());

  Csv csv;
  csv.header = {"tau", "coef", "estimate", "se_plugin", "se_bootstrap", "ci95_lo", "ci95_hi"};
  for (std::size_t k = 0; k < taus.size(); ++k) {
    const VarianceEstimate plug = plugin_variance(data, fit, k);
    for (std::size_t c = 0; c < names.size(); ++c) {
      const double est = fit.beta[k][static_cast<Eigen::Index>(c)];
      const double se_p = std::sqrt(plug.V(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(c)) / n);
      const double se_b =
          std::sqrt(boot[k].V(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(c)) / n);
      csv.rows.push_back({format_double(taus[k]), names[c], format_double(est), format_double(se_p),
                          format_double(se_b), format_double(est - z975 * se_b),
                          format_double(est + z975 * se_b)});
    }
  }
  write_csv_file(out_path(opt, "fit.csv"), csv);

  json j;
  j["command"] = "fit";
  j["input"] = opt.input;
  j["model"] = to_string(spec.kind);
  j["taus"] = taus;
  j["B"] = B;
  j["m"] = bcfg.m == 0 ? data.n_rows() : bcfg.m;
  j["seed"] = bcfg.seed;
  j["diagnostics"] = diagnostics_json(fit);
  write_json_file(out_path(opt, "fit.json"), j);
  std::cout << "wrote " << out_path(opt, "fit.csv") << " and fit.json\n";
  return 0;
}

int cmd_auction(const Options& opt) {
  if (opt.input.empty()) throw ValidationError("auction: --input is required");
  ensure_out_dir(opt.out);
  const Dataset data = read_dataset_file(opt.input);
  for (const auto& col : {opt.bid, opt.appraisal, opt.volume})
    if (!data.has_column(col)) throw ValidationError("auction: column '" + col + "' missing");

  const VectorXd bid = data.column(opt.bid);
  const VectorXd appr = data.column(opt.appraisal);
  const VectorXd vol = data.column(opt.volume);
  const Eigen::Index n = bid.size();
  if (n < 4) throw ValidationError("auction: need at least 4 rows");

  std::vector<double> taus = opt.taus;
  if (taus.empty())
    for (int k = 1; k <= 9; ++k) taus.push_back(0.1 * k);
  const int B = opt.B > 0 ? opt.B : 10000;
  const int m = opt.m > 0 ? opt.m : static_cast<int>(n);  // unconstrained scheme uses m = n
  const std::uint64_t seed = seed_or(opt, 1);

  MatrixXd X(n, 3);
  X.col(0).setOnes();
  X.col(1) = appr;
  X.col(2) = vol;

  // First step: bid regression (homogenization of intercept and appraisal).
  const FirstStageFit ols = fit_ols(X, bid);
  const VectorXd fitted = X * ols.theta_hat;
  const double sst = (bid.array() - bid.mean()).square().sum();
  const double ssr = (bid - fitted).squaredNorm();
  const double r2 = sst > 0.0 ? 1.0 - ssr / sst : 0.0;

  Csv fs_csv;
  fs_csv.header = {"term", "estimate", "se"};
  const std::vector<std::string> terms{"intercept", opt.appraisal, opt.volume};
  for (int j = 0; j < 3; ++j)
    fs_csv.rows.push_back({terms[static_cast<std::size_t>(j)], format_double(ols.theta_hat[j]),
                           format_double(std::sqrt(ols.vcov(j, j) / static_cast<double>(n)))});
  write_csv_file(out_path(opt, "auction_first_stage.csv"), fs_csv);

  // Constrained (GQR) point estimates: volume-slope QR of the homogenized bid.
  MatrixXd Xv(n, 1);
  Xv.col(0) = vol;
  const VectorXd homogenized = bid - ols.theta_hat[0] * VectorXd::Ones(n) - ols.theta_hat[1] * appr;
  std::vector<double> constrained;
  for (double tau : taus) constrained.push_back(fit_qr(Xv, homogenized, tau).coef[0]);

  // Unconstrained: plain QR of bid on [1, appraisal, volume].
  std::vector<double> unconstrained;
  for (double tau : taus) unconstrained.push_back(fit_qr(X, bid, tau).coef[2]);

  // Design-matrix bootstrap, full pipeline re-run per resample.
  MatrixXd boot_con(B, static_cast<Eigen::Index>(taus.size()));
  MatrixXd boot_unc(B, static_cast<Eigen::Index>(taus.size()));
  parallel_for(B, [&](int b) {
    Rng rng(substream(seed, static_cast<std::uint64_t>(b)));
    std::vector<int> idx(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) idx[static_cast<std::size_t>(i)] = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
    MatrixXd Xb(m, 3);
    VectorXd bidb(m);
    for (int i = 0; i < m; ++i) {
      Xb.row(i) = X.row(idx[static_cast<std::size_t>(i)]);
      bidb[i] = bid[idx[static_cast<std::size_t>(i)]];
    }
    const FirstStageFit olsb = fit_ols(Xb, bidb);
    const VectorXd homb = bidb - olsb.theta_hat[0] * VectorXd::Ones(m) - olsb.theta_hat[1] * Xb.col(1);
    MatrixXd Xvb = Xb.col(2);
    for (std::size_t k = 0; k < taus.size(); ++k) {
      boot_con(b, static_cast<Eigen::Index>(k)) = fit_qr(Xvb, homb, taus[k]).coef[0];
      boot_unc(b, static_cast<Eigen::Index>(k)) = fit_qr(Xb, bidb, taus[k]).coef[2];
    }
  });

  auto boot_se = [&](const MatrixXd& draws, std::size_t k) {
    KahanSum mean_sum;
    for (int b = 0; b < B; ++b) mean_sum.add(draws(b, static_cast<Eigen::Index>(k)));
    const double mean = mean_sum.value() / B;
    KahanSum sq;
    for (int b = 0; b < B; ++b) {
      const double d = draws(b, static_cast<Eigen::Index>(k)) - mean;
      sq.add(d * d);
    }
    // Eq-(boot) rescale m/n, then back to the scale of the estimate itself.
    const double v = static_cast<double>(m) * sq.value() / B;
    return std::sqrt(v / static_cast<double>(n));
  };

  Csv slopes;
  slopes.header = {"tau", "constrained_estimate", "constrained_se", "unconstrained_estimate",
                   "unconstrained_se"};
  int mono_con = 0, mono_unc = 0;
  for (std::size_t k = 0; k < taus.size(); ++k) {
    if (k > 0 && constrained[k] < constrained[k - 1]) ++mono_con;
    if (k > 0 && unconstrained[k] < unconstrained[k - 1]) ++mono_unc;
    slopes.rows.push_back({format_double(taus[k]), format_double(constrained[k]),
                           format_double(boot_se(boot_con, k)), format_double(unconstrained[k]),
                           format_double(boot_se(boot_unc, k))});
  }
  write_csv_file(out_path(opt, "auction_slopes.csv"), slopes);

  json j;
  j["command"] = "auction";
  j["n"] = n;
  j["B"] = B;
  j["m"] = m;
  j["seed"] = seed;
  j["r2"] = r2;
  j["monotonicity_violations"] = {{"constrained", mono_con}, {"unconstrained", mono_unc}};
  write_json_file(out_path(opt, "auction.json"), j);
  std::cout << "wrote auction_first_stage.csv, auction_slopes.csv, auction.json in " << opt.out << "\n";
  return 0;
}

json report_json(const SimReport& report) {
  json j;
  j["n"] = report.cfg.n;
  j["reps"] = report.cfg.reps;
  j["seed"] = report.cfg.seed;
  j["B"] = report.cfg.B;
  j["m"] = report.cfg.m == 0 ? report.cfg.n : report.cfg.m;
  j["taus"] = report.cfg.taus;
  j["failed_reps"] = report.failed_reps;
  json cells = json::array();
  for (const auto& c : report.cells) {
    json cell;
    cell["estimator"] = to_string(c.estimator);
    if (!c.first_stage.empty()) cell["first_stage"] = c.first_stage;
    cell["tau"] = c.tau;
    cell["coef"] = c.coef;
    cell["true_value"] = c.true_value;
    cell["bias"] = c.bias;
    cell["rmse"] = c.rmse;
    cell["reps_used"] = c.reps_used;
    if (report.with_bootstrap) {
      cell["mean_se"] = c.mean_se;
      cell["cov_se"] = c.cov_se;
      cell["coverage90"] = c.coverage90;
      cell["coverage95"] = c.coverage95;
      cell["coverage99"] = c.coverage99;
    }
    cells.push_back(cell);
  }
  j["cells"] = cells;
  return j;
}

int cmd_simulate(const Options& opt) {
  ensure_out_dir(opt.out);
  SimConfig cfg;
  cfg.seed = seed_or(opt, 1);
  cfg.threads = 0;
  if (!opt.taus.empty()) cfg.taus = opt.taus;

  const std::string& t = opt.table;
  if (t == "table1" || t == "table2") {
    cfg.n = opt.n > 0 ? opt.n : 1000;
    cfg.reps = opt.reps > 0 ? opt.reps : 1000;
    const SimReport report = run_table_bias_rmse(cfg);
    write_csv_file(out_path(opt, t + ".csv"),
                   table_bias_rmse_csv(report, t == "table1" ? "beta0" : "beta2"));
    write_json_file(out_path(opt, t + "_summary.json"), report_json(report));
  } else if (t == "table3" || t == "table4") {
    cfg.n = opt.n > 0 ? opt.n : (t == "table3" ? 100 : 1000);
    cfg.reps = opt.reps > 0 ? opt.reps : 1000;
    cfg.B = opt.B > 0 ? opt.B : 1000;
    cfg.m = opt.m > 0 ? opt.m : (cfg.n >= 1000 ? 300 : 0);
    const SimReport report = run_table_coverage(cfg);
    write_csv_file(out_path(opt, t + ".csv"), table_coverage_csv(report));
    write_json_file(out_path(opt, t + "_summary.json"), report_json(report));
  } else if (t == "table5") {
    if (opt.mode == "closed-form") {
      Csv csv;
      csv.header = {"tau", "estimator", "true_se"};
      for (double tau : cfg.taus) {
        csv.rows.push_back({format_double(tau), "GQR", format_double(std::sqrt(v_gqr0_true(tau)))});
        csv.rows.push_back({format_double(tau), "QR", format_double(std::sqrt(v_qr0_true(tau)))});
        csv.rows.push_back({format_double(tau), "i-QR", format_double(std::sqrt(v_iqr0_true(tau)))});
      }
      write_csv_file(out_path(opt, "table5.csv"), csv);
      Csv csv2;
      csv2.header = {"tau", "true_se_beta2"};
      for (double tau : cfg.taus)
        csv2.rows.push_back({format_double(tau), format_double(std::sqrt(v_beta2_true(tau)))});
      write_csv_file(out_path(opt, "table5_beta2.csv"), csv2);
    } else {
      cfg.n = opt.n > 0 ? opt.n : 1000;
      cfg.reps = opt.reps > 0 ? opt.reps : 1000;
      cfg.B = opt.B > 0 ? opt.B : 1000;
      cfg.m = opt.m > 0 ? opt.m : (cfg.n >= 1000 ? 300 : 0);
      const SimReport report = run_table_coverage(cfg);
      write_csv_file(out_path(opt, "table5.csv"), table_se_csv(report, "beta0"));
      write_csv_file(out_path(opt, "table5_beta2.csv"), table_se_csv(report, "beta2"));
      write_json_file(out_path(opt, "table5_summary.json"), report_json(report));
    }
  } else if (t == "table6") {
    cfg.n = opt.n > 0 ? opt.n : 1000;
    cfg.reps = opt.reps > 0 ? opt.reps : 1000;
    cfg.B = opt.B > 0 ? opt.B : 1000;
    cfg.m = opt.m > 0 ? opt.m : (cfg.n >= 1000 ? 300 : 0);
    const SimReport report = run_table_first_stage_comparison(cfg);
    write_csv_file(out_path(opt, "table6.csv"), table_first_stage_csv(report));
    write_json_file(out_path(opt, "table6_summary.json"), report_json(report));
  } else {
    throw ValidationError("simulate: unknown table '" + t + "' (expected table1..table6)");
  }
  std::cout << "wrote " << t << " outputs in " << opt.out << "\n";
  return 0;
}

int cmd_bahadur(const Options& opt) {
  ensure_out_dir(opt.out);
  BahadurConfig cfg;
  cfg.reps = opt.reps > 0 ? opt.reps : 200;
  cfg.seed = seed_or(opt, 1);
  if (opt.n > 0) cfg.ns = {opt.n};
  const BahadurTable table = bahadur_diagnostic(cfg);
  write_csv_file(out_path(opt, "bahadur.csv"), bahadur_csv(table));
  std::cout << "wrote bahadur.csv in " << opt.out << "\n";
  return 0;
}

int cmd_closed_form(const Options& opt) {
  ensure_out_dir(opt.out);
  const std::vector<double> taus = opt.taus.empty() ? std::vector<double>{0.2, 0.4, 0.6, 0.8} : opt.taus;
  write_csv_file(out_path(opt, "closed_form.csv"), closed_form_table_csv(taus));
  std::cout << "wrote closed_form.csv in " << opt.out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  Options opt;
  CLI::App app{"Generated quantile regression (two-step estimation, variance, simulation tables)"};
  app.require_subcommand(1);

  std::set<std::string> set_flags;
  auto track = [&set_flags](const std::string& name) {
    return [&set_flags, name](auto) { set_flags.insert(name); };
  };

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--input", opt.input)->each(track("input"));
    cmd->add_option("--config", opt.config_path);
    cmd->add_option("--taus", opt.taus)->delimiter(',')->each(track("taus"));
    cmd->add_option("--B", opt.B)->each(track("B"));
    cmd->add_option("--m", opt.m)->each(track("m"));
    cmd->add_option("--seed", opt.seed)->each(track("seed"));
    cmd->add_option("--out", opt.out)->each(track("out"));
    cmd->add_option("--reps", opt.reps)->each(track("reps"));
    cmd->add_option("--n", opt.n)->each(track("n"));
  };

  CLI::App* fit = app.add_subcommand("fit", "Two-step fit with plug-in and bootstrap SEs");
  add_common(fit);
  fit->add_option("--model", opt.model)->each(track("model"));
  fit->add_option("--first-stage", opt.first_stage)->each(track("first-stage"));
  fit->add_option("--y", opt.y)->each(track("y"));
  fit->add_option("--x1", opt.x1)->each(track("x1"));
  fit->add_option("--x", opt.xcols)->delimiter(',')->each(track("x"));
  fit->add_option("--endogenous", opt.endogenous)->each(track("endogenous"));
  fit->add_option("--instruments", opt.instruments)->delimiter(',')->each(track("instruments"));

  CLI::App* auction = app.add_subcommand("auction", "Homogenized-bid quantile regression");
  add_common(auction);
  auction->add_option("--bid", opt.bid)->each(track("bid"));
  auction->add_option("--appraisal", opt.appraisal)->each(track("appraisal"));
  auction->add_option("--volume", opt.volume)->each(track("volume"));

  CLI::App* simulate = app.add_subcommand("simulate", "Reproduce the simulation tables");
  add_common(simulate);
  simulate->add_option("table", opt.table, "table1..table6")->required();
  simulate->add_option("--mode", opt.mode, "table5: mc | closed-form")->each(track("mode"));

  CLI::App* bahadur = app.add_subcommand("bahadur", "Remainder-decay diagnostic");
  add_common(bahadur);

  CLI::App* closed_form = app.add_subcommand("closed-form", "Analytic variance benchmarks");
  add_common(closed_form);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    app.exit(e);
    return 2;
  }

  try {
    apply_config(opt, set_flags);
    if (fit->parsed()) return cmd_fit(opt);
    if (auction->parsed()) return cmd_auction(opt);
    if (simulate->parsed()) return cmd_simulate(opt);
    if (bahadur->parsed()) return cmd_bahadur(opt);
    if (closed_form->parsed()) return cmd_closed_form(opt);
    throw ValidationError("no command given");
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 4;
  }
}
