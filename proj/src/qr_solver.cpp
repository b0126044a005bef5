#include "gqr/qr_solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "gqr/stats.hpp"

namespace gqr {

namespace {

constexpr double kRankTol = 1e-10;  // pivoted-QR diagonal ratio declaring rank deficiency

void check_tau(double tau) {
  if (!(tau > 0.0 && tau < 1.0)) throw ValidationError("tau must lie strictly inside (0,1)");
}

/// Least-squares solve with the project-wide rank screen.
VectorXd ols_start(const MatrixXd& X, const VectorXd& y) {
  Eigen::ColPivHouseholderQR<MatrixXd> qr(X);
  const auto& R = qr.matrixR();
  const double lead = std::abs(R(0, 0));
  for (Eigen::Index j = 0; j < X.cols(); ++j)
    if (std::abs(R(j, j)) < kRankTol * lead)
      throw SingularDesignError("design matrix is rank deficient (pivot " + std::to_string(j) + ")");
  return qr.solve(y);
}

struct Prepared {
  MatrixXd X;       // weight-scaled rows, zero-weight rows removed
  VectorXd y;       // weight-scaled
  std::vector<int> kept;  // row indices into the original data
};

Prepared prepare(const MatrixXd& X, const VectorXd& y, const VectorXd& weights) {
  const Eigen::Index n = X.rows();
  if (y.size() != n) throw ValidationError("fit_qr: X and y row counts differ");
  if (n < X.cols()) throw ValidationError("fit_qr: need n >= p");
  Prepared out;
  if (weights.size() == 0) {
    out.X = X;
    out.y = y;
    out.kept.resize(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) out.kept[static_cast<std::size_t>(i)] = static_cast<int>(i);
    return out;
  }
  if (weights.size() != n) throw ValidationError("fit_qr: weights length mismatch");
  for (Eigen::Index i = 0; i < n; ++i)
    if (!(weights[i] >= 0.0)) throw ValidationError("fit_qr: weights must be nonnegative");
  std::vector<int> kept;
  for (Eigen::Index i = 0; i < n; ++i)
    if (weights[i] > 0.0) kept.push_back(static_cast<int>(i));
  if (static_cast<Eigen::Index>(kept.size()) < X.cols())
    throw ValidationError("fit_qr: fewer positively weighted rows than parameters");
  out.X.resize(static_cast<Eigen::Index>(kept.size()), X.cols());
  out.y.resize(static_cast<Eigen::Index>(kept.size()));
  for (std::size_t r = 0; r < kept.size(); ++r) {
    const double w = weights[kept[r]];
    out.X.row(static_cast<Eigen::Index>(r)) = w * X.row(kept[r]);
    out.y[static_cast<Eigen::Index>(r)] = w * y[kept[r]];
  }
  out.kept = std::move(kept);
  return out;
}

/// Mehrotra predictor-corrector on the bounded-variable LP dual of
/// check-loss minimization:
///   min -y'a  s.t.  X'a = (1-tau) X'1,  0 <= a <= 1.
/// The multiplier of the equality block is the coefficient vector.
struct IpResult {
  VectorXd beta;
  VectorXd a;
  bool converged = false;
  int iterations = 0;
};

IpResult interior_point(const MatrixXd& X, const VectorXd& y, double tau, const SolverConfig& cfg) {
  const Eigen::Index n = X.rows();
  const double beta_step = 0.9995;

  const VectorXd b = (1.0 - tau) * (X.transpose() * VectorXd::Ones(n));

  IpResult res;
  res.beta = ols_start(X, y);
  VectorXd a = VectorXd::Constant(n, 1.0 - tau);
  VectorXd s = VectorXd::Constant(n, tau);
  VectorXd r = y - X * res.beta;
  const double cush = std::max(1e-5 * r.cwiseAbs().mean(), 1e-8);
  VectorXd z = (-r).cwiseMax(0.0).array() + cush;
  VectorXd w = r.cwiseMax(0.0).array() + cush;

  VectorXd best_beta = res.beta;
  double best_gap = std::numeric_limits<double>::infinity();

  for (int it = 1; it <= cfg.max_iter; ++it) {
    res.iterations = it;
    const VectorXd rb = b - X.transpose() * a;
    const VectorXd ru = VectorXd::Ones(n) - a - s;
    const VectorXd rc = y - X * res.beta + z - w;

    const double primal = -y.dot(a);
    const double dual = -b.dot(res.beta) - w.sum();
    const double gap = primal - dual;
    const double rel_gap =
        std::abs(gap) / (1.0 + std::abs(primal) + std::abs(dual)) + rb.cwiseAbs().maxCoeff() / (1.0 + b.cwiseAbs().maxCoeff());
    if (rel_gap < best_gap) {
      best_gap = rel_gap;
      best_beta = res.beta;
    }
    if (rel_gap < cfg.tol) {
      res.converged = true;
      break;
    }

    const VectorXd z_over_a = z.cwiseQuotient(a);
    const VectorXd w_over_s = w.cwiseQuotient(s);
    const VectorXd q = (z_over_a + w_over_s).cwiseInverse().cwiseMin(1e16);
    const double mu = (a.dot(z) + s.dot(w)) / (2.0 * static_cast<double>(n));

    auto solve_direction = [&](const VectorXd& t_z, const VectorXd& t_w, VectorXd& da, VectorXd& ds,
                               VectorXd& dz, VectorXd& dw, VectorXd& dbeta) {
      const VectorXd rho = rc - t_w.cwiseQuotient(s) + w_over_s.cwiseProduct(ru) + t_z.cwiseQuotient(a);
      const MatrixXd XtQX = X.transpose() * q.asDiagonal() * X;
      const VectorXd rhs = X.transpose() * q.cwiseProduct(rho) - rb;
      Eigen::LDLT<MatrixXd> ldlt(XtQX);
      if (ldlt.info() != Eigen::Success)
        throw NumericalError("interior point: normal equations not positive definite");
      dbeta = ldlt.solve(rhs);
      da = q.cwiseProduct(rho - X * dbeta);
      ds = ru - da;
      dz = t_z.cwiseQuotient(a) - z_over_a.cwiseProduct(da);
      dw = t_w.cwiseQuotient(s) - w_over_s.cwiseProduct(ds);
    };

    auto step_length = [&](const VectorXd& v, const VectorXd& dv) {
      double alpha = 1.0;
      for (Eigen::Index i = 0; i < v.size(); ++i)
        if (dv[i] < 0.0) alpha = std::min(alpha, -beta_step * v[i] / dv[i]);
      return alpha;
    };

    // Affine predictor.
    VectorXd da, ds, dz, dw, dbeta;
    solve_direction(-a.cwiseProduct(z), -s.cwiseProduct(w), da, ds, dz, dw, dbeta);
    double alpha_p = std::min(step_length(a, da), step_length(s, ds));
    double alpha_d = std::min(step_length(z, dz), step_length(w, dw));

    // Mehrotra centering + corrector.
    const double mu_aff = ((a + alpha_p * da).dot(z + alpha_d * dz) +
                           (s + alpha_p * ds).dot(w + alpha_d * dw)) /
                          (2.0 * static_cast<double>(n));
    const double sigma = std::pow(mu_aff / mu, 3);
    const VectorXd t_z = VectorXd::Constant(n, sigma * mu) - a.cwiseProduct(z) - da.cwiseProduct(dz);
    const VectorXd t_w = VectorXd::Constant(n, sigma * mu) - s.cwiseProduct(w) - ds.cwiseProduct(dw);
    solve_direction(t_z, t_w, da, ds, dz, dw, dbeta);
    alpha_p = std::min(step_length(a, da), step_length(s, ds));
    alpha_d = std::min(step_length(z, dz), step_length(w, dw));

    a += alpha_p * da;
    s += alpha_p * ds;
    z += alpha_d * dz;
    w += alpha_d * dw;
    res.beta += alpha_d * dbeta;
  }

  if (!res.converged) res.beta = best_beta;
  res.a = a;
  return res;
}

/// Gaussian-smoothed check loss: rho_tau convolved with a normal kernel of
/// width h. Gradient tau - Phi(-u/h), curvature phi(u/h)/h; damped Newton.
VectorXd smoothed_fit(const MatrixXd& X, const VectorXd& y, double tau, const SolverConfig& cfg,
                      bool& converged, int& iterations) {
  const Eigen::Index n = X.rows();
  const Eigen::Index p = X.cols();
  double scale = 1.0;
  if (n >= 2) {
    const double sd = std::sqrt((y.array() - y.mean()).square().sum() / static_cast<double>(n - 1));
    if (sd > 0.0) scale = sd;
  }
  const double h = 1e-4 * scale;

  auto smoothed_loss = [&](const VectorXd& resid) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double u = resid[i];
      total += tau * u - u * normal_cdf(-u / h) + h * normal_pdf(u / h);
    }
    return total / static_cast<double>(n);
  };

  VectorXd beta = ols_start(X, y);
  const double gtol = std::max(cfg.tol, 1e-12) * (1.0 + scale);
  converged = false;
  int max_newton = std::max(cfg.max_iter, 50);
  for (iterations = 1; iterations <= max_newton; ++iterations) {
    const VectorXd r = y - X * beta;
    VectorXd grad = VectorXd::Zero(p);
    MatrixXd hess = MatrixXd::Zero(p, p);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double psi = tau - normal_cdf(-r[i] / h);
      grad -= psi * X.row(i).transpose();
      hess += (normal_pdf(r[i] / h) / h) * (X.row(i).transpose() * X.row(i));
    }
    grad /= static_cast<double>(n);
    hess /= static_cast<double>(n);
    if (grad.cwiseAbs().maxCoeff() < gtol) {
      converged = true;
      break;
    }
    hess.diagonal().array() += 1e-12 * (1.0 + hess.trace() / static_cast<double>(p));
    const VectorXd step = Eigen::LDLT<MatrixXd>(hess).solve(-grad);
    double t = 1.0;
    const double f0 = smoothed_loss(r);
    const double slope = grad.dot(step);
    for (int ls = 0; ls < 40; ++ls) {
      if (smoothed_loss(y - X * (beta + t * step)) <= f0 + 1e-4 * t * slope) break;
      t *= 0.5;
    }
    beta += t * step;
  }
  return beta;
}

}  // namespace

double check_loss(double u, double tau) {
  check_tau(tau);
  return (tau - (u < 0.0 ? 1.0 : 0.0)) * u;
}

double mean_check_loss(const VectorXd& residuals, double tau, const VectorXd& weights) {
  check_tau(tau);
  KahanSum num;
  double denom = 0.0;
  for (Eigen::Index i = 0; i < residuals.size(); ++i) {
    const double w = weights.size() ? weights[i] : 1.0;
    num.add(w * check_loss(residuals[i], tau));
    denom += w;
  }
  if (denom <= 0.0) throw ValidationError("mean_check_loss: total weight is zero");
  return num.value() / denom;
}

QuantileFit fit_qr(const MatrixXd& X, const VectorXd& y, double tau, const SolverConfig& cfg,
                   const VectorXd& weights) {
  check_tau(tau);
  Prepared prep = prepare(X, y, weights);

  QuantileFit fit;
  fit.tau = tau;
  if (cfg.method == QrMethod::interior_point) {
    IpResult ip = interior_point(prep.X, prep.y, tau, cfg);
    fit.coef = ip.beta;
    fit.iterations = ip.iterations;
    fit.status = ip.converged ? FitStatus::optimal : FitStatus::max_iter;
  } else {
    bool converged = false;
    int iterations = 0;
    fit.coef = smoothed_fit(prep.X, prep.y, tau, cfg, converged, iterations);
    fit.iterations = iterations;
    fit.status = converged ? FitStatus::optimal : FitStatus::max_iter;
  }

  const VectorXd resid = y - X * fit.coef;
  fit.objective = mean_check_loss(resid, tau, weights);

  const double data_scale = y.cwiseAbs().maxCoeff() + (X * fit.coef).cwiseAbs().maxCoeff() + 1e-30;
  const double active_tol = 1e-8 * data_scale;
  fit.n_active = 0;
  for (Eigen::Index i = 0; i < resid.size(); ++i)
    if (std::abs(resid[i]) <= active_tol && (weights.size() == 0 || weights[i] > 0.0)) ++fit.n_active;
  if (fit.status == FitStatus::optimal && fit.n_active > X.cols()) fit.status = FitStatus::degenerate;
  return fit;
}

std::vector<QuantileFit> fit_qr_grid(const MatrixXd& X, const VectorXd& y,
                                     const std::vector<double>& taus, const SolverConfig& cfg,
                                     const VectorXd& weights) {
  for (std::size_t k = 0; k + 1 < taus.size(); ++k)
    if (!(taus[k] < taus[k + 1])) throw ValidationError("fit_qr_grid: taus must be strictly increasing");
  std::vector<QuantileFit> fits;
  fits.reserve(taus.size());
  for (double tau : taus) fits.push_back(fit_qr(X, y, tau, cfg, weights));
  return fits;
}

MatrixXd project_psd(const MatrixXd& A) {
  const MatrixXd sym = 0.5 * (A + A.transpose());
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(sym);
  const VectorXd lam = es.eigenvalues().cwiseMax(0.0);
  return es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
}

namespace {

struct EllipticalPacking {
  Eigen::Index d;
  Eigen::Index size() const { return d + d * (d + 1) / 2; }

  VectorXd pack(const EllipticalParams& par) const {
    VectorXd theta(size());
    theta.head(d) = par.mu;
    Eigen::Index k = d;
    for (Eigen::Index i = 0; i < d; ++i)
      for (Eigen::Index j = i; j < d; ++j) theta[k++] = par.sigma_sqrt(i, j);
    return theta;
  }

  EllipticalParams unpack(const VectorXd& theta) const {
    EllipticalParams par;
    par.mu = theta.head(d);
    par.sigma_sqrt.resize(d, d);
    Eigen::Index k = d;
    for (Eigen::Index i = 0; i < d; ++i)
      for (Eigen::Index j = i; j < d; ++j) {
        par.sigma_sqrt(i, j) = theta[k];
        par.sigma_sqrt(j, i) = theta[k];
        ++k;
      }
    par.sigma_sqrt = project_psd(par.sigma_sqrt);
    return par;
  }
};

double elliptical_objective(const MatrixXd& X, const VectorXd& y, const EllipticalParams& par) {
  KahanSum total;
  for (Eigen::Index i = 0; i < X.rows(); ++i)
    total.add(std::abs(y[i] - X.row(i).dot(par.mu) - (par.sigma_sqrt * X.row(i).transpose()).norm()));
  return total.value();
}

}  // namespace

EllipticalParams default_elliptical_init(const MatrixXd& X, const VectorXd& y,
                                         const SolverConfig& cfg) {
  EllipticalParams init;
  init.mu = fit_qr(X, y, 0.5, cfg).coef;
  init.sigma_sqrt = 0.1 * MatrixXd::Identity(X.cols(), X.cols());
  return init;
}

NonlinearMedianFit fit_nonlinear_median(const MatrixXd& X, const VectorXd& y,
                                        const EllipticalParams& init, const SolverConfig& cfg) {
  const Eigen::Index d = X.cols();
  if (init.mu.size() != d || init.sigma_sqrt.rows() != d || init.sigma_sqrt.cols() != d)
    throw ValidationError("fit_nonlinear_median: init dimensions do not match the design");
  if (!init.sigma_sqrt.isApprox(init.sigma_sqrt.transpose(), 1e-10))
    throw ValidationError("fit_nonlinear_median: init sigma_sqrt must be symmetric");

  EllipticalPacking pk{d};
  const Eigen::Index m = pk.size();
  auto f = [&](const VectorXd& theta) { return elliptical_objective(X, y, pk.unpack(theta)); };

  // Nelder-Mead simplex phase.
  std::vector<VectorXd> simplex;
  std::vector<double> fv;
  VectorXd theta0 = pk.pack(init);
  simplex.push_back(theta0);
  fv.push_back(f(theta0));
  for (Eigen::Index j = 0; j < m; ++j) {
    VectorXd v = theta0;
    v[j] += 0.05 * (1.0 + std::abs(theta0[j]));
    simplex.push_back(v);
    fv.push_back(f(v));
  }

  NonlinearMedianFit fit;
  const int nm_budget = std::max(400 * static_cast<int>(m), 4 * cfg.max_iter);
  int nm_it = 0;
  auto order = [&] {
    std::vector<std::size_t> idx(simplex.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return fv[a] < fv[b]; });
    std::vector<VectorXd> s2;
    std::vector<double> f2;
    for (std::size_t i : idx) {
      s2.push_back(simplex[i]);
      f2.push_back(fv[i]);
    }
    simplex.swap(s2);
    fv.swap(f2);
  };

  bool nm_converged = false;
  for (; nm_it < nm_budget; ++nm_it) {
    order();
    if (fv.back() - fv.front() <= 1e-12 * (1.0 + std::abs(fv.front()))) {
      nm_converged = true;
      break;
    }
    VectorXd centroid = VectorXd::Zero(m);
    for (std::size_t i = 0; i + 1 < simplex.size(); ++i) centroid += simplex[i];
    centroid /= static_cast<double>(m);

    const VectorXd reflect = centroid + (centroid - simplex.back());
    const double fr = f(reflect);
    if (fr < fv.front()) {
      const VectorXd expand = centroid + 2.0 * (centroid - simplex.back());
      const double fe = f(expand);
      if (fe < fr) {
        simplex.back() = expand;
        fv.back() = fe;
      } else {
        simplex.back() = reflect;
        fv.back() = fr;
      }
    } else if (fr < fv[fv.size() - 2]) {
      simplex.back() = reflect;
      fv.back() = fr;
    } else {
      const VectorXd contract = centroid + 0.5 * (simplex.back() - centroid);
      const double fc = f(contract);
      if (fc < fv.back()) {
        simplex.back() = contract;
        fv.back() = fc;
      } else {
        for (std::size_t i = 1; i < simplex.size(); ++i) {
          simplex[i] = simplex.front() + 0.5 * (simplex[i] - simplex.front());
          fv[i] = f(simplex[i]);
        }
      }
    }
  }
  order();
  fit.simplex_iterations = nm_it;

  // Projected subgradient refinement.
  VectorXd theta = simplex.front();
  EllipticalParams best = pk.unpack(theta);
  double best_f = fv.front();
  const int sg_budget = 500;
  for (int t = 0; t < sg_budget; ++t) {
    EllipticalParams cur = pk.unpack(theta);
    VectorXd grad = VectorXd::Zero(m);
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
      const VectorXd xi = X.row(i).transpose();
      const VectorXd sx = cur.sigma_sqrt * xi;
      const double norm = sx.norm();
      const double r = y[i] - xi.dot(cur.mu) - norm;
      const double sg = r > 0.0 ? 1.0 : (r < 0.0 ? -1.0 : 0.0);
      if (sg == 0.0) continue;
      grad.head(d) -= sg * xi;
      if (norm > 0.0) {
        Eigen::Index k = d;
        for (Eigen::Index a = 0; a < d; ++a)
          for (Eigen::Index b = a; b < d; ++b) {
            const double dn = (a == b) ? sx[a] * xi[a] / norm : (sx[a] * xi[b] + sx[b] * xi[a]) / norm;
            grad[k++] -= sg * dn;
          }
      }
    }
    const double gnorm = grad.norm();
    if (gnorm <= 1e-14) break;
    const double step = 0.05 * (1.0 + theta.norm()) / std::sqrt(static_cast<double>(t) + 1.0);
    theta -= step * grad / gnorm;
    EllipticalParams cand = pk.unpack(theta);
    theta = pk.pack(cand);  // keep the iterate on the PSD cone
    const double fc = elliptical_objective(X, y, cand);
    fit.subgradient_iterations = t + 1;
    if (fc < best_f) {
      best_f = fc;
      best = cand;
    }
  }

  fit.params = best;
  fit.objective = best_f;
  fit.status = nm_converged || nm_it < nm_budget ? FitStatus::optimal : FitStatus::max_iter;
  return fit;
}

}  // namespace gqr
