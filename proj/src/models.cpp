#include "gqr/models.hpp"

#include <cmath>

namespace gqr {

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::constant_slope: return "constant-slope";
    case ModelKind::elliptical: return "elliptical";
    case ModelKind::box_cox: return "box-cox";
    case ModelKind::control_variable: return "control-variable";
  }
  return "?";
}

ModelKind model_kind_from_string(const std::string& name) {
  if (name == "constant-slope") return ModelKind::constant_slope;
  if (name == "elliptical") return ModelKind::elliptical;
  if (name == "box-cox") return ModelKind::box_cox;
  if (name == "control-variable") return ModelKind::control_variable;
  throw ValidationError("unknown model kind '" + name + "'");
}

namespace {

void require_column(const Dataset& data, const std::string& name, const char* role) {
  if (name.empty()) throw ValidationError(std::string("missing column role: ") + role);
  if (!data.has_column(name))
    throw ValidationError(std::string(role) + " column '" + name + "' not present in the data");
}

}  // namespace

void ModelSpec::validate(const Dataset& data) const {
  require_column(data, response, "response");
  for (const auto& c : regressors) require_column(data, c, "regressor");
  switch (kind) {
    case ModelKind::constant_slope:
      require_column(data, constant_slope_regressor, "constant-slope regressor");
      break;
    case ModelKind::elliptical:
      break;
    case ModelKind::box_cox:
      for (const auto& c : instruments) require_column(data, c, "instrument");
      if (!(lambda_lo < lambda_hi)) throw ValidationError("box-cox: empty lambda bracket");
      break;
    case ModelKind::control_variable:
      require_column(data, endogenous, "endogenous regressor");
      if (instruments.empty()) throw ValidationError("control-variable: at least one instrument required");
      for (const auto& c : instruments) require_column(data, c, "instrument");
      break;
  }
}

Eigen::Index ModelSpec::theta_dim(const Dataset&) const {
  switch (kind) {
    case ModelKind::constant_slope: return 1;
    case ModelKind::elliptical: {
      const Eigen::Index d = static_cast<Eigen::Index>(regressors.size()) + 1;
      return d + d * d;
    }
    case ModelKind::box_cox: return 1;
    case ModelKind::control_variable: return static_cast<Eigen::Index>(instruments.size()) + 1;
  }
  return 0;
}

Eigen::Index ModelSpec::qr_dim(const Dataset&) const {
  switch (kind) {
    case ModelKind::constant_slope: return static_cast<Eigen::Index>(regressors.size()) + 1;
    case ModelKind::elliptical: return 1;
    case ModelKind::box_cox: return static_cast<Eigen::Index>(regressors.size()) + 1;
    case ModelKind::control_variable: return static_cast<Eigen::Index>(regressors.size()) + 3;
  }
  return 0;
}

MatrixXd design_with_intercept(const Dataset& data, const std::vector<std::string>& cols) {
  MatrixXd X(data.n_rows(), static_cast<Eigen::Index>(cols.size()) + 1);
  X.col(0).setOnes();
  for (std::size_t j = 0; j < cols.size(); ++j) X.col(static_cast<Eigen::Index>(j) + 1) = data.column(cols[j]);
  return X;
}

MatrixXd instrument_design(const Dataset& data, const ModelSpec& spec) {
  return design_with_intercept(data, spec.instruments);
}

VectorXd pack_elliptical_theta(const EllipticalParams& params) {
  const Eigen::Index d = params.mu.size();
  VectorXd theta(d + d * d);
  theta.head(d) = params.mu;
  for (Eigen::Index k = 0; k < d; ++k)
    theta.segment(d + k * d, d) = params.sigma_sqrt.col(k);
  return theta;
}

EllipticalParams unpack_elliptical_theta(const VectorXd& theta, Eigen::Index d) {
  if (theta.size() != d + d * d) throw ValidationError("elliptical theta has wrong length");
  EllipticalParams params;
  params.mu = theta.head(d);
  params.sigma_sqrt.resize(d, d);
  for (Eigen::Index k = 0; k < d; ++k) params.sigma_sqrt.col(k) = theta.segment(d + k * d, d);
  return params;
}

GeneratedData constant_slope_generate(const Dataset& data, const ModelSpec& spec, double beta1) {
  spec.validate(data);
  const Eigen::Index n = data.n_rows();
  const VectorXd y = data.column(spec.response);
  const VectorXd x1 = data.column(spec.constant_slope_regressor);

  GeneratedData out;
  out.y_theta = y - beta1 * x1;
  out.x_theta = design_with_intercept(data, spec.regressors);
  out.dg_dtheta = -x1;
  out.valid.assign(static_cast<std::size_t>(n), 1);
  return out;
}

GeneratedData elliptical_generate(const Dataset& data, const ModelSpec& spec,
                                  const EllipticalParams& params) {
  spec.validate(data);
  const Eigen::Index n = data.n_rows();
  const VectorXd y = data.column(spec.response);
  const MatrixXd X = design_with_intercept(data, spec.regressors);
  const Eigen::Index d = X.cols();
  if (params.mu.size() != d || params.sigma_sqrt.rows() != d || params.sigma_sqrt.cols() != d)
    throw ValidationError("elliptical parameters do not match the design dimension");

  GeneratedData out;
  out.y_theta.resize(n);
  out.x_theta = MatrixXd::Ones(n, 1);
  out.dg_dtheta = MatrixXd::Zero(n, d + d * d);
  out.norms.resize(n);
  out.dnorm_dsigma = MatrixXd::Zero(n, d * d);
  out.valid.assign(static_cast<std::size_t>(n), 1);

  const double s_scale = params.sigma_sqrt.norm();
  for (Eigen::Index i = 0; i < n; ++i) {
    const VectorXd xi = X.row(i).transpose();
    const VectorXd sx = params.sigma_sqrt * xi;
    const double norm = sx.norm();
    out.norms[i] = norm;
    if (norm <= 1e-12 * std::max(1.0, s_scale * xi.norm())) {
      out.valid[static_cast<std::size_t>(i)] = 0;
      ++out.n_invalid;
      out.y_theta[i] = 0.0;
      continue;
    }
    const double centered = y[i] - xi.dot(params.mu);
    out.y_theta[i] = centered / norm;
    out.dg_dtheta.row(i).head(d) = (-xi / norm).transpose();
    for (Eigen::Index k = 0; k < d; ++k)
      for (Eigen::Index j = 0; j < d; ++j) {
        const double dn = sx[j] * xi[k] / norm;  // d||Sx||/dS_jk
        out.dnorm_dsigma(i, k * d + j) = dn;
        out.dg_dtheta(i, d + k * d + j) = -out.y_theta[i] * dn / norm;
      }
  }
  return out;
}

double boxcox_transform(double y, double lambda) {
  const double ly = std::log(y);
  if (lambda == 0.0) return ly;
  return std::expm1(lambda * ly) / lambda;
}

double boxcox_dlambda(double y, double lambda) {
  const double ly = std::log(y);
  const double t = lambda * ly;
  if (std::abs(t) < 1e-4) {
    // (e^t (t-1) + 1)/lambda^2 = ly^2 (1/2 + t/3 + t^2/8 + ...)
    return ly * ly * (0.5 + t / 3.0 + t * t / 8.0);
  }
  return (std::exp(t) * (t - 1.0) + 1.0) / (lambda * lambda);
}

GeneratedData boxcox_generate(const Dataset& data, const ModelSpec& spec, double lambda) {
  spec.validate(data);
  const Eigen::Index n = data.n_rows();
  const VectorXd y = data.column(spec.response);

  std::string bad;
  int n_bad = 0;
  for (Eigen::Index i = 0; i < n; ++i)
    if (!(y[i] > 0.0)) {
      ++n_bad;
      if (n_bad <= 8) bad += (bad.empty() ? "" : ", ") + std::to_string(i);
    }
  if (n_bad > 0)
    throw ValidationError("box-cox requires y > 0; violated at " + std::to_string(n_bad) +
                          " row(s): " + bad + (n_bad > 8 ? ", ..." : ""));

  // lambda within 1e-8 of zero is evaluated on the log branch; expm1 keeps
  // the transform continuous there anyway.
  const double lam = std::abs(lambda) < 1e-8 ? 0.0 : lambda;

  GeneratedData out;
  out.y_theta.resize(n);
  out.dg_dtheta.resize(n, 1);
  out.x_theta = design_with_intercept(data, spec.regressors);
  out.valid.assign(static_cast<std::size_t>(n), 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    out.y_theta[i] = boxcox_transform(y[i], lam);
    out.dg_dtheta(i, 0) = boxcox_dlambda(y[i], lam);
  }
  return out;
}

GeneratedData control_variable_generate(const Dataset& data, const ModelSpec& spec,
                                        const VectorXd& gamma) {
  spec.validate(data);
  const Eigen::Index n = data.n_rows();
  const MatrixXd Z = instrument_design(data, spec);
  if (gamma.size() != Z.cols()) throw ValidationError("control-variable gamma has wrong length");
  const VectorXd x_endog = data.column(spec.endogenous);
  const MatrixXd W = design_with_intercept(data, spec.regressors);

  GeneratedData out;
  out.y_theta = data.column(spec.response);
  out.x_theta.resize(n, W.cols() + 2);
  out.x_theta.leftCols(W.cols()) = W;
  out.x_theta.col(W.cols()) = x_endog;
  out.x_theta.col(W.cols() + 1) = x_endog - Z * gamma;
  out.dg_dtheta = MatrixXd::Zero(n, Z.cols());
  out.valid.assign(static_cast<std::size_t>(n), 1);
  return out;
}

GeneratedData generate(const Dataset& data, const ModelSpec& spec, const VectorXd& theta) {
  switch (spec.kind) {
    case ModelKind::constant_slope:
      if (theta.size() != 1) throw ValidationError("constant-slope theta must be a scalar");
      return constant_slope_generate(data, spec, theta[0]);
    case ModelKind::elliptical: {
      const Eigen::Index d = static_cast<Eigen::Index>(spec.regressors.size()) + 1;
      return elliptical_generate(data, spec, unpack_elliptical_theta(theta, d));
    }
    case ModelKind::box_cox:
      if (theta.size() != 1) throw ValidationError("box-cox theta must be a scalar");
      return boxcox_generate(data, spec, theta[0]);
    case ModelKind::control_variable:
      return control_variable_generate(data, spec, theta);
  }
  throw ValidationError("generate: unknown model kind");
}

}  // namespace gqr
