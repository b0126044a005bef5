#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gqr/common.hpp"
#include "gqr/qr_solver.hpp"

namespace gqr {

enum class ModelKind { constant_slope, elliptical, box_cox, control_variable };

std::string to_string(ModelKind kind);
ModelKind model_kind_from_string(const std::string& name);

/// Column roles for one of the four model pipelines.
///  - constant_slope: response, constant_slope_regressor (X1) and the
///    remaining regressors; the generated response is y - theta X1 and the
///    second-stage design is [1, regressors...].
///  - elliptical: response and regressors; design [1, regressors...] enters
///    the norm, the second stage is intercept-only.
///  - box_cox: response (positive) and regressors; instruments optionally
///    name extra NIV instrument columns (default: squares/cross-products).
///  - control_variable: response, exogenous regressors, the endogenous
///    column and instruments; second-stage design
///    [1, regressors..., endogenous, endogenous - Z'gamma].
struct ModelSpec {
  ModelKind kind = ModelKind::constant_slope;
  std::string response;
  std::vector<std::string> regressors;
  std::string constant_slope_regressor;
  std::string endogenous;
  std::vector<std::string> instruments;
  double lambda_lo = -2.0;  // box_cox search bracket
  double lambda_hi = 3.0;

  void validate(const Dataset& data) const;
  Eigen::Index theta_dim(const Dataset& data) const;
  Eigen::Index qr_dim(const Dataset& data) const;
};

struct GeneratedData {
  VectorXd y_theta;
  MatrixXd x_theta;
  MatrixXd dg_dtheta;  // n x q derivative of the generated response in theta
  std::vector<std::uint8_t> valid;
  int n_invalid = 0;

  // Elliptical extras: ||S x_i|| and its derivative in vec(S) coordinates.
  VectorXd norms;
  MatrixXd dnorm_dsigma;  // n x d^2
};

/// [1, cols...] design from named columns.
MatrixXd design_with_intercept(const Dataset& data, const std::vector<std::string>& cols);

/// Z design for the control-variable first stage: [1, instruments...].
MatrixXd instrument_design(const Dataset& data, const ModelSpec& spec);

/// Elliptical theta layout: [mu (d); vec(S) column-major (d^2)].
VectorXd pack_elliptical_theta(const EllipticalParams& params);
EllipticalParams unpack_elliptical_theta(const VectorXd& theta, Eigen::Index d);

GeneratedData constant_slope_generate(const Dataset& data, const ModelSpec& spec, double beta1);
GeneratedData elliptical_generate(const Dataset& data, const ModelSpec& spec,
                                  const EllipticalParams& params);
GeneratedData boxcox_generate(const Dataset& data, const ModelSpec& spec, double lambda);
GeneratedData control_variable_generate(const Dataset& data, const ModelSpec& spec,
                                        const VectorXd& gamma);

/// Kind dispatch on a packed theta vector.
GeneratedData generate(const Dataset& data, const ModelSpec& spec, const VectorXd& theta);

/// Box-Cox transform (y^lambda - 1)/lambda, log y at lambda = 0, and its
/// lambda-derivative; continuous through lambda = 0.
double boxcox_transform(double y, double lambda);
double boxcox_dlambda(double y, double lambda);

}  // namespace gqr
