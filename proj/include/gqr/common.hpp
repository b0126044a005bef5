#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace gqr {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Bad inputs: malformed data, missing column roles, parameters outside
/// their domain. Maps to CLI exit code 2.
struct ValidationError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Numerical failures: nonconvergence aborts, ill-conditioned systems.
/// Maps to CLI exit code 3.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Rank-deficient design matrix.
struct SingularDesignError : NumericalError {
  using NumericalError::NumericalError;
};

/// Rectangular numeric data with named columns.
struct Dataset {
  std::vector<std::string> names;
  MatrixXd values;  // n x k, column j named names[j]

  Eigen::Index n_rows() const { return values.rows(); }
  Eigen::Index n_cols() const { return values.cols(); }

  int column_index(std::string_view name) const {
    for (std::size_t j = 0; j < names.size(); ++j)
      if (names[j] == name) return static_cast<int>(j);
    return -1;
  }

  bool has_column(std::string_view name) const { return column_index(name) >= 0; }

  VectorXd column(std::string_view name) const {
    int j = column_index(name);
    if (j < 0) throw ValidationError("unknown column '" + std::string(name) + "'");
    return values.col(j);
  }

  /// Row subset in the given order (used by the design-matrix bootstrap).
  Dataset rows(const std::vector<int>& idx) const {
    Dataset out;
    out.names = names;
    out.values.resize(static_cast<Eigen::Index>(idx.size()), values.cols());
    for (std::size_t r = 0; r < idx.size(); ++r) out.values.row(static_cast<Eigen::Index>(r)) = values.row(idx[r]);
    return out;
  }
};

}  // namespace gqr
