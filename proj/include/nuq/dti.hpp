#pragma once

#include "nuq/gradients.hpp"

#include <Eigen/Dense>

#include <span>
#include <string>
#include <vector>

namespace nuq {

// Log-linear tensor model: [ln S0, Dxx, Dyy, Dzz, Dxy, Dxz, Dyz].
inline constexpr Eigen::Index kDtiParams = 7;
using DtiCoefficients = Eigen::Matrix<double, 7, 1>;

struct DesignMatrix {
  Eigen::MatrixXd entries;
  std::vector<std::string> column_labels;

  Eigen::Index rows() const { return entries.rows(); }
  Eigen::Index cols() const { return entries.cols(); }
};

// Row i is [1, -b gx^2, -b gy^2, -b gz^2, -2b gx gy, -2b gx gz, -2b gy gz].
DesignMatrix build_design_matrix(const GradientTable &g);

struct LogSignal {
  Eigen::VectorXd values;
  std::size_t floored = 0;
};

// ln(max(s_i, floor)). Throws DegenerateVoxelError when no entry is positive.
LogSignal log_transform_signal(std::span<const double> s, double floor);

enum class Weighting { wls, identity };

/// Two-stage weights for the log-linear fit.
///
/// Stage one is an ordinary least-squares fit; the weights are the squared
/// signals it predicts, exp(2 (A c_ols)_i). `Weighting::identity` returns
/// all ones. Throws RankDeficiencyError when AᵀA is singular.
Eigen::VectorXd wls_weights(const DesignMatrix &A, const Eigen::VectorXd &y_log,
                            Weighting mode = Weighting::wls);

Eigen::Matrix3d tensor_from_coefficients(const DtiCoefficients &c);
DtiCoefficients coefficients_from_tensor(const Eigen::Matrix3d &D, double ln_s0 = 0.0);

struct TensorEigen {
  Eigen::Vector3d values;  // descending
  Eigen::Matrix3d vectors; // column k pairs with values[k]
};

// Cyclic Jacobi eigendecomposition of the symmetric diffusion tensor.
TensorEigen eigendecompose_tensor(const DtiCoefficients &c);
TensorEigen eigendecompose_symmetric(const Eigen::Matrix3d &D);

struct FaResult {
  double value = 0.0;
  bool clamped = false;
  bool negative_eigenvalue = false;
  bool degenerate = false;

  bool flagged() const { return clamped || negative_eigenvalue || degenerate; }
};

FaResult eval_fa(const DtiCoefficients &c);
// Same formula on explicit eigenvalues.
FaResult fa_from_eigenvalues(const Eigen::Vector3d &lambda);
double eval_md(const DtiCoefficients &c);

enum class Property { fa, md };

Property parse_property(const std::string &name);
std::string to_string(Property p);
// Evaluates the property on the first seven entries of c.
double evaluate_property(Property p, const Eigen::Ref<const Eigen::VectorXd> &c);

} // namespace nuq
