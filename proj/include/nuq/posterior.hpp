#pragma once

#include "nuq/dataset.hpp"
#include "nuq/dti.hpp"
#include "nuq/rng.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace nuq {

/// Tikhonov term Λ = λ·diag(column_scale) (identity scaling by default).
struct RegularizerSpec {
  double lambda = 0.0;
  std::optional<Eigen::VectorXd> column_scale;

  Eigen::MatrixXd matrix(Eigen::Index d) const;
};

// Persisted as the `valid` volume; 0 marks voxels outside the mask.
enum class PosteriorStatus : std::uint8_t {
  valid = 1,
  nu_le_2 = 2,
  singular = 3,
  degenerate_signal = 4,
};

std::string to_string(PosteriorStatus s);

/// Multivariate-t posterior t_nu(c; mu, R) of one voxel's coefficients.
///
/// `r_chol` is the lower Cholesky factor of the scale matrix R, so the
/// coefficient covariance is R·nu/(nu-2) = sigma2_hat·(AᵀWA+Λ)⁻¹.
struct VoxelPosterior {
  Eigen::VectorXd mu;
  double nu = 0.0;
  Eigen::MatrixXd r_chol;
  double sigma2_hat = 0.0;
  PosteriorStatus status = PosteriorStatus::singular;

  bool valid() const { return status == PosteriorStatus::valid; }
  Eigen::MatrixXd scale_matrix() const { return r_chol * r_chol.transpose(); }
  Eigen::MatrixXd covariance() const { return scale_matrix() * (nu / (nu - 2.0)); }

  static VoxelPosterior invalid(PosteriorStatus why, Eigen::Index d);
};

/// Closed-form posterior for y ≈ A c with weights w and regularizer reg.
///
///   mu     = (AᵀWA+Λ)⁻¹AᵀWy
///   nu     = Tr(I - A M),  M = (AᵀWA+Λ)⁻¹AᵀW
///   sigma² = ‖y - A mu‖² / nu
///   R      = (nu-2)/nu · sigma² · (AᵀWA+Λ)⁻¹
///
/// Singular normal equations (condition estimate above 1e12) and nu <= 2
/// are reported through `status`, never thrown. Mismatched dimensions throw
/// ContractError.
VoxelPosterior fit_voxel_posterior(const Eigen::MatrixXd &A, const Eigen::VectorXd &y,
                                   const Eigen::VectorXd &w, const RegularizerSpec &reg);
inline VoxelPosterior fit_voxel_posterior(const DesignMatrix &A, const Eigen::VectorXd &y,
                                          const Eigen::VectorXd &w,
                                          const RegularizerSpec &reg) {
  return fit_voxel_posterior(A.entries, y, w, reg);
}

struct FitOptions {
  RegularizerSpec reg;
  Weighting weighting = Weighting::wls;
  // Log floor as a fraction of the largest signal value in the volume.
  double floor_fraction = 1e-6;
};

/// Per-voxel posteriors over the masked region of a dataset.
struct PosteriorVolume {
  std::array<std::size_t, 3> dims{0, 0, 0};
  NiftiVolume geometry;              // 3D template carrying voxel size and affine
  std::vector<std::size_t> voxels;   // masked linear indices, ascending
  std::vector<VoxelPosterior> records;
  Eigen::Index d = kDtiParams;
  std::string fingerprint;
  RegularizerSpec reg;
  Weighting weighting = Weighting::wls;
  std::vector<std::string> warnings;

  std::size_t voxel_count() const { return voxels.size(); }
  std::size_t invalid_count() const;
  // Empty 3D map with this volume's geometry, filled with `fill`.
  NiftiVolume blank_map(double fill) const;
};

// Throws ValidationError when validate_dataset reports violations.
PosteriorVolume fit_volume(const DwiDataset &ds, const FitOptions &opts = {});

// Draws m coefficient vectors (columns) as mu + L u sqrt(nu/g), u ~ N(0, I),
// g ~ chi2(nu), from the stream keyed by (seed, stream).
Eigen::MatrixXd sample_posterior(const VoxelPosterior &p, std::size_t m, std::uint64_t seed,
                                 std::uint64_t stream = 0);

/// m posterior draws of a scalar property for every masked voxel.
/// values[j * voxel_count + k] is draw j of voxel k; invalid voxels are NaN.
struct PropertySamples {
  std::array<std::size_t, 3> dims{0, 0, 0};
  std::vector<std::size_t> voxels;
  std::size_t draws = 0;
  std::vector<double> values;

  double at(std::size_t draw, std::size_t k) const { return values[draw * voxels.size() + k]; }
};

// Voxel k uses the stream keyed by (seed, voxel linear index, tag), so the
// output does not depend on thread scheduling.
PropertySamples sample_property(const PosteriorVolume &pv, Property f, std::size_t m,
                                std::uint64_t seed,
                                StreamTag tag = StreamTag::posterior_draws);
// Same draws restricted to the records at `record_indices` (positions in
// pv.voxels); the output's voxel list follows that order.
PropertySamples sample_property(const PosteriorVolume &pv, Property f, std::size_t m,
                                std::uint64_t seed, std::span<const std::size_t> record_indices,
                                StreamTag tag = StreamTag::posterior_draws);

// Writes draws as a 4D NIfTI (4th axis = draw), NaN outside the mask.
NiftiVolume property_samples_volume(const PosteriorVolume &pv, const PropertySamples &s);

struct ResidualVarianceSummary {
  NiftiVolume map;
  std::size_t count = 0;
  double median = 0.0;
  double q25 = 0.0;
  double q75 = 0.0;
  double iqr() const { return q75 - q25; }
};

ResidualVarianceSummary residual_variance_map(const PosteriorVolume &pv);

// Linear-interpolated quantile of finite values; NaN when there are none.
double quantile(std::vector<double> values, double q);

void save_posterior(const PosteriorVolume &pv, const std::filesystem::path &dir);
PosteriorVolume load_posterior(const std::filesystem::path &dir);

} // namespace nuq
