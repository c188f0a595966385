#pragma once

#include "nuq/nifti.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace nuq {

enum class GroupLabel { A, B };

inline constexpr double kStdFloor = 1e-8;

/// Posterior property draws for a cohort on a shared voxel grid.
/// subjects[s](j, k) is draw j of subject s at voxel k (voxel linear index
/// voxels[k]); NaN marks a voxel without a posterior for that subject.
struct CohortSamples {
  std::array<std::size_t, 3> dims{0, 0, 0};
  NiftiVolume geometry;
  std::vector<std::size_t> voxels;
  std::vector<Eigen::MatrixXd> subjects;
  std::vector<GroupLabel> labels;

  std::size_t draws() const { return subjects.empty() ? 0 : static_cast<std::size_t>(subjects.front().rows()); }
  // Throws ContractError when shapes disagree or a group is empty.
  void check() const;
};

struct SubjectWeight {
  double value = 0.0;
  bool degenerate = false;
};

// 1 / max(std, 1e-8) with the unbiased sample standard deviation.
SubjectWeight subject_weight(std::span<const double> samples);

enum class WeightMode {
  per_voxel, // each subject weighted by its own posterior std at the voxel
  global,    // one weight per subject from its median std over the mask
};

enum class VoxelFlag : std::uint8_t {
  ok = 0,
  zero_difference = 1, // std of the group difference draws is zero
  missing_group = 2,   // no subject with a posterior in one of the groups
};

struct VoxelT {
  double t = 0.0;
  double mean_diff = 0.0;
  VoxelFlag flag = VoxelFlag::ok;
};

/// Bayesian t-score at one voxel.
///
/// draws(s, j) is draw j of subject s. For every draw index j the weighted
/// group means are differenced (A minus B); t is the mean of those
/// differences over their standard deviation. Subjects whose draws are NaN
/// are skipped.
VoxelT weighted_t_at_voxel(const Eigen::MatrixXd &draws, std::span<const GroupLabel> labels,
                           std::span<const double> weights);

struct GroupReport {
  std::vector<double> t;
  std::vector<double> mean_diff;
  std::vector<VoxelFlag> flags;
  Eigen::MatrixXd weights; // subjects x voxels

  std::size_t defined_count() const;
  nlohmann::json summary() const;
};

GroupReport bayesian_t_map(const CohortSamples &cohort, WeightMode mode = WeightMode::per_voxel);

// Expands per-voxel values into a 3D map (NaN elsewhere).
NiftiVolume cohort_map(const CohortSamples &cohort, const std::vector<double> &values);

/// Reads a cohort manifest:
///   {"subjects": [{"path": "s01.nii.gz", "group": "A"}, ...], "mask": "mask.nii.gz"}
/// Paths are relative to the manifest. Each subject file is a 4D NIfTI whose
/// 4th axis holds the posterior draws.
CohortSamples load_cohort(const std::filesystem::path &manifest);

} // namespace nuq
