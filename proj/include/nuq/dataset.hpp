#pragma once

#include "nuq/gradients.hpp"
#include "nuq/nifti.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace nuq {

/// A 4D diffusion series with its gradient table and optional brain mask.
struct DwiDataset {
  NiftiVolume signal;
  GradientTable gradients;
  std::optional<NiftiVolume> mask;

  std::array<std::size_t, 3> spatial_dims() const { return signal.spatial_dims(); }
  std::size_t voxel_count() const { return signal.voxels_per_volume(); }
  // Nonzero mask entries are inside; no mask means every voxel is inside.
  bool in_mask(std::size_t voxel) const { return !mask || mask->data[voxel] != 0.0; }
  std::vector<std::size_t> masked_voxels() const;
};

struct ValidationReport {
  std::vector<std::string> violations;

  bool ok() const { return violations.empty(); }
  std::string to_string() const;
};

ValidationReport validate_dataset(const DwiDataset &ds);

// File names used for a dataset stored as a directory.
struct DatasetPaths {
  std::filesystem::path dwi;
  std::filesystem::path bval;
  std::filesystem::path bvec;
  std::optional<std::filesystem::path> mask;

  // Resolves dwi.nii[.gz], dwi.bval, dwi.bvec and mask.nii[.gz] in `dir`.
  static DatasetPaths in_directory(const std::filesystem::path &dir);
};

DwiDataset load_dataset(const DatasetPaths &paths,
                        double b0_threshold = kDefaultB0Threshold);
// Writes dwi.nii.gz, dwi.bval, dwi.bvec and (if present) mask.nii.gz.
void save_dataset(const DwiDataset &ds, const std::filesystem::path &dir);

} // namespace nuq
