#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace nuq {

enum class Datatype : std::int16_t {
  u8 = 2,
  i16 = 4,
  f32 = 16,
  f64 = 64,
};

std::size_t bytes_per_voxel(Datatype dt);

using Affine = std::array<std::array<double, 4>, 4>;

Affine identity_affine();

/// A NIfTI-1 volume with its payload canonicalized to f64.
///
/// Voxel order follows the file: x varies fastest, then y, z and the volume
/// (4th) axis. `datatype`, `scl_slope` and `scl_inter` describe the file the
/// volume was loaded from; `data` already has the intensity scaling applied.
struct NiftiVolume {
  std::array<std::size_t, 4> dims{1, 1, 1, 1};
  std::size_t ndim = 3;
  std::array<double, 3> voxel_size{1.0, 1.0, 1.0};
  Datatype datatype = Datatype::f64;
  double scl_slope = 1.0;
  double scl_inter = 0.0;
  Affine affine = identity_affine();
  std::vector<double> data;

  NiftiVolume() = default;
  // Zero-filled volume. A 4th extent of 1 yields a 3D volume.
  NiftiVolume(std::array<std::size_t, 3> spatial, std::size_t volumes = 1,
              double fill = 0.0);

  std::size_t voxels_per_volume() const { return dims[0] * dims[1] * dims[2]; }
  std::size_t volumes() const { return dims[3]; }
  std::size_t element_count() const { return voxels_per_volume() * volumes(); }
  std::array<std::size_t, 3> spatial_dims() const {
    return {dims[0], dims[1], dims[2]};
  }

  double &at(std::size_t voxel, std::size_t volume = 0) {
    return data[voxel + volume * voxels_per_volume()];
  }
  double at(std::size_t voxel, std::size_t volume = 0) const {
    return data[voxel + volume * voxels_per_volume()];
  }

  // Copies the spatial header (voxel size, affine) of another volume.
  void copy_geometry(const NiftiVolume &other);
};

// Reads a single-file NIfTI-1 volume (.nii or .nii.gz, either byte order).
NiftiVolume read_nifti(const std::filesystem::path &path);

// Writes `vol` as NIfTI-1. The payload is stored as `out` (f64 unless asked
// otherwise); gzip is applied iff the path ends in ".gz".
void write_nifti(const NiftiVolume &vol, const std::filesystem::path &path,
                 Datatype out = Datatype::f64);

// Size of the header block written by write_nifti (header plus the 4-byte
// extension flag).
inline constexpr std::size_t kNiftiHeaderBlock = 352;

} // namespace nuq
