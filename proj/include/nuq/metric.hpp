#pragma once

#include "nuq/discrepancy.hpp"
#include "nuq/posterior.hpp"

#include <json.hpp>

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace nuq {

enum class RegionKind { subject, slice, patch, voxel };

std::string to_string(RegionKind k);

/// Axis-aligned box of voxels with inclusive bounds per axis.
struct Region {
  RegionKind kind = RegionKind::subject;
  std::array<std::array<std::size_t, 2>, 3> bounds{};

  static Region subject(const std::array<std::size_t, 3> &dims);
  // "x0:x1,y0:y1,z0:z1", inclusive. The kind is voxel for a single voxel,
  // slice when exactly one axis is one voxel thick, patch otherwise.
  static Region parse(const std::string &text, const std::array<std::size_t, 3> &dims);

  bool contains(std::size_t voxel, const std::array<std::size_t, 3> &dims) const;
  nlohmann::json to_json() const;
};

// Linear for subject and voxel regions, polynomial of degree 2 for slices
// and patches.
KernelSpec default_kernel(RegionKind kind);

inline constexpr std::size_t kDefaultDrawsPerSet = 50;

struct NuqReport {
  double score = 0.0;
  Region region;
  KernelSpec kernel; // with the scale actually used
  std::size_t m_per_set = kDefaultDrawsPerSet;
  std::uint64_t seed = 0;
  Property property = Property::fa;
  std::size_t voxel_count = 0;
  double sigma2_median = 0.0;
  std::string version;

  nlohmann::json to_json() const;
};

// Mean over `pairs` independent draw pairs of |z1 - z2| per voxel; NaN
// outside the mask and at invalid voxels.
NiftiVolume voxel_nuq_map(const PosteriorVolume &pv, Property property, std::size_t pairs,
                          std::uint64_t seed);

/// MMD^2 between two sets of m posterior property maps over a region.
///
/// 2m maps are drawn; each is flattened over the region's valid voxels (and
/// voxels not set in `exclude`, when given) and the first m form X, the
/// last m form Y. `exclude` is indexed by voxel linear index.
NuqReport region_nuq_score(const PosteriorVolume &pv, Property property, const Region &region,
                           std::optional<KernelSpec> kernel, std::size_t m, std::uint64_t seed,
                           const std::vector<std::uint8_t> *exclude = nullptr);

NuqReport subject_nuq_score(const PosteriorVolume &pv, Property property,
                            std::optional<KernelSpec> kernel, std::size_t m, std::uint64_t seed);

struct CompareConfig {
  FitOptions fit;
  Property property = Property::fa;
  std::optional<KernelSpec> kernel;
  std::size_t m = kDefaultDrawsPerSet;
  std::size_t pairs = 1;
  std::uint64_t seed = 0;
};

struct ComparisonReport {
  NuqReport raw;
  NuqReport processed;
  double delta = 0.0; // processed - raw
  double raw_sigma2_median = 0.0;
  double processed_sigma2_median = 0.0;
  NiftiVolume raw_map;
  NiftiVolume processed_map;
  std::size_t excluded_voxels = 0;

  bool processed_worse() const { return delta > 0.0; }
  nlohmann::json to_json() const;
};

// Fits and scores both datasets with the same seed; voxels invalid in either
// one are left out of both scores. Throws ContractError when the datasets
// differ in shape, mask or gradient fingerprint.
ComparisonReport compare_datasets(const DwiDataset &raw, const DwiDataset &processed,
                                  const CompareConfig &config);

} // namespace nuq
