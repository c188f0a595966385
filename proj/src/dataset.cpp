#include "nuq/dataset.hpp"

#include "nuq/error.hpp"

#include <cmath>

namespace nuq {

std::vector<std::size_t> DwiDataset::masked_voxels() const {
  std::vector<std::size_t> out;
  for (std::size_t v = 0; v < voxel_count(); ++v)
    if (in_mask(v)) out.push_back(v);
  return out;
}

std::string ValidationReport::to_string() const {
  std::string out;
  for (const auto &v : violations) out += "  - " + v + "\n";
  return out;
}

ValidationReport validate_dataset(const DwiDataset &ds) {
  ValidationReport report;
  const auto &sig = ds.signal;
  const auto &g = ds.gradients;

  if (sig.data.size() != sig.element_count())
    report.violations.push_back("signal data length does not match dims");
  if (sig.volumes() != g.size())
    report.violations.push_back("volume count mismatch: " + std::to_string(sig.volumes()) +
                                " volumes vs " + std::to_string(g.size()) + " gradients");
  if (g.bvecs.size() != g.bvals.size())
    report.violations.push_back("bvals and bvecs differ in length");

  bool has_b0 = false;
  for (std::size_t i = 0; i < g.bvals.size(); ++i) {
    if (!(g.bvals[i] >= 0.0)) report.violations.push_back("negative b-value at " + std::to_string(i));
    if (g.is_b0(i)) {
      has_b0 = true;
    } else if (i < g.bvecs.size()) {
      const auto &v = g.bvecs[i];
      const double norm = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
      if (std::abs(norm - 1.0) > 1e-4)
        report.violations.push_back("non-unit gradient direction at " + std::to_string(i));
    }
  }
  if (!has_b0) report.violations.push_back("missing b0");

  if (ds.mask) {
    const auto &m = *ds.mask;
    if (m.spatial_dims() != sig.spatial_dims() || m.volumes() != 1)
      report.violations.push_back("mask shape mismatch");
  }
  for (double d : sig.voxel_size)
    if (!(d > 0.0)) report.violations.push_back("non-positive voxel size");
  return report;
}

DatasetPaths DatasetPaths::in_directory(const std::filesystem::path &dir) {
  namespace fs = std::filesystem;
  const auto pick = [&](const std::string &stem) -> std::optional<fs::path> {
    for (const char *ext : {".nii.gz", ".nii"})
      if (fs::exists(dir / (stem + ext))) return dir / (stem + ext);
    return std::nullopt;
  };
  DatasetPaths p;
  p.dwi = pick("dwi").value_or(dir / "dwi.nii.gz");
  p.bval = dir / "dwi.bval";
  p.bvec = dir / "dwi.bvec";
  p.mask = pick("mask");
  return p;
}

DwiDataset load_dataset(const DatasetPaths &paths, double b0_threshold) {
  DwiDataset ds;
  ds.signal = read_nifti(paths.dwi);
  ds.gradients = read_gradients(paths.bval, paths.bvec, b0_threshold);
  if (paths.mask) ds.mask = read_nifti(*paths.mask);
  return ds;
}

void save_dataset(const DwiDataset &ds, const std::filesystem::path &dir) {
  std::filesystem::create_directories(dir);
  write_nifti(ds.signal, dir / "dwi.nii.gz");
  write_gradients(ds.gradients, dir / "dwi.bval", dir / "dwi.bvec");
  if (ds.mask) write_nifti(*ds.mask, dir / "mask.nii.gz", Datatype::u8);
}

} // namespace nuq
