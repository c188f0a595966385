#include "nuq/group.hpp"

#include "nuq/error.hpp"
#include "nuq/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

namespace nuq {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double unbiased_std(std::span<const double> x) {
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double ss = 0.0;
  for (double v : x) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / static_cast<double>(x.size() - 1));
}

double median_of(std::vector<double> v) {
  std::erase_if(v, [](double x) { return !std::isfinite(x); });
  if (v.empty()) return kNaN;
  std::sort(v.begin(), v.end());
  const std::size_t mid = v.size() / 2;
  return v.size() % 2 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
}

} // namespace

void CohortSamples::check() const {
  if (subjects.empty()) throw ContractError("cohort has no subjects");
  if (labels.size() != subjects.size()) throw ContractError("one group label per subject required");
  const auto m = subjects.front().rows();
  for (const auto &s : subjects) {
    if (s.rows() != m) throw ContractError("subjects differ in draw count");
    if (s.cols() != static_cast<Eigen::Index>(voxels.size()))
      throw ContractError("subject sample stack does not match the voxel list");
  }
  if (m < 2) throw ContractError("at least two posterior draws per subject required");
  const bool has_a = std::find(labels.begin(), labels.end(), GroupLabel::A) != labels.end();
  const bool has_b = std::find(labels.begin(), labels.end(), GroupLabel::B) != labels.end();
  if (!has_a || !has_b) throw ContractError("both groups need at least one subject");
}

SubjectWeight subject_weight(std::span<const double> samples) {
  if (samples.size() < 2) throw ContractError("subject weight needs at least two draws");
  const double sd = unbiased_std(samples);
  if (sd < kStdFloor) return {1.0 / kStdFloor, true};
  return {1.0 / sd, false};
}

VoxelT weighted_t_at_voxel(const Eigen::MatrixXd &draws, std::span<const GroupLabel> labels,
                           std::span<const double> weights) {
  const auto subjects = static_cast<std::size_t>(draws.rows());
  if (labels.size() != subjects || weights.size() != subjects)
    throw ContractError("labels and weights must match the subject count");
  const auto m = static_cast<std::size_t>(draws.cols());

  double wa = 0.0, wb = 0.0;
  std::vector<bool> usable(subjects);
  for (std::size_t s = 0; s < subjects; ++s) {
    usable[s] = draws.row(static_cast<Eigen::Index>(s)).allFinite() && std::isfinite(weights[s]) &&
                weights[s] > 0.0;
    if (!usable[s]) continue;
    (labels[s] == GroupLabel::A ? wa : wb) += weights[s];
  }
  VoxelT out;
  if (!(wa > 0.0) || !(wb > 0.0)) {
    out.t = kNaN;
    out.mean_diff = kNaN;
    out.flag = VoxelFlag::missing_group;
    return out;
  }

  std::vector<double> diff(m);
  for (std::size_t j = 0; j < m; ++j) {
    double sa = 0.0, sb = 0.0;
    for (std::size_t s = 0; s < subjects; ++s) {
      if (!usable[s]) continue;
      const double z = draws(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(j));
      (labels[s] == GroupLabel::A ? sa : sb) += weights[s] * z;
    }
    diff[j] = sa / wa - sb / wb;
  }

  double mean = 0.0;
  for (double d : diff) mean += d;
  mean /= static_cast<double>(m);
  out.mean_diff = mean;
  const double sd = m > 1 ? unbiased_std(diff) : 0.0;
  if (!(sd > 0.0)) {
    out.t = kNaN;
    out.flag = VoxelFlag::zero_difference;
    return out;
  }
  out.t = mean / sd;
  return out;
}

std::size_t GroupReport::defined_count() const {
  return static_cast<std::size_t>(std::count_if(t.begin(), t.end(), [](double v) { return std::isfinite(v); }));
}

nlohmann::json GroupReport::summary() const {
  std::size_t above = 0, zero_diff = 0, missing = 0;
  std::vector<double> abs_t;
  for (std::size_t k = 0; k < t.size(); ++k) {
    if (flags[k] == VoxelFlag::zero_difference) ++zero_diff;
    if (flags[k] == VoxelFlag::missing_group) ++missing;
    if (!std::isfinite(t[k])) continue;
    abs_t.push_back(std::abs(t[k]));
    if (std::abs(t[k]) > 2.0) ++above;
  }
  const std::size_t defined = abs_t.size();
  const double frac = defined ? static_cast<double>(above) / static_cast<double>(defined) : 0.0;
  const double med = median_of(abs_t);
  return {{"voxels", t.size()},
          {"defined_voxels", defined},
          {"zero_difference_voxels", zero_diff},
          {"missing_group_voxels", missing},
          {"fraction_abs_t_gt_2", frac},
          {"median_abs_t", defined ? nlohmann::json(med) : nlohmann::json(nullptr)}};
}

GroupReport bayesian_t_map(const CohortSamples &cohort, WeightMode mode) {
  cohort.check();
  const std::size_t nsub = cohort.subjects.size();
  const std::size_t nvox = cohort.voxels.size();
  const auto m = static_cast<Eigen::Index>(cohort.draws());

  GroupReport report;
  report.t.assign(nvox, kNaN);
  report.mean_diff.assign(nvox, kNaN);
  report.flags.assign(nvox, VoxelFlag::ok);
  report.weights = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(nsub), static_cast<Eigen::Index>(nvox), kNaN);

  const auto voxel_std_weight = [&](std::size_t s, std::size_t k) {
    const auto col = cohort.subjects[s].col(static_cast<Eigen::Index>(k));
    if (!col.allFinite()) return kNaN;
    return subject_weight(std::span<const double>(col.data(), static_cast<std::size_t>(m))).value;
  };

  std::vector<double> global(nsub, kNaN);
  if (mode == WeightMode::global) {
    for (std::size_t s = 0; s < nsub; ++s) {
      std::vector<double> stds;
      for (std::size_t k = 0; k < nvox; ++k) {
        const auto col = cohort.subjects[s].col(static_cast<Eigen::Index>(k));
        if (col.allFinite()) stds.push_back(unbiased_std(std::span<const double>(col.data(), static_cast<std::size_t>(m))));
      }
      const double med = median_of(stds);
      if (std::isfinite(med)) global[s] = 1.0 / std::max(med, kStdFloor);
    }
  }

  parallel_for(nvox, [&](std::size_t k) {
    Eigen::MatrixXd draws(static_cast<Eigen::Index>(nsub), m);
    std::vector<double> w(nsub);
    for (std::size_t s = 0; s < nsub; ++s) {
      draws.row(static_cast<Eigen::Index>(s)) = cohort.subjects[s].col(static_cast<Eigen::Index>(k)).transpose();
      w[s] = mode == WeightMode::global ? global[s] : voxel_std_weight(s, k);
      report.weights(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(k)) = w[s];
    }
    const VoxelT v = weighted_t_at_voxel(draws, cohort.labels, w);
    report.t[k] = v.t;
    report.mean_diff[k] = v.mean_diff;
    report.flags[k] = v.flag;
  });
  return report;
}

NiftiVolume cohort_map(const CohortSamples &cohort, const std::vector<double> &values) {
  NiftiVolume map(cohort.dims, 1, kNaN);
  map.copy_geometry(cohort.geometry);
  for (std::size_t k = 0; k < cohort.voxels.size(); ++k) map.data[cohort.voxels[k]] = values[k];
  return map;
}

CohortSamples load_cohort(const std::filesystem::path &manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot open cohort manifest " + manifest_path.string());
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception &e) {
    throw ParseError("malformed cohort manifest: " + std::string(e.what()));
  }
  const auto base = manifest_path.parent_path();
  const auto resolve = [&](const std::string &p) {
    const std::filesystem::path path(p);
    return path.is_absolute() ? path : base / path;
  };

  if (!manifest.contains("subjects") || !manifest["subjects"].is_array())
    throw ParseError("cohort manifest needs a 'subjects' array");

  CohortSamples cohort;
  std::vector<NiftiVolume> stacks;
  for (const auto &entry : manifest["subjects"]) {
    if (!entry.contains("path") || !entry.contains("group"))
      throw ParseError("every subject needs 'path' and 'group'");
    const auto group = entry["group"].get<std::string>();
    if (group != "A" && group != "B") throw ParseError("group must be \"A\" or \"B\", got '" + group + "'");
    cohort.labels.push_back(group == "A" ? GroupLabel::A : GroupLabel::B);
    stacks.push_back(read_nifti(resolve(entry["path"].get<std::string>())));
  }
  if (stacks.empty()) throw ContractError("cohort has no subjects");

  cohort.dims = stacks.front().spatial_dims();
  cohort.geometry = NiftiVolume(cohort.dims);
  cohort.geometry.copy_geometry(stacks.front());
  for (const auto &s : stacks) {
    if (s.spatial_dims() != cohort.dims || s.volumes() != stacks.front().volumes())
      throw ContractError("subject sample stacks differ in shape");
  }

  if (manifest.contains("mask")) {
    const NiftiVolume mask = read_nifti(resolve(manifest["mask"].get<std::string>()));
    if (mask.spatial_dims() != cohort.dims) throw ContractError("cohort mask shape mismatch");
    for (std::size_t v = 0; v < mask.voxels_per_volume(); ++v)
      if (mask.data[v] != 0.0) cohort.voxels.push_back(v);
  } else {
    const auto &first = stacks.front();
    for (std::size_t v = 0; v < first.voxels_per_volume(); ++v)
      if (std::isfinite(first.at(v, 0))) cohort.voxels.push_back(v);
  }

  const auto m = static_cast<Eigen::Index>(stacks.front().volumes());
  for (const auto &s : stacks) {
    Eigen::MatrixXd draws(m, static_cast<Eigen::Index>(cohort.voxels.size()));
    for (std::size_t k = 0; k < cohort.voxels.size(); ++k)
      for (Eigen::Index j = 0; j < m; ++j)
        draws(j, static_cast<Eigen::Index>(k)) = s.at(cohort.voxels[k], static_cast<std::size_t>(j));
    cohort.subjects.push_back(std::move(draws));
  }
  cohort.check();
  return cohort;
}

} // namespace nuq
