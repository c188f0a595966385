#include "nuq/metric.hpp"

#include "nuq/error.hpp"
#include "nuq/parallel.hpp"
#include "nuq/version.hpp"

#include <charconv>
#include <cmath>
#include <limits>
#include <sstream>

namespace nuq {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::array<std::size_t, 3> voxel_coords(std::size_t voxel, const std::array<std::size_t, 3> &dims) {
  return {voxel % dims[0], (voxel / dims[0]) % dims[1], voxel / (dims[0] * dims[1])};
}

std::size_t parse_index(const std::string &token, const std::string &text) {
  std::size_t value = 0;
  const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
  if (token.empty() || ec != std::errc() || ptr != token.data() + token.size())
    throw ParseError("malformed region '" + text + "' (expected x0:x1,y0:y1,z0:z1)");
  return value;
}

} // namespace

std::string to_string(RegionKind k) {
  switch (k) {
  case RegionKind::subject: return "subject";
  case RegionKind::slice: return "slice";
  case RegionKind::patch: return "patch";
  case RegionKind::voxel: return "voxel";
  }
  return "unknown";
}

Region Region::subject(const std::array<std::size_t, 3> &dims) {
  Region r;
  r.kind = RegionKind::subject;
  for (int a = 0; a < 3; ++a) r.bounds[a] = {0, dims[a] == 0 ? 0 : dims[a] - 1};
  return r;
}

Region Region::parse(const std::string &text, const std::array<std::size_t, 3> &dims) {
  Region r;
  std::istringstream axes(text);
  std::string axis_text;
  int axis = 0;
  while (std::getline(axes, axis_text, ',')) {
    if (axis >= 3) throw ParseError("malformed region '" + text + "' (more than three axes)");
    const auto colon = axis_text.find(':');
    if (colon == std::string::npos)
      throw ParseError("malformed region '" + text + "' (expected x0:x1,y0:y1,z0:z1)");
    const std::size_t lo = parse_index(axis_text.substr(0, colon), text);
    const std::size_t hi = parse_index(axis_text.substr(colon + 1), text);
    if (lo > hi) throw ParseError("region '" + text + "' has an empty axis range");
    if (hi >= dims[axis]) throw ContractError("region '" + text + "' exceeds the volume bounds");
    r.bounds[axis] = {lo, hi};
    ++axis;
  }
  if (axis != 3) throw ParseError("malformed region '" + text + "' (expected three axes)");

  int thin = 0;
  for (const auto &b : r.bounds) thin += b[0] == b[1] ? 1 : 0;
  r.kind = thin == 3 ? RegionKind::voxel : thin == 1 ? RegionKind::slice : RegionKind::patch;
  return r;
}

bool Region::contains(std::size_t voxel, const std::array<std::size_t, 3> &dims) const {
  const auto c = voxel_coords(voxel, dims);
  for (int a = 0; a < 3; ++a)
    if (c[a] < bounds[a][0] || c[a] > bounds[a][1]) return false;
  return true;
}

nlohmann::json Region::to_json() const {
  return {{"kind", to_string(kind)},
          {"bounds", {{bounds[0][0], bounds[0][1]}, {bounds[1][0], bounds[1][1]}, {bounds[2][0], bounds[2][1]}}}};
}

KernelSpec default_kernel(RegionKind kind) {
  KernelSpec k;
  if (kind == RegionKind::slice || kind == RegionKind::patch) {
    k.kind = KernelKind::polynomial;
    k.degree = 2;
  }
  return k;
}

nlohmann::json NuqReport::to_json() const {
  return {{"score", score},
          {"region", region.to_json()},
          {"kernel", {{"kind", to_string(kernel.kind)}, {"degree", kernel.degree},
                      {"scale", kernel.scale}, {"offset", kernel.offset}}},
          {"m_per_set", m_per_set},
          {"seed", seed},
          {"property", to_string(property)},
          {"voxel_count", voxel_count},
          {"sigma2_median", sigma2_median},
          {"version", version}};
}

NiftiVolume voxel_nuq_map(const PosteriorVolume &pv, Property property, std::size_t pairs,
                          std::uint64_t seed) {
  if (pairs < 1) throw ContractError("pair count must be >= 1");
  const PropertySamples draws = sample_property(pv, property, 2 * pairs, seed, StreamTag::voxel_pairs);
  NiftiVolume map = pv.blank_map(kNaN);
  for (std::size_t k = 0; k < pv.voxels.size(); ++k) {
    if (!pv.records[k].valid()) continue;
    double sum = 0.0;
    for (std::size_t i = 0; i < pairs; ++i) sum += std::abs(draws.at(2 * i, k) - draws.at(2 * i + 1, k));
    map.data[pv.voxels[k]] = sum / static_cast<double>(pairs);
  }
  return map;
}

NuqReport region_nuq_score(const PosteriorVolume &pv, Property property, const Region &region,
                           std::optional<KernelSpec> kernel, std::size_t m, std::uint64_t seed,
                           const std::vector<std::uint8_t> *exclude) {
  if (m < 1) throw ContractError("draws per set must be >= 1");
  std::vector<std::size_t> picked;
  std::vector<double> sigma2;
  for (std::size_t k = 0; k < pv.voxels.size(); ++k) {
    const std::size_t v = pv.voxels[k];
    if (!pv.records[k].valid() || !region.contains(v, pv.dims)) continue;
    if (exclude && (*exclude)[v]) continue;
    picked.push_back(k);
    sigma2.push_back(pv.records[k].sigma2_hat);
  }
  if (picked.empty()) throw ContractError("region contains no valid masked voxels");

  const PropertySamples draws = sample_property(pv, property, 2 * m, seed, picked);
  const auto p = static_cast<Eigen::Index>(picked.size());
  Eigen::MatrixXd xs(p, static_cast<Eigen::Index>(m)), ys(p, static_cast<Eigen::Index>(m));
  for (std::size_t j = 0; j < m; ++j) {
    for (Eigen::Index k = 0; k < p; ++k) {
      xs(k, static_cast<Eigen::Index>(j)) = draws.at(j, static_cast<std::size_t>(k));
      ys(k, static_cast<Eigen::Index>(j)) = draws.at(m + j, static_cast<std::size_t>(k));
    }
  }
  const SampleSet::Provenance prov{seed, to_string(region.kind), to_string(property)};
  const SampleSet X(std::move(xs), prov);
  const SampleSet Y(std::move(ys), prov);

  NuqReport report;
  report.kernel = resolve_kernel(kernel.value_or(default_kernel(region.kind)), X, Y);
  report.score = mmd_squared(X, Y, report.kernel);
  report.region = region;
  report.m_per_set = m;
  report.seed = seed;
  report.property = property;
  report.voxel_count = picked.size();
  report.sigma2_median = quantile(std::move(sigma2), 0.5);
  report.version = kVersion;
  return report;
}

NuqReport subject_nuq_score(const PosteriorVolume &pv, Property property,
                            std::optional<KernelSpec> kernel, std::size_t m, std::uint64_t seed) {
  return region_nuq_score(pv, property, Region::subject(pv.dims), kernel, m, seed);
}

nlohmann::json ComparisonReport::to_json() const {
  return {{"raw", raw.to_json()},
          {"processed", processed.to_json()},
          {"delta", delta},
          {"raw_sigma2_median", raw_sigma2_median},
          {"processed_sigma2_median", processed_sigma2_median},
          {"excluded_voxels", excluded_voxels},
          {"processed_worse_than_raw", processed_worse()},
          {"version", kVersion}};
}

ComparisonReport compare_datasets(const DwiDataset &raw, const DwiDataset &processed,
                                  const CompareConfig &config) {
  if (raw.signal.dims != processed.signal.dims)
    throw ContractError("raw and processed datasets differ in shape");
  if (gradient_fingerprint(raw.gradients) != gradient_fingerprint(processed.gradients))
    throw ContractError("raw and processed gradient tables differ (fingerprint mismatch)");
  if (raw.masked_voxels() != processed.masked_voxels())
    throw ContractError("raw and processed masks differ");

  const PosteriorVolume raw_pv = fit_volume(raw, config.fit);
  const PosteriorVolume proc_pv = fit_volume(processed, config.fit);

  std::vector<std::uint8_t> exclude(raw.voxel_count(), 0);
  ComparisonReport out;
  for (std::size_t k = 0; k < raw_pv.voxels.size(); ++k) {
    if (!raw_pv.records[k].valid() || !proc_pv.records[k].valid()) {
      exclude[raw_pv.voxels[k]] = 1;
      ++out.excluded_voxels;
    }
  }

  const Region subject = Region::subject(raw_pv.dims);
  out.raw = region_nuq_score(raw_pv, config.property, subject, config.kernel, config.m, config.seed, &exclude);
  out.processed =
      region_nuq_score(proc_pv, config.property, subject, config.kernel, config.m, config.seed, &exclude);
  out.delta = out.processed.score - out.raw.score;
  out.raw_sigma2_median = residual_variance_map(raw_pv).median;
  out.processed_sigma2_median = residual_variance_map(proc_pv).median;
  out.raw_map = voxel_nuq_map(raw_pv, config.property, config.pairs, config.seed);
  out.processed_map = voxel_nuq_map(proc_pv, config.property, config.pairs, config.seed);
  return out;
}

} // namespace nuq
