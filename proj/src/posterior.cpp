#include "nuq/posterior.hpp"

#include "nuq/error.hpp"
#include "nuq/parallel.hpp"
#include "nuq/version.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>

namespace nuq {

namespace {

constexpr double kMaxCondition = 1e12;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string rchol_name(Eigen::Index i, Eigen::Index j, Eigen::Index d) {
  if (d <= 10) return "rchol_" + std::to_string(i) + std::to_string(j);
  return "rchol_" + std::to_string(i) + "_" + std::to_string(j);
}

std::filesystem::path volume_path(const std::filesystem::path &dir, const std::string &name) {
  return dir / (name + ".nii.gz");
}

} // namespace

Eigen::MatrixXd RegularizerSpec::matrix(Eigen::Index d) const {
  if (!(lambda >= 0.0)) throw ContractError("regularization lambda must be >= 0");
  Eigen::VectorXd diag = Eigen::VectorXd::Constant(d, lambda);
  if (column_scale) {
    if (column_scale->size() != d) throw ContractError("column scale length mismatch");
    diag = diag.cwiseProduct(*column_scale);
  }
  return diag.asDiagonal();
}

std::string to_string(PosteriorStatus s) {
  switch (s) {
  case PosteriorStatus::valid: return "valid";
  case PosteriorStatus::nu_le_2: return "nu_le_2";
  case PosteriorStatus::singular: return "singular";
  case PosteriorStatus::degenerate_signal: return "degenerate_signal";
  }
  return "unknown";
}

VoxelPosterior VoxelPosterior::invalid(PosteriorStatus why, Eigen::Index d) {
  VoxelPosterior p;
  p.status = why;
  p.mu = Eigen::VectorXd::Constant(d, kNaN);
  p.r_chol = Eigen::MatrixXd::Zero(d, d);
  p.r_chol.triangularView<Eigen::Lower>().setConstant(kNaN);
  p.nu = kNaN;
  p.sigma2_hat = kNaN;
  return p;
}

VoxelPosterior fit_voxel_posterior(const Eigen::MatrixXd &A, const Eigen::VectorXd &y,
                                   const Eigen::VectorXd &w, const RegularizerSpec &reg) {
  const Eigen::Index n = A.rows();
  const Eigen::Index d = A.cols();
  if (y.size() != n || w.size() != n)
    throw ContractError("design, signal and weight lengths disagree");
  if (n < d) throw ContractError("fewer measurements than coefficients");
  if (!(w.array() > 0.0).all()) throw ContractError("weights must be positive");

  const Eigen::MatrixXd weighted_at = A.transpose() * w.asDiagonal(); // AᵀW
  const Eigen::MatrixXd gram = weighted_at * A;                        // AᵀWA
  const Eigen::MatrixXd precision = gram + reg.matrix(d);

  const Eigen::LLT<Eigen::MatrixXd> llt(precision);
  if (llt.info() != Eigen::Success || !(llt.rcond() * kMaxCondition > 1.0))
    return VoxelPosterior::invalid(PosteriorStatus::singular, d);

  VoxelPosterior p;
  p.mu = llt.solve(weighted_at * y);
  const Eigen::MatrixXd precision_inv = llt.solve(Eigen::MatrixXd::Identity(d, d));

  // Tr(A M) = Tr(M A) = Tr((AᵀWA+Λ)⁻¹ AᵀWA).
  p.nu = static_cast<double>(n) - (precision_inv * gram).trace();
  if (!(p.nu > 2.0)) {
    auto bad = VoxelPosterior::invalid(PosteriorStatus::nu_le_2, d);
    bad.mu = p.mu;
    bad.nu = p.nu;
    return bad;
  }

  p.sigma2_hat = (y - A * p.mu).squaredNorm() / p.nu;
  const Eigen::LLT<Eigen::MatrixXd> inv_llt(0.5 * (precision_inv + precision_inv.transpose()));
  if (inv_llt.info() != Eigen::Success)
    return VoxelPosterior::invalid(PosteriorStatus::singular, d);
  p.r_chol = std::sqrt((p.nu - 2.0) / p.nu * p.sigma2_hat) *
             Eigen::MatrixXd(inv_llt.matrixL());
  p.status = PosteriorStatus::valid;
  return p;
}

std::size_t PosteriorVolume::invalid_count() const {
  return static_cast<std::size_t>(
      std::count_if(records.begin(), records.end(), [](const auto &r) { return !r.valid(); }));
}

NiftiVolume PosteriorVolume::blank_map(double fill) const {
  NiftiVolume map(dims, 1, fill);
  map.copy_geometry(geometry);
  return map;
}

PosteriorVolume fit_volume(const DwiDataset &ds, const FitOptions &opts) {
  const auto report = validate_dataset(ds);
  if (!report.ok()) throw ValidationError(report.to_string());

  PosteriorVolume pv;
  pv.dims = ds.spatial_dims();
  pv.geometry = NiftiVolume(pv.dims);
  pv.geometry.copy_geometry(ds.signal);
  pv.voxels = ds.masked_voxels();
  pv.fingerprint = gradient_fingerprint(ds.gradients);
  pv.reg = opts.reg;
  pv.weighting = opts.weighting;

  const DesignMatrix A = build_design_matrix(ds.gradients);
  pv.d = A.cols();
  if (pv.voxels.empty()) {
    pv.warnings.push_back("mask selects no voxels; posterior volume is empty");
    return pv;
  }

  double max_signal = 0.0;
  for (double v : ds.signal.data)
    if (std::isfinite(v)) max_signal = std::max(max_signal, v);
  const double floor = max_signal > 0.0 ? opts.floor_fraction * max_signal
                                        : std::numeric_limits<double>::min();

  const std::size_t n = ds.gradients.size();
  pv.records.resize(pv.voxels.size());
  parallel_for(pv.voxels.size(), [&](std::size_t k) {
    const std::size_t voxel = pv.voxels[k];
    std::vector<double> s(n);
    for (std::size_t i = 0; i < n; ++i) s[i] = ds.signal.at(voxel, i);

    LogSignal y;
    try {
      y = log_transform_signal(s, floor);
    } catch (const DegenerateVoxelError &) {
      pv.records[k] = VoxelPosterior::invalid(PosteriorStatus::degenerate_signal, pv.d);
      return;
    }
    Eigen::VectorXd w;
    try {
      w = wls_weights(A, y.values, opts.weighting);
    } catch (const RankDeficiencyError &) {
      pv.records[k] = VoxelPosterior::invalid(PosteriorStatus::singular, pv.d);
      return;
    }
    // Unit-mean weights leave mu and nu unchanged and keep the unweighted
    // residual variance on the scale of (AᵀWA+Λ)⁻¹.
    w /= w.mean();
    pv.records[k] = fit_voxel_posterior(A, y.values, w, opts.reg);
  });

  if (const auto bad = pv.invalid_count(); bad > 0)
    pv.warnings.push_back(std::to_string(bad) + " of " + std::to_string(pv.voxels.size()) +
                          " masked voxels have no valid posterior");
  return pv;
}

namespace {

// Fills `out` with one draw; `u` is scratch of length d.
template <typename Rng>
void draw_coefficients(const VoxelPosterior &p, Rng &rng, std::normal_distribution<double> &normal,
                       std::chi_squared_distribution<double> &chi2, Eigen::VectorXd &u,
                       Eigen::VectorXd &out) {
  for (Eigen::Index i = 0; i < u.size(); ++i) u[i] = normal(rng);
  const double g = chi2(rng);
  out.noalias() = p.r_chol.triangularView<Eigen::Lower>() * u;
  out *= std::sqrt(p.nu / g);
  out += p.mu;
}

} // namespace

Eigen::MatrixXd sample_posterior(const VoxelPosterior &p, std::size_t m, std::uint64_t seed,
                                 std::uint64_t stream) {
  if (!p.valid()) throw ContractError("cannot sample an invalid posterior");
  if (m < 1) throw ContractError("sample count must be >= 1");
  const Eigen::Index d = p.mu.size();
  StreamRng rng(seed, stream, StreamTag::posterior_draws);
  std::normal_distribution<double> normal;
  std::chi_squared_distribution<double> chi2(p.nu);
  Eigen::MatrixXd out(d, static_cast<Eigen::Index>(m));
  Eigen::VectorXd u(d), c(d);
  for (std::size_t j = 0; j < m; ++j) {
    draw_coefficients(p, rng, normal, chi2, u, c);
    out.col(static_cast<Eigen::Index>(j)) = c;
  }
  return out;
}

PropertySamples sample_property(const PosteriorVolume &pv, Property f, std::size_t m,
                                std::uint64_t seed, std::span<const std::size_t> record_indices,
                                StreamTag tag) {
  if (m < 1) throw ContractError("draw count must be >= 1");
  PropertySamples out;
  out.dims = pv.dims;
  out.draws = m;
  const std::size_t nvox = record_indices.size();
  out.voxels.reserve(nvox);
  for (std::size_t k : record_indices) {
    if (k >= pv.voxels.size()) throw ContractError("record index out of range");
    out.voxels.push_back(pv.voxels[k]);
  }
  out.values.assign(m * nvox, kNaN);

  parallel_for(nvox, [&](std::size_t k) {
    const auto &p = pv.records[record_indices[k]];
    if (!p.valid()) return;
    StreamRng rng(seed, out.voxels[k], tag);
    std::normal_distribution<double> normal;
    std::chi_squared_distribution<double> chi2(p.nu);
    Eigen::VectorXd u(p.mu.size()), c(p.mu.size());
    for (std::size_t j = 0; j < m; ++j) {
      draw_coefficients(p, rng, normal, chi2, u, c);
      out.values[j * nvox + k] = evaluate_property(f, c);
    }
  });
  return out;
}

PropertySamples sample_property(const PosteriorVolume &pv, Property f, std::size_t m,
                                std::uint64_t seed, StreamTag tag) {
  std::vector<std::size_t> all(pv.voxels.size());
  for (std::size_t k = 0; k < all.size(); ++k) all[k] = k;
  return sample_property(pv, f, m, seed, all, tag);
}

NiftiVolume property_samples_volume(const PosteriorVolume &pv, const PropertySamples &s) {
  NiftiVolume vol(pv.dims, s.draws, kNaN);
  vol.copy_geometry(pv.geometry);
  for (std::size_t j = 0; j < s.draws; ++j)
    for (std::size_t k = 0; k < s.voxels.size(); ++k) vol.at(s.voxels[k], j) = s.at(j, k);
  return vol;
}

double quantile(std::vector<double> values, double q) {
  std::erase_if(values, [](double v) { return !std::isfinite(v); });
  if (values.empty()) return kNaN;
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

ResidualVarianceSummary residual_variance_map(const PosteriorVolume &pv) {
  ResidualVarianceSummary out;
  out.map = pv.blank_map(kNaN);
  std::vector<double> finite;
  for (std::size_t k = 0; k < pv.voxels.size(); ++k) {
    if (!pv.records[k].valid()) continue;
    out.map.data[pv.voxels[k]] = pv.records[k].sigma2_hat;
    finite.push_back(pv.records[k].sigma2_hat);
  }
  out.count = finite.size();
  out.median = quantile(finite, 0.5);
  out.q25 = quantile(finite, 0.25);
  out.q75 = quantile(std::move(finite), 0.75);
  return out;
}

void save_posterior(const PosteriorVolume &pv, const std::filesystem::path &dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const Eigen::Index d = pv.d;

  NiftiVolume valid = pv.blank_map(0.0);
  std::vector<NiftiVolume> mu(static_cast<std::size_t>(d), pv.blank_map(kNaN));
  NiftiVolume nu = pv.blank_map(kNaN);
  NiftiVolume sigma2 = pv.blank_map(kNaN);
  std::vector<NiftiVolume> rchol;
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j <= i; ++j) rchol.push_back(pv.blank_map(kNaN));

  for (std::size_t k = 0; k < pv.voxels.size(); ++k) {
    const std::size_t v = pv.voxels[k];
    const auto &r = pv.records[k];
    valid.data[v] = static_cast<double>(r.status);
    for (Eigen::Index i = 0; i < d; ++i) mu[static_cast<std::size_t>(i)].data[v] = r.mu[i];
    nu.data[v] = r.nu;
    sigma2.data[v] = r.sigma2_hat;
    std::size_t packed = 0;
    for (Eigen::Index i = 0; i < d; ++i)
      for (Eigen::Index j = 0; j <= i; ++j) rchol[packed++].data[v] = r.r_chol(i, j);
  }

  write_nifti(valid, volume_path(dir, "valid"), Datatype::u8);
  for (Eigen::Index i = 0; i < d; ++i)
    write_nifti(mu[static_cast<std::size_t>(i)], volume_path(dir, "mu_" + std::to_string(i)));
  write_nifti(nu, volume_path(dir, "nu"));
  write_nifti(sigma2, volume_path(dir, "sigma2"));
  std::size_t packed = 0;
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j <= i; ++j)
      write_nifti(rchol[packed++], volume_path(dir, rchol_name(i, j, d)));

  nlohmann::json invalid = nlohmann::json::object();
  for (auto s : {PosteriorStatus::nu_le_2, PosteriorStatus::singular,
                 PosteriorStatus::degenerate_signal}) {
    invalid[to_string(s)] = std::count_if(pv.records.begin(), pv.records.end(),
                                          [s](const auto &r) { return r.status == s; });
  }
  nlohmann::json manifest = {
      {"d", d},
      {"model", "dti"},
      {"lambda", pv.reg.lambda},
      {"weighting", pv.weighting == Weighting::wls ? "wls" : "identity"},
      {"gradient_fingerprint", pv.fingerprint},
      {"version", kVersion},
      {"dims", pv.dims},
      {"voxel_count", pv.voxels.size()},
      {"invalid", invalid},
      {"valid_codes", {{"0", "outside_mask"}, {"1", "valid"}, {"2", "nu_le_2"},
                       {"3", "singular"}, {"4", "degenerate_signal"}}},
      {"seed_policy", "fit is deterministic; posterior draws use one stream per voxel "
                      "keyed by (seed, voxel linear index)"},
  };
  if (pv.reg.column_scale) {
    manifest["lambda_column_scale"] =
        std::vector<double>(pv.reg.column_scale->data(),
                            pv.reg.column_scale->data() + pv.reg.column_scale->size());
  }
  std::ofstream out(dir / "manifest.json", std::ios::binary);
  if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << '\n';
}

PosteriorVolume load_posterior(const std::filesystem::path &dir) {
  const auto manifest_path = dir / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw IoError("missing posterior manifest: " + manifest_path.string());
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception &e) {
    throw ParseError("malformed manifest " + manifest_path.string() + ": " + e.what());
  }

  PosteriorVolume pv;
  try {
    pv.d = manifest.at("d").get<Eigen::Index>();
    pv.reg.lambda = manifest.at("lambda").get<double>();
    if (manifest.contains("lambda_column_scale")) {
      const auto scale = manifest["lambda_column_scale"].get<std::vector<double>>();
      pv.reg.column_scale = Eigen::Map<const Eigen::VectorXd>(scale.data(),
                                                              static_cast<Eigen::Index>(scale.size()));
    }
    pv.weighting = manifest.at("weighting").get<std::string>() == "identity" ? Weighting::identity
                                                                           : Weighting::wls;
    pv.fingerprint = manifest.at("gradient_fingerprint").get<std::string>();
  } catch (const nlohmann::json::exception &e) {
    throw ParseError("incomplete manifest " + manifest_path.string() + ": " + e.what());
  }
  const Eigen::Index d = pv.d;

  const NiftiVolume valid = read_nifti(volume_path(dir, "valid"));
  pv.dims = valid.spatial_dims();
  pv.geometry = NiftiVolume(pv.dims);
  pv.geometry.copy_geometry(valid);

  std::vector<NiftiVolume> mu;
  for (Eigen::Index i = 0; i < d; ++i) mu.push_back(read_nifti(volume_path(dir, "mu_" + std::to_string(i))));
  const NiftiVolume nu = read_nifti(volume_path(dir, "nu"));
  const NiftiVolume sigma2 = read_nifti(volume_path(dir, "sigma2"));
  std::vector<NiftiVolume> rchol;
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j <= i; ++j) rchol.push_back(read_nifti(volume_path(dir, rchol_name(i, j, d))));

  const auto check = [&](const NiftiVolume &v) {
    if (v.spatial_dims() != pv.dims) throw ConsistencyError("posterior volumes differ in shape");
  };
  for (const auto &v : mu) check(v);
  for (const auto &v : rchol) check(v);
  check(nu);
  check(sigma2);

  for (std::size_t v = 0; v < valid.voxels_per_volume(); ++v) {
    const auto code = static_cast<int>(valid.data[v]);
    if (code == 0) continue;
    if (code < 1 || code > 4) throw FormatError("unknown posterior status code " + std::to_string(code));
    VoxelPosterior r;
    r.status = static_cast<PosteriorStatus>(code);
    r.mu.resize(d);
    for (Eigen::Index i = 0; i < d; ++i) r.mu[i] = mu[static_cast<std::size_t>(i)].data[v];
    r.nu = nu.data[v];
    r.sigma2_hat = sigma2.data[v];
    r.r_chol = Eigen::MatrixXd::Zero(d, d);
    std::size_t packed = 0;
    for (Eigen::Index i = 0; i < d; ++i)
      for (Eigen::Index j = 0; j <= i; ++j) r.r_chol(i, j) = rchol[packed++].data[v];
    pv.voxels.push_back(v);
    pv.records.push_back(std::move(r));
  }
  return pv;
}

} // namespace nuq
