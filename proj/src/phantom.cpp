#include "nuq/phantom.hpp"

#include "nuq/dti.hpp"
#include "nuq/error.hpp"
#include "nuq/parallel.hpp"
#include "nuq/rng.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace nuq {

namespace {

// Prolate tensor with principal direction e1, mean diffusivity md and the
// requested FA. With eigenvalues md(1+2a), md(1-a), md(1-a):
// FA = 3a / sqrt(3 + 6a^2), so a = FA sqrt(3 / (9 - 6 FA^2)).
Eigen::Matrix3d prolate(const Eigen::Vector3d &e1, double md, double fa) {
  const double a = fa * std::sqrt(3.0 / (9.0 - 6.0 * fa * fa));
  const double l1 = md * (1.0 + 2.0 * a);
  const double l2 = md * (1.0 - a);
  const Eigen::Vector3d u = e1.normalized();
  return l2 * Eigen::Matrix3d::Identity() + (l1 - l2) * u * u.transpose();
}

std::array<std::size_t, 3> coords(std::size_t v, const std::array<std::size_t, 3> &dims) {
  return {v % dims[0], (v / dims[0]) % dims[1], v / (dims[0] * dims[1])};
}

} // namespace

std::string to_string(PhantomPreset p) {
  switch (p) {
  case PhantomPreset::uniform_iso: return "uniform_iso";
  case PhantomPreset::crossing_free: return "crossing_free";
  case PhantomPreset::fa_gradient: return "fa_gradient";
  case PhantomPreset::custom: return "custom";
  }
  return "unknown";
}

PhantomPreset parse_preset(const std::string &name) {
  if (name == "uniform_iso") return PhantomPreset::uniform_iso;
  if (name == "crossing_free") return PhantomPreset::crossing_free;
  if (name == "fa_gradient") return PhantomPreset::fa_gradient;
  throw ContractError("unknown phantom preset '" + name + "'");
}

NoiseKind parse_noise_kind(const std::string &name) {
  if (name == "none") return NoiseKind::none;
  if (name == "rician") return NoiseKind::rician;
  if (name == "gaussian") return NoiseKind::gaussian;
  throw ContractError("unknown noise kind '" + name + "'");
}

void PhantomSpec::check() const {
  if (!(noise.sigma >= 0.0)) throw ContractError("noise sigma must be >= 0");
  if (!(s0 > 0.0)) throw ContractError("s0 must be positive");
  if (dims[0] == 0 || dims[1] == 0 || dims[2] == 0) throw ContractError("phantom dims must be >= 1");
  if (gradient_axis < 0 || gradient_axis > 2) throw ContractError("gradient axis must be 0, 1 or 2");
  if (preset == PhantomPreset::custom) {
    if (tensors.size() != dims[0] * dims[1] * dims[2])
      throw ContractError("custom phantom needs one tensor per voxel");
    for (const auto &D : tensors)
      if (eigendecompose_symmetric(D).values[2] < 0.0)
        throw ContractError("ground-truth tensor has a negative eigenvalue");
  }
}

double fa_gradient_target(std::size_t i, std::size_t extent) {
  if (extent <= 1) return 0.0;
  return 0.9 * static_cast<double>(i) / static_cast<double>(extent - 1);
}

std::vector<Eigen::Matrix3d> phantom_tensors(const PhantomSpec &spec) {
  if (spec.preset == PhantomPreset::custom) return spec.tensors;
  const std::size_t nvox = spec.dims[0] * spec.dims[1] * spec.dims[2];
  const double md = spec.mean_diffusivity;
  std::vector<Eigen::Matrix3d> out(nvox);
  for (std::size_t v = 0; v < nvox; ++v) {
    const auto c = coords(v, spec.dims);
    switch (spec.preset) {
    case PhantomPreset::uniform_iso:
      out[v] = md * Eigen::Matrix3d::Identity();
      break;
    case PhantomPreset::crossing_free: {
      const double span = static_cast<double>(spec.dims[0] + spec.dims[1]);
      const double angle = std::numbers::pi * static_cast<double>(c[0] + c[1]) / span;
      out[v] = prolate({std::cos(angle), std::sin(angle), 0.0}, md, 0.8);
      break;
    }
    case PhantomPreset::fa_gradient: {
      const auto axis = static_cast<std::size_t>(spec.gradient_axis);
      out[v] = prolate({1.0, 0.0, 0.0}, md, fa_gradient_target(c[axis], spec.dims[axis]));
      break;
    }
    case PhantomPreset::custom: break;
    }
  }
  return out;
}

std::vector<double> add_rician_noise(std::span<const double> signal, double sigma, std::uint64_t seed) {
  if (!(sigma >= 0.0)) throw ContractError("noise sigma must be >= 0");
  std::vector<double> out(signal.begin(), signal.end());
  if (sigma == 0.0) return out;
  parallel_for(out.size(), [&](std::size_t i) {
    StreamRng rng(seed, i, StreamTag::phantom_noise);
    std::normal_distribution<double> normal(0.0, sigma);
    const double re = signal[i] + normal(rng);
    const double im = normal(rng);
    out[i] = std::sqrt(re * re + im * im);
  });
  return out;
}

std::vector<double> add_gaussian_noise(std::span<const double> signal, double sigma, std::uint64_t seed) {
  if (!(sigma >= 0.0)) throw ContractError("noise sigma must be >= 0");
  std::vector<double> out(signal.begin(), signal.end());
  if (sigma == 0.0) return out;
  parallel_for(out.size(), [&](std::size_t i) {
    StreamRng rng(seed, i, StreamTag::phantom_noise);
    std::normal_distribution<double> normal(0.0, sigma);
    out[i] = signal[i] + normal(rng);
  });
  return out;
}

Phantom simulate_signal(const PhantomSpec &spec) {
  spec.check();
  Phantom ph;
  ph.tensors = phantom_tensors(spec);
  const auto &g = spec.gradients;
  const std::size_t n = g.size();

  NiftiVolume signal(spec.dims, n);
  signal.ndim = 4;
  ph.true_fa = NiftiVolume(spec.dims);
  ph.true_md = NiftiVolume(spec.dims);
  const std::size_t nvox = signal.voxels_per_volume();
  for (std::size_t v = 0; v < nvox; ++v) {
    const Eigen::Matrix3d &D = ph.tensors[v];
    for (std::size_t i = 0; i < n; ++i) {
      const Eigen::Vector3d dir(g.bvecs[i][0], g.bvecs[i][1], g.bvecs[i][2]);
      signal.at(v, i) = spec.s0 * std::exp(-g.bvals[i] * dir.dot(D * dir));
    }
    const DtiCoefficients c = coefficients_from_tensor(D, std::log(spec.s0));
    ph.true_fa.data[v] = eval_fa(c).value;
    ph.true_md.data[v] = eval_md(c);
  }

  switch (spec.noise.kind) {
  case NoiseKind::none: break;
  case NoiseKind::rician: signal.data = add_rician_noise(signal.data, spec.noise.sigma, spec.seed); break;
  case NoiseKind::gaussian: signal.data = add_gaussian_noise(signal.data, spec.noise.sigma, spec.seed); break;
  }

  ph.dataset.signal = std::move(signal);
  ph.dataset.gradients = g;
  ph.dataset.mask = NiftiVolume(spec.dims, 1, 1.0);
  return ph;
}

void save_phantom(const Phantom &phantom, const std::filesystem::path &dir) {
  save_dataset(phantom.dataset, dir);
  write_nifti(phantom.true_fa, dir / "true_fa.nii.gz");
  write_nifti(phantom.true_md, dir / "true_md.nii.gz");
}

} // namespace nuq
