#pragma once

#include "nuq/dataset.hpp"

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace nuq {

enum class NoiseKind { none, rician, gaussian };
enum class PhantomPreset {
  uniform_iso,   // D = md * I everywhere
  crossing_free, // one prolate fibre per voxel, orientation varying smoothly in-plane
  fa_gradient,   // prolate tensors, FA rising linearly 0 -> 0.9 along one axis
  custom,        // tensors supplied per voxel
};

std::string to_string(PhantomPreset p);
PhantomPreset parse_preset(const std::string &name);
NoiseKind parse_noise_kind(const std::string &name);

struct NoiseSpec {
  NoiseKind kind = NoiseKind::none;
  double sigma = 0.0; // signal units
};

struct PhantomSpec {
  std::array<std::size_t, 3> dims{20, 20, 20};
  PhantomPreset preset = PhantomPreset::fa_gradient;
  int gradient_axis = 0;                 // fa_gradient only
  double mean_diffusivity = 0.7e-3;      // mm^2/s, presets only
  std::vector<Eigen::Matrix3d> tensors;  // custom only, one per voxel
  double s0 = 1.0;
  GradientTable gradients = default_gradient_table();
  NoiseSpec noise;
  std::uint64_t seed = 0;

  // Throws ContractError on a negative sigma, a tensor count mismatch or a
  // tensor with a negative eigenvalue.
  void check() const;
};

struct Phantom {
  DwiDataset dataset;
  std::vector<Eigen::Matrix3d> tensors;
  NiftiVolume true_fa;
  NiftiVolume true_md;
};

// Ground-truth tensors for the PhantomSpec preset, or its custom tensors.
std::vector<Eigen::Matrix3d> phantom_tensors(const PhantomSpec &spec);

// FA of voxel index i along the gradient axis of the fa_gradient preset.
double fa_gradient_target(std::size_t i, std::size_t extent);

/// Noiseless mono-exponential signals S0 exp(-b gᵀDg), then noise per spec.
/// The dataset carries an all-ones mask.
Phantom simulate_signal(const PhantomSpec &spec);

// sqrt((S + n1)^2 + n2^2), n1, n2 ~ N(0, sigma^2). Element i draws from the
// stream keyed by (seed, i).
std::vector<double> add_rician_noise(std::span<const double> signal, double sigma, std::uint64_t seed);
// S + n, n ~ N(0, sigma^2), same stream keying.
std::vector<double> add_gaussian_noise(std::span<const double> signal, double sigma, std::uint64_t seed);

// Writes the dataset plus true_fa.nii.gz and true_md.nii.gz.
void save_phantom(const Phantom &phantom, const std::filesystem::path &dir);

} // namespace nuq
