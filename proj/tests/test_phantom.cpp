#include "support.hpp"

#include "nuq/error.hpp"
#include "nuq/phantom.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>
#include <numeric>

using namespace nuq;

namespace {

double oracle_fa(const Eigen::Matrix3d &D) {
  const Eigen::Vector3d l = Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d>(D).eigenvalues();
  const double m = l.mean();
  return std::sqrt(1.5 * (l.array() - m).square().sum() / l.squaredNorm());
}

std::pair<double, double> moments(const std::vector<double> &x) {
  const double n = static_cast<double>(x.size());
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : x) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / (n - 1))};
}

} // namespace

TEST_CASE("isotropic signal is the same along every direction") {
  PhantomSpec spec;
  spec.preset = PhantomPreset::uniform_iso;
  spec.dims = {3, 3, 3};
  spec.s0 = 2.5;
  const Phantom ph = simulate_signal(spec);
  const auto &g = ph.dataset.gradients;
  const double expected = 2.5 * std::exp(-1000.0 * 0.7e-3);
  for (std::size_t v = 0; v < 27; ++v) {
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double s = ph.dataset.signal.at(v, i);
      if (g.bvals[i] == 0.0)
        CHECK(s == 2.5);
      else
        CHECK(std::abs(s - expected) <= 1e-14);
    }
    CHECK(std::abs(ph.true_fa.data[v]) <= 1e-12);
    CHECK(std::abs(ph.true_md.data[v] - 0.7e-3) <= 1e-15);
  }
}

TEST_CASE("signal follows the tensor model") {
  PhantomSpec spec;
  spec.preset = PhantomPreset::custom;
  spec.dims = {2, 2, 1};
  testing::Gen gen(11);
  for (int v = 0; v < 4; ++v) spec.tensors.push_back(gen.tensor());
  const Phantom ph = simulate_signal(spec);
  const auto &g = ph.dataset.gradients;
  for (std::size_t v = 0; v < 4; ++v) {
    for (std::size_t i = 0; i < g.size(); ++i) {
      const Eigen::Vector3d d(g.bvecs[i][0], g.bvecs[i][1], g.bvecs[i][2]);
      const double adc = d.dot(spec.tensors[v] * d);
      CHECK(std::abs(ph.dataset.signal.at(v, i) - std::exp(-g.bvals[i] * adc)) <= 1e-14);
    }
    CHECK(std::abs(ph.true_fa.data[v] - oracle_fa(spec.tensors[v])) <= 1e-10);
    CHECK(std::abs(ph.true_md.data[v] - spec.tensors[v].trace() / 3.0) <= 1e-15);
  }
}

TEST_CASE("fa gradient is linear along the chosen axis") {
  for (int axis = 0; axis < 3; ++axis) {
    PhantomSpec spec;
    spec.dims = {5, 6, 7};
    spec.gradient_axis = axis;
    const Phantom ph = simulate_signal(spec);
    const std::size_t extent = spec.dims[static_cast<std::size_t>(axis)];
    for (std::size_t z = 0; z < 7; ++z)
      for (std::size_t y = 0; y < 6; ++y)
        for (std::size_t x = 0; x < 5; ++x) {
          const std::size_t v = x + 5 * (y + 6 * z);
          const std::size_t c = axis == 0 ? x : axis == 1 ? y : z;
          const double target = 0.9 * static_cast<double>(c) / static_cast<double>(extent - 1);
          CHECK(std::abs(ph.true_fa.data[v] - target) <= 1e-6);
          CHECK(std::abs(oracle_fa(ph.tensors[v]) - target) <= 1e-6);
          CHECK(std::abs(ph.tensors[v].trace() / 3.0 - 0.7e-3) <= 1e-15);
        }
  }
  CHECK(fa_gradient_target(0, 1) == 0.0);
}

TEST_CASE("crossing-free preset") {
  PhantomSpec spec;
  spec.preset = PhantomPreset::crossing_free;
  spec.dims = {4, 4, 2};
  const Phantom ph = simulate_signal(spec);
  for (std::size_t v = 0; v < 32; ++v) CHECK(std::abs(ph.true_fa.data[v] - 0.8) <= 1e-10);
  CHECK_FALSE(ph.tensors[0].isApprox(ph.tensors[5]));
  CHECK(ph.tensors[0].isApprox(ph.tensors[16]));
}

TEST_CASE("rician noise") {
  const std::vector<double> ones(10, 1.0);
  CHECK(add_rician_noise(ones, 0.0, 3) == ones);

  const double sigma = 0.2;
  const std::vector<double> zeros(1'000'000, 0.0);
  const auto [rayleigh_mean, rayleigh_sd] = moments(add_rician_noise(zeros, sigma, 4));
  CHECK(std::abs(rayleigh_mean - sigma * std::sqrt(std::numbers::pi / 2)) <= 0.01 * sigma * std::sqrt(std::numbers::pi / 2));
  CHECK(std::abs(rayleigh_sd - sigma * std::sqrt(2 - std::numbers::pi / 2)) <= 0.01 * sigma);

  const std::vector<double> signal(1'000'000, 1.0);
  const auto noisy = add_rician_noise(signal, sigma, 5);
  double second = 0.0;
  for (double v : noisy) second += v * v;
  second /= static_cast<double>(noisy.size());
  CHECK(std::abs(second - (1.0 + 2 * sigma * sigma)) <= 0.01 * (1.0 + 2 * sigma * sigma));
  for (double v : noisy) CHECK_FALSE(v < 0.0);

  const std::vector<double> faint(200'000, 0.1);
  CHECK(moments(add_rician_noise(faint, sigma, 6)).first > 0.1);
}

TEST_CASE("gaussian noise") {
  const std::vector<double> signal(500'000, 0.5);
  const auto [mean, sd] = moments(add_gaussian_noise(signal, 0.1, 7));
  CHECK(std::abs(mean - 0.5) <= 5 * 0.1 / std::sqrt(500'000.0));
  CHECK(std::abs(sd - 0.1) <= 0.005);
}

TEST_CASE("noise is deterministic per seed and element") {
  const std::vector<double> signal(100, 1.0);
  CHECK(add_rician_noise(signal, 0.1, 9) == add_rician_noise(signal, 0.1, 9));
  CHECK(add_rician_noise(signal, 0.1, 9) != add_rician_noise(signal, 0.1, 10));
  const std::vector<double> prefix(signal.begin(), signal.begin() + 10);
  const auto full = add_rician_noise(signal, 0.1, 9);
  const auto head = add_rician_noise(prefix, 0.1, 9);
  CHECK(std::equal(head.begin(), head.end(), full.begin()));

  PhantomSpec spec;
  spec.dims = {4, 4, 4};
  spec.noise = {NoiseKind::rician, 0.05};
  spec.seed = 12;
  CHECK(simulate_signal(spec).dataset.signal.data == simulate_signal(spec).dataset.signal.data);
}

TEST_CASE("phantom contract") {
  PhantomSpec spec;
  spec.dims = {2, 2, 2};
  spec.noise = {NoiseKind::gaussian, -0.1};
  CHECK_THROWS_AS(simulate_signal(spec), ContractError);
  spec.noise = {};
  spec.s0 = 0.0;
  CHECK_THROWS_AS(simulate_signal(spec), ContractError);
  spec.s0 = 1.0;
  spec.gradient_axis = 3;
  CHECK_THROWS_AS(simulate_signal(spec), ContractError);
  spec.gradient_axis = 0;
  spec.preset = PhantomPreset::custom;
  CHECK_THROWS_AS(simulate_signal(spec), ContractError);
  spec.tensors.assign(8, Eigen::Matrix3d::Identity() * 1e-3);
  spec.tensors[3](2, 2) = -1e-3;
  CHECK_THROWS_AS(simulate_signal(spec), ContractError);
  const std::vector<double> s{1.0};
  CHECK_THROWS_AS(add_gaussian_noise(s, -1.0, 0), ContractError);
  CHECK_THROWS_AS(parse_preset("spiral"), ContractError);
  CHECK_THROWS_AS(parse_noise_kind("poisson"), ContractError);
  CHECK(parse_preset(to_string(PhantomPreset::crossing_free)) == PhantomPreset::crossing_free);
}

TEST_CASE("saved phantom reloads as a valid dataset") {
  testing::TempDir dir("phantom");
  PhantomSpec spec;
  spec.preset = PhantomPreset::uniform_iso;
  spec.dims = {3, 2, 2};
  const Phantom ph = simulate_signal(spec);
  validate_dataset(ph.dataset);
  save_phantom(ph, dir.path());
  for (const char *f : {"dwi.nii.gz", "dwi.bval", "dwi.bvec", "mask.nii.gz", "true_fa.nii.gz", "true_md.nii.gz"})
    CHECK(std::filesystem::exists(dir / f));
  const DwiDataset back = load_dataset(DatasetPaths::in_directory(dir.path()));
  validate_dataset(back);
  CHECK(back.signal.data == ph.dataset.signal.data);
  CHECK(read_nifti(dir / "true_md.nii.gz").data == ph.true_md.data);
}
