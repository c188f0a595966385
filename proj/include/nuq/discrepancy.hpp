#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace nuq {

enum class KernelKind { linear, polynomial, rbf };

std::string to_string(KernelKind k);
KernelKind parse_kernel_kind(const std::string &name);

/// linear:     <x, y>
/// polynomial: (<x, y> / scale + offset)^degree
/// rbf:        exp(-|x - y|^2 / (2 scale^2))
///
/// scale == 0 means "use the default": the vector dimension for the
/// polynomial kernel and the median heuristic for rbf.
struct KernelSpec {
  KernelKind kind = KernelKind::linear;
  int degree = 2;
  double scale = 0.0;
  double offset = 1.0;

  void check() const;
};

struct SampleProvenance {
  std::uint64_t seed = 0;
  std::string region;
  std::string property;
};

/// m samples of dimension p, stored one sample per column (p x m).
class SampleSet {
public:
  using Provenance = SampleProvenance;

  SampleSet() = default;
  // Throws ContractError when empty or non-finite.
  explicit SampleSet(Eigen::MatrixXd columns, Provenance provenance = {});
  // Scalar samples (p = 1).
  static SampleSet scalars(std::span<const double> values, Provenance provenance = {});

  std::size_t size() const { return static_cast<std::size_t>(samples_.cols()); }
  std::size_t dimension() const { return static_cast<std::size_t>(samples_.rows()); }
  const Eigen::MatrixXd &samples() const { return samples_; }
  const Provenance &provenance() const { return provenance_; }

private:
  Eigen::MatrixXd samples_;
  Provenance provenance_;
};

double kernel_eval(const KernelSpec &k, std::span<const double> x, std::span<const double> y);

struct Bandwidth {
  double value = 1.0;
  bool degenerate = false;
};

// Median pairwise Euclidean distance over the pooled samples; 1.0 (flagged)
// when that median is zero.
Bandwidth median_heuristic_bandwidth(const SampleSet &X, const SampleSet &Y);

// Fills in default scales for X and Y (see KernelSpec).
KernelSpec resolve_kernel(const KernelSpec &k, const SampleSet &X, const SampleSet &Y);

// Biased (V-statistic) estimate of MMD^2, clamped at zero. Sums are exactly
// rounded, so the value is independent of summation order and
// mmd_squared(X, Y) == mmd_squared(Y, X) bitwise.
double mmd_squared(const SampleSet &X, const SampleSet &Y, const KernelSpec &k);

// Mean absolute difference of order statistics; equal counts required.
double wasserstein_1d(std::span<const double> x, std::span<const double> y);

/// Exactly rounded floating-point sum (Shewchuk's algorithm).
class ExactSum {
public:
  void add(double x);
  double value() const;

private:
  std::vector<double> partials_;
};

} // namespace nuq
