#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

namespace nuq {

using Vec3 = std::array<double, 3>;

inline constexpr double kDefaultB0Threshold = 50.0;

// A direction whose length was corrected by more than 1e-4 (relative) on load.
struct Renormalization {
  std::size_t index;
  double original_norm;
};

/// b-values (s/mm^2) and gradient directions of an acquisition.
struct GradientTable {
  std::vector<double> bvals;
  std::vector<Vec3> bvecs;
  double b0_threshold = kDefaultB0Threshold;

  // Set by read_gradients.
  std::vector<Renormalization> renormalized;
  // Exact bytes of the bval and bvec files, when the table came from disk.
  // Tables built in memory use their canonical text form instead.
  std::string bval_bytes;
  std::string bvec_bytes;

  std::size_t size() const { return bvals.size(); }
  bool is_b0(std::size_t i) const { return bvals[i] <= b0_threshold; }
  std::size_t b0_count() const;
};

GradientTable make_gradient_table(std::vector<double> bvals, std::vector<Vec3> bvecs,
                                  double b0_threshold = kDefaultB0Threshold);

// FSL convention: one row of n b-values, three rows of n direction components.
GradientTable read_gradients(const std::filesystem::path &bval_path,
                             const std::filesystem::path &bvec_path,
                             double b0_threshold = kDefaultB0Threshold);
void write_gradients(const GradientTable &table, const std::filesystem::path &bval_path,
                     const std::filesystem::path &bvec_path);

std::string format_bvals(const GradientTable &table);
std::string format_bvecs(const GradientTable &table);

// Hex SHA-256 of the bval bytes followed by the bvec bytes.
std::string gradient_fingerprint(const GradientTable &table);

std::string sha256_hex(const std::string &bytes);

// 32 directions spread over the sphere (golden-spiral), preceded by
// `b0_count` b=0 measurements.
GradientTable default_gradient_table(std::size_t directions = 32, std::size_t b0_count = 4,
                                     double bval = 1000.0);

} // namespace nuq
