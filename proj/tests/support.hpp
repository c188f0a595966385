#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

namespace testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
  explicit TempDir(const std::string &tag) {
    static std::uint64_t counter = 0;
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("nuq_" + tag + "_" + std::to_string(rd()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir &) = delete;
  TempDir &operator=(const TempDir &) = delete;

  const std::filesystem::path &path() const { return path_; }
  std::filesystem::path operator/(const std::string &name) const { return path_ / name; }

private:
  std::filesystem::path path_;
};

inline std::string read_bytes(const std::filesystem::path &p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline void write_bytes(const std::filesystem::path &p, const std::string &bytes) {
  std::ofstream f(p, std::ios::binary);
  f << bytes;
}

// Hand-rolled generators for the property tests.
class Gen {
public:
  explicit Gen(std::uint64_t seed) : eng_(seed) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(eng_); }
  double normal(double sd = 1.0) { return std::normal_distribution<double>(0.0, sd)(eng_); }
  std::size_t index(std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(eng_);
  }

  Eigen::MatrixXd matrix(Eigen::Index r, Eigen::Index c, double sd = 1.0) {
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
      for (Eigen::Index j = 0; j < c; ++j) m(i, j) = normal(sd);
    return m;
  }
  Eigen::VectorXd vector(Eigen::Index n, double sd = 1.0) { return matrix(n, 1, sd); }

  // Haar-distributed rotation via QR of a Gaussian matrix.
  Eigen::Matrix3d rotation() {
    const Eigen::Matrix3d g = matrix(3, 3);
    Eigen::HouseholderQR<Eigen::Matrix3d> qr(g);
    Eigen::Matrix3d q = qr.householderQ();
    const Eigen::Matrix3d r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (int i = 0; i < 3; ++i)
      if (r(i, i) < 0) q.col(i) *= -1.0;
    if (q.determinant() < 0) q.col(0) *= -1.0;
    return q;
  }

  Eigen::Matrix3d symmetric() {
    const Eigen::Matrix3d m = matrix(3, 3);
    return 0.5 * (m + m.transpose());
  }

  // Positive-definite tensor with eigenvalues in typical tissue range.
  Eigen::Matrix3d tensor(double lo = 0.1e-3, double hi = 2.5e-3) {
    const Eigen::Matrix3d r = rotation();
    const Eigen::Vector3d l(uniform(lo, hi), uniform(lo, hi), uniform(lo, hi));
    return r * l.asDiagonal() * r.transpose();
  }

  std::mt19937_64 &engine() { return eng_; }

private:
  std::mt19937_64 eng_;
};

} // namespace testing
