#include "nuq/gradients.hpp"

#include "nuq/error.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace nuq {

namespace {

std::string read_text(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::vector<double>> parse_rows(const std::string &text,
                                            const std::filesystem::path &path) {
  std::vector<std::vector<double>> rows;
  std::istringstream lines(text);
  std::string line;
  while (std::getline(lines, line)) {
    std::istringstream tokens(line);
    std::string token;
    std::vector<double> row;
    while (tokens >> token) {
      double value = 0.0;
      const char *first = token.data();
      const char *last = first + token.size();
      if (*first == '+') ++first;
      const auto [ptr, ec] = std::from_chars(first, last, value);
      if (ec != std::errc() || ptr != last)
        throw ParseError("non-numeric token '" + token + "' in " + path.string());
      row.push_back(value);
    }
    if (!row.empty()) rows.push_back(std::move(row));
  }
  return rows;
}

std::string format_number(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

} // namespace

std::size_t GradientTable::b0_count() const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < size(); ++i) n += is_b0(i) ? 1 : 0;
  return n;
}

GradientTable make_gradient_table(std::vector<double> bvals, std::vector<Vec3> bvecs,
                                  double b0_threshold) {
  if (bvals.size() != bvecs.size())
    throw ConsistencyError("bvals and bvecs differ in length");
  GradientTable table;
  table.bvals = std::move(bvals);
  table.bvecs = std::move(bvecs);
  table.b0_threshold = b0_threshold;
  for (std::size_t i = 0; i < table.size(); ++i) {
    if (!(table.bvals[i] >= 0.0)) throw ConsistencyError("negative b-value");
    if (table.is_b0(i)) continue;
    auto &g = table.bvecs[i];
    const double norm = std::sqrt(g[0] * g[0] + g[1] * g[1] + g[2] * g[2]);
    if (!(norm > 0.0) || !std::isfinite(norm))
      throw ConsistencyError("zero or non-finite direction for b=" +
                             format_number(table.bvals[i]));
    if (std::abs(norm - 1.0) > 1e-4) table.renormalized.push_back({i, norm});
    for (auto &component : g) component /= norm;
  }
  table.bval_bytes = format_bvals(table);
  table.bvec_bytes = format_bvecs(table);
  return table;
}

GradientTable read_gradients(const std::filesystem::path &bval_path,
                             const std::filesystem::path &bvec_path, double b0_threshold) {
  const std::string bval_text = read_text(bval_path);
  const std::string bvec_text = read_text(bvec_path);
  auto bval_rows = parse_rows(bval_text, bval_path);
  auto bvec_rows = parse_rows(bvec_text, bvec_path);

  std::vector<double> bvals;
  for (const auto &row : bval_rows) bvals.insert(bvals.end(), row.begin(), row.end());
  const std::size_t n = bvals.size();

  // n rows of 3 is accepted as the transposed layout.
  if (bvec_rows.size() == n && n != 3 &&
      std::all_of(bvec_rows.begin(), bvec_rows.end(), [](const auto &r) { return r.size() == 3; })) {
    std::vector<std::vector<double>> t(3, std::vector<double>(n));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < 3; ++k) t[k][i] = bvec_rows[i][k];
    bvec_rows = std::move(t);
  }
  if (bvec_rows.size() != 3)
    throw ConsistencyError("bvec file must have three rows: " + bvec_path.string());
  for (const auto &row : bvec_rows)
    if (row.size() != n)
      throw ConsistencyError("bvec row length " + std::to_string(row.size()) +
                             " does not match " + std::to_string(n) + " b-values");

  std::vector<Vec3> bvecs(n);
  for (std::size_t i = 0; i < n; ++i)
    bvecs[i] = {bvec_rows[0][i], bvec_rows[1][i], bvec_rows[2][i]};

  GradientTable table = make_gradient_table(std::move(bvals), std::move(bvecs), b0_threshold);
  table.bval_bytes = bval_text;
  table.bvec_bytes = bvec_text;
  return table;
}

std::string format_bvals(const GradientTable &table) {
  std::string out;
  for (std::size_t i = 0; i < table.size(); ++i) {
    if (i) out += ' ';
    out += format_number(table.bvals[i]);
  }
  return out + '\n';
}

std::string format_bvecs(const GradientTable &table) {
  std::string out;
  for (std::size_t k = 0; k < 3; ++k) {
    for (std::size_t i = 0; i < table.size(); ++i) {
      if (i) out += ' ';
      out += format_number(table.bvecs[i][k]);
    }
    out += '\n';
  }
  return out;
}

void write_gradients(const GradientTable &table, const std::filesystem::path &bval_path,
                     const std::filesystem::path &bvec_path) {
  const auto emit = [](const std::filesystem::path &p, const std::string &text) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw IoError("cannot write " + p.string());
    out << text;
    if (!out) throw IoError("write failed for " + p.string());
  };
  emit(bval_path, table.bval_bytes.empty() ? format_bvals(table) : table.bval_bytes);
  emit(bvec_path, table.bvec_bytes.empty() ? format_bvecs(table) : table.bvec_bytes);
}

std::string sha256_hex(const std::string &bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw Error("SHA-256 computation failed");
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 0xf];
  }
  return out;
}

std::string gradient_fingerprint(const GradientTable &table) {
  const std::string bval = table.bval_bytes.empty() ? format_bvals(table) : table.bval_bytes;
  const std::string bvec = table.bvec_bytes.empty() ? format_bvecs(table) : table.bvec_bytes;
  return sha256_hex(bval + bvec);
}

GradientTable default_gradient_table(std::size_t directions, std::size_t b0_count,
                                     double bval) {
  std::vector<double> bvals(b0_count, 0.0);
  std::vector<Vec3> bvecs(b0_count, Vec3{0.0, 0.0, 0.0});
  // Golden-spiral points on the upper hemisphere (antipodal symmetry of
  // diffusion makes the lower half redundant).
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  for (std::size_t i = 0; i < directions; ++i) {
    const double z = 1.0 - (i + 0.5) / static_cast<double>(directions);
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double phi = golden * static_cast<double>(i);
    bvals.push_back(bval);
    bvecs.push_back({r * std::cos(phi), r * std::sin(phi), z});
  }
  return make_gradient_table(std::move(bvals), std::move(bvecs));
}

} // namespace nuq
