#include "support.hpp"

#include "nuq/error.hpp"
#include "nuq/nifti.hpp"

#include <doctest.h>
#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>

using namespace nuq;
using testing::TempDir;

namespace {

// Minimal independent NIfTI-1 header builder (little or big endian).
class HeaderBuilder {
public:
  explicit HeaderBuilder(bool big_endian) : big_(big_endian), bytes_(348, '\0') {
    put<std::int32_t>(0, 348);
    std::memcpy(bytes_.data() + 344, "n+1\0", 4);
    put<float>(108, 348.0f);
    for (int i = 1; i <= 3; ++i) put<float>(76 + 4 * i, 1.0f);
  }

  template <class T> HeaderBuilder &put(std::size_t off, T value) {
    char raw[sizeof(T)];
    std::memcpy(raw, &value, sizeof(T));
    if (big_) std::reverse(raw, raw + sizeof(T));
    std::memcpy(bytes_.data() + off, raw, sizeof(T));
    return *this;
  }

  HeaderBuilder &dims(std::initializer_list<std::int16_t> d) {
    put<std::int16_t>(40, static_cast<std::int16_t>(d.size()));
    int i = 1;
    for (auto v : d) put<std::int16_t>(40 + 2 * i++, v);
    return *this;
  }
  HeaderBuilder &datatype(std::int16_t code, std::int16_t bitpix) {
    put<std::int16_t>(70, code);
    return put<std::int16_t>(72, bitpix);
  }

  template <class T> std::string with_payload(const std::vector<T> &values) const {
    std::string out = bytes_;
    for (T v : values) {
      char raw[sizeof(T)];
      std::memcpy(raw, &v, sizeof(T));
      if (big_) std::reverse(raw, raw + sizeof(T));
      out.append(raw, sizeof(T));
    }
    return out;
  }

private:
  bool big_;
  std::string bytes_;
};

NiftiVolume random_volume(testing::Gen &gen, std::array<std::size_t, 3> dims, std::size_t vols) {
  NiftiVolume v(dims, vols);
  for (auto &x : v.data) x = gen.normal(100.0);
  v.voxel_size = {gen.uniform(0.5, 3.0), gen.uniform(0.5, 3.0), gen.uniform(0.5, 3.0)};
  for (int i = 0; i < 3; ++i) v.affine[i][i] = v.voxel_size[i];
  v.affine[0][3] = -12.5;
  return v;
}

bool bitwise_equal(const std::vector<double> &a, const std::vector<double> &b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

} // namespace

TEST_CASE("f32 payload after a bare 348-byte header") {
  TempDir dir("nifti");
  const std::vector<float> payload{1, 2, 3, 4, 5, 6, 7, 8};
  testing::write_bytes(dir / "a.nii", HeaderBuilder(false).dims({2, 2, 2}).datatype(16, 32).with_payload(payload));
  const NiftiVolume v = read_nifti(dir / "a.nii");
  CHECK(v.dims == std::array<std::size_t, 4>{2, 2, 2, 1});
  CHECK(v.datatype == Datatype::f32);
  REQUIRE(v.data.size() == 8);
  for (std::size_t i = 0; i < 8; ++i) CHECK(v.data[i] == payload[i]);
}

TEST_CASE("intensity scaling is applied on load") {
  TempDir dir("nifti");
  HeaderBuilder h(false);
  h.dims({1, 1, 1}).datatype(4, 16).put<float>(112, 2.0f).put<float>(116, 1.0f);
  testing::write_bytes(dir / "s.nii", h.with_payload(std::vector<std::int16_t>{3}));
  const NiftiVolume v = read_nifti(dir / "s.nii");
  CHECK(v.data.at(0) == 7.0);
  CHECK(v.scl_slope == 2.0);
  CHECK(v.scl_inter == 1.0);
}

TEST_CASE("zero slope leaves stored values untouched") {
  TempDir dir("nifti");
  HeaderBuilder h(false);
  h.dims({2, 1, 1}).datatype(2, 8).put<float>(112, 0.0f).put<float>(116, 5.0f);
  testing::write_bytes(dir / "z.nii", h.with_payload(std::vector<std::uint8_t>{9, 250}));
  const NiftiVolume v = read_nifti(dir / "z.nii");
  CHECK(v.data == std::vector<double>{9.0, 250.0});
}

TEST_CASE("big and little endian files load to identical arrays") {
  TempDir dir("nifti");
  testing::Gen gen(11);
  std::vector<double> f64(24);
  std::vector<std::int16_t> i16(24);
  std::vector<float> f32(24);
  for (std::size_t i = 0; i < 24; ++i) {
    f64[i] = gen.normal(1e3);
    i16[i] = static_cast<std::int16_t>(gen.index(0, 60000)) ;
    f32[i] = static_cast<float>(gen.normal());
  }
  auto roundtrip = [&](auto payload, std::int16_t code, std::int16_t bitpix) {
    for (bool big : {false, true}) {
      HeaderBuilder h(big);
      h.dims({2, 3, 4}).datatype(code, bitpix).put<float>(80, 1.5f);
      testing::write_bytes(dir / (big ? "be.nii" : "le.nii"), h.with_payload(payload));
    }
    const NiftiVolume le = read_nifti(dir / "le.nii");
    const NiftiVolume be = read_nifti(dir / "be.nii");
    CHECK(bitwise_equal(le.data, be.data));
    CHECK(le.voxel_size == be.voxel_size);
    CHECK(be.voxel_size[0] == 1.5);
    for (std::size_t i = 0; i < payload.size(); ++i) CHECK(le.data[i] == static_cast<double>(payload[i]));
  };
  roundtrip(f64, 64, 64);
  roundtrip(i16, 4, 16);
  roundtrip(f32, 16, 32);
}

TEST_CASE("sform is preferred over qform") {
  TempDir dir("nifti");
  HeaderBuilder h(false);
  h.dims({1, 1, 1}).datatype(16, 32);
  h.put<std::int16_t>(252, 1).put<std::int16_t>(254, 2);
  const float srow[3][4] = {{0, 2, 0, 10}, {3, 0, 0, 20}, {0, 0, 4, 30}};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j) h.put<float>(280 + 16 * i + 4 * j, srow[i][j]);
  testing::write_bytes(dir / "a.nii", h.with_payload(std::vector<float>{0}));
  const NiftiVolume v = read_nifti(dir / "a.nii");
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j) CHECK(v.affine[i][j] == srow[i][j]);
}

TEST_CASE("qform with zero quaternion is a scaled identity plus offset") {
  TempDir dir("nifti");
  HeaderBuilder h(false);
  h.dims({1, 1, 1}).datatype(16, 32).put<std::int16_t>(252, 1);
  h.put<float>(80, 2.0f).put<float>(84, 3.0f).put<float>(88, 4.0f);
  h.put<float>(268, 5.0f).put<float>(272, 6.0f).put<float>(276, 7.0f);
  testing::write_bytes(dir / "q.nii", h.with_payload(std::vector<float>{0}));
  const NiftiVolume v = read_nifti(dir / "q.nii");
  CHECK(v.affine[0][0] == doctest::Approx(2.0));
  CHECK(v.affine[1][1] == doctest::Approx(3.0));
  CHECK(v.affine[2][2] == doctest::Approx(4.0));
  CHECK(v.affine[0][3] == 5.0);
  CHECK(v.affine[1][3] == 6.0);
  CHECK(v.affine[2][3] == 7.0);
}

TEST_CASE("header errors") {
  TempDir dir("nifti");
  SUBCASE("bad magic") {
    std::string bytes = HeaderBuilder(false).dims({1, 1, 1}).datatype(16, 32).with_payload(std::vector<float>{0});
    std::memcpy(bytes.data() + 344, "ni1\0", 4);
    testing::write_bytes(dir / "m.nii", bytes);
    CHECK_THROWS_AS(read_nifti(dir / "m.nii"), FormatError);
  }
  SUBCASE("unsupported datatype") {
    testing::write_bytes(dir / "d.nii",
                         HeaderBuilder(false).dims({1, 1, 1}).datatype(8, 32).with_payload(std::vector<std::int32_t>{0}));
    CHECK_THROWS_AS(read_nifti(dir / "d.nii"), UnsupportedDatatypeError);
  }
  SUBCASE("truncated payload") {
    testing::write_bytes(dir / "t.nii",
                         HeaderBuilder(false).dims({2, 2, 2}).datatype(16, 32).with_payload(std::vector<float>{1, 2, 3}));
    CHECK_THROWS_AS(read_nifti(dir / "t.nii"), IoError);
  }
  SUBCASE("truncated header") {
    testing::write_bytes(dir / "h.nii", std::string(100, '\0'));
    CHECK_THROWS_AS(read_nifti(dir / "h.nii"), IoError);
  }
  SUBCASE("missing file") { CHECK_THROWS_AS(read_nifti(dir / "none.nii"), IoError); }
}

TEST_CASE("writer output size and header fields") {
  TempDir dir("nifti");
  const NiftiVolume zeros({3, 3, 3});
  write_nifti(zeros, dir / "z.nii");
  const std::string bytes = testing::read_bytes(dir / "z.nii");
  CHECK(bytes.size() == 352 + 27 * 8);
  std::int32_t sizeof_hdr;
  std::int16_t datatype;
  float vox_offset;
  std::memcpy(&sizeof_hdr, bytes.data(), 4);
  std::memcpy(&datatype, bytes.data() + 70, 2);
  std::memcpy(&vox_offset, bytes.data() + 108, 4);
  CHECK(sizeof_hdr == 348);
  CHECK(datatype == 64);
  CHECK(vox_offset == 352.0f);
  CHECK(std::memcmp(bytes.data() + 344, "n+1\0", 4) == 0);
}

TEST_CASE("gzip is applied iff the path ends in .gz") {
  TempDir dir("nifti");
  testing::Gen gen(3);
  const NiftiVolume v = random_volume(gen, {4, 3, 2}, 2);
  write_nifti(v, dir / "v.nii.gz");
  write_nifti(v, dir / "v.nii");
  const std::string gz = testing::read_bytes(dir / "v.nii.gz");
  REQUIRE(gz.size() > 2);
  CHECK(static_cast<unsigned char>(gz[0]) == 0x1f);
  CHECK(static_cast<unsigned char>(gz[1]) == 0x8b);
  const std::string plain = testing::read_bytes(dir / "v.nii");
  CHECK(std::memcmp(plain.data() + 344, "n+1\0", 4) == 0);

  // Decompressing with zlib yields the uncompressed file byte for byte.
  gzFile f = gzopen((dir / "v.nii.gz").c_str(), "rb");
  std::string inflated(plain.size() + 16, '\0');
  const int got = gzread(f, inflated.data(), static_cast<unsigned>(inflated.size()));
  gzclose(f);
  inflated.resize(static_cast<std::size_t>(got));
  CHECK(inflated == plain);
}

TEST_CASE("round trip is bitwise exact on random f64 volumes") {
  TempDir dir("nifti");
  testing::Gen gen(7);
  for (int trial = 0; trial < 10; ++trial) {
    const std::array<std::size_t, 3> dims{gen.index(1, 6), gen.index(1, 6), gen.index(1, 6)};
    NiftiVolume v = random_volume(gen, dims, gen.index(1, 5));
    const auto path = dir / (trial % 2 ? "r.nii.gz" : "r.nii");
    write_nifti(v, path);
    const NiftiVolume back = read_nifti(path);
    CHECK(back.dims == v.dims);
    CHECK(bitwise_equal(back.data, v.data));
    for (int i = 0; i < 3; ++i) CHECK(back.voxel_size[i] == doctest::Approx(v.voxel_size[i]).epsilon(1e-7));
    CHECK(back.affine[0][3] == v.affine[0][3]);

    // read then write reproduces the file bytes.
    write_nifti(back, dir / "again.nii");
    write_nifti(v, dir / "first.nii");
    CHECK(testing::read_bytes(dir / "again.nii") == testing::read_bytes(dir / "first.nii"));
  }
}

TEST_CASE("NaN and infinities pass through") {
  TempDir dir("nifti");
  NiftiVolume v({2, 2, 1});
  v.data = {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::infinity(),
            -std::numeric_limits<double>::infinity(), -0.0};
  write_nifti(v, dir / "n.nii.gz");
  const NiftiVolume back = read_nifti(dir / "n.nii.gz");
  CHECK(std::isnan(back.data[0]));
  CHECK(back.data[1] == std::numeric_limits<double>::infinity());
  CHECK(back.data[2] == -std::numeric_limits<double>::infinity());
  CHECK(std::signbit(back.data[3]));
}

TEST_CASE("u8 output option") {
  TempDir dir("nifti");
  NiftiVolume v({3, 1, 1});
  v.data = {0, 1, 255};
  write_nifti(v, dir / "m.nii", Datatype::u8);
  CHECK(testing::read_bytes(dir / "m.nii").size() == 352 + 3);
  const NiftiVolume back = read_nifti(dir / "m.nii");
  CHECK(back.datatype == Datatype::u8);
  CHECK(back.data == v.data);
}

TEST_CASE("writer rejects inconsistent data and unwritable paths") {
  TempDir dir("nifti");
  NiftiVolume v({2, 2, 2});
  v.data.pop_back();
  CHECK_THROWS_AS(write_nifti(v, dir / "x.nii"), ContractError);
  CHECK_THROWS_AS(write_nifti(NiftiVolume({1, 1, 1}), dir / "no" / "such" / "x.nii"), IoError);
}
