#include "nuq/nifti.hpp"

#include "nuq/error.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <memory>
#include <string>

namespace nuq {

namespace {

constexpr std::size_t kHeaderSize = 348;

// Header field offsets (NIfTI-1).
constexpr std::size_t kOffDim = 40;
constexpr std::size_t kOffDatatype = 70;
constexpr std::size_t kOffBitpix = 72;
constexpr std::size_t kOffPixdim = 76;
constexpr std::size_t kOffVoxOffset = 108;
constexpr std::size_t kOffSclSlope = 112;
constexpr std::size_t kOffSclInter = 116;
constexpr std::size_t kOffXyztUnits = 123;
constexpr std::size_t kOffDescrip = 148;
constexpr std::size_t kOffQformCode = 252;
constexpr std::size_t kOffSformCode = 254;
constexpr std::size_t kOffQuatern = 256;
constexpr std::size_t kOffQoffset = 268;
constexpr std::size_t kOffSrow = 280;
constexpr std::size_t kOffMagic = 344;

struct GzCloser {
  void operator()(gzFile f) const {
    if (f) gzclose(f);
  }
};
using GzHandle = std::unique_ptr<std::remove_pointer_t<gzFile>, GzCloser>;

std::vector<unsigned char> slurp(const std::filesystem::path &path) {
  GzHandle file(gzopen(path.c_str(), "rb"));
  if (!file) throw IoError("cannot open " + path.string());
  std::vector<unsigned char> bytes;
  std::array<unsigned char, 1 << 16> chunk{};
  for (;;) {
    const int got = gzread(file.get(), chunk.data(), chunk.size());
    if (got < 0) throw IoError("read error in " + path.string());
    if (got == 0) break;
    bytes.insert(bytes.end(), chunk.begin(), chunk.begin() + got);
  }
  return bytes;
}

// Little/big-endian aware field reader over a byte buffer.
class FieldReader {
public:
  FieldReader(const std::vector<unsigned char> &bytes, bool swap)
      : bytes_(bytes), swap_(swap) {}

  template <typename T> T get(std::size_t offset) const {
    std::array<unsigned char, sizeof(T)> raw{};
    std::memcpy(raw.data(), bytes_.data() + offset, sizeof(T));
    if (swap_) std::reverse(raw.begin(), raw.end());
    T value;
    std::memcpy(&value, raw.data(), sizeof(T));
    return value;
  }

private:
  const std::vector<unsigned char> &bytes_;
  bool swap_;
};

template <typename T> void put_le(std::vector<unsigned char> &buf, std::size_t offset, T value) {
  std::array<unsigned char, sizeof(T)> raw{};
  std::memcpy(raw.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(raw.begin(), raw.end());
  std::memcpy(buf.data() + offset, raw.data(), sizeof(T));
}

Affine qform_affine(const FieldReader &r, const std::array<double, 3> &pixdim,
                    double qfac) {
  double b = r.get<float>(kOffQuatern);
  double c = r.get<float>(kOffQuatern + 4);
  double d = r.get<float>(kOffQuatern + 8);
  double a = 1.0 - (b * b + c * c + d * d);
  if (a < 1e-7) {
    // 180 degree rotation: renormalize (b, c, d)
    const double inv = 1.0 / std::sqrt(b * b + c * c + d * d);
    b *= inv;
    c *= inv;
    d *= inv;
    a = 0.0;
  } else {
    a = std::sqrt(a);
  }
  const double rot[3][3] = {
      {a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)},
      {2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)},
      {2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - c * c - b * b}};
  const double scale[3] = {pixdim[0], pixdim[1], qfac * pixdim[2]};
  Affine m = identity_affine();
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) m[i][j] = rot[i][j] * scale[j];
    m[i][3] = r.get<float>(kOffQoffset + 4 * i);
  }
  return m;
}

template <typename T>
void decode(const unsigned char *src, std::size_t count, bool swap,
            std::vector<double> &out) {
  out.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::array<unsigned char, sizeof(T)> raw{};
    std::memcpy(raw.data(), src + i * sizeof(T), sizeof(T));
    if (swap) std::reverse(raw.begin(), raw.end());
    T value;
    std::memcpy(&value, raw.data(), sizeof(T));
    out[i] = static_cast<double>(value);
  }
}

} // namespace

std::size_t bytes_per_voxel(Datatype dt) {
  switch (dt) {
  case Datatype::u8: return 1;
  case Datatype::i16: return 2;
  case Datatype::f32: return 4;
  case Datatype::f64: return 8;
  }
  throw UnsupportedDatatypeError("unknown datatype");
}

Affine identity_affine() {
  Affine m{};
  for (int i = 0; i < 4; ++i) m[i][i] = 1.0;
  return m;
}

NiftiVolume::NiftiVolume(std::array<std::size_t, 3> spatial, std::size_t volumes,
                         double fill)
    : dims{spatial[0], spatial[1], spatial[2], volumes},
      ndim(volumes > 1 ? 4 : 3) {
  data.assign(element_count(), fill);
}

void NiftiVolume::copy_geometry(const NiftiVolume &other) {
  voxel_size = other.voxel_size;
  affine = other.affine;
}

NiftiVolume read_nifti(const std::filesystem::path &path) {
  const auto bytes = slurp(path);
  if (bytes.size() < kHeaderSize) throw IoError("truncated header in " + path.string());

  std::int32_t sizeof_hdr;
  std::memcpy(&sizeof_hdr, bytes.data(), 4);
  bool swap = false;
  if (sizeof_hdr != static_cast<std::int32_t>(kHeaderSize)) {
    swap = __builtin_bswap32(static_cast<std::uint32_t>(sizeof_hdr)) == kHeaderSize;
    if (!swap) throw FormatError("not a NIfTI-1 header: " + path.string());
  }
  if (std::memcmp(bytes.data() + kOffMagic, "n+1\0", 4) != 0)
    throw FormatError("bad NIfTI magic (expected single-file \"n+1\"): " + path.string());

  const FieldReader r(bytes, swap);
  NiftiVolume vol;
  const auto ndim = r.get<std::int16_t>(kOffDim);
  if (ndim < 1 || ndim > 7) throw FormatError("invalid dim[0] in " + path.string());
  vol.ndim = static_cast<std::size_t>(ndim);
  for (std::size_t axis = 0; axis < 7; ++axis) {
    const auto extent = axis < vol.ndim ? r.get<std::int16_t>(kOffDim + 2 * (axis + 1)) : 1;
    if (extent < 1) throw FormatError("non-positive dimension in " + path.string());
    if (axis < 4) {
      vol.dims[axis] = static_cast<std::size_t>(extent);
    } else if (extent != 1) {
      throw FormatError("more than 4 non-singleton axes in " + path.string());
    }
  }
  vol.ndim = std::min<std::size_t>(vol.ndim, 4);

  const auto code = r.get<std::int16_t>(kOffDatatype);
  switch (code) {
  case 2: case 4: case 16: case 64: vol.datatype = static_cast<Datatype>(code); break;
  default:
    throw UnsupportedDatatypeError("unsupported NIfTI datatype code " +
                                   std::to_string(code) + " in " + path.string());
  }
  const auto bitpix = r.get<std::int16_t>(kOffBitpix);
  if (bitpix != static_cast<std::int16_t>(8 * bytes_per_voxel(vol.datatype)))
    throw FormatError("bitpix disagrees with datatype in " + path.string());

  std::array<double, 3> pixdim{};
  for (int i = 0; i < 3; ++i) {
    pixdim[i] = std::abs(r.get<float>(kOffPixdim + 4 * (i + 1)));
    vol.voxel_size[i] = pixdim[i] > 0 ? pixdim[i] : 1.0;
  }
  const double qfac = r.get<float>(kOffPixdim) < 0 ? -1.0 : 1.0;

  if (r.get<std::int16_t>(kOffSformCode) > 0) {
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 4; ++j) vol.affine[i][j] = r.get<float>(kOffSrow + 16 * i + 4 * j);
  } else if (r.get<std::int16_t>(kOffQformCode) > 0) {
    vol.affine = qform_affine(r, vol.voxel_size, qfac);
  } else {
    for (int i = 0; i < 3; ++i) vol.affine[i][i] = vol.voxel_size[i];
  }

  vol.scl_slope = r.get<float>(kOffSclSlope);
  vol.scl_inter = r.get<float>(kOffSclInter);

  const double vox_offset = r.get<float>(kOffVoxOffset);
  const auto start = static_cast<std::size_t>(std::max(vox_offset, double(kHeaderSize)));
  const std::size_t count = vol.element_count();
  const std::size_t payload = count * bytes_per_voxel(vol.datatype);
  if (bytes.size() < start + payload) throw IoError("truncated payload in " + path.string());

  const unsigned char *src = bytes.data() + start;
  switch (vol.datatype) {
  case Datatype::u8: decode<std::uint8_t>(src, count, swap, vol.data); break;
  case Datatype::i16: decode<std::int16_t>(src, count, swap, vol.data); break;
  case Datatype::f32: decode<float>(src, count, swap, vol.data); break;
  case Datatype::f64: decode<double>(src, count, swap, vol.data); break;
  }

  if (vol.scl_slope != 0.0 && std::isfinite(vol.scl_slope) &&
      !(vol.scl_slope == 1.0 && vol.scl_inter == 0.0)) {
    for (auto &v : vol.data) v = v * vol.scl_slope + vol.scl_inter;
  }
  return vol;
}

void write_nifti(const NiftiVolume &vol, const std::filesystem::path &path,
                 Datatype out) {
  if (vol.data.size() != vol.element_count())
    throw ContractError("volume data length does not match its dimensions");

  std::vector<unsigned char> buf(kNiftiHeaderBlock, 0);
  put_le<std::int32_t>(buf, 0, static_cast<std::int32_t>(kHeaderSize));
  buf[38] = 'r';
  const std::size_t ndim = vol.dims[3] > 1 ? 4 : 3;
  put_le<std::int16_t>(buf, kOffDim, static_cast<std::int16_t>(ndim));
  for (std::size_t axis = 0; axis < 7; ++axis) {
    const std::size_t extent = axis < 4 ? vol.dims[axis] : 1;
    put_le<std::int16_t>(buf, kOffDim + 2 * (axis + 1), static_cast<std::int16_t>(extent));
  }
  put_le<std::int16_t>(buf, kOffDatatype, static_cast<std::int16_t>(out));
  put_le<std::int16_t>(buf, kOffBitpix, static_cast<std::int16_t>(8 * bytes_per_voxel(out)));
  put_le<float>(buf, kOffPixdim, 1.0f);
  for (int i = 0; i < 3; ++i)
    put_le<float>(buf, kOffPixdim + 4 * (i + 1), static_cast<float>(vol.voxel_size[i]));
  put_le<float>(buf, kOffPixdim + 16, 1.0f);
  put_le<float>(buf, kOffVoxOffset, static_cast<float>(kNiftiHeaderBlock));
  put_le<float>(buf, kOffSclSlope, 1.0f);
  put_le<float>(buf, kOffSclInter, 0.0f);
  buf[kOffXyztUnits] = 2 | 8; // mm, seconds
  const char descrip[] = "nuq";
  std::memcpy(buf.data() + kOffDescrip, descrip, sizeof(descrip));
  put_le<std::int16_t>(buf, kOffQformCode, 0);
  put_le<std::int16_t>(buf, kOffSformCode, 1);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j)
      put_le<float>(buf, kOffSrow + 16 * i + 4 * j, static_cast<float>(vol.affine[i][j]));
  std::memcpy(buf.data() + kOffMagic, "n+1\0", 4);

  const std::size_t width = bytes_per_voxel(out);
  buf.resize(kNiftiHeaderBlock + vol.data.size() * width);
  for (std::size_t i = 0; i < vol.data.size(); ++i) {
    const double v = vol.data[i];
    const std::size_t at = kNiftiHeaderBlock + i * width;
    switch (out) {
    case Datatype::u8:
      put_le<std::uint8_t>(buf, at, static_cast<std::uint8_t>(std::clamp(std::round(v), 0.0, 255.0)));
      break;
    case Datatype::i16:
      put_le<std::int16_t>(buf, at, static_cast<std::int16_t>(std::clamp(std::round(v), -32768.0, 32767.0)));
      break;
    case Datatype::f32: put_le<float>(buf, at, static_cast<float>(v)); break;
    case Datatype::f64: put_le<double>(buf, at, v); break;
    }
  }

  const std::string name = path.filename().string();
  const bool gz = name.size() > 3 && name.substr(name.size() - 3) == ".gz";
  if (gz) {
    GzHandle file(gzopen(path.c_str(), "wb6"));
    if (!file) throw IoError("cannot write " + path.string());
    std::size_t done = 0;
    while (done < buf.size()) {
      const auto n = static_cast<unsigned>(std::min<std::size_t>(buf.size() - done, 1u << 30));
      if (gzwrite(file.get(), buf.data() + done, n) != static_cast<int>(n))
        throw IoError("write failed for " + path.string());
      done += n;
    }
    if (gzclose(file.release()) != Z_OK) throw IoError("write failed for " + path.string());
  } else {
    std::unique_ptr<FILE, int (*)(FILE *)> file(std::fopen(path.c_str(), "wb"), &std::fclose);
    if (!file) throw IoError("cannot write " + path.string());
    if (std::fwrite(buf.data(), 1, buf.size(), file.get()) != buf.size())
      throw IoError("write failed for " + path.string());
  }
}

} // namespace nuq
