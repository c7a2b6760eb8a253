#include "nifti.hpp"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <memory>

#include "patch2loc/error.hpp"

namespace patch2loc::nifti {
namespace {

constexpr int kHeaderSize = 348;
constexpr float kVoxOffset = 352.0f;

enum DataType : std::int16_t {
  kUInt8 = 2,
  kInt16 = 4,
  kInt32 = 8,
  kFloat32 = 16,
  kFloat64 = 64,
  kInt8 = 256,
  kUInt16 = 512,
};

template <class T>
T byteswap_value(T v) {
  std::array<unsigned char, sizeof(T)> b;
  std::memcpy(b.data(), &v, sizeof(T));
  std::reverse(b.begin(), b.end());
  std::memcpy(&v, b.data(), sizeof(T));
  return v;
}

template <class T>
T field(const unsigned char* hdr, std::size_t offset, bool swap) {
  T v;
  std::memcpy(&v, hdr + offset, sizeof(T));
  return swap ? byteswap_value(v) : v;
}

template <class T>
void put(unsigned char* hdr, std::size_t offset, T v) {
  std::memcpy(hdr + offset, &v, sizeof(T));
}

struct GzCloser {
  void operator()(gzFile f) const {
    if (f) gzclose(f);
  }
};
using GzHandle = std::unique_ptr<std::remove_pointer_t<gzFile>, GzCloser>;

void read_exact(gzFile f, void* dst, std::size_t n, const std::filesystem::path& path) {
  auto* p = static_cast<unsigned char*>(dst);
  while (n > 0) {
    const unsigned chunk = static_cast<unsigned>(std::min<std::size_t>(n, 1u << 30));
    const int got = gzread(f, p, chunk);
    if (got <= 0) throw IoError("truncated NIfTI file " + path.string());
    p += got;
    n -= static_cast<std::size_t>(got);
  }
}

template <class Raw>
void convert(const std::vector<unsigned char>& bytes, bool swap, std::vector<float>& out) {
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) {
    Raw v;
    std::memcpy(&v, bytes.data() + i * sizeof(Raw), sizeof(Raw));
    if (swap) v = byteswap_value(v);
    out[i] = static_cast<float>(v);
  }
}

bool is_gzip_path(const std::filesystem::path& path) { return path.extension() == ".gz"; }

std::array<unsigned char, kHeaderSize> make_header(const Extents& e, DataType type, std::int16_t bitpix,
                                                   const std::string& description) {
  std::array<unsigned char, kHeaderSize> hdr{};
  put<std::int32_t>(hdr.data(), 0, kHeaderSize);
  hdr[38] = 'r';
  const std::array<std::int16_t, 8> dim{3, static_cast<std::int16_t>(e.e1), static_cast<std::int16_t>(e.e2),
                                        static_cast<std::int16_t>(e.e3), 1, 1, 1, 1};
  for (int i = 0; i < 8; ++i) put<std::int16_t>(hdr.data(), 40 + 2 * i, dim[i]);
  put<std::int16_t>(hdr.data(), 70, type);
  put<std::int16_t>(hdr.data(), 72, bitpix);
  for (int i = 0; i < 8; ++i) put<float>(hdr.data(), 76 + 4 * i, 1.0f);
  put<float>(hdr.data(), 108, kVoxOffset);
  put<float>(hdr.data(), 112, 1.0f);
  put<float>(hdr.data(), 116, 0.0f);
  hdr[123] = 2;  // millimetres
  std::strncpy(reinterpret_cast<char*>(hdr.data() + 148), description.c_str(), 79);
  put<std::int16_t>(hdr.data(), 254, 1);  // sform: scanner anatomical, identity
  put<float>(hdr.data(), 280, 1.0f);
  put<float>(hdr.data(), 300, 1.0f);
  put<float>(hdr.data(), 320, 1.0f);
  std::memcpy(hdr.data() + 344, "n+1\0", 4);
  return hdr;
}

void write_bytes(const std::filesystem::path& path, const std::array<unsigned char, kHeaderSize>& hdr,
                 const void* data, std::size_t nbytes) {
  const std::array<unsigned char, 4> extension{};
  if (is_gzip_path(path)) {
    GzHandle f(gzopen(path.c_str(), "wb6"));
    if (!f) throw IoError("cannot open " + path.string() + " for writing");
    bool ok = gzwrite(f.get(), hdr.data(), kHeaderSize) == kHeaderSize;
    ok = ok && gzwrite(f.get(), extension.data(), 4) == 4;
    const auto* p = static_cast<const unsigned char*>(data);
    while (ok && nbytes > 0) {
      const unsigned chunk = static_cast<unsigned>(std::min<std::size_t>(nbytes, 1u << 30));
      ok = gzwrite(f.get(), p, chunk) == static_cast<int>(chunk);
      p += chunk;
      nbytes -= chunk;
    }
    if (!ok) throw IoError("failed writing " + path.string());
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(hdr.data()), kHeaderSize);
  out.write(reinterpret_cast<const char*>(extension.data()), 4);
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(nbytes));
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace

Image read(const std::filesystem::path& path) {
  static_assert(std::endian::native == std::endian::little, "big-endian hosts are not supported");
  GzHandle f(gzopen(path.c_str(), "rb"));
  if (!f) throw IoError("cannot open " + path.string());

  std::array<unsigned char, kHeaderSize> hdr{};
  read_exact(f.get(), hdr.data(), kHeaderSize, path);

  bool swap = false;
  std::int32_t sizeof_hdr = field<std::int32_t>(hdr.data(), 0, false);
  if (sizeof_hdr != kHeaderSize) {
    swap = true;
    sizeof_hdr = field<std::int32_t>(hdr.data(), 0, true);
    if (sizeof_hdr != kHeaderSize) throw IoError(path.string() + " is not a NIfTI-1 file");
  }
  if (std::memcmp(hdr.data() + 344, "n+1", 3) != 0 && std::memcmp(hdr.data() + 344, "ni1", 3) != 0) {
    throw IoError(path.string() + " has no NIfTI-1 magic");
  }
  if (std::memcmp(hdr.data() + 344, "ni1", 3) == 0) {
    throw IoError(path.string() + " is a two-file NIfTI pair; only single-file .nii is supported");
  }

  std::array<std::int16_t, 8> dim{};
  for (int i = 0; i < 8; ++i) dim[i] = field<std::int16_t>(hdr.data(), 40 + 2 * i, swap);
  if (dim[0] < 3) throw IoError(path.string() + " is not a 3D image");
  for (int i = 4; i <= dim[0] && i < 8; ++i) {
    if (dim[i] > 1) throw IoError(path.string() + " has more than one volume");
  }

  Image img;
  img.extents = Extents{dim[1], dim[2], dim[3]};
  if (!img.extents.positive()) throw IoError(path.string() + " has non-positive dimensions");

  const auto type = field<std::int16_t>(hdr.data(), 70, swap);
  std::size_t bytes_per_voxel = 0;
  switch (type) {
    case kUInt8:
    case kInt8:
      bytes_per_voxel = 1;
      break;
    case kInt16:
    case kUInt16:
      bytes_per_voxel = 2;
      break;
    case kInt32:
    case kFloat32:
      bytes_per_voxel = 4;
      break;
    case kFloat64:
      bytes_per_voxel = 8;
      break;
    default:
      throw IoError(path.string() + ": unsupported NIfTI datatype " + std::to_string(type));
  }

  const float vox_offset = field<float>(hdr.data(), 108, swap);
  const auto skip = static_cast<long>(vox_offset) - kHeaderSize;
  if (skip < 0) throw IoError(path.string() + ": invalid vox_offset");
  std::vector<unsigned char> scratch(static_cast<std::size_t>(skip));
  if (skip > 0) read_exact(f.get(), scratch.data(), scratch.size(), path);

  const std::size_t n = img.extents.voxels();
  std::vector<unsigned char> bytes(n * bytes_per_voxel);
  read_exact(f.get(), bytes.data(), bytes.size(), path);

  img.values.resize(n);
  switch (type) {
    case kUInt8:
      convert<std::uint8_t>(bytes, false, img.values);
      break;
    case kInt8:
      convert<std::int8_t>(bytes, false, img.values);
      break;
    case kInt16:
      convert<std::int16_t>(bytes, swap, img.values);
      break;
    case kUInt16:
      convert<std::uint16_t>(bytes, swap, img.values);
      break;
    case kInt32:
      convert<std::int32_t>(bytes, swap, img.values);
      break;
    case kFloat32:
      convert<float>(bytes, swap, img.values);
      break;
    case kFloat64:
      convert<double>(bytes, swap, img.values);
      break;
    default:
      break;
  }

  const float slope = field<float>(hdr.data(), 112, swap);
  const float inter = field<float>(hdr.data(), 116, swap);
  if (slope != 0.0f && (slope != 1.0f || inter != 0.0f)) {
    for (float& v : img.values) v = v * slope + inter;
  }

  const char* descrip = reinterpret_cast<const char*>(hdr.data() + 148);
  img.description.assign(descrip, strnlen(descrip, 80));
  return img;
}

void write(const std::filesystem::path& path, const Extents& e, std::span<const float> values,
           const std::string& description) {
  if (values.size() != e.voxels()) throw ShapeMismatchError("grid size does not match extents");
  write_bytes(path, make_header(e, kFloat32, 32, description), values.data(), values.size_bytes());
}

void write(const std::filesystem::path& path, const Extents& e, std::span<const std::uint8_t> values,
           const std::string& description) {
  if (values.size() != e.voxels()) throw ShapeMismatchError("grid size does not match extents");
  write_bytes(path, make_header(e, kUInt8, 8, description), values.data(), values.size_bytes());
}

}  // namespace patch2loc::nifti
