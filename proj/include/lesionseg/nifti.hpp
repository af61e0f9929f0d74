#pragma once

#include <zlib.h>

#include <array>
#include <cstring>
#include <string>
#include <vector>

#include "lesionseg/common.hpp"
#include "lesionseg/tensor.hpp"

namespace lesionseg {

// Minimal NIfTI-1 support: little-endian .nii / .nii.gz, 3-D scalar images.
// Enough for skull-stripped, co-registered inputs; orientation matrices are
// carried through untouched when predictions mirror an input file.

namespace nifti {

#pragma pack(push, 1)
struct Header {
  int32_t sizeof_hdr;
  char data_type[10];
  char db_name[18];
  int32_t extents;
  int16_t session_error;
  char regular;
  char dim_info;
  int16_t dim[8];
  float intent_p1, intent_p2, intent_p3;
  int16_t intent_code;
  int16_t datatype;
  int16_t bitpix;
  int16_t slice_start;
  float pixdim[8];
  float vox_offset;
  float scl_slope;
  float scl_inter;
  int16_t slice_end;
  char slice_code;
  char xyzt_units;
  float cal_max, cal_min;
  float slice_duration;
  float toffset;
  int32_t glmax, glmin;
  char descrip[80];
  char aux_file[24];
  int16_t qform_code, sform_code;
  float quatern_b, quatern_c, quatern_d;
  float qoffset_x, qoffset_y, qoffset_z;
  float srow_x[4], srow_y[4], srow_z[4];
  char intent_name[16];
  char magic[4];
};
#pragma pack(pop)
static_assert(sizeof(Header) == 348, "NIfTI-1 header must be 348 bytes");

constexpr int16_t kUInt8 = 2;
constexpr int16_t kInt16 = 4;
constexpr int16_t kInt32 = 8;
constexpr int16_t kFloat32 = 16;
constexpr int16_t kFloat64 = 64;

// Scalar 3-D image plus the verbatim header for geometry-preserving writes.
struct Image {
  Tensor<float> data;  // [D, H, W]
  std::array<double, 3> spacing = {1.0, 1.0, 1.0};
  Header header{};
};

inline Image read(const std::string& path) {
  gzFile f = gzopen(path.c_str(), "rb");
  if (!f) throw DataError("cannot open NIfTI file: " + path);
  Header h{};
  if (gzread(f, &h, sizeof(h)) != static_cast<int>(sizeof(h))) {
    gzclose(f);
    throw DataError(path + ": truncated NIfTI header");
  }
  if (h.sizeof_hdr != 348) {
    gzclose(f);
    throw DataError(path + ": unsupported NIfTI header (byte order or version)");
  }
  const int ndim = h.dim[0];
  if (ndim < 2 || ndim > 7) {
    gzclose(f);
    throw DataError(path + ": bad dim[0]");
  }
  for (int i = 4; i <= ndim; ++i)
    if (h.dim[i] > 1) {
      gzclose(f);
      throw DataError(path + ": only 3-D scalar images are supported");
    }
  const int nx = h.dim[1], ny = h.dim[2], nz = ndim >= 3 ? std::max<int16_t>(h.dim[3], 1) : 1;
  const int64_t n = int64_t(nx) * ny * nz;

  // Skip any extension bytes between header and data.
  const int64_t skip = static_cast<int64_t>(h.vox_offset) - 348;
  if (skip < 0) {
    gzclose(f);
    throw DataError(path + ": bad vox_offset");
  }
  std::vector<char> tmp(static_cast<size_t>(skip));
  if (skip > 0 && gzread(f, tmp.data(), static_cast<unsigned>(skip)) != skip) {
    gzclose(f);
    throw DataError(path + ": truncated extensions");
  }

  const int bytes_per = h.bitpix / 8;
  std::vector<char> raw(static_cast<size_t>(n) * bytes_per);
  const int64_t want = static_cast<int64_t>(raw.size());
  int64_t got = 0;
  while (got < want) {
    const int chunk = gzread(f, raw.data() + got, static_cast<unsigned>(std::min<int64_t>(want - got, 1 << 28)));
    if (chunk <= 0) break;
    got += chunk;
  }
  gzclose(f);
  if (got != want) throw DataError(path + ": truncated voxel data");

  Image img;
  img.header = h;
  img.data = Tensor<float>({nz, ny, nx});
  const float slope = (h.scl_slope == 0.0f) ? 1.0f : h.scl_slope;
  const float inter = (h.scl_slope == 0.0f) ? 0.0f : h.scl_inter;
  auto convert = [&](auto* p) {
    for (int64_t i = 0; i < n; ++i) img.data[i] = static_cast<float>(p[i]) * slope + inter;
  };
  switch (h.datatype) {
    case kUInt8:
      convert(reinterpret_cast<const uint8_t*>(raw.data()));
      break;
    case kInt16:
      convert(reinterpret_cast<const int16_t*>(raw.data()));
      break;
    case kInt32:
      convert(reinterpret_cast<const int32_t*>(raw.data()));
      break;
    case kFloat32:
      convert(reinterpret_cast<const float*>(raw.data()));
      break;
    case kFloat64:
      convert(reinterpret_cast<const double*>(raw.data()));
      break;
    default:
      throw DataError(path + ": unsupported NIfTI datatype " + std::to_string(h.datatype));
  }
  img.spacing = {std::abs(h.pixdim[3]) > 0 ? h.pixdim[3] : 1.0,
                 std::abs(h.pixdim[2]) > 0 ? h.pixdim[2] : 1.0,
                 std::abs(h.pixdim[1]) > 0 ? h.pixdim[1] : 1.0};
  return img;
}

namespace detail {
inline void write_all(const std::string& path, const void* hdr, const void* data, size_t nbytes) {
  const bool gz = ends_with(path, ".gz");
  if (gz) {
    gzFile f = gzopen(path.c_str(), "wb");
    if (!f) throw DataError("cannot write " + path);
    const char pad[4] = {0, 0, 0, 0};
    gzwrite(f, hdr, sizeof(Header));
    gzwrite(f, pad, 4);
    size_t off = 0;
    const char* p = static_cast<const char*>(data);
    while (off < nbytes) {
      const unsigned chunk = static_cast<unsigned>(std::min<size_t>(nbytes - off, 1u << 28));
      if (gzwrite(f, p + off, chunk) != static_cast<int>(chunk)) {
        gzclose(f);
        throw DataError("short write to " + path);
      }
      off += chunk;
    }
    gzclose(f);
  } else {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path);
    const char pad[4] = {0, 0, 0, 0};
    out.write(static_cast<const char*>(hdr), sizeof(Header));
    out.write(pad, 4);
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(nbytes));
  }
}
}  // namespace detail

inline Header make_header(int D, int H, int W, const std::array<double, 3>& spacing,
                          int16_t datatype, int16_t bitpix) {
  Header h{};
  h.sizeof_hdr = 348;
  h.regular = 'r';
  h.dim[0] = 3;
  h.dim[1] = static_cast<int16_t>(W);
  h.dim[2] = static_cast<int16_t>(H);
  h.dim[3] = static_cast<int16_t>(D);
  for (int i = 4; i < 8; ++i) h.dim[i] = 1;
  h.datatype = datatype;
  h.bitpix = bitpix;
  h.pixdim[0] = 1.0f;
  h.pixdim[1] = static_cast<float>(spacing[2]);
  h.pixdim[2] = static_cast<float>(spacing[1]);
  h.pixdim[3] = static_cast<float>(spacing[0]);
  h.vox_offset = 352.0f;
  h.scl_slope = 1.0f;
  h.xyzt_units = 2;  // millimetres
  h.sform_code = 1;
  h.srow_x[0] = static_cast<float>(spacing[2]);
  h.srow_y[1] = static_cast<float>(spacing[1]);
  h.srow_z[2] = static_cast<float>(spacing[0]);
  std::memcpy(h.magic, "n+1", 4);
  return h;
}

inline void write_float(const std::string& path, const Tensor<float>& data,
                        const std::array<double, 3>& spacing) {
  Header h = make_header(data.dim(0), data.dim(1), data.dim(2), spacing, kFloat32, 32);
  detail::write_all(path, &h, data.ptr(), static_cast<size_t>(data.numel()) * 4);
}

// Writes a uint8 label image; when `like` is provided its geometry fields are
// reused so downstream viewers overlay correctly.
inline void write_mask(const std::string& path, const Tensor<uint8_t>& data,
                       const std::array<double, 3>& spacing, const Header* like = nullptr) {
  Header h = like ? *like : make_header(data.dim(0), data.dim(1), data.dim(2), spacing, kUInt8, 8);
  h.dim[0] = 3;
  h.dim[1] = static_cast<int16_t>(data.dim(2));
  h.dim[2] = static_cast<int16_t>(data.dim(1));
  h.dim[3] = static_cast<int16_t>(data.dim(0));
  for (int i = 4; i < 8; ++i) h.dim[i] = 1;
  h.datatype = kUInt8;
  h.bitpix = 8;
  h.vox_offset = 352.0f;
  h.scl_slope = 1.0f;
  h.scl_inter = 0.0f;
  std::memcpy(h.magic, "n+1", 4);
  detail::write_all(path, &h, data.ptr(), static_cast<size_t>(data.numel()));
}

}  // namespace nifti
}  // namespace lesionseg
