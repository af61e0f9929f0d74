#pragma once

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "lesionseg/common.hpp"

namespace lesionseg {
namespace png {

namespace detail {

inline void put_u32(std::vector<uint8_t>& v, uint32_t x) {
  v.push_back(static_cast<uint8_t>(x >> 24));
  v.push_back(static_cast<uint8_t>(x >> 16));
  v.push_back(static_cast<uint8_t>(x >> 8));
  v.push_back(static_cast<uint8_t>(x));
}

inline void chunk(std::ofstream& out, const char type[4], const std::vector<uint8_t>& payload) {
  std::vector<uint8_t> head;
  put_u32(head, static_cast<uint32_t>(payload.size()));
  out.write(reinterpret_cast<const char*>(head.data()), 4);
  out.write(type, 4);
  if (!payload.empty()) out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(type), 4);
  if (!payload.empty()) crc = crc32(crc, payload.data(), static_cast<uInt>(payload.size()));
  std::vector<uint8_t> tail;
  put_u32(tail, static_cast<uint32_t>(crc));
  out.write(reinterpret_cast<const char*>(tail.data()), 4);
}

}  // namespace detail

// Writes an 8-bit RGB image; rgb is row-major [h][w][3].
inline void write_rgb(const std::string& path, const std::vector<uint8_t>& rgb, int w, int h) {
  if (static_cast<int64_t>(rgb.size()) != int64_t(w) * h * 3)
    throw DataError("png: buffer size does not match dimensions");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  static const uint8_t sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  out.write(reinterpret_cast<const char*>(sig), 8);

  std::vector<uint8_t> ihdr;
  detail::put_u32(ihdr, static_cast<uint32_t>(w));
  detail::put_u32(ihdr, static_cast<uint32_t>(h));
  ihdr.push_back(8);   // bit depth
  ihdr.push_back(2);   // color type: truecolor
  ihdr.push_back(0);   // compression
  ihdr.push_back(0);   // filter
  ihdr.push_back(0);   // interlace
  detail::chunk(out, "IHDR", ihdr);

  // Scanlines with filter byte 0.
  std::vector<uint8_t> raw;
  raw.reserve(static_cast<size_t>(h) * (static_cast<size_t>(w) * 3 + 1));
  for (int y = 0; y < h; ++y) {
    raw.push_back(0);
    raw.insert(raw.end(), rgb.begin() + static_cast<size_t>(y) * w * 3,
               rgb.begin() + static_cast<size_t>(y + 1) * w * 3);
  }
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<uint8_t> compressed(bound);
  if (compress2(compressed.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw DataError("png: deflate failed");
  compressed.resize(bound);
  detail::chunk(out, "IDAT", compressed);
  detail::chunk(out, "IEND", {});
}

}  // namespace png
}  // namespace lesionseg
