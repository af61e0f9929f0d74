#pragma once

#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "lesionseg/autograd.hpp"
#include "lesionseg/common.hpp"

namespace lesionseg {

// Checkpoint = binary weight blob (model parameters plus optimizer moments)
// and a JSON manifest beside it. The blob layout is versioned and
// little-endian; the weights hash is the FNV-1a of the blob bytes.

inline constexpr uint32_t kCheckpointVersion = 1;
inline constexpr const char kCheckpointMagic[8] = {'L', 'S', 'E', 'G', 'C', 'K', 'P', 'T'};

namespace ckpt {

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

inline void write_blob(const std::string& path, const std::vector<NamedTensor>& tensors) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint blob: " + path);
  out.write(kCheckpointMagic, 8);
  const uint32_t version = kCheckpointVersion;
  const uint32_t count = static_cast<uint32_t>(tensors.size());
  out.write(reinterpret_cast<const char*>(&version), 4);
  out.write(reinterpret_cast<const char*>(&count), 4);
  for (const auto& t : tensors) {
    const uint32_t nlen = static_cast<uint32_t>(t.name.size());
    out.write(reinterpret_cast<const char*>(&nlen), 4);
    out.write(t.name.data(), nlen);
    const uint8_t ndim = static_cast<uint8_t>(t.shape.size());
    out.write(reinterpret_cast<const char*>(&ndim), 1);
    for (int d : t.shape) {
      const int32_t dd = d;
      out.write(reinterpret_cast<const char*>(&dd), 4);
    }
    out.write(reinterpret_cast<const char*>(t.data.data()),
              static_cast<std::streamsize>(t.data.size() * 4));
  }
}

inline std::vector<NamedTensor> read_blob(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read checkpoint blob: " + path);
  char magic[8];
  in.read(magic, 8);
  if (std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw DataError(path + ": not a checkpoint blob");
  uint32_t version = 0, count = 0;
  in.read(reinterpret_cast<char*>(&version), 4);
  in.read(reinterpret_cast<char*>(&count), 4);
  if (version != kCheckpointVersion)
    throw DataError(path + ": unsupported checkpoint version " + std::to_string(version));
  std::vector<NamedTensor> out(count);
  for (auto& t : out) {
    uint32_t nlen = 0;
    in.read(reinterpret_cast<char*>(&nlen), 4);
    t.name.resize(nlen);
    in.read(t.name.data(), nlen);
    uint8_t ndim = 0;
    in.read(reinterpret_cast<char*>(&ndim), 1);
    t.shape.resize(ndim);
    int64_t n = 1;
    for (auto& d : t.shape) {
      int32_t dd = 0;
      in.read(reinterpret_cast<char*>(&dd), 4);
      d = dd;
      n *= dd;
    }
    t.data.resize(static_cast<size_t>(n));
    in.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(n * 4));
    if (!in) throw DataError(path + ": truncated checkpoint blob");
  }
  return out;
}

inline uint64_t file_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot hash " + path);
  uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof(buf));
    h = fnv1a64(buf, static_cast<size_t>(in.gcount()), h);
  }
  return h;
}

}  // namespace ckpt
}  // namespace lesionseg
