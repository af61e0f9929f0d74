#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lesionseg/common.hpp"
#include "lesionseg/tensor.hpp"

namespace lesionseg {

// Multi-modal image volume: data is [M, D, H, W] float32, spacing in mm as
// (dz, dy, dx). The universal currency of the pipeline.
struct Volume {
  Tensor<float> data;
  std::array<double, 3> spacing = {1.0, 1.0, 1.0};
  std::vector<std::string> modality_names;
  std::string subject_id;

  int modalities() const { return data.dim(0); }
  int depth() const { return data.dim(1); }
  int height() const { return data.dim(2); }
  int width() const { return data.dim(3); }

  std::vector<std::string> check_invariants() const {
    std::vector<std::string> v;
    if (data.rank() != 4) v.push_back("volume must be 4-D [M,D,H,W]");
    if (data.rank() == 4 && data.dim(0) != static_cast<int>(modality_names.size()))
      v.push_back("modality count does not match data");
    for (double s : spacing)
      if (!(s > 0)) v.push_back("spacing components must be positive");
    for (float x : data.data)
      if (!std::isfinite(x)) {
        v.push_back("volume contains NaN/Inf");
        break;
      }
    return v;
  }
};

// Binary segmentation target: [K, D, H, W] in {0,1}. For tumor masks the
// channel order is [WT, TC, ET] and the nesting ET <= TC <= WT holds voxelwise.
struct Mask {
  Tensor<uint8_t> data;
  std::vector<std::string> class_names;

  int classes() const { return data.dim(0); }
  int depth() const { return data.dim(1); }
  int height() const { return data.dim(2); }
  int width() const { return data.dim(3); }

  std::vector<std::string> check_invariants() const {
    std::vector<std::string> v;
    if (data.rank() != 4) v.push_back("mask must be 4-D [K,D,H,W]");
    if (data.rank() == 4 && data.dim(0) != static_cast<int>(class_names.size()))
      v.push_back("class count does not match data");
    for (uint8_t x : data.data)
      if (x > 1) {
        v.push_back("mask values must be 0/1");
        break;
      }
    if (class_names.size() == 3 && class_names[0] == "WT") {
      const int64_t n = data.numel() / 3;
      for (int64_t i = 0; i < n; ++i) {
        const uint8_t wt = data[i], tc = data[n + i], et = data[2 * n + i];
        if (et > tc || tc > wt) {
          v.push_back("tumor nesting ET<=TC<=WT violated");
          break;
        }
      }
    }
    return v;
  }
};

// ---------------------------------------------------------------------------
// Raw array + JSON sidecar persistence (phantom sets and intermediates).

namespace rawio {

template <typename T>
void write_bytes(const std::string& path, const std::vector<T>& v) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(T)));
}

template <typename T>
std::vector<T> read_bytes(const std::string& path, size_t count) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw DataError("cannot read " + path);
  const auto bytes = static_cast<size_t>(in.tellg());
  if (bytes != count * sizeof(T))
    throw DataError(path + ": expected " + std::to_string(count * sizeof(T)) + " bytes, found " +
                    std::to_string(bytes));
  std::vector<T> v(count);
  in.seekg(0);
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(bytes));
  return v;
}

}  // namespace rawio

inline void save_volume_raw(const Volume& vol, const std::string& base) {
  rawio::write_bytes(base + ".bin", vol.data.data);
  nlohmann::json j{{"shape", vol.data.shape},
                   {"dtype", "float32"},
                   {"spacing", vol.spacing},
                   {"modalities", vol.modality_names},
                   {"subject_id", vol.subject_id}};
  std::ofstream out(base + ".json");
  out << j.dump(2) << "\n";
}

inline Volume load_volume_raw(const std::string& base) {
  std::ifstream hin(base + ".json");
  if (!hin) throw DataError("cannot read sidecar " + base + ".json");
  nlohmann::json j;
  hin >> j;
  Volume v;
  Shape shape = j.at("shape").get<Shape>();
  if (j.at("dtype").get<std::string>() != "float32") throw DataError(base + ": dtype must be float32");
  v.data = Tensor<float>(shape, rawio::read_bytes<float>(base + ".bin", static_cast<size_t>(shape_numel(shape))));
  auto sp = j.at("spacing").get<std::vector<double>>();
  if (sp.size() != 3) throw DataError(base + ": spacing must have 3 components");
  v.spacing = {sp[0], sp[1], sp[2]};
  v.modality_names = j.at("modalities").get<std::vector<std::string>>();
  v.subject_id = j.value("subject_id", "");
  return v;
}

inline void save_mask_raw(const Mask& m, const std::string& base) {
  rawio::write_bytes(base + ".bin", m.data.data);
  nlohmann::json j{{"shape", m.data.shape}, {"dtype", "uint8"}, {"classes", m.class_names}};
  std::ofstream out(base + ".json");
  out << j.dump(2) << "\n";
}

inline Mask load_mask_raw(const std::string& base) {
  std::ifstream hin(base + ".json");
  if (!hin) throw DataError("cannot read sidecar " + base + ".json");
  nlohmann::json j;
  hin >> j;
  Mask m;
  Shape shape = j.at("shape").get<Shape>();
  if (j.at("dtype").get<std::string>() != "uint8") throw DataError(base + ": dtype must be uint8");
  m.data = Tensor<uint8_t>(shape, rawio::read_bytes<uint8_t>(base + ".bin", static_cast<size_t>(shape_numel(shape))));
  m.class_names = j.at("classes").get<std::vector<std::string>>();
  return m;
}

}  // namespace lesionseg
