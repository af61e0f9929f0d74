#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "lesionseg/common.hpp"
#include "lesionseg/volume.hpp"

namespace lesionseg {

// Z-score normalization per modality with statistics restricted to the
// [P2, P98] band of brain-tissue intensities (linear-interpolation
// percentiles). Modalities with degenerate spread are zeroed and reported.
//
// The brain mask defaults to nonzero voxels (inputs arrive skull-stripped).
inline std::vector<std::string> zscore_normalize(Volume& vol,
                                                 const Tensor<uint8_t>* brain_mask = nullptr) {
  std::vector<std::string> warnings;
  const int M = vol.modalities();
  const int64_t n = vol.data.numel() / M;
  for (int m = 0; m < M; ++m) {
    float* p = vol.data.ptr() + int64_t(m) * n;
    std::vector<float> masked;
    masked.reserve(static_cast<size_t>(n) / 4);
    for (int64_t i = 0; i < n; ++i) {
      const bool in = brain_mask ? (*brain_mask)[i] != 0 : p[i] != 0.0f;
      if (in) masked.push_back(p[i]);
    }
    if (masked.empty()) {
      warnings.push_back("modality " + vol.modality_names[static_cast<size_t>(m)] +
                         ": empty brain mask, left unchanged");
      continue;
    }
    std::sort(masked.begin(), masked.end());
    const double p2 = percentile_sorted(masked, 2.0);
    const double p98 = percentile_sorted(masked, 98.0);
    double sum = 0, count = 0;
    for (float v : masked)
      if (v >= p2 && v <= p98) {
        sum += v;
        ++count;
      }
    const double mean = sum / count;
    double ss = 0;
    for (float v : masked)
      if (v >= p2 && v <= p98) ss += (v - mean) * (v - mean);
    const double std = std::sqrt(ss / count);
    if (std < 1e-6) {
      warnings.push_back("modality " + vol.modality_names[static_cast<size_t>(m)] +
                         ": near-constant intensities, output zeroed");
      std::fill_n(p, n, 0.0f);
      continue;
    }
    for (int64_t i = 0; i < n; ++i) p[i] = static_cast<float>((p[i] - mean) / std);
  }
  return warnings;
}

// Recorded crop/pad so predictions can be mapped back to input geometry.
// Cropping is centered (extra voxel removed from the trailing side); padding
// is symmetric with the extra voxel added on the trailing side.
struct CropPadTransform {
  int src_h = 0, src_w = 0;
  int out_h = 0, out_w = 0;
  int crop_top = 0, crop_left = 0;
  int pad_top = 0, pad_left = 0;

  static CropPadTransform plan(int src_h, int src_w, int out_h, int out_w) {
    CropPadTransform tf;
    tf.src_h = src_h;
    tf.src_w = src_w;
    tf.out_h = out_h;
    tf.out_w = out_w;
    if (src_h > out_h) tf.crop_top = (src_h - out_h) / 2;
    if (src_w > out_w) tf.crop_left = (src_w - out_w) / 2;
    if (src_h < out_h) tf.pad_top = (out_h - src_h) / 2;
    if (src_w < out_w) tf.pad_left = (out_w - src_w) / 2;
    return tf;
  }

  // Maps an output (row, col) back to a source pixel; false when it lies in
  // the padding.
  bool to_source(int y, int x, int* sy, int* sx) const {
    const int yy = y - pad_top + crop_top;
    const int xx = x - pad_left + crop_left;
    if (y < pad_top || x < pad_left) return false;
    if (yy >= src_h + crop_top || xx >= src_w + crop_left) return false;
    if (yy < 0 || xx < 0 || yy >= src_h || xx >= src_w) return false;
    *sy = yy;
    *sx = xx;
    return true;
  }
};

// Applies the transform to the trailing two dims of [planes, H, W] data.
template <typename T>
Tensor<T> crop_or_pad_planes(const Tensor<T>& in, const CropPadTransform& tf) {
  const int planes = static_cast<int>(in.numel() / (int64_t(tf.src_h) * tf.src_w));
  Tensor<T> out(Shape{planes, tf.out_h, tf.out_w});
  for (int p = 0; p < planes; ++p)
    for (int y = 0; y < tf.out_h; ++y)
      for (int x = 0; x < tf.out_w; ++x) {
        int sy, sx;
        if (tf.to_source(y, x, &sy, &sx))
          out[(int64_t(p) * tf.out_h + y) * tf.out_w + x] =
              in[(int64_t(p) * tf.src_h + sy) * tf.src_w + sx];
      }
  return out;
}

// Inverse mapping: scatter output-geometry data back onto source geometry
// (cropped-away margins become zero).
template <typename T>
Tensor<T> invert_crop_or_pad_planes(const Tensor<T>& in, const CropPadTransform& tf) {
  const int planes = static_cast<int>(in.numel() / (int64_t(tf.out_h) * tf.out_w));
  Tensor<T> out(Shape{planes, tf.src_h, tf.src_w});
  for (int p = 0; p < planes; ++p)
    for (int y = 0; y < tf.out_h; ++y)
      for (int x = 0; x < tf.out_w; ++x) {
        int sy, sx;
        if (tf.to_source(y, x, &sy, &sx))
          out[(int64_t(p) * tf.src_h + sy) * tf.src_w + sx] =
              in[(int64_t(p) * tf.out_h + y) * tf.out_w + x];
      }
  return out;
}

}  // namespace lesionseg
