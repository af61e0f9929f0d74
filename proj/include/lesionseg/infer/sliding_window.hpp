#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "lesionseg/data/dataset.hpp"
#include "lesionseg/model/network.hpp"

namespace lesionseg {

// Continuous class probabilities in the source volume's geometry, tagged with
// split provenance for the tuning leakage guard.
struct ProbabilityVolume {
  std::string case_id;
  std::string split;
  Tensor<float> probs;  // [K, D, H, W], values in [0, 1]
  std::array<double, 3> spacing = {1, 1, 1};
};

namespace infer {

// Tile origins covering [0, extent) with the given window and stride; the
// final tile is clamped so coverage is complete.
inline std::vector<int> tile_positions(int extent, int window, int stride) {
  std::vector<int> pos;
  if (extent <= window) return {0};
  for (int p = 0; p + window < extent; p += stride) pos.push_back(p);
  pos.push_back(extent - window);
  return pos;
}

inline Tensor<float> gaussian_importance(int h, int w, double sigma_frac = 0.125) {
  Tensor<float> g({h, w});
  const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
  const double sy = std::max(1.0, h * sigma_frac), sx = std::max(1.0, w * sigma_frac);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      g.at(y, x) = static_cast<float>(
          std::exp(-0.5 * ((y - cy) * (y - cy) / (sy * sy) + (x - cx) * (x - cx) / (sx * sx))));
  return g;
}

// Blends per-tile class probabilities [nt,K,wh,ww] into a padded slice
// [K,Hp,Wp] using the Gaussian importance map; per-voxel weights are
// normalized to sum to 1.
inline Tensor<float> blend_tiles(const std::vector<std::pair<int, int>>& origins,
                                 const Tensor<float>& tile_probs, int Hp, int Wp,
                                 double sigma_frac = 0.125) {
  const int K = tile_probs.dim(1), wh = tile_probs.dim(2), ww = tile_probs.dim(3);
  const auto g = gaussian_importance(wh, ww, sigma_frac);
  Tensor<float> num({K, Hp, Wp}), den({Hp, Wp});
  for (size_t ti = 0; ti < origins.size(); ++ti) {
    const auto [oy, ox] = origins[ti];
    for (int k = 0; k < K; ++k)
      for (int y = 0; y < wh; ++y)
        for (int x = 0; x < ww; ++x) {
          const float wgt = g.at(y, x);
          num[(int64_t(k) * Hp + oy + y) * Wp + ox + x] +=
              wgt * tile_probs[((int64_t(ti) * K + k) * wh + y) * ww + x];
          if (k == 0) den[int64_t(oy + y) * Wp + ox + x] += wgt;
        }
  }
  for (int k = 0; k < K; ++k)
    for (int64_t i = 0; i < int64_t(Hp) * Wp; ++i) num[int64_t(k) * Hp * Wp + i] /= den[i];
  return num;
}

}  // namespace infer

struct SlidingWindowOptions {
  double overlap = 0.5;       // fraction of the window shared by neighbors
  double sigma_frac = 0.125;  // Gaussian sigma as a fraction of the window
};

// Gaussian-weighted sliding-window inference over axial slices. Windows are
// the network's input size; overlapping predictions are blended with the
// importance map and the per-voxel weights normalized to 1. The result is
// mapped back to the source geometry through the recorded pad transform.
inline ProbabilityVolume sliding_window_predict(MultiStreamNet<float>& net,
                                                const SubjectRecord& rec,
                                                const SlidingWindowOptions& opt = {}) {
  Volume vol = rec.volume;
  zscore_normalize(vol);
  const int M = vol.modalities(), D = vol.depth(), H = vol.height(), W = vol.width();
  if (M != static_cast<int>(net.modalities.size()))
    throw DataError("sliding_window: subject has " + std::to_string(M) + " modalities, model expects " +
                    std::to_string(net.modalities.size()));
  const int wh = net.cfg.input_h, ww = net.cfg.input_w;
  const int K = net.cfg.num_classes;

  // Pad (never crop) so every tile fits.
  const int Hp = std::max(H, wh), Wp = std::max(W, ww);
  const auto tf = CropPadTransform::plan(H, W, Hp, Wp);
  const int stride_h = std::max(1, static_cast<int>(wh * (1.0 - opt.overlap)));
  const int stride_w = std::max(1, static_cast<int>(ww * (1.0 - opt.overlap)));
  const auto ys = infer::tile_positions(Hp, wh, stride_h);
  const auto xs = infer::tile_positions(Wp, ww, stride_w);

  ProbabilityVolume pv;
  pv.case_id = rec.id;
  pv.split = rec.split;
  pv.spacing = vol.spacing;
  pv.probs = Tensor<float>({K, D, H, W});

  std::vector<std::pair<int, int>> origins;
  for (int oy : ys)
    for (int ox : xs) origins.emplace_back(oy, ox);

  for (int z = 0; z < D; ++z) {
    Tensor<float> slice({M, H, W});
    for (int m = 0; m < M; ++m)
      std::copy_n(vol.data.ptr() + (int64_t(m) * D + z) * H * W, int64_t(H) * W,
                  slice.ptr() + int64_t(m) * H * W);
    Tensor<float> padded = crop_or_pad_planes(slice, tf);
    padded.shape = {M, Hp, Wp};

    // Batch all tiles of this slice through one forward pass.
    const int nt = static_cast<int>(origins.size());
    Tensor<float> batch({nt, M, wh, ww});
    for (int ti = 0; ti < nt; ++ti) {
      const auto [oy, ox] = origins[static_cast<size_t>(ti)];
      for (int m = 0; m < M; ++m)
        for (int y = 0; y < wh; ++y)
          std::copy_n(padded.ptr() + (int64_t(m) * Hp + oy + y) * Wp + ox, ww,
                      batch.ptr() + ((int64_t(ti) * M + m) * wh + y) * ww);
    }
    Tensor<float> probs = predict_probabilities(net, batch);  // [nt,K,wh,ww]
    Tensor<float> blended = infer::blend_tiles(origins, probs, Hp, Wp, opt.sigma_frac);
    Tensor<float> back = invert_crop_or_pad_planes(blended, tf);
    for (int k = 0; k < K; ++k)
      std::copy_n(back.ptr() + int64_t(k) * H * W, int64_t(H) * W,
                  pv.probs.ptr() + (int64_t(k) * D + z) * H * W);
  }
  return pv;
}

}  // namespace lesionseg
