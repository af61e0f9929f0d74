#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "lesionseg/config.hpp"
#include "lesionseg/rng.hpp"
#include "lesionseg/tensor.hpp"

namespace lesionseg {

// One training sample: image [M,H,W] float, target [K,H,W] binary.
struct Sample {
  Tensor<float> image;
  Tensor<uint8_t> mask;
};

namespace aug {

inline void flip_w(Tensor<float>& img, Tensor<uint8_t>& mask) {
  auto flip = [](auto& t) {
    const int W = t.dim(t.rank() - 1);
    const int64_t rows = t.numel() / W;
    for (int64_t r = 0; r < rows; ++r)
      std::reverse(t.ptr() + r * W, t.ptr() + (r + 1) * W);
  };
  flip(img);
  flip(mask);
}

inline void flip_h(Tensor<float>& img, Tensor<uint8_t>& mask) {
  auto flip = [](auto& t) {
    const int H = t.dim(t.rank() - 2), W = t.dim(t.rank() - 1);
    const int64_t planes = t.numel() / (int64_t(H) * W);
    for (int64_t p = 0; p < planes; ++p)
      for (int y = 0; y < H / 2; ++y)
        std::swap_ranges(t.ptr() + (p * H + y) * W, t.ptr() + (p * H + y + 1) * W,
                         t.ptr() + (p * H + H - 1 - y) * W);
  };
  flip(img);
  flip(mask);
}

// Resamples through a dense backward map: src = f(dst). Bilinear for images,
// nearest for masks (keeps targets binary and nested).
template <typename MapFn>
inline void warp(Tensor<float>& img, Tensor<uint8_t>& mask, MapFn src_of) {
  const int H = img.dim(1), W = img.dim(2);
  const int M = img.dim(0), K = mask.dim(0);
  Tensor<float> out_img(img.shape);
  Tensor<uint8_t> out_mask(mask.shape);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double sy, sx;
      src_of(y, x, &sy, &sx);
      // Bilinear sample per modality; out-of-bounds reads as 0.
      const int y0 = static_cast<int>(std::floor(sy)), x0 = static_cast<int>(std::floor(sx));
      const double fy = sy - y0, fx = sx - x0;
      auto pix = [&](int m, int yy, int xx) -> float {
        if (yy < 0 || yy >= H || xx < 0 || xx >= W) return 0.0f;
        return img[(int64_t(m) * H + yy) * W + xx];
      };
      for (int m = 0; m < M; ++m) {
        const double v = (1 - fy) * ((1 - fx) * pix(m, y0, x0) + fx * pix(m, y0, x0 + 1)) +
                         fy * ((1 - fx) * pix(m, y0 + 1, x0) + fx * pix(m, y0 + 1, x0 + 1));
        out_img[(int64_t(m) * H + y) * W + x] = static_cast<float>(v);
      }
      const int ny = static_cast<int>(std::lround(sy)), nx = static_cast<int>(std::lround(sx));
      for (int k = 0; k < K; ++k) {
        const uint8_t v = (ny < 0 || ny >= H || nx < 0 || nx >= W)
                              ? 0
                              : mask[(int64_t(k) * H + ny) * W + nx];
        out_mask[(int64_t(k) * H + y) * W + x] = v;
      }
    }
  img = std::move(out_img);
  mask = std::move(out_mask);
}

}  // namespace aug

// On-the-fly augmentation with an explicit RNG stream. Geometric transforms
// hit image and mask identically; photometric jitter and channel dropout act
// on the image only. All draws happen unconditionally so the stream position
// does not depend on which transforms trigger.
inline void augment(Sample& s, const AugmentationConfig& cfg, Rng& rng) {
  const int H = s.image.dim(1), W = s.image.dim(2);
  const int M = s.image.dim(0);

  const bool do_flip_w = rng.bernoulli(cfg.flip_prob);
  const bool do_flip_h = rng.bernoulli(cfg.flip_prob);
  const bool do_affine = rng.bernoulli(cfg.affine_prob);
  const double rot = rng.uniform(-cfg.rotation_deg, cfg.rotation_deg) * M_PI / 180.0;
  const double sc = 1.0 + rng.uniform(-cfg.scale_frac, cfg.scale_frac);
  const bool do_elastic = rng.bernoulli(cfg.elastic_prob);
  const bool do_photo = rng.bernoulli(cfg.photometric_prob);
  const double gamma = rng.uniform(0.8, 1.2);
  const double brightness = rng.uniform(-0.1, 0.1);
  const double contrast = rng.uniform(-0.1, 0.1);
  const bool do_dropout = rng.bernoulli(cfg.channel_dropout_prob);
  const int dropout_ch = static_cast<int>(rng.uniform_index(static_cast<uint64_t>(std::max(M, 1))));

  if (do_flip_w) aug::flip_w(s.image, s.mask);
  if (do_flip_h) aug::flip_h(s.image, s.mask);

  if (do_affine) {
    const double cy = (H - 1) / 2.0, cx = (W - 1) / 2.0;
    const double cosr = std::cos(rot), sinr = std::sin(rot);
    aug::warp(s.image, s.mask, [&](int y, int x, double* sy, double* sx) {
      const double dy = (y - cy) / sc, dx = (x - cx) / sc;
      *sy = cy + cosr * dy - sinr * dx;
      *sx = cx + sinr * dy + cosr * dx;
    });
  }

  if (do_elastic) {
    // Grid-based displacement: control spacing 32 px, sigma 4 px.
    const int spacing = 32;
    const double sigma = 4.0;
    const int gh = H / spacing + 2, gw = W / spacing + 2;
    std::vector<double> dy(static_cast<size_t>(gh) * gw), dx(static_cast<size_t>(gh) * gw);
    for (auto& v : dy) v = rng.normal(0.0, sigma);
    for (auto& v : dx) v = rng.normal(0.0, sigma);
    auto field = [&](const std::vector<double>& d, double y, double x) {
      const double gy = y / spacing, gx = x / spacing;
      const int y0 = std::min(static_cast<int>(gy), gh - 2), x0 = std::min(static_cast<int>(gx), gw - 2);
      const double fy = gy - y0, fx = gx - x0;
      return (1 - fy) * ((1 - fx) * d[static_cast<size_t>(y0) * gw + x0] + fx * d[static_cast<size_t>(y0) * gw + x0 + 1]) +
             fy * ((1 - fx) * d[static_cast<size_t>(y0 + 1) * gw + x0] + fx * d[static_cast<size_t>(y0 + 1) * gw + x0 + 1]);
    };
    aug::warp(s.image, s.mask, [&](int y, int x, double* sy, double* sx) {
      *sy = y + field(dy, y, x);
      *sx = x + field(dx, y, x);
    });
  } else {
    // Keep the stream aligned whether or not elastic triggers.
    const int spacing = 32;
    const int gh = H / spacing + 2, gw = W / spacing + 2;
    for (int i = 0; i < 2 * gh * gw; ++i) rng.normal(0.0, 4.0);
  }

  if (do_photo) {
    for (int m = 0; m < M; ++m) {
      float* p = s.image.ptr() + int64_t(m) * H * W;
      float lo = p[0], hi = p[0];
      double mean = 0;
      for (int64_t i = 0; i < int64_t(H) * W; ++i) {
        lo = std::min(lo, p[i]);
        hi = std::max(hi, p[i]);
        mean += p[i];
      }
      mean /= double(H) * W;
      const double range = double(hi) - lo;
      for (int64_t i = 0; i < int64_t(H) * W; ++i) {
        double v = p[i];
        if (range > 1e-12) {  // gamma on the min-max normalized value
          v = std::pow((v - lo) / range, gamma) * range + lo;
        }
        v = mean + (1.0 + contrast) * (v - mean) + brightness;
        p[i] = static_cast<float>(v);
      }
    }
  }

  if (do_dropout && M >= 2) {
    float* p = s.image.ptr() + int64_t(dropout_ch) * H * W;
    std::fill_n(p, int64_t(H) * W, 0.0f);
  }
}

}  // namespace lesionseg
