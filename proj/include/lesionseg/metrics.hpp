#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "lesionseg/common.hpp"
#include "lesionseg/components.hpp"
#include "lesionseg/distance.hpp"
#include "lesionseg/tensor.hpp"

namespace lesionseg {
namespace metrics {

// All voxel-level metrics operate on [D,H,W] binary masks.

inline double dsc(const Tensor<uint8_t>& pred, const Tensor<uint8_t>& gt) {
  if (!pred.same_shape(gt)) throw NumericError("dsc: shape mismatch");
  int64_t tp = 0, fp = 0, fn = 0;
  for (int64_t i = 0; i < pred.numel(); ++i) {
    if (pred[i] && gt[i])
      ++tp;
    else if (pred[i])
      ++fp;
    else if (gt[i])
      ++fn;
  }
  if (tp + fp + fn == 0) return 1.0;  // both empty: documented convention
  return 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
}

inline double hd95_sentinel(const Shape& shape, const std::array<double, 3>& spacing) {
  const double a = shape[0] * spacing[0], b = shape[1] * spacing[1], c = shape[2] * spacing[2];
  return std::sqrt(a * a + b * b + c * c);
}

// Boundary voxels: foreground with at least one background 6-neighbor
// (out-of-bounds counts as background).
inline std::vector<uint8_t> boundary_voxels(const Tensor<uint8_t>& m) {
  const int D = m.dim(0), H = m.dim(1), W = m.dim(2);
  std::vector<uint8_t> b(static_cast<size_t>(m.numel()), 0);
  int64_t i = 0;
  for (int z = 0; z < D; ++z)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x, ++i) {
        if (!m[i]) continue;
        const bool edge = z == 0 || z == D - 1 || y == 0 || y == H - 1 || x == 0 || x == W - 1;
        if (edge || !m[i - static_cast<int64_t>(H) * W] || !m[i + static_cast<int64_t>(H) * W] ||
            !m[i - W] || !m[i + W] || !m[i - 1] || !m[i + 1]) {
          b[static_cast<size_t>(i)] = 1;
        }
      }
  return b;
}

// 95th-percentile symmetric surface distance in millimetres; returns the
// volume-diagonal sentinel (flagged) when either mask is empty.
inline double hd95(const Tensor<uint8_t>& pred, const Tensor<uint8_t>& gt,
                   const std::array<double, 3>& spacing, bool* sentinel_flag = nullptr) {
  if (!pred.same_shape(gt)) throw NumericError("hd95: shape mismatch");
  const int D = pred.dim(0), H = pred.dim(1), W = pred.dim(2);
  auto bp = boundary_voxels(pred);
  auto bg = boundary_voxels(gt);
  const bool pe = std::find(bp.begin(), bp.end(), 1) == bp.end();
  const bool ge = std::find(bg.begin(), bg.end(), 1) == bg.end();
  if (pe || ge) {
    if (sentinel_flag) *sentinel_flag = true;
    return hd95_sentinel(pred.shape, spacing);
  }
  if (sentinel_flag) *sentinel_flag = false;

  auto directed = [&](const std::vector<uint8_t>& from, const std::vector<uint8_t>& to) {
    auto near = edt::feature_transform_3d(D, H, W, spacing,
                                          [&](int64_t i) { return to[static_cast<size_t>(i)] != 0; });
    std::vector<double> samples;
    int64_t i = 0;
    for (int z = 0; z < D; ++z)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x, ++i) {
          if (!from[static_cast<size_t>(i)]) continue;
          const auto& s = near[static_cast<size_t>(i)];
          const double az = (z - s.z) * spacing[0], ay = (y - s.y) * spacing[1],
                       ax = (x - s.x) * spacing[2];
          samples.push_back(std::sqrt(az * az + ay * ay + ax * ax));
        }
    return percentile(std::move(samples), 95.0);
  };
  return std::max(directed(bp, bg), directed(bg, bp));
}

// Absolute volume difference in percent of ground-truth volume.
inline double avd_percent(const Tensor<uint8_t>& pred, const Tensor<uint8_t>& gt,
                          bool* sentinel_flag = nullptr) {
  if (!pred.same_shape(gt)) throw NumericError("avd: shape mismatch");
  int64_t vp = 0, vg = 0;
  for (int64_t i = 0; i < pred.numel(); ++i) {
    vp += pred[i] ? 1 : 0;
    vg += gt[i] ? 1 : 0;
  }
  if (vg == 0) {
    if (sentinel_flag) *sentinel_flag = true;
    return std::numeric_limits<double>::quiet_NaN();
  }
  if (sentinel_flag) *sentinel_flag = false;
  return std::abs(static_cast<double>(vg - vp)) / static_cast<double>(vg) * 100.0;
}

struct LesionCounts {
  int tp = 0, fp = 0, fn = 0;
};

// Lesion-level matching under 26-connectivity: a GT lesion is detected if any
// predicted voxel overlaps it; a predicted component with no GT overlap is a
// false positive lesion.
inline LesionCounts lesion_match(const Tensor<uint8_t>& pred, const Tensor<uint8_t>& gt) {
  if (!pred.same_shape(gt)) throw NumericError("lesion_match: shape mismatch");
  auto gl = label_components(gt);
  auto pl = label_components(pred);
  std::vector<uint8_t> gt_hit(static_cast<size_t>(gl.count), 0);
  std::vector<uint8_t> pred_hit(static_cast<size_t>(pl.count), 0);
  for (int64_t i = 0; i < pred.numel(); ++i) {
    if (gl.label[static_cast<size_t>(i)] && pred[i]) gt_hit[static_cast<size_t>(gl.label[static_cast<size_t>(i)] - 1)] = 1;
    if (pl.label[static_cast<size_t>(i)] && gt[i]) pred_hit[static_cast<size_t>(pl.label[static_cast<size_t>(i)] - 1)] = 1;
  }
  LesionCounts c;
  for (uint8_t h : gt_hit) h ? ++c.tp : ++c.fn;
  for (uint8_t h : pred_hit)
    if (!h) ++c.fp;
  return c;
}

// Zero denominators: 1.0 when all counts are zero, else 0.0.
inline double lesion_recall(const LesionCounts& c) {
  if (c.tp + c.fn == 0) return (c.tp == 0 && c.fp == 0 && c.fn == 0) ? 1.0 : 0.0;
  return static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
}

inline double lesion_f1(const LesionCounts& c) {
  if (2 * c.tp + c.fp + c.fn == 0) return 1.0;
  return 2.0 * static_cast<double>(c.tp) / static_cast<double>(2 * c.tp + c.fp + c.fn);
}

struct TTestResult {
  double t = 0.0;
  double p = 1.0;
  bool degenerate = false;  // zero-variance differences
};

// Paired two-tailed t-test on per-case differences.
inline TTestResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw NumericError("paired_t_test: unequal sample sizes");
  const size_t n = a.size();
  if (n < 2) throw NumericError("paired_t_test: need at least 2 pairs");
  double mean = 0;
  for (size_t i = 0; i < n; ++i) mean += a[i] - b[i];
  mean /= static_cast<double>(n);
  double ss = 0;
  for (size_t i = 0; i < n; ++i) {
    const double d = a[i] - b[i] - mean;
    ss += d * d;
  }
  const double var = ss / static_cast<double>(n - 1);
  TTestResult r;
  if (var <= 0.0) {
    r.degenerate = true;
    r.t = 0.0;
    r.p = 1.0;
    return r;
  }
  r.t = mean / std::sqrt(var / static_cast<double>(n));
  boost::math::students_t_distribution<double> dist(static_cast<double>(n - 1));
  r.p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t)));
  return r;
}

}  // namespace metrics
}  // namespace lesionseg
