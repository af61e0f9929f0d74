#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "lesionseg/common.hpp"
#include "lesionseg/tensor.hpp"

namespace lesionseg {

// Exact Euclidean distance transforms with anisotropic spacing, via the
// separable lower-envelope method with site tracking. Final distances are
// recomputed from the winning site with the plain sum-of-squares formula, so
// results agree bit-for-bit with a brute-force nearest-site scan.

namespace edt {

constexpr double kInf = std::numeric_limits<double>::infinity();

// One lower-envelope pass along a line of m samples with grid step `s`.
// f[i] is the parabola height at position i*s (kInf where no site exists);
// writes the minimized value into d[i] and the winning sample index into src[i].
inline void envelope_pass(int m, double s, const double* f, double* d, int* src) {
  std::vector<int> v(static_cast<size_t>(m));
  std::vector<double> z(static_cast<size_t>(m) + 1);
  int k = -1;
  for (int q = 0; q < m; ++q) {
    if (f[q] == kInf) continue;
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -kInf;
      z[1] = kInf;
      continue;
    }
    const double pq = q * s;
    double inter;
    for (;;) {
      const double pv = v[k] * s;
      inter = ((f[q] + pq * pq) - (f[v[k]] + pv * pv)) / (2 * pq - 2 * pv);
      if (inter <= z[k])
        --k;  // z[0] = -inf guarantees k stays >= 0
      else
        break;
    }
    ++k;
    v[k] = q;
    z[k] = inter;
    z[k + 1] = kInf;
  }
  if (k < 0) {
    for (int q = 0; q < m; ++q) {
      d[q] = kInf;
      src[q] = -1;
    }
    return;
  }
  int j = 0;
  for (int q = 0; q < m; ++q) {
    const double x = q * s;
    while (z[j + 1] < x) ++j;
    const double dp = x - v[j] * s;
    d[q] = dp * dp + f[v[j]];
    src[q] = v[j];
  }
}

struct Site3 {
  int32_t z = -1, y = -1, x = -1;
};

// Nearest-site (feature) transform of a 3-D binary set. sites = voxels where
// `site(idx)` is true. Returns per-voxel nearest site coordinates (-1 if none).
template <typename Pred>
std::vector<Site3> feature_transform_3d(int D, int H, int W, std::array<double, 3> spacing,
                                        Pred site) {
  const double dz = spacing[0], dy = spacing[1], dx = spacing[2];
  const int64_t n = int64_t(D) * H * W;
  std::vector<double> dist(static_cast<size_t>(n));
  std::vector<Site3> near(static_cast<size_t>(n));

  // Pass 1: along z for every (y,x) column.
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      int last = -1;
      for (int z = 0; z < D; ++z) {
        const int64_t i = (int64_t(z) * H + y) * W + x;
        if (site(i)) last = z;
        near[i].z = last;
      }
      int nxt = -1;
      for (int z = D - 1; z >= 0; --z) {
        const int64_t i = (int64_t(z) * H + y) * W + x;
        if (site(i)) nxt = z;
        if (near[i].z < 0) {
          near[i].z = nxt;
        } else if (nxt >= 0) {
          const double dn = (z - near[i].z) * dz, du = (nxt - z) * dz;
          if (du * du < dn * dn) near[i].z = nxt;
        }
        dist[static_cast<size_t>(i)] =
            near[i].z < 0 ? kInf : ((z - near[i].z) * dz) * ((z - near[i].z) * dz);
      }
    }

  // Pass 2: along y for every (z,x).
  {
    std::vector<double> f(static_cast<size_t>(H)), dd(static_cast<size_t>(H));
    std::vector<int> src(static_cast<size_t>(H));
    std::vector<int32_t> zcol(static_cast<size_t>(H));
    for (int z = 0; z < D; ++z)
      for (int x = 0; x < W; ++x) {
        for (int y = 0; y < H; ++y) {
          const int64_t i = (int64_t(z) * H + y) * W + x;
          f[static_cast<size_t>(y)] = dist[static_cast<size_t>(i)];
          zcol[static_cast<size_t>(y)] = near[i].z;
        }
        envelope_pass(H, dy, f.data(), dd.data(), src.data());
        for (int y = 0; y < H; ++y) {
          const int64_t i = (int64_t(z) * H + y) * W + x;
          dist[static_cast<size_t>(i)] = dd[static_cast<size_t>(y)];
          if (src[static_cast<size_t>(y)] >= 0) {
            near[i].y = src[static_cast<size_t>(y)];
            near[i].z = zcol[static_cast<size_t>(src[static_cast<size_t>(y)])];
          } else {
            near[i].y = -1;
          }
        }
      }
  }

  // Pass 3: along x for every (z,y).
  {
    std::vector<double> f(static_cast<size_t>(W)), dd(static_cast<size_t>(W));
    std::vector<int> src(static_cast<size_t>(W));
    std::vector<Site3> row(static_cast<size_t>(W));
    for (int z = 0; z < D; ++z)
      for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
          const int64_t i = (int64_t(z) * H + y) * W + x;
          f[static_cast<size_t>(x)] = dist[static_cast<size_t>(i)];
          row[static_cast<size_t>(x)] = near[i];
        }
        envelope_pass(W, dx, f.data(), dd.data(), src.data());
        for (int x = 0; x < W; ++x) {
          const int64_t i = (int64_t(z) * H + y) * W + x;
          if (src[static_cast<size_t>(x)] >= 0) {
            near[i] = row[static_cast<size_t>(src[static_cast<size_t>(x)])];
            near[i].x = src[static_cast<size_t>(x)];
          } else {
            near[i] = Site3{};
          }
        }
      }
  }
  return near;
}

// Euclidean distance from every voxel to the nearest site voxel; `sentinel`
// fills the output when the site set is empty.
template <typename Pred>
Tensor<float> distance_to_set_3d(int D, int H, int W, std::array<double, 3> spacing, Pred site,
                                 double sentinel, bool* empty = nullptr) {
  auto near = feature_transform_3d(D, H, W, spacing, site);
  Tensor<float> out({D, H, W});
  bool any = false;
  for (int64_t i = 0; i < out.numel(); ++i)
    if (near[static_cast<size_t>(i)].z >= 0) {
      any = true;
      break;
    }
  if (empty) *empty = !any;
  if (!any) {
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = static_cast<float>(sentinel);
    return out;
  }
  const double dz = spacing[0], dy = spacing[1], dx = spacing[2];
  int64_t i = 0;
  for (int z = 0; z < D; ++z)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x, ++i) {
        const Site3& s = near[static_cast<size_t>(i)];
        const double az = (z - s.z) * dz, ay = (y - s.y) * dy, ax = (x - s.x) * dx;
        out[i] = static_cast<float>(std::sqrt(az * az + ay * ay + ax * ax));
      }
  return out;
}

}  // namespace edt

enum class DistanceMode { UnsignedOutside, Signed };

// Per-voxel distance map for the boundary loss (Euclidean, anisotropic).
// UnsignedOutside: 0 on target foreground, distance to the target elsewhere.
// Signed: positive outside (distance to foreground), negative inside
// (distance to background).
struct DistanceMap {
  Tensor<float> values;  // same spatial shape as the mask slice/volume
  DistanceMode mode = DistanceMode::UnsignedOutside;
  bool empty_target = false;
};

// 2-D per-slice distance map; `target` is a [H,W] binary slice.
template <typename M>
DistanceMap distance_map_2d(const M& target, int H, int W, double dy, double dx,
                            DistanceMode mode = DistanceMode::UnsignedOutside,
                            double sentinel_cap = 0.0) {
  if (sentinel_cap <= 0.0) {
    const double a = H * dy, b = W * dx;
    sentinel_cap = std::sqrt(a * a + b * b);
  }
  DistanceMap dm;
  dm.mode = mode;
  bool empty_fg = false;
  Tensor<float> d_fg = edt::distance_to_set_3d(
      1, H, W, {1.0, dy, dx}, [&](int64_t i) { return target[i] != 0; }, sentinel_cap, &empty_fg);
  dm.empty_target = empty_fg;
  if (mode == DistanceMode::UnsignedOutside) {
    dm.values = std::move(d_fg);
    if (!empty_fg)
      for (int64_t i = 0; i < dm.values.numel(); ++i)
        if (target[i] != 0) dm.values[i] = 0.0f;
    dm.values.shape = {H, W};
    return dm;
  }
  bool empty_bg = false;
  Tensor<float> d_bg = edt::distance_to_set_3d(
      1, H, W, {1.0, dy, dx}, [&](int64_t i) { return target[i] == 0; }, sentinel_cap, &empty_bg);
  dm.values = Tensor<float>({H, W});
  for (int64_t i = 0; i < dm.values.numel(); ++i)
    dm.values[i] = target[i] != 0 ? -d_bg[i] : d_fg[i];
  return dm;
}

}  // namespace lesionseg
