#pragma once

#include <cstdint>
#include <numeric>
#include <vector>

#include "lesionseg/tensor.hpp"

namespace lesionseg {

// 3-D connected-component labeling by union-find over a raster scan.
// Connectivity is 26 (default) or 6. Labels are 1-based; 0 is background.
struct ComponentLabels {
  std::vector<int32_t> label;       // per voxel
  std::vector<int64_t> sizes;       // per component, index = label-1
  int count = 0;
};

namespace detail {

struct UnionFind {
  std::vector<int32_t> parent;
  int32_t add() {
    parent.push_back(static_cast<int32_t>(parent.size()));
    return parent.back();
  }
  int32_t find(int32_t a) {
    while (parent[static_cast<size_t>(a)] != a) {
      parent[static_cast<size_t>(a)] = parent[static_cast<size_t>(parent[static_cast<size_t>(a)])];
      a = parent[static_cast<size_t>(a)];
    }
    return a;
  }
  void unite(int32_t a, int32_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[static_cast<size_t>(std::max(a, b))] = std::min(a, b);
  }
};

}  // namespace detail

template <typename Pred>
ComponentLabels label_components(int D, int H, int W, Pred fg, bool conn26 = true) {
  ComponentLabels out;
  out.label.assign(static_cast<size_t>(D) * H * W, 0);
  detail::UnionFind uf;
  uf.add();  // background sentinel at index 0

  auto at = [&](int z, int y, int x) -> int32_t& {
    return out.label[(static_cast<size_t>(z) * H + y) * W + x];
  };
  // Neighbor offsets strictly preceding the current voxel in scan order.
  std::vector<std::array<int, 3>> offs;
  for (int dz = -1; dz <= 0; ++dz)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        if (dz == 0 && (dy > 0 || (dy == 0 && dx >= 0))) continue;
        const int manhattan = std::abs(dz) + std::abs(dy) + std::abs(dx);
        if (!conn26 && manhattan != 1) continue;
        offs.push_back({dz, dy, dx});
      }

  int64_t i = 0;
  for (int z = 0; z < D; ++z)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x, ++i) {
        if (!fg(i)) continue;
        int32_t lbl = 0;
        for (const auto& o : offs) {
          const int nz = z + o[0], ny = y + o[1], nx = x + o[2];
          if (nz < 0 || ny < 0 || ny >= H || nx < 0 || nx >= W) continue;
          const int32_t nl = at(nz, ny, nx);
          if (!nl) continue;
          if (!lbl)
            lbl = nl;
          else
            uf.unite(lbl, nl);
        }
        if (!lbl) lbl = uf.add();
        at(z, y, x) = lbl;
      }

  // Flatten to consecutive 1-based labels.
  std::vector<int32_t> remap(uf.parent.size(), 0);
  for (auto& lbl : out.label) {
    if (!lbl) continue;
    const int32_t root = uf.find(lbl);
    if (!remap[static_cast<size_t>(root)]) {
      remap[static_cast<size_t>(root)] = ++out.count;
      out.sizes.push_back(0);
    }
    lbl = remap[static_cast<size_t>(root)];
    ++out.sizes[static_cast<size_t>(lbl - 1)];
  }
  return out;
}

inline ComponentLabels label_components(const Tensor<uint8_t>& mask, bool conn26 = true) {
  if (mask.rank() != 3) throw NumericError("label_components expects [D,H,W]");
  return label_components(mask.dim(0), mask.dim(1), mask.dim(2),
                          [&](int64_t i) { return mask[i] != 0; }, conn26);
}

}  // namespace lesionseg
