#pragma once

#include <array>
#include <string>
#include <vector>

#include <json.hpp>

#include "lesionseg/common.hpp"
#include "lesionseg/config.hpp"
#include "lesionseg/rng.hpp"
#include "lesionseg/volume.hpp"

namespace lesionseg {

// Synthetic multi-modal phantoms: a brain ellipsoid with ellipsoidal lesions
// whose per-modality contrast is configurable. Deterministic per seed; the
// mask marks exact lesion voxels.
struct PhantomSpec {
  int num_subjects = 8;
  std::vector<std::string> modalities = {"FLAIR", "T1w"};
  bool nested_classes = false;  // true: WT/TC/ET tumor-style targets
  std::array<int, 3> shape = {10, 48, 48};  // D, H, W
  std::array<double, 3> spacing = {2.0, 1.0, 1.0};
  int lesion_count_min = 2;
  int lesion_count_max = 4;
  double lesion_radius_min = 2.0;  // voxels, in-plane
  double lesion_radius_max = 5.0;
  std::vector<double> contrast = {2.0, -0.5};  // per modality, added inside lesions
  double noise_sigma = 0.05;
  uint64_t seed = 17;
};

inline nlohmann::json to_json(const PhantomSpec& s) {
  return nlohmann::json{{"num_subjects", s.num_subjects},
                        {"modalities", s.modalities},
                        {"nested_classes", s.nested_classes},
                        {"shape", s.shape},
                        {"spacing", s.spacing},
                        {"lesion_count_min", s.lesion_count_min},
                        {"lesion_count_max", s.lesion_count_max},
                        {"lesion_radius_min", s.lesion_radius_min},
                        {"lesion_radius_max", s.lesion_radius_max},
                        {"contrast", s.contrast},
                        {"noise_sigma", s.noise_sigma},
                        {"seed", s.seed}};
}

inline PhantomSpec phantom_spec_from_json(const nlohmann::json& j) {
  detail::check_keys(j,
                     {"num_subjects", "modalities", "nested_classes", "shape", "spacing",
                      "lesion_count_min", "lesion_count_max", "lesion_radius_min",
                      "lesion_radius_max", "contrast", "noise_sigma", "seed"},
                     "phantom spec");
  PhantomSpec s;
  detail::get_if(j, "num_subjects", s.num_subjects);
  detail::get_if(j, "modalities", s.modalities);
  detail::get_if(j, "nested_classes", s.nested_classes);
  detail::get_if(j, "shape", s.shape);
  detail::get_if(j, "spacing", s.spacing);
  detail::get_if(j, "lesion_count_min", s.lesion_count_min);
  detail::get_if(j, "lesion_count_max", s.lesion_count_max);
  detail::get_if(j, "lesion_radius_min", s.lesion_radius_min);
  detail::get_if(j, "lesion_radius_max", s.lesion_radius_max);
  detail::get_if(j, "contrast", s.contrast);
  detail::get_if(j, "noise_sigma", s.noise_sigma);
  detail::get_if(j, "seed", s.seed);
  if (s.contrast.size() != s.modalities.size())
    throw ConfigError("phantom spec: contrast list must match modalities");
  for (const auto& m : s.modalities)
    if (!is_canonical_modality(m)) throw ConfigError("phantom spec: unknown modality '" + m + "'");
  return s;
}

struct PhantomSubject {
  Volume volume;
  Mask mask;
};

inline std::vector<PhantomSubject> generate_phantom(const PhantomSpec& spec) {
  const int D = spec.shape[0], H = spec.shape[1], W = spec.shape[2];
  const double max_r = spec.lesion_radius_max;
  if (2 * max_r + 4 >= std::min(H, W) || spec.lesion_radius_min > max_r)
    throw ConfigError("phantom: lesion radius does not fit the volume");
  if (spec.contrast.size() != spec.modalities.size())
    throw ConfigError("phantom: contrast list must match modalities");

  Rng rng(spec.seed);
  const int M = static_cast<int>(spec.modalities.size());
  std::vector<PhantomSubject> out;
  out.reserve(static_cast<size_t>(spec.num_subjects));

  for (int s = 0; s < spec.num_subjects; ++s) {
    PhantomSubject subj;
    subj.volume.data = Tensor<float>({M, D, H, W});
    subj.volume.spacing = spec.spacing;
    subj.volume.modality_names = spec.modalities;
    char idbuf[16];
    std::snprintf(idbuf, sizeof(idbuf), "s%03d", s);
    subj.volume.subject_id = idbuf;

    // Brain ellipsoid.
    const double cz = (D - 1) / 2.0, cy = (H - 1) / 2.0, cx = (W - 1) / 2.0;
    const double az = std::max(1.0, 0.46 * D), ay = 0.44 * H, ax = 0.44 * W;
    auto in_brain = [&](int z, int y, int x) {
      const double u = (z - cz) / az, v = (y - cy) / ay, w = (x - cx) / ax;
      return u * u + v * v + w * w <= 1.0;
    };

    // Lesion placement with pairwise separation so components stay distinct.
    const int count = spec.lesion_count_min +
                      static_cast<int>(rng.uniform_index(
                          static_cast<uint64_t>(spec.lesion_count_max - spec.lesion_count_min + 1)));
    struct Lesion {
      double z, y, x, rz, ry, rx;
    };
    std::vector<Lesion> lesions;
    int attempts = 0;
    while (static_cast<int>(lesions.size()) < count && attempts < 2000) {
      ++attempts;
      Lesion L;
      L.ry = rng.uniform(spec.lesion_radius_min, max_r);
      L.rx = rng.uniform(spec.lesion_radius_min, max_r);
      L.rz = std::max(1.0, L.ry * spec.spacing[1] / spec.spacing[0]);  // roughly isotropic in mm
      const double margin_y = L.ry + 2, margin_x = L.rx + 2, margin_z = std::min<double>(L.rz, (D - 1) / 2.0);
      L.z = rng.uniform(margin_z, D - 1 - margin_z);
      L.y = rng.uniform(cy - ay + margin_y, cy + ay - margin_y);
      L.x = rng.uniform(cx - ax + margin_x, cx + ax - margin_x);
      bool ok = in_brain(static_cast<int>(L.z), static_cast<int>(L.y), static_cast<int>(L.x));
      for (const auto& o : lesions) {
        const double dz = (L.z - o.z) * spec.spacing[0] / spec.spacing[1];
        const double dist = std::sqrt(dz * dz + (L.y - o.y) * (L.y - o.y) + (L.x - o.x) * (L.x - o.x));
        if (dist < L.ry + o.ry + L.rx + o.rx + 4) ok = false;
      }
      if (ok) lesions.push_back(L);
    }
    if (static_cast<int>(lesions.size()) < count)
      throw ConfigError("phantom: could not place " + std::to_string(count) +
                        " disjoint lesions; reduce count or radius");

    const int K = spec.nested_classes ? 3 : 1;
    subj.mask.data = Tensor<uint8_t>({K, D, H, W});
    subj.mask.class_names =
        spec.nested_classes ? std::vector<std::string>{"WT", "TC", "ET"} : std::vector<std::string>{"lesion"};

    auto lesion_member = [&](const Lesion& L, int z, int y, int x, double shrink) {
      const double u = (z - L.z) / (L.rz * shrink), v = (y - L.y) / (L.ry * shrink),
                   w = (x - L.x) / (L.rx * shrink);
      return u * u + v * v + w * w <= 1.0;
    };

    const int64_t n = int64_t(D) * H * W;
    for (int z = 0; z < D; ++z)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          const int64_t i = (int64_t(z) * H + y) * W + x;
          if (!in_brain(z, y, x)) continue;
          bool in_wt = false, in_tc = false, in_et = false;
          for (const auto& L : lesions) {
            in_wt |= lesion_member(L, z, y, x, 1.0);
            if (spec.nested_classes) {
              in_tc |= lesion_member(L, z, y, x, 0.65);
              in_et |= lesion_member(L, z, y, x, 0.35);
            }
          }
          for (int m = 0; m < M; ++m) {
            float v = 1.0f;  // brain tissue baseline
            if (in_wt) v += static_cast<float>(spec.contrast[static_cast<size_t>(m)]);
            subj.volume.data[int64_t(m) * n + i] = v;
          }
          if (in_wt) subj.mask.data[i] = 1;
          if (spec.nested_classes) {
            if (in_tc) subj.mask.data[n + i] = 1;
            if (in_et) subj.mask.data[2 * n + i] = 1;
          }
        }
    // Guarantee every lesion contributes at least its center voxel to the
    // innermost class.
    for (const auto& L : lesions) {
      const int z = static_cast<int>(std::lround(L.z)), y = static_cast<int>(std::lround(L.y)),
                x = static_cast<int>(std::lround(L.x));
      const int64_t i = (int64_t(z) * H + y) * W + x;
      for (int k = 0; k < K; ++k) subj.mask.data[int64_t(k) * n + i] = 1;
    }

    if (spec.noise_sigma > 0) {
      for (int m = 0; m < M; ++m)
        for (int64_t i = 0; i < n; ++i)
          if (subj.volume.data[int64_t(m) * n + i] != 0.0f)
            subj.volume.data[int64_t(m) * n + i] +=
                static_cast<float>(rng.normal(0.0, spec.noise_sigma));
    }
    out.push_back(std::move(subj));
  }
  return out;
}

}  // namespace lesionseg
