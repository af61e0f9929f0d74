#pragma once

#include <algorithm>
#include <vector>

#include "lesionseg/common.hpp"
#include "lesionseg/config.hpp"

namespace lesionseg {

// Difficulty-aware sampling: slices whose (positive) lesion area falls at or
// below the configured percentile of positive-slice areas are oversampled.
// Returns a probability distribution over slices.
inline std::vector<double> difficulty_weights(const std::vector<int64_t>& lesion_areas,
                                              const SamplerConfig& cfg) {
  const size_t n = lesion_areas.size();
  if (n == 0) throw DataError("difficulty_weights: empty dataset");
  std::vector<double> w(n, 1.0);
  if (cfg.enabled && cfg.oversample_factor > 1.0) {
    std::vector<int64_t> positive;
    for (int64_t a : lesion_areas)
      if (a > 0) positive.push_back(a);
    if (!positive.empty()) {
      const double thr = percentile(positive, cfg.size_percentile);
      for (size_t i = 0; i < n; ++i)
        if (lesion_areas[i] > 0 && static_cast<double>(lesion_areas[i]) <= thr)
          w[i] = cfg.oversample_factor;
    }
  }
  double sum = 0;
  for (double v : w) sum += v;
  for (double& v : w) v /= sum;
  return w;
}

// Draws one index from a discrete distribution using a single uniform draw.
inline size_t sample_index(const std::vector<double>& weights, double u) {
  double acc = 0;
  for (size_t i = 0; i < weights.size(); ++i) {
    acc += weights[i];
    if (u < acc) return i;
  }
  return weights.size() - 1;
}

}  // namespace lesionseg
