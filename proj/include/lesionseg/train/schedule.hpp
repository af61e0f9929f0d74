#pragma once

#include <cmath>

#include "lesionseg/common.hpp"

namespace lesionseg {

// Linear warmup from 0 to base_lr over warmup_steps, then cosine annealing to
// 0 at total_steps.
inline double lr_at(int64_t step, int64_t total_steps, int64_t warmup_steps, double base_lr) {
  if (step < 0 || step > total_steps) throw NumericError("lr_at: step out of range");
  if (warmup_steps > 0 && step < warmup_steps)
    return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  if (total_steps <= warmup_steps) return base_lr;
  const double progress =
      static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps);
  return base_lr * 0.5 * (1.0 + std::cos(M_PI * progress));
}

}  // namespace lesionseg
