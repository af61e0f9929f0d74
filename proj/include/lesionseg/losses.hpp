#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "lesionseg/autograd.hpp"
#include "lesionseg/config.hpp"
#include "lesionseg/distance.hpp"
#include "lesionseg/ops.hpp"
#include "lesionseg/ops_conv.hpp"

namespace lesionseg {

inline constexpr double kProbClamp = 1e-7;

namespace ops {

// Soft Dice loss: 1 - (2*sum(P*T)+eps) / (sum(P)+sum(T)+eps). P in [0,1],
// T binary, both flattened over every element given.
template <typename S>
Var<S> dice_loss(Tape<S>& t, const Var<S>& p, std::shared_ptr<Tensor<S>> target, S eps) {
  if (p->value.numel() != target->numel()) throw NumericError("dice_loss: shape mismatch");
  S a = S(0), b = S(0);
  for (int64_t i = 0; i < p->value.numel(); ++i) {
    a += p->value[i] * (*target)[i];
    b += p->value[i] + (*target)[i];
  }
  Tensor<S> v({1});
  v[0] = S(1) - (S(2) * a + eps) / (b + eps);
  auto out = t.make(std::move(v), {p});
  out->backward_fn = [o = out.get(), p, target, a, b, eps]() {
    if (!p->needs_grad) return;
    const S g = o->grad[0];
    const S den = b + eps;
    Tensor<S>& gp = p->grad_ref();
    for (int64_t i = 0; i < gp.numel(); ++i)
      gp[i] += g * -(S(2) * (*target)[i] * den - (S(2) * a + eps)) / (den * den);
  };
  return out;
}

// Tversky loss: 1 - (TP+eps)/(TP + alpha*FP + beta*FN + eps).
template <typename S>
Var<S> tversky_loss(Tape<S>& t, const Var<S>& p, std::shared_ptr<Tensor<S>> target, S alpha, S beta,
                    S eps) {
  if (p->value.numel() != target->numel()) throw NumericError("tversky_loss: shape mismatch");
  S tp = S(0), fp = S(0), fn = S(0);
  for (int64_t i = 0; i < p->value.numel(); ++i) {
    const S pi = p->value[i], ti = (*target)[i];
    tp += pi * ti;
    fp += pi * (S(1) - ti);
    fn += (S(1) - pi) * ti;
  }
  const S den = tp + alpha * fp + beta * fn + eps;
  Tensor<S> v({1});
  v[0] = S(1) - (tp + eps) / den;
  auto out = t.make(std::move(v), {p});
  out->backward_fn = [o = out.get(), p, target, tp, den, alpha, beta, eps]() {
    if (!p->needs_grad) return;
    const S g = o->grad[0];
    Tensor<S>& gp = p->grad_ref();
    for (int64_t i = 0; i < gp.numel(); ++i) {
      const S ti = (*target)[i];
      const S dden = ti + alpha * (S(1) - ti) - beta * ti;
      gp[i] += g * -(ti * den - (tp + eps) * dden) / (den * den);
    }
  };
  return out;
}

// Focal loss, mean over elements: -alpha_t * (1-p_t)^gamma * log(p_t) with
// p_t = p for positives and 1-p for negatives; p_t clamped to
// [kProbClamp, 1-kProbClamp] for log stability.
template <typename S>
Var<S> focal_loss(Tape<S>& t, const Var<S>& p, std::shared_ptr<Tensor<S>> target, S gamma, S alpha) {
  if (p->value.numel() != target->numel()) throw NumericError("focal_loss: shape mismatch");
  const S lo = static_cast<S>(kProbClamp), hi = S(1) - static_cast<S>(kProbClamp);
  const int64_t n = p->value.numel();
  S acc = S(0);
  for (int64_t i = 0; i < n; ++i) {
    const S pt_raw = (*target)[i] > S(0.5) ? p->value[i] : S(1) - p->value[i];
    const S pt = std::min(std::max(pt_raw, lo), hi);
    acc += -alpha * std::pow(S(1) - pt, gamma) * std::log(pt);
  }
  Tensor<S> v({1});
  v[0] = acc / static_cast<S>(n);
  auto out = t.make(std::move(v), {p});
  out->backward_fn = [o = out.get(), p, target, gamma, alpha, lo, hi, n]() {
    if (!p->needs_grad) return;
    const S g = o->grad[0] / static_cast<S>(n);
    Tensor<S>& gp = p->grad_ref();
    for (int64_t i = 0; i < n; ++i) {
      const bool pos = (*target)[i] > S(0.5);
      const S pt_raw = pos ? p->value[i] : S(1) - p->value[i];
      if (pt_raw < lo || pt_raw > hi) continue;  // clamped region: zero slope
      const S pt = pt_raw;
      const S one_m = S(1) - pt;
      const S dpt = gamma > S(0) ? alpha * gamma * std::pow(one_m, gamma - S(1)) * std::log(pt) -
                                       alpha * std::pow(one_m, gamma) / pt
                                 : -alpha / pt;
      gp[i] += g * dpt * (pos ? S(1) : S(-1));
    }
  };
  return out;
}

// Boundary loss: mean(P * d_G).
template <typename S>
Var<S> boundary_loss(Tape<S>& t, const Var<S>& p, std::shared_ptr<Tensor<S>> dist) {
  if (p->value.numel() != dist->numel()) throw NumericError("boundary_loss: shape mismatch");
  return mean_all(t, mul(t, p, t.input(*dist)));
}

}  // namespace ops

// Logit bundle produced by the decoder heads.
template <typename S>
struct HeadVars {
  Var<S> z_main;    // [B,K,H,W]
  Var<S> z_aux1;    // [B,K,H,W]
  Var<S> z_aux2;    // [B,K,H,W]
  Var<S> z_lesion;  // [B,1,H/16,W/16]
};

struct LossBreakdown {
  double total = 0, main = 0, aux = 0, lesion = 0;
  double main_focal = 0, main_tversky = 0, main_boundary = 0, main_dice = 0;
};

namespace ops {

// Focal-Tversky blend on logits: w_f * Focal(sigmoid(z), y) + w_t * Tversky(sigmoid(z), y).
template <typename S>
Var<S> focal_tversky(Tape<S>& t, const Var<S>& z, std::shared_ptr<Tensor<S>> y,
                     const LossConfig& cfg, S* focal_out = nullptr, S* tversky_out = nullptr) {
  auto p = sigmoid(t, z);
  auto lf = focal_loss(t, p, y, static_cast<S>(cfg.focal_gamma), static_cast<S>(cfg.focal_alpha));
  auto lt = tversky_loss(t, p, y, static_cast<S>(cfg.tversky_alpha),
                         static_cast<S>(cfg.tversky_beta), static_cast<S>(cfg.epsilon));
  if (focal_out) *focal_out = lf->value[0];
  if (tversky_out) *tversky_out = lt->value[0];
  return add(t, scale(t, lf, static_cast<S>(cfg.focal_weight)),
             scale(t, lt, static_cast<S>(cfg.tversky_weight)));
}

namespace detail {

// Per-class channel of a [B,K,H,W] target tensor.
template <typename S>
std::shared_ptr<Tensor<S>> class_channel(const Tensor<S>& y, int k) {
  const int B = y.dim(0), K = y.dim(1), H = y.dim(2), W = y.dim(3);
  auto out = std::make_shared<Tensor<S>>(Shape{B, 1, H, W});
  for (int b = 0; b < B; ++b)
    std::copy_n(y.ptr() + (int64_t(b) * K + k) * H * W, int64_t(H) * W,
                out->ptr() + int64_t(b) * H * W);
  return out;
}

// Mean of per-class Dice losses on logits.
template <typename S>
Var<S> multiclass_dice(Tape<S>& t, const Var<S>& z, const Tensor<S>& y, S eps) {
  const int K = z->value.dim(1);
  Var<S> acc;
  for (int k = 0; k < K; ++k) {
    auto zk = slice(t, z, 1, k, 1);
    auto lk = dice_loss(t, sigmoid(t, zk), class_channel(y, k), eps);
    acc = k == 0 ? lk : add(t, acc, lk);
  }
  return scale(t, acc, S(1) / static_cast<S>(K));
}

// Whole-lesion indicator (any class positive), max-pooled to the lesion head
// resolution so small lesions survive downsampling.
template <typename S>
std::shared_ptr<Tensor<S>> lesion_target(const Tensor<S>& y, int out_h, int out_w) {
  const int B = y.dim(0), K = y.dim(1), H = y.dim(2), W = y.dim(3);
  const int factor = H / out_h;
  auto out = std::make_shared<Tensor<S>>(Shape{B, 1, out_h, out_w});
  for (int b = 0; b < B; ++b)
    for (int i = 0; i < out_h; ++i)
      for (int j = 0; j < out_w; ++j) {
        S v = S(0);
        for (int k = 0; k < K && v == S(0); ++k)
          for (int a = 0; a < factor && v == S(0); ++a)
            for (int c = 0; c < factor && v == S(0); ++c)
              if (y[((int64_t(b) * K + k) * H + i * factor + a) * W + j * factor + c] > S(0.5))
                v = S(1);
        (*out)[(int64_t(b) * out_h + i) * out_w + j] = v;
      }
  return out;
}

}  // namespace detail

// Composite training objective. `y` is the [B,K,H,W] binary target;
// `dist_maps` is the per-batch unsigned distance map [B,1,H,W] (vascular mode
// only; pass nullptr for brats).
template <typename S>
Var<S> total_loss(Tape<S>& t, const HeadVars<S>& heads, const Tensor<S>& y,
                  std::shared_ptr<Tensor<S>> dist_maps, const LossConfig& cfg,
                  LossBreakdown* breakdown = nullptr) {
  const int K = heads.z_main->value.dim(1);
  if (y.dim(1) != K) throw NumericError("total_loss: class-count mismatch between target and heads");

  LossBreakdown bd;
  Var<S> l_main;
  if (cfg.mode == "vascular") {
    auto yfull = std::make_shared<Tensor<S>>(y);
    S f = 0, tv = 0;
    auto ft = focal_tversky(t, heads.z_main, yfull, cfg, &f, &tv);
    bd.main_focal = static_cast<double>(f);
    bd.main_tversky = static_cast<double>(tv);
    if (cfg.boundary_weight > 0) {
      if (!dist_maps) throw NumericError("total_loss: vascular mode requires distance maps");
      auto lb = boundary_loss(t, sigmoid(t, heads.z_main), dist_maps);
      bd.main_boundary = static_cast<double>(lb->value[0]);
      l_main = add(t, ft, scale(t, lb, static_cast<S>(cfg.boundary_weight)));
    } else {
      l_main = ft;
    }
  } else if (cfg.mode == "brats") {
    l_main = detail::multiclass_dice(t, heads.z_main, y, static_cast<S>(cfg.epsilon));
    bd.main_dice = static_cast<double>(l_main->value[0]);
  } else {
    throw ConfigError("unknown loss mode '" + cfg.mode + "'");
  }
  bd.main = static_cast<double>(l_main->value[0]);

  Var<S> l_aux;
  const Var<S> aux_heads[2] = {heads.z_aux1, heads.z_aux2};
  for (size_t k = 0; k < cfg.aux_weights.size() && k < 2; ++k) {
    Var<S> lk;
    if (cfg.mode == "vascular") {
      auto yfull = std::make_shared<Tensor<S>>(y);
      lk = focal_tversky(t, aux_heads[k], yfull, cfg);
    } else {
      lk = detail::multiclass_dice(t, aux_heads[k], y, static_cast<S>(cfg.epsilon));
    }
    lk = scale(t, lk, static_cast<S>(cfg.aux_weights[k]));
    l_aux = (k == 0) ? lk : add(t, l_aux, lk);
  }
  if (!l_aux) l_aux = t.input(Tensor<S>({1}));
  bd.aux = static_cast<double>(l_aux->value[0]);

  auto ylesion = detail::lesion_target(y, heads.z_lesion->value.dim(2), heads.z_lesion->value.dim(3));
  auto l_lesion = focal_loss(t, sigmoid(t, heads.z_lesion), ylesion,
                             static_cast<S>(cfg.focal_gamma), static_cast<S>(cfg.focal_alpha));
  bd.lesion = static_cast<double>(l_lesion->value[0]);

  auto total = add(t, add(t, l_main, l_aux), scale(t, l_lesion, static_cast<S>(cfg.lesion_weight)));
  bd.total = static_cast<double>(total->value[0]);
  if (breakdown) *breakdown = bd;
  return total;
}

}  // namespace ops
}  // namespace lesionseg
