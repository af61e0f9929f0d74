#pragma once

#include <cmath>
#include <memory>

#include "lesionseg/autograd.hpp"

namespace lesionseg {
namespace ops {

// GroupNorm over [B,C,H,W]; statistics per (batch, group). gamma/beta: [C].
template <typename S>
Var<S> group_norm(Tape<S>& t, const Var<S>& x, const Var<S>& gamma, const Var<S>& beta, int groups,
                  S eps = S(1e-5)) {
  const int B = x->value.dim(0), C = x->value.dim(1);
  const int64_t hw = x->value.numel() / (int64_t(B) * C);
  if (C % groups) throw NumericError("group_norm: channels not divisible by groups");
  const int cpg = C / groups;
  const int64_t n = int64_t(cpg) * hw;

  auto stats = std::make_shared<std::vector<S>>(size_t(B) * groups * 2);  // mean, inv per group
  Tensor<S> v(x->value.shape);
  for (int b = 0; b < B; ++b)
    for (int g = 0; g < groups; ++g) {
      const int64_t base = (int64_t(b) * C + int64_t(g) * cpg) * hw;
      S mean = S(0);
      for (int64_t i = 0; i < n; ++i) mean += x->value[base + i];
      mean /= static_cast<S>(n);
      S var = S(0);
      for (int64_t i = 0; i < n; ++i) {
        const S d = x->value[base + i] - mean;
        var += d * d;
      }
      var /= static_cast<S>(n);
      const S inv = S(1) / std::sqrt(var + eps);
      (*stats)[size_t(b * groups + g) * 2] = mean;
      (*stats)[size_t(b * groups + g) * 2 + 1] = inv;
      for (int c = 0; c < cpg; ++c) {
        const S ga = gamma->value[g * cpg + c], be = beta->value[g * cpg + c];
        const int64_t cb = base + int64_t(c) * hw;
        for (int64_t i = 0; i < hw; ++i) v[cb + i] = ga * (x->value[cb + i] - mean) * inv + be;
      }
    }

  auto out = t.make(std::move(v), {x, gamma, beta});
  out->backward_fn = [o = out.get(), x, gamma, beta, stats, B, C, hw, groups, cpg, n]() {
    for (int b = 0; b < B; ++b)
      for (int g = 0; g < groups; ++g) {
        const int64_t base = (int64_t(b) * C + int64_t(g) * cpg) * hw;
        const S mean = (*stats)[size_t(b * groups + g) * 2];
        const S inv = (*stats)[size_t(b * groups + g) * 2 + 1];
        S sum_dxh = S(0), sum_dxh_xh = S(0);
        for (int c = 0; c < cpg; ++c) {
          const S ga = gamma->value[g * cpg + c];
          const int64_t cb = base + int64_t(c) * hw;
          for (int64_t i = 0; i < hw; ++i) {
            const S xh = (x->value[cb + i] - mean) * inv;
            const S dxh = o->grad[cb + i] * ga;
            sum_dxh += dxh;
            sum_dxh_xh += dxh * xh;
          }
        }
        if (gamma->needs_grad || beta->needs_grad) {
          for (int c = 0; c < cpg; ++c) {
            const int64_t cb = base + int64_t(c) * hw;
            S dg = S(0), db = S(0);
            for (int64_t i = 0; i < hw; ++i) {
              const S xh = (x->value[cb + i] - mean) * inv;
              dg += o->grad[cb + i] * xh;
              db += o->grad[cb + i];
            }
            if (gamma->needs_grad) gamma->grad_ref()[g * cpg + c] += dg;
            if (beta->needs_grad) beta->grad_ref()[g * cpg + c] += db;
          }
        }
        if (x->needs_grad) {
          Tensor<S>& gx = x->grad_ref();
          const S mean_dxh = sum_dxh / static_cast<S>(n);
          const S mean_dxh_xh = sum_dxh_xh / static_cast<S>(n);
          for (int c = 0; c < cpg; ++c) {
            const S ga = gamma->value[g * cpg + c];
            const int64_t cb = base + int64_t(c) * hw;
            for (int64_t i = 0; i < hw; ++i) {
              const S xh = (x->value[cb + i] - mean) * inv;
              const S dxh = o->grad[cb + i] * ga;
              gx[cb + i] += inv * (dxh - mean_dxh - xh * mean_dxh_xh);
            }
          }
        }
      }
  };
  return out;
}

// LayerNorm over the trailing dim of [..., C]. gamma/beta: [C].
template <typename S>
Var<S> layer_norm(Tape<S>& t, const Var<S>& x, const Var<S>& gamma, const Var<S>& beta,
                  S eps = S(1e-5)) {
  const int C = x->value.dim(x->value.rank() - 1);
  const int64_t rows = x->value.numel() / C;
  auto stats = std::make_shared<std::vector<S>>(size_t(rows) * 2);
  Tensor<S> v(x->value.shape);
  for (int64_t r = 0; r < rows; ++r) {
    const S* p = x->value.ptr() + r * C;
    S mean = S(0);
    for (int c = 0; c < C; ++c) mean += p[c];
    mean /= static_cast<S>(C);
    S var = S(0);
    for (int c = 0; c < C; ++c) {
      const S d = p[c] - mean;
      var += d * d;
    }
    var /= static_cast<S>(C);
    const S inv = S(1) / std::sqrt(var + eps);
    (*stats)[size_t(r) * 2] = mean;
    (*stats)[size_t(r) * 2 + 1] = inv;
    S* q = v.ptr() + r * C;
    for (int c = 0; c < C; ++c) q[c] = gamma->value[c] * (p[c] - mean) * inv + beta->value[c];
  }
  auto out = t.make(std::move(v), {x, gamma, beta});
  out->backward_fn = [o = out.get(), x, gamma, beta, stats, rows, C]() {
    for (int64_t r = 0; r < rows; ++r) {
      const S* p = x->value.ptr() + r * C;
      const S* g = o->grad.ptr() + r * C;
      const S mean = (*stats)[size_t(r) * 2], inv = (*stats)[size_t(r) * 2 + 1];
      S sum_dxh = S(0), sum_dxh_xh = S(0);
      for (int c = 0; c < C; ++c) {
        const S xh = (p[c] - mean) * inv;
        const S dxh = g[c] * gamma->value[c];
        sum_dxh += dxh;
        sum_dxh_xh += dxh * xh;
      }
      if (gamma->needs_grad) {
        Tensor<S>& gg = gamma->grad_ref();
        for (int c = 0; c < C; ++c) gg[c] += g[c] * (p[c] - mean) * inv;
      }
      if (beta->needs_grad) {
        Tensor<S>& gb = beta->grad_ref();
        for (int c = 0; c < C; ++c) gb[c] += g[c];
      }
      if (x->needs_grad) {
        Tensor<S>& gx = x->grad_ref();
        const S mdxh = sum_dxh / static_cast<S>(C);
        const S mdxx = sum_dxh_xh / static_cast<S>(C);
        S* q = gx.ptr() + r * C;
        for (int c = 0; c < C; ++c) {
          const S xh = (p[c] - mean) * inv;
          const S dxh = g[c] * gamma->value[c];
          q[c] += inv * (dxh - mdxh - xh * mdxx);
        }
      }
    }
  };
  return out;
}

}  // namespace ops
}  // namespace lesionseg
