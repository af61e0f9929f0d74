#pragma once

#include <cmath>
#include <vector>

#include "lesionseg/autograd.hpp"

namespace lesionseg {
namespace ops {

template <typename S>
Var<S> add(Tape<S>& t, const Var<S>& a, const Var<S>& b) {
  if (!a->value.same_shape(b->value)) throw NumericError("add: shape mismatch");
  Tensor<S> v(a->value.shape);
  for (int64_t i = 0; i < v.numel(); ++i) v[i] = a->value[i] + b->value[i];
  auto out = t.make(std::move(v), {a, b});
  out->backward_fn = [o = out.get(), a, b]() {
    accumulate(a, o->grad);
    accumulate(b, o->grad);
  };
  return out;
}

template <typename S>
Var<S> mul(Tape<S>& t, const Var<S>& a, const Var<S>& b) {
  if (!a->value.same_shape(b->value)) throw NumericError("mul: shape mismatch");
  Tensor<S> v(a->value.shape);
  for (int64_t i = 0; i < v.numel(); ++i) v[i] = a->value[i] * b->value[i];
  auto out = t.make(std::move(v), {a, b});
  out->backward_fn = [o = out.get(), a, b]() {
    if (a->needs_grad) {
      Tensor<S>& ga = a->grad_ref();
      for (int64_t i = 0; i < ga.numel(); ++i) ga[i] += o->grad[i] * b->value[i];
    }
    if (b->needs_grad) {
      Tensor<S>& gb = b->grad_ref();
      for (int64_t i = 0; i < gb.numel(); ++i) gb[i] += o->grad[i] * a->value[i];
    }
  };
  return out;
}

template <typename S>
Var<S> scale(Tape<S>& t, const Var<S>& a, S c) {
  Tensor<S> v(a->value.shape);
  for (int64_t i = 0; i < v.numel(); ++i) v[i] = a->value[i] * c;
  auto out = t.make(std::move(v), {a});
  out->backward_fn = [o = out.get(), a, c]() {
    if (!a->needs_grad) return;
    Tensor<S>& ga = a->grad_ref();
    for (int64_t i = 0; i < ga.numel(); ++i) ga[i] += o->grad[i] * c;
  };
  return out;
}

template <typename S>
Var<S> sigmoid(Tape<S>& t, const Var<S>& a) {
  Tensor<S> v(a->value.shape);
  for (int64_t i = 0; i < v.numel(); ++i) {
    const S x = a->value[i];
    v[i] = x >= S(0) ? S(1) / (S(1) + std::exp(-x)) : std::exp(x) / (S(1) + std::exp(x));
  }
  auto out = t.make(std::move(v), {a});
  out->backward_fn = [o = out.get(), a]() {
    if (!a->needs_grad) return;
    Tensor<S>& ga = a->grad_ref();
    for (int64_t i = 0; i < ga.numel(); ++i) {
      const S y = o->value[i];
      ga[i] += o->grad[i] * y * (S(1) - y);
    }
  };
  return out;
}

template <typename S>
Var<S> relu(Tape<S>& t, const Var<S>& a) {
  Tensor<S> v(a->value.shape);
  for (int64_t i = 0; i < v.numel(); ++i) v[i] = a->value[i] > S(0) ? a->value[i] : S(0);
  auto out = t.make(std::move(v), {a});
  out->backward_fn = [o = out.get(), a]() {
    if (!a->needs_grad) return;
    Tensor<S>& ga = a->grad_ref();
    for (int64_t i = 0; i < ga.numel(); ++i) ga[i] += a->value[i] > S(0) ? o->grad[i] : S(0);
  };
  return out;
}

template <typename S>
Var<S> gelu(Tape<S>& t, const Var<S>& a) {
  constexpr double inv_sqrt2 = 0.7071067811865475244;
  constexpr double inv_sqrt2pi = 0.3989422804014326779;
  Tensor<S> v(a->value.shape);
  for (int64_t i = 0; i < v.numel(); ++i) {
    const double x = static_cast<double>(a->value[i]);
    v[i] = static_cast<S>(0.5 * x * (1.0 + std::erf(x * inv_sqrt2)));
  }
  auto out = t.make(std::move(v), {a});
  out->backward_fn = [o = out.get(), a]() {
    if (!a->needs_grad) return;
    Tensor<S>& ga = a->grad_ref();
    for (int64_t i = 0; i < ga.numel(); ++i) {
      const double x = static_cast<double>(a->value[i]);
      const double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
      const double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
      ga[i] += o->grad[i] * static_cast<S>(cdf + x * pdf);
    }
  };
  return out;
}

// x:[B,C,H,W] * gate:[B,C] broadcast over spatial dims.
template <typename S>
Var<S> mul_channel_gate(Tape<S>& t, const Var<S>& x, const Var<S>& g) {
  const int B = x->value.dim(0), C = x->value.dim(1);
  const int64_t hw = x->value.numel() / (int64_t(B) * C);
  Tensor<S> v(x->value.shape);
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      const S gv = g->value.at(b, c);
      const int64_t base = (int64_t(b) * C + c) * hw;
      for (int64_t i = 0; i < hw; ++i) v[base + i] = x->value[base + i] * gv;
    }
  auto out = t.make(std::move(v), {x, g});
  out->backward_fn = [o = out.get(), x, g, B, C, hw]() {
    if (x->needs_grad) {
      Tensor<S>& gx = x->grad_ref();
      for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
          const S gv = g->value.at(b, c);
          const int64_t base = (int64_t(b) * C + c) * hw;
          for (int64_t i = 0; i < hw; ++i) gx[base + i] += o->grad[base + i] * gv;
        }
    }
    if (g->needs_grad) {
      Tensor<S>& gg = g->grad_ref();
      for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
          const int64_t base = (int64_t(b) * C + c) * hw;
          S acc = S(0);
          for (int64_t i = 0; i < hw; ++i) acc += o->grad[base + i] * x->value[base + i];
          gg.at(b, c) += acc;
        }
    }
  };
  return out;
}

// x:[B,C,H,W] * gate:[B,1,H,W] broadcast over channels.
template <typename S>
Var<S> mul_spatial_gate(Tape<S>& t, const Var<S>& x, const Var<S>& g) {
  const int B = x->value.dim(0), C = x->value.dim(1);
  const int64_t hw = x->value.numel() / (int64_t(B) * C);
  Tensor<S> v(x->value.shape);
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      const int64_t base = (int64_t(b) * C + c) * hw;
      const int64_t gbase = int64_t(b) * hw;
      for (int64_t i = 0; i < hw; ++i) v[base + i] = x->value[base + i] * g->value[gbase + i];
    }
  auto out = t.make(std::move(v), {x, g});
  out->backward_fn = [o = out.get(), x, g, B, C, hw]() {
    if (x->needs_grad) {
      Tensor<S>& gx = x->grad_ref();
      for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
          const int64_t base = (int64_t(b) * C + c) * hw;
          const int64_t gbase = int64_t(b) * hw;
          for (int64_t i = 0; i < hw; ++i) gx[base + i] += o->grad[base + i] * g->value[gbase + i];
        }
    }
    if (g->needs_grad) {
      Tensor<S>& gg = g->grad_ref();
      for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
          const int64_t base = (int64_t(b) * C + c) * hw;
          const int64_t gbase = int64_t(b) * hw;
          for (int64_t i = 0; i < hw; ++i) gg[gbase + i] += o->grad[base + i] * x->value[base + i];
        }
    }
  };
  return out;
}

namespace detail {
inline void axis_strides(const Shape& s, int axis, int64_t& outer, int64_t& mid, int64_t& inner) {
  outer = 1;
  for (int i = 0; i < axis; ++i) outer *= s[i];
  mid = s[axis];
  inner = 1;
  for (size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
}
}  // namespace detail

template <typename S>
Var<S> concat(Tape<S>& t, int axis, const std::vector<Var<S>>& parts) {
  if (parts.empty()) throw NumericError("concat: no inputs");
  Shape out_shape = parts[0]->value.shape;
  int total = 0;
  for (const auto& p : parts) {
    if (p->value.rank() != static_cast<int>(out_shape.size()))
      throw NumericError("concat: rank mismatch");
    for (int i = 0; i < p->value.rank(); ++i)
      if (i != axis && p->value.dim(i) != out_shape[i]) throw NumericError("concat: shape mismatch");
    total += p->value.dim(axis);
  }
  out_shape[axis] = total;
  Tensor<S> v(out_shape);
  int64_t outer, mid, inner;
  detail::axis_strides(out_shape, axis, outer, mid, inner);
  int64_t off = 0;
  for (const auto& p : parts) {
    const int64_t pm = p->value.dim(axis);
    for (int64_t o = 0; o < outer; ++o)
      std::copy_n(p->value.ptr() + o * pm * inner, pm * inner, v.ptr() + (o * mid + off) * inner);
    off += pm;
  }
  auto out = t.make(std::move(v), parts);
  out->backward_fn = [o = out.get(), parts, axis]() {
    int64_t outer, mid, inner;
    detail::axis_strides(o->value.shape, axis, outer, mid, inner);
    int64_t off = 0;
    for (const auto& p : parts) {
      const int64_t pm = p->value.dim(axis);
      if (p->needs_grad) {
        Tensor<S>& gp = p->grad_ref();
        for (int64_t ot = 0; ot < outer; ++ot) {
          const S* src = o->grad.ptr() + (ot * mid + off) * inner;
          S* dst = gp.ptr() + ot * pm * inner;
          for (int64_t i = 0; i < pm * inner; ++i) dst[i] += src[i];
        }
      }
      off += pm;
    }
  };
  return out;
}

template <typename S>
Var<S> slice(Tape<S>& t, const Var<S>& x, int axis, int start, int len) {
  Shape out_shape = x->value.shape;
  out_shape[axis] = len;
  Tensor<S> v(out_shape);
  int64_t outer, mid, inner;
  detail::axis_strides(x->value.shape, axis, outer, mid, inner);
  for (int64_t o = 0; o < outer; ++o)
    std::copy_n(x->value.ptr() + (o * mid + start) * inner, int64_t(len) * inner,
                v.ptr() + o * len * inner);
  auto out = t.make(std::move(v), {x});
  out->backward_fn = [o = out.get(), x, axis, start, len]() {
    if (!x->needs_grad) return;
    Tensor<S>& gx = x->grad_ref();
    int64_t outer, mid, inner;
    detail::axis_strides(x->value.shape, axis, outer, mid, inner);
    for (int64_t ot = 0; ot < outer; ++ot) {
      const S* src = o->grad.ptr() + ot * len * inner;
      S* dst = gx.ptr() + (ot * mid + start) * inner;
      for (int64_t i = 0; i < int64_t(len) * inner; ++i) dst[i] += src[i];
    }
  };
  return out;
}

template <typename S>
Var<S> reshape(Tape<S>& t, const Var<S>& x, Shape s) {
  Tensor<S> v = x->value.reshaped(std::move(s));
  auto out = t.make(std::move(v), {x});
  out->backward_fn = [o = out.get(), x]() {
    if (!x->needs_grad) return;
    Tensor<S>& gx = x->grad_ref();
    for (int64_t i = 0; i < gx.numel(); ++i) gx[i] += o->grad[i];
  };
  return out;
}

// Zero-pad the last two dims of [..., H, W].
template <typename S>
Var<S> pad2d(Tape<S>& t, const Var<S>& x, int top, int bottom, int left, int right) {
  const int r = x->value.rank();
  const int H = x->value.dim(r - 2), W = x->value.dim(r - 1);
  const int64_t planes = x->value.numel() / (int64_t(H) * W);
  const int Ho = H + top + bottom, Wo = W + left + right;
  Shape out_shape = x->value.shape;
  out_shape[r - 2] = Ho;
  out_shape[r - 1] = Wo;
  Tensor<S> v(out_shape);
  for (int64_t p = 0; p < planes; ++p)
    for (int i = 0; i < H; ++i)
      std::copy_n(x->value.ptr() + (p * H + i) * W, W,
                  v.ptr() + (p * Ho + i + top) * Wo + left);
  auto out = t.make(std::move(v), {x});
  out->backward_fn = [o = out.get(), x, top, left, H, W, Ho, Wo, planes]() {
    if (!x->needs_grad) return;
    Tensor<S>& gx = x->grad_ref();
    for (int64_t p = 0; p < planes; ++p)
      for (int i = 0; i < H; ++i) {
        const S* src = o->grad.ptr() + (p * Ho + i + top) * Wo + left;
        S* dst = gx.ptr() + (p * H + i) * W;
        for (int j = 0; j < W; ++j) dst[j] += src[j];
      }
  };
  return out;
}

// Edge-replicating pad of the last two dims (keeps constant inputs constant
// under subsequent convolution).
template <typename S>
Var<S> replicate_pad2d(Tape<S>& t, const Var<S>& x, int pad) {
  const int r = x->value.rank();
  const int H = x->value.dim(r - 2), W = x->value.dim(r - 1);
  const int64_t planes = x->value.numel() / (int64_t(H) * W);
  const int Ho = H + 2 * pad, Wo = W + 2 * pad;
  Shape out_shape = x->value.shape;
  out_shape[r - 2] = Ho;
  out_shape[r - 1] = Wo;
  auto clampi = [](int v, int n) { return v < 0 ? 0 : (v >= n ? n - 1 : v); };
  Tensor<S> v(out_shape);
  for (int64_t p = 0; p < planes; ++p)
    for (int i = 0; i < Ho; ++i)
      for (int j = 0; j < Wo; ++j)
        v[(p * Ho + i) * Wo + j] = x->value[(p * H + clampi(i - pad, H)) * W + clampi(j - pad, W)];
  auto out = t.make(std::move(v), {x});
  out->backward_fn = [o = out.get(), x, pad, H, W, Ho, Wo, planes, clampi]() {
    if (!x->needs_grad) return;
    Tensor<S>& gx = x->grad_ref();
    for (int64_t p = 0; p < planes; ++p)
      for (int i = 0; i < Ho; ++i)
        for (int j = 0; j < Wo; ++j)
          gx[(p * H + clampi(i - pad, H)) * W + clampi(j - pad, W)] += o->grad[(p * Ho + i) * Wo + j];
  };
  return out;
}

template <typename S>
Var<S> crop2d(Tape<S>& t, const Var<S>& x, int top, int left, int h, int w) {
  const int r = x->value.rank();
  const int H = x->value.dim(r - 2), W = x->value.dim(r - 1);
  const int64_t planes = x->value.numel() / (int64_t(H) * W);
  Shape out_shape = x->value.shape;
  out_shape[r - 2] = h;
  out_shape[r - 1] = w;
  Tensor<S> v(out_shape);
  for (int64_t p = 0; p < planes; ++p)
    for (int i = 0; i < h; ++i)
      std::copy_n(x->value.ptr() + (p * H + i + top) * W + left, w, v.ptr() + (p * h + i) * w);
  auto out = t.make(std::move(v), {x});
  out->backward_fn = [o = out.get(), x, top, left, h, w, H, W, planes]() {
    if (!x->needs_grad) return;
    Tensor<S>& gx = x->grad_ref();
    for (int64_t p = 0; p < planes; ++p)
      for (int i = 0; i < h; ++i) {
        const S* src = o->grad.ptr() + (p * h + i) * w;
        S* dst = gx.ptr() + (p * H + i + top) * W + left;
        for (int j = 0; j < w; ++j) dst[j] += src[j];
      }
  };
  return out;
}

// Cyclic shift of the last two dims; positive shifts move content toward
// higher indices (wrap-around).
template <typename S>
Var<S> roll2d(Tape<S>& t, const Var<S>& x, int sh, int sw) {
  const int r = x->value.rank();
  const int H = x->value.dim(r - 2), W = x->value.dim(r - 1);
  const int64_t planes = x->value.numel() / (int64_t(H) * W);
  auto wrap = [](int i, int n) { return ((i % n) + n) % n; };
  Tensor<S> v(x->value.shape);
  for (int64_t p = 0; p < planes; ++p)
    for (int i = 0; i < H; ++i) {
      const int si = wrap(i - sh, H);
      for (int j = 0; j < W; ++j) v[(p * H + i) * W + j] = x->value[(p * H + si) * W + wrap(j - sw, W)];
    }
  auto out = t.make(std::move(v), {x});
  out->backward_fn = [o = out.get(), x, sh, sw, H, W, planes, wrap]() {
    if (!x->needs_grad) return;
    Tensor<S>& gx = x->grad_ref();
    for (int64_t p = 0; p < planes; ++p)
      for (int i = 0; i < H; ++i) {
        const int si = wrap(i - sh, H);
        for (int j = 0; j < W; ++j)
          gx[(p * H + si) * W + wrap(j - sw, W)] += o->grad[(p * H + i) * W + j];
      }
  };
  return out;
}

template <typename S>
Var<S> sum_all(Tape<S>& t, const Var<S>& x) {
  S acc = S(0);
  for (int64_t i = 0; i < x->value.numel(); ++i) acc += x->value[i];
  Tensor<S> v({1});
  v[0] = acc;
  auto out = t.make(std::move(v), {x});
  out->backward_fn = [o = out.get(), x]() {
    if (!x->needs_grad) return;
    Tensor<S>& gx = x->grad_ref();
    const S g = o->grad[0];
    for (int64_t i = 0; i < gx.numel(); ++i) gx[i] += g;
  };
  return out;
}

template <typename S>
Var<S> mean_all(Tape<S>& t, const Var<S>& x) {
  return scale(t, sum_all(t, x), S(1) / static_cast<S>(x->value.numel()));
}

// [B,C,h,w] -> [B, h*w, C] token layout.
template <typename S>
Var<S> tokenize(Tape<S>& t, const Var<S>& x) {
  const int B = x->value.dim(0), C = x->value.dim(1), h = x->value.dim(2), w = x->value.dim(3);
  const int L = h * w;
  Tensor<S> v({B, L, C});
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      for (int l = 0; l < L; ++l) v[(int64_t(b) * L + l) * C + c] = x->value[(int64_t(b) * C + c) * L + l];
  auto out = t.make(std::move(v), {x});
  out->backward_fn = [o = out.get(), x, B, C, L]() {
    if (!x->needs_grad) return;
    Tensor<S>& gx = x->grad_ref();
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c)
        for (int l = 0; l < L; ++l)
          gx[(int64_t(b) * C + c) * L + l] += o->grad[(int64_t(b) * L + l) * C + c];
  };
  return out;
}

// [B, h*w, C] -> [B,C,h,w]; exact inverse of tokenize.
template <typename S>
Var<S> detokenize(Tape<S>& t, const Var<S>& x, int h, int w) {
  const int B = x->value.dim(0), L = x->value.dim(1), C = x->value.dim(2);
  if (L != h * w) throw NumericError("detokenize: token count does not match grid");
  Tensor<S> v({B, C, h, w});
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      for (int l = 0; l < L; ++l) v[(int64_t(b) * C + c) * L + l] = x->value[(int64_t(b) * L + l) * C + c];
  auto out = t.make(std::move(v), {x});
  out->backward_fn = [o = out.get(), x, B, C, L]() {
    if (!x->needs_grad) return;
    Tensor<S>& gx = x->grad_ref();
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c)
        for (int l = 0; l < L; ++l)
          gx[(int64_t(b) * L + l) * C + c] += o->grad[(int64_t(b) * C + c) * L + l];
  };
  return out;
}

// [B,C,H,W] -> [B*nWh*nWw, M*M, C]; H and W must be multiples of M.
template <typename S>
Var<S> window_partition(Tape<S>& t, const Var<S>& x, int M) {
  const int B = x->value.dim(0), C = x->value.dim(1), H = x->value.dim(2), W = x->value.dim(3);
  if (H % M || W % M) throw NumericError("window_partition: grid not divisible by window");
  const int nh = H / M, nw = W / M;
  Tensor<S> v({B * nh * nw, M * M, C});
  for (int b = 0; b < B; ++b)
    for (int wh = 0; wh < nh; ++wh)
      for (int ww = 0; ww < nw; ++ww) {
        const int64_t wb = (int64_t(b) * nh + wh) * nw + ww;
        for (int i = 0; i < M; ++i)
          for (int j = 0; j < M; ++j) {
            const int l = i * M + j;
            for (int c = 0; c < C; ++c)
              v[(wb * M * M + l) * C + c] =
                  x->value[((int64_t(b) * C + c) * H + wh * M + i) * W + ww * M + j];
          }
      }
  auto out = t.make(std::move(v), {x});
  out->backward_fn = [o = out.get(), x, B, C, H, W, M, nh, nw]() {
    if (!x->needs_grad) return;
    Tensor<S>& gx = x->grad_ref();
    for (int b = 0; b < B; ++b)
      for (int wh = 0; wh < nh; ++wh)
        for (int ww = 0; ww < nw; ++ww) {
          const int64_t wb = (int64_t(b) * nh + wh) * nw + ww;
          for (int i = 0; i < M; ++i)
            for (int j = 0; j < M; ++j) {
              const int l = i * M + j;
              for (int c = 0; c < C; ++c)
                gx[((int64_t(b) * C + c) * H + wh * M + i) * W + ww * M + j] +=
                    o->grad[(wb * M * M + l) * C + c];
            }
        }
  };
  return out;
}

// Inverse of window_partition.
template <typename S>
Var<S> window_reverse(Tape<S>& t, const Var<S>& x, int M, int B, int H, int W) {
  const int C = x->value.dim(2);
  const int nh = H / M, nw = W / M;
  Tensor<S> v({B, C, H, W});
  for (int b = 0; b < B; ++b)
    for (int wh = 0; wh < nh; ++wh)
      for (int ww = 0; ww < nw; ++ww) {
        const int64_t wb = (int64_t(b) * nh + wh) * nw + ww;
        for (int i = 0; i < M; ++i)
          for (int j = 0; j < M; ++j) {
            const int l = i * M + j;
            for (int c = 0; c < C; ++c)
              v[((int64_t(b) * C + c) * H + wh * M + i) * W + ww * M + j] =
                  x->value[(wb * M * M + l) * C + c];
          }
      }
  auto out = t.make(std::move(v), {x});
  out->backward_fn = [o = out.get(), x, B, C, H, W, M, nh, nw]() {
    if (!x->needs_grad) return;
    Tensor<S>& gx = x->grad_ref();
    for (int b = 0; b < B; ++b)
      for (int wh = 0; wh < nh; ++wh)
        for (int ww = 0; ww < nw; ++ww) {
          const int64_t wb = (int64_t(b) * nh + wh) * nw + ww;
          for (int i = 0; i < M; ++i)
            for (int j = 0; j < M; ++j) {
              const int l = i * M + j;
              for (int c = 0; c < C; ++c)
                gx[(wb * M * M + l) * C + c] +=
                    o->grad[((int64_t(b) * C + c) * H + wh * M + i) * W + ww * M + j];
            }
        }
  };
  return out;
}

// [nb, L, C] -> [nb*heads, L, C/heads]
template <typename S>
Var<S> heads_split(Tape<S>& t, const Var<S>& x, int heads) {
  const int nb = x->value.dim(0), L = x->value.dim(1), C = x->value.dim(2);
  if (C % heads) throw NumericError("heads_split: channels not divisible by heads");
  const int d = C / heads;
  Tensor<S> v({nb * heads, L, d});
  for (int b = 0; b < nb; ++b)
    for (int h = 0; h < heads; ++h)
      for (int l = 0; l < L; ++l)
        for (int k = 0; k < d; ++k)
          v[((int64_t(b) * heads + h) * L + l) * d + k] = x->value[(int64_t(b) * L + l) * C + h * d + k];
  auto out = t.make(std::move(v), {x});
  out->backward_fn = [o = out.get(), x, nb, L, C, heads, d]() {
    if (!x->needs_grad) return;
    Tensor<S>& gx = x->grad_ref();
    for (int b = 0; b < nb; ++b)
      for (int h = 0; h < heads; ++h)
        for (int l = 0; l < L; ++l)
          for (int k = 0; k < d; ++k)
            gx[(int64_t(b) * L + l) * C + h * d + k] += o->grad[((int64_t(b) * heads + h) * L + l) * d + k];
  };
  return out;
}

// [nb*heads, L, d] -> [nb, L, heads*d]
template <typename S>
Var<S> heads_merge(Tape<S>& t, const Var<S>& x, int heads) {
  const int nbh = x->value.dim(0), L = x->value.dim(1), d = x->value.dim(2);
  const int nb = nbh / heads, C = heads * d;
  Tensor<S> v({nb, L, C});
  for (int b = 0; b < nb; ++b)
    for (int h = 0; h < heads; ++h)
      for (int l = 0; l < L; ++l)
        for (int k = 0; k < d; ++k)
          v[(int64_t(b) * L + l) * C + h * d + k] = x->value[((int64_t(b) * heads + h) * L + l) * d + k];
  auto out = t.make(std::move(v), {x});
  out->backward_fn = [o = out.get(), x, nb, L, C, heads, d]() {
    if (!x->needs_grad) return;
    Tensor<S>& gx = x->grad_ref();
    for (int b = 0; b < nb; ++b)
      for (int h = 0; h < heads; ++h)
        for (int l = 0; l < L; ++l)
          for (int k = 0; k < d; ++k)
            gx[((int64_t(b) * heads + h) * L + l) * d + k] += o->grad[(int64_t(b) * L + l) * C + h * d + k];
  };
  return out;
}

}  // namespace ops
}  // namespace lesionseg
