#pragma once

#include <algorithm>
#include <vector>

#include "lesionseg/autograd.hpp"
#include "lesionseg/ops.hpp"

namespace lesionseg {
namespace ops {

namespace detail {

template <typename S>
void im2col(const S* x, int C, int H, int W, int k, int pad, S* col) {
  const int OH = H + 2 * pad - k + 1, OW = W + 2 * pad - k + 1;
  int64_t row = 0;
  for (int c = 0; c < C; ++c)
    for (int ki = 0; ki < k; ++ki)
      for (int kj = 0; kj < k; ++kj, ++row) {
        S* dst = col + row * OH * OW;
        for (int oi = 0; oi < OH; ++oi) {
          const int ii = oi + ki - pad;
          if (ii < 0 || ii >= H) {
            std::fill_n(dst + int64_t(oi) * OW, OW, S(0));
            continue;
          }
          for (int oj = 0; oj < OW; ++oj) {
            const int jj = oj + kj - pad;
            dst[int64_t(oi) * OW + oj] = (jj < 0 || jj >= W) ? S(0) : x[(int64_t(c) * H + ii) * W + jj];
          }
        }
      }
}

template <typename S>
void col2im_add(const S* col, int C, int H, int W, int k, int pad, S* x) {
  const int OH = H + 2 * pad - k + 1, OW = W + 2 * pad - k + 1;
  int64_t row = 0;
  for (int c = 0; c < C; ++c)
    for (int ki = 0; ki < k; ++ki)
      for (int kj = 0; kj < k; ++kj, ++row) {
        const S* src = col + row * OH * OW;
        for (int oi = 0; oi < OH; ++oi) {
          const int ii = oi + ki - pad;
          if (ii < 0 || ii >= H) continue;
          for (int oj = 0; oj < OW; ++oj) {
            const int jj = oj + kj - pad;
            if (jj >= 0 && jj < W) x[(int64_t(c) * H + ii) * W + jj] += src[int64_t(oi) * OW + oj];
          }
        }
      }
}

}  // namespace detail

// 2-D convolution, stride 1. x:[B,Cin,H,W], w:[Cout,Cin,k,k], b:[Cout].
template <typename S>
Var<S> conv2d(Tape<S>& t, const Var<S>& x, const Var<S>& w, const Var<S>& b, int pad) {
  const int B = x->value.dim(0), Cin = x->value.dim(1), H = x->value.dim(2), W = x->value.dim(3);
  const int Cout = w->value.dim(0), k = w->value.dim(2);
  if (w->value.dim(1) != Cin) throw NumericError("conv2d: channel mismatch");
  const int OH = H + 2 * pad - k + 1, OW = W + 2 * pad - k + 1;
  if (OH <= 0 || OW <= 0) throw NumericError("conv2d: kernel larger than padded input");
  const int K = Cin * k * k;
  const bool pointwise = (k == 1 && pad == 0);

  Tensor<S> v({B, Cout, OH, OW});
  std::vector<S> col;
  if (!pointwise) col.resize(size_t(K) * OH * OW);
  CMapM<S> wm(w->value.ptr(), Cout, K);
  for (int bb = 0; bb < B; ++bb) {
    const S* xb = x->value.ptr() + int64_t(bb) * Cin * H * W;
    MapM<S> yb(v.ptr() + int64_t(bb) * Cout * OH * OW, Cout, int64_t(OH) * OW);
    if (pointwise) {
      CMapM<S> cb(xb, K, int64_t(OH) * OW);
      yb.noalias() = wm * cb;
    } else {
      detail::im2col(xb, Cin, H, W, k, pad, col.data());
      CMapM<S> cb(col.data(), K, int64_t(OH) * OW);
      yb.noalias() = wm * cb;
    }
    for (int c = 0; c < Cout; ++c) yb.row(c).array() += b->value[c];
  }

  auto out = t.make(std::move(v), {x, w, b});
  out->backward_fn = [o = out.get(), x, w, b, pad, B, Cin, H, W, Cout, k, OH, OW, K, pointwise]() {
    std::vector<S> col, dcol;
    if (!pointwise) col.resize(size_t(K) * OH * OW);
    CMapM<S> wm(w->value.ptr(), Cout, K);
    for (int bb = 0; bb < B; ++bb) {
      const S* xb = x->value.ptr() + int64_t(bb) * Cin * H * W;
      CMapM<S> gy(o->grad.ptr() + int64_t(bb) * Cout * OH * OW, Cout, int64_t(OH) * OW);
      if (b->needs_grad) {
        // Fixed-order accumulation keeps results independent of buffer
        // alignment (bitwise replay across runs).
        Tensor<S>& gb = b->grad_ref();
        const S* gp = o->grad.ptr() + int64_t(bb) * Cout * OH * OW;
        for (int c = 0; c < Cout; ++c) {
          S acc = S(0);
          for (int64_t i = 0; i < int64_t(OH) * OW; ++i) acc += gp[int64_t(c) * OH * OW + i];
          gb[c] += acc;
        }
      }
      if (w->needs_grad) {
        MapM<S> gw(w->grad_ref().ptr(), Cout, K);
        if (pointwise) {
          CMapM<S> cb(xb, K, int64_t(OH) * OW);
          gw.noalias() += gy * cb.transpose();
        } else {
          detail::im2col(xb, Cin, H, W, k, pad, col.data());
          CMapM<S> cb(col.data(), K, int64_t(OH) * OW);
          gw.noalias() += gy * cb.transpose();
        }
      }
      if (x->needs_grad) {
        S* gx = x->grad_ref().ptr() + int64_t(bb) * Cin * H * W;
        if (pointwise) {
          MapM<S> gxm(gx, K, int64_t(OH) * OW);
          gxm.noalias() += wm.transpose() * gy;
        } else {
          dcol.resize(size_t(K) * OH * OW);
          MapM<S> dc(dcol.data(), K, int64_t(OH) * OW);
          dc.noalias() = wm.transpose() * gy;
          detail::col2im_add(dcol.data(), Cin, H, W, k, pad, gx);
        }
      }
    }
  };
  return out;
}

// 2x2 max-pool, stride 2, floor semantics on odd sizes.
template <typename S>
Var<S> maxpool2x2(Tape<S>& t, const Var<S>& x) {
  const int B = x->value.dim(0), C = x->value.dim(1), H = x->value.dim(2), W = x->value.dim(3);
  const int OH = H / 2, OW = W / 2;
  if (OH == 0 || OW == 0) throw NumericError("maxpool2x2: input too small");
  Tensor<S> v({B, C, OH, OW});
  auto idx = std::make_shared<std::vector<int32_t>>(size_t(B) * C * OH * OW);
  int64_t n = 0;
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      const S* p = x->value.ptr() + (int64_t(b) * C + c) * H * W;
      for (int i = 0; i < OH; ++i)
        for (int j = 0; j < OW; ++j, ++n) {
          int best = (2 * i) * W + 2 * j;
          S bv = p[best];
          const int cand[3] = {(2 * i) * W + 2 * j + 1, (2 * i + 1) * W + 2 * j, (2 * i + 1) * W + 2 * j + 1};
          for (int q : cand)
            if (p[q] > bv) {
              bv = p[q];
              best = q;
            }
          v[n] = bv;
          (*idx)[size_t(n)] = best;
        }
    }
  auto out = t.make(std::move(v), {x});
  out->backward_fn = [o = out.get(), x, idx, B, C, H, W, OH, OW]() {
    if (!x->needs_grad) return;
    Tensor<S>& gx = x->grad_ref();
    int64_t n = 0;
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c) {
        S* gp = gx.ptr() + (int64_t(b) * C + c) * H * W;
        for (int i = 0; i < OH * OW; ++i, ++n) gp[(*idx)[size_t(n)]] += o->grad[n];
      }
  };
  return out;
}

// Bilinear resize of [B,C,H,W] to (Ho,Wo) with half-pixel centers.
template <typename S>
Var<S> upsample_bilinear(Tape<S>& t, const Var<S>& x, int Ho, int Wo) {
  const int B = x->value.dim(0), C = x->value.dim(1), H = x->value.dim(2), W = x->value.dim(3);
  struct Lerp {
    int i0, i1;
    S w1;
  };
  auto make_lut = [](int in, int out) {
    std::vector<Lerp> lut(out);
    const double scale = double(in) / double(out);
    for (int o = 0; o < out; ++o) {
      double src = (o + 0.5) * scale - 0.5;
      if (src < 0) src = 0;
      int i0 = static_cast<int>(src);
      if (i0 > in - 1) i0 = in - 1;
      const int i1 = std::min(i0 + 1, in - 1);
      lut[o] = {i0, i1, static_cast<S>(src - i0)};
    }
    return lut;
  };
  auto li = std::make_shared<std::vector<Lerp>>(make_lut(H, Ho));
  auto lj = std::make_shared<std::vector<Lerp>>(make_lut(W, Wo));
  Tensor<S> v({B, C, Ho, Wo});
  for (int bc = 0; bc < B * C; ++bc) {
    const S* p = x->value.ptr() + int64_t(bc) * H * W;
    S* q = v.ptr() + int64_t(bc) * Ho * Wo;
    for (int i = 0; i < Ho; ++i) {
      const auto& ri = (*li)[i];
      for (int j = 0; j < Wo; ++j) {
        const auto& rj = (*lj)[j];
        const S a = p[ri.i0 * W + rj.i0], b2 = p[ri.i0 * W + rj.i1];
        const S c2 = p[ri.i1 * W + rj.i0], d = p[ri.i1 * W + rj.i1];
        const S top = a + rj.w1 * (b2 - a), bot = c2 + rj.w1 * (d - c2);
        q[int64_t(i) * Wo + j] = top + ri.w1 * (bot - top);
      }
    }
  }
  auto out = t.make(std::move(v), {x});
  out->backward_fn = [o = out.get(), x, li, lj, B, C, H, W, Ho, Wo]() {
    if (!x->needs_grad) return;
    Tensor<S>& gx = x->grad_ref();
    for (int bc = 0; bc < B * C; ++bc) {
      S* gp = gx.ptr() + int64_t(bc) * H * W;
      const S* gq = o->grad.ptr() + int64_t(bc) * Ho * Wo;
      for (int i = 0; i < Ho; ++i) {
        const auto& ri = (*li)[i];
        for (int j = 0; j < Wo; ++j) {
          const auto& rj = (*lj)[j];
          const S g = gq[int64_t(i) * Wo + j];
          gp[ri.i0 * W + rj.i0] += (S(1) - ri.w1) * (S(1) - rj.w1) * g;
          gp[ri.i0 * W + rj.i1] += (S(1) - ri.w1) * rj.w1 * g;
          gp[ri.i1 * W + rj.i0] += ri.w1 * (S(1) - rj.w1) * g;
          gp[ri.i1 * W + rj.i1] += ri.w1 * rj.w1 * g;
        }
      }
    }
  };
  return out;
}

// Global spatial pools used by channel attention. [B,C,H,W] -> [B,C].
template <typename S>
Var<S> global_avgpool(Tape<S>& t, const Var<S>& x) {
  const int B = x->value.dim(0), C = x->value.dim(1);
  const int64_t hw = x->value.numel() / (int64_t(B) * C);
  Tensor<S> v({B, C});
  for (int i = 0; i < B * C; ++i) {
    S acc = S(0);
    const S* p = x->value.ptr() + int64_t(i) * hw;
    for (int64_t j = 0; j < hw; ++j) acc += p[j];
    v[i] = acc / static_cast<S>(hw);
  }
  auto out = t.make(std::move(v), {x});
  out->backward_fn = [o = out.get(), x, B, C, hw]() {
    if (!x->needs_grad) return;
    Tensor<S>& gx = x->grad_ref();
    for (int i = 0; i < B * C; ++i) {
      const S g = o->grad[i] / static_cast<S>(hw);
      S* p = gx.ptr() + int64_t(i) * hw;
      for (int64_t j = 0; j < hw; ++j) p[j] += g;
    }
  };
  return out;
}

template <typename S>
Var<S> global_maxpool(Tape<S>& t, const Var<S>& x) {
  const int B = x->value.dim(0), C = x->value.dim(1);
  const int64_t hw = x->value.numel() / (int64_t(B) * C);
  Tensor<S> v({B, C});
  auto idx = std::make_shared<std::vector<int64_t>>(size_t(B) * C);
  for (int i = 0; i < B * C; ++i) {
    const S* p = x->value.ptr() + int64_t(i) * hw;
    int64_t best = 0;
    for (int64_t j = 1; j < hw; ++j)
      if (p[j] > p[best]) best = j;
    v[i] = p[best];
    (*idx)[size_t(i)] = best;
  }
  auto out = t.make(std::move(v), {x});
  out->backward_fn = [o = out.get(), x, idx, B, C, hw]() {
    if (!x->needs_grad) return;
    Tensor<S>& gx = x->grad_ref();
    for (int i = 0; i < B * C; ++i) gx[int64_t(i) * hw + (*idx)[size_t(i)]] += o->grad[i];
  };
  return out;
}

// Per-position pools across channels. [B,C,H,W] -> [B,1,H,W].
template <typename S>
Var<S> channel_avgpool(Tape<S>& t, const Var<S>& x) {
  const int B = x->value.dim(0), C = x->value.dim(1), H = x->value.dim(2), W = x->value.dim(3);
  const int64_t hw = int64_t(H) * W;
  Tensor<S> v({B, 1, H, W});
  for (int b = 0; b < B; ++b)
    for (int64_t j = 0; j < hw; ++j) {
      S acc = S(0);
      for (int c = 0; c < C; ++c) acc += x->value[(int64_t(b) * C + c) * hw + j];
      v[int64_t(b) * hw + j] = acc / static_cast<S>(C);
    }
  auto out = t.make(std::move(v), {x});
  out->backward_fn = [o = out.get(), x, B, C, hw]() {
    if (!x->needs_grad) return;
    Tensor<S>& gx = x->grad_ref();
    for (int b = 0; b < B; ++b)
      for (int64_t j = 0; j < hw; ++j) {
        const S g = o->grad[int64_t(b) * hw + j] / static_cast<S>(C);
        for (int c = 0; c < C; ++c) gx[(int64_t(b) * C + c) * hw + j] += g;
      }
  };
  return out;
}

template <typename S>
Var<S> channel_maxpool(Tape<S>& t, const Var<S>& x) {
  const int B = x->value.dim(0), C = x->value.dim(1), H = x->value.dim(2), W = x->value.dim(3);
  const int64_t hw = int64_t(H) * W;
  Tensor<S> v({B, 1, H, W});
  auto idx = std::make_shared<std::vector<int32_t>>(size_t(B) * hw);
  for (int b = 0; b < B; ++b)
    for (int64_t j = 0; j < hw; ++j) {
      int best = 0;
      S bv = x->value[(int64_t(b) * C) * hw + j];
      for (int c = 1; c < C; ++c) {
        const S cv = x->value[(int64_t(b) * C + c) * hw + j];
        if (cv > bv) {
          bv = cv;
          best = c;
        }
      }
      v[int64_t(b) * hw + j] = bv;
      (*idx)[size_t(int64_t(b) * hw + j)] = best;
    }
  auto out = t.make(std::move(v), {x});
  out->backward_fn = [o = out.get(), x, idx, B, C, hw]() {
    if (!x->needs_grad) return;
    Tensor<S>& gx = x->grad_ref();
    for (int b = 0; b < B; ++b)
      for (int64_t j = 0; j < hw; ++j)
        gx[(int64_t(b) * C + (*idx)[size_t(int64_t(b) * hw + j)]) * hw + j] += o->grad[int64_t(b) * hw + j];
  };
  return out;
}

// Max-pool a binary mask [K,H,W] by an integer factor; used for the
// low-resolution localization target so small lesions survive.
template <typename S>
Tensor<S> maxpool_mask(const Tensor<S>& m, int factor) {
  const int K = m.dim(0), H = m.dim(1), W = m.dim(2);
  const int OH = H / factor, OW = W / factor;
  Tensor<S> out({K, OH, OW});
  for (int k = 0; k < K; ++k)
    for (int i = 0; i < OH; ++i)
      for (int j = 0; j < OW; ++j) {
        S v = S(0);
        for (int a = 0; a < factor; ++a)
          for (int b = 0; b < factor; ++b) v = std::max(v, m.at(k, i * factor + a, j * factor + b));
        out.at(k, i, j) = v;
      }
  return out;
}

}  // namespace ops
}  // namespace lesionseg
