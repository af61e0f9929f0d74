#pragma once

#include <cmath>
#include <memory>
#include <vector>

#include "lesionseg/autograd.hpp"
#include "lesionseg/ops.hpp"

namespace lesionseg {
namespace ops {

// Affine map on the trailing dim: [..., Cin] -> [..., Cout]. w:[Cout,Cin], b:[Cout].
template <typename S>
Var<S> linear(Tape<S>& t, const Var<S>& x, const Var<S>& w, const Var<S>& b) {
  const int Cin = x->value.dim(x->value.rank() - 1);
  const int Cout = w->value.dim(0);
  if (w->value.dim(1) != Cin) throw NumericError("linear: dim mismatch");
  const int64_t R = x->value.numel() / Cin;
  Shape out_shape = x->value.shape;
  out_shape.back() = Cout;
  Tensor<S> v(out_shape);
  {
    CMapM<S> xm(x->value.ptr(), R, Cin);
    CMapM<S> wm(w->value.ptr(), Cout, Cin);
    MapM<S> ym(v.ptr(), R, Cout);
    ym.noalias() = xm * wm.transpose();
    for (int c = 0; c < Cout; ++c) ym.col(c).array() += b->value[c];
  }
  auto out = t.make(std::move(v), {x, w, b});
  out->backward_fn = [o = out.get(), x, w, b, R, Cin, Cout]() {
    CMapM<S> gy(o->grad.ptr(), R, Cout);
    if (b->needs_grad) {
      // Fixed-order accumulation: bitwise-reproducible across runs.
      Tensor<S>& gb = b->grad_ref();
      for (int64_t r = 0; r < R; ++r)
        for (int c = 0; c < Cout; ++c) gb[c] += o->grad[r * Cout + c];
    }
    if (w->needs_grad) {
      CMapM<S> xm(x->value.ptr(), R, Cin);
      MapM<S> gw(w->grad_ref().ptr(), Cout, Cin);
      gw.noalias() += gy.transpose() * xm;
    }
    if (x->needs_grad) {
      CMapM<S> wm(w->value.ptr(), Cout, Cin);
      MapM<S> gx(x->grad_ref().ptr(), R, Cin);
      gx.noalias() += gy * wm;
    }
  };
  return out;
}

// Batched matmul: [nb,M,K] x [nb,K,N] -> [nb,M,N].
template <typename S>
Var<S> bmm(Tape<S>& t, const Var<S>& a, const Var<S>& b) {
  const int nb = a->value.dim(0), M = a->value.dim(1), K = a->value.dim(2);
  const int N = b->value.dim(2);
  if (b->value.dim(0) != nb || b->value.dim(1) != K) throw NumericError("bmm: shape mismatch");
  Tensor<S> v({nb, M, N});
  for (int i = 0; i < nb; ++i) {
    CMapM<S> am(a->value.ptr() + int64_t(i) * M * K, M, K);
    CMapM<S> bm(b->value.ptr() + int64_t(i) * K * N, K, N);
    MapM<S> ym(v.ptr() + int64_t(i) * M * N, M, N);
    ym.noalias() = am * bm;
  }
  auto out = t.make(std::move(v), {a, b});
  out->backward_fn = [o = out.get(), a, b, nb, M, K, N]() {
    for (int i = 0; i < nb; ++i) {
      CMapM<S> gy(o->grad.ptr() + int64_t(i) * M * N, M, N);
      if (a->needs_grad) {
        CMapM<S> bm(b->value.ptr() + int64_t(i) * K * N, K, N);
        MapM<S> ga(a->grad_ref().ptr() + int64_t(i) * M * K, M, K);
        ga.noalias() += gy * bm.transpose();
      }
      if (b->needs_grad) {
        CMapM<S> am(a->value.ptr() + int64_t(i) * M * K, M, K);
        MapM<S> gb(b->grad_ref().ptr() + int64_t(i) * K * N, K, N);
        gb.noalias() += am.transpose() * gy;
      }
    }
  };
  return out;
}

// Batched matmul with transposed second operand: [nb,M,K] x [nb,N,K] -> [nb,M,N].
template <typename S>
Var<S> bmm_nt(Tape<S>& t, const Var<S>& a, const Var<S>& b) {
  const int nb = a->value.dim(0), M = a->value.dim(1), K = a->value.dim(2);
  const int N = b->value.dim(1);
  if (b->value.dim(0) != nb || b->value.dim(2) != K) throw NumericError("bmm_nt: shape mismatch");
  Tensor<S> v({nb, M, N});
  for (int i = 0; i < nb; ++i) {
    CMapM<S> am(a->value.ptr() + int64_t(i) * M * K, M, K);
    CMapM<S> bm(b->value.ptr() + int64_t(i) * N * K, N, K);
    MapM<S> ym(v.ptr() + int64_t(i) * M * N, M, N);
    ym.noalias() = am * bm.transpose();
  }
  auto out = t.make(std::move(v), {a, b});
  out->backward_fn = [o = out.get(), a, b, nb, M, K, N]() {
    for (int i = 0; i < nb; ++i) {
      CMapM<S> gy(o->grad.ptr() + int64_t(i) * M * N, M, N);
      if (a->needs_grad) {
        CMapM<S> bm(b->value.ptr() + int64_t(i) * N * K, N, K);
        MapM<S> ga(a->grad_ref().ptr() + int64_t(i) * M * K, M, K);
        ga.noalias() += gy * bm;
      }
      if (b->needs_grad) {
        CMapM<S> am(a->value.ptr() + int64_t(i) * M * K, M, K);
        MapM<S> gb(b->grad_ref().ptr() + int64_t(i) * N * K, N, K);
        gb.noalias() += gy.transpose() * am;
      }
    }
  };
  return out;
}

// Softmax over the trailing dim.
template <typename S>
Var<S> softmax_lastdim(Tape<S>& t, const Var<S>& x) {
  const int C = x->value.dim(x->value.rank() - 1);
  const int64_t rows = x->value.numel() / C;
  Tensor<S> v(x->value.shape);
  for (int64_t r = 0; r < rows; ++r) {
    const S* p = x->value.ptr() + r * C;
    S* q = v.ptr() + r * C;
    S mx = p[0];
    for (int c = 1; c < C; ++c) mx = std::max(mx, p[c]);
    S sum = S(0);
    for (int c = 0; c < C; ++c) {
      q[c] = std::exp(p[c] - mx);
      sum += q[c];
    }
    for (int c = 0; c < C; ++c) q[c] /= sum;
  }
  auto out = t.make(std::move(v), {x});
  out->backward_fn = [o = out.get(), x, rows, C]() {
    if (!x->needs_grad) return;
    Tensor<S>& gx = x->grad_ref();
    for (int64_t r = 0; r < rows; ++r) {
      const S* y = o->value.ptr() + r * C;
      const S* g = o->grad.ptr() + r * C;
      S dot = S(0);
      for (int c = 0; c < C; ++c) dot += y[c] * g[c];
      S* q = gx.ptr() + r * C;
      for (int c = 0; c < C; ++c) q[c] += y[c] * (g[c] - dot);
    }
  };
  return out;
}

// Adds a constant per-group mask to attention logits. x:[N,L,L]; mask:[M,L,L];
// group_of[n] selects the mask slab for batch row n.
template <typename S>
Var<S> add_mask(Tape<S>& t, const Var<S>& x, std::shared_ptr<Tensor<S>> mask,
                std::shared_ptr<std::vector<int>> group_of) {
  const int N = x->value.dim(0);
  const int64_t LL = int64_t(x->value.dim(1)) * x->value.dim(2);
  Tensor<S> v(x->value.shape);
  for (int n = 0; n < N; ++n) {
    const S* m = mask->ptr() + int64_t((*group_of)[size_t(n)]) * LL;
    const S* p = x->value.ptr() + int64_t(n) * LL;
    S* q = v.ptr() + int64_t(n) * LL;
    for (int64_t i = 0; i < LL; ++i) q[i] = p[i] + m[i];
  }
  auto out = t.make(std::move(v), {x});
  out->backward_fn = [o = out.get(), x]() {
    if (!x->needs_grad) return;
    Tensor<S>& gx = x->grad_ref();
    for (int64_t i = 0; i < gx.numel(); ++i) gx[i] += o->grad[i];
  };
  return out;
}

// Relative position bias lookup. table:[(2M-1)^2, heads] (a Param leaf),
// index:[L*L] of rows into the table. Produces [heads, L, L] broadcastable
// by tiling at the call site.
template <typename S>
Var<S> rpb_gather(Tape<S>& t, const Var<S>& table, std::shared_ptr<std::vector<int>> index, int L) {
  const int heads = table->value.dim(1);
  Tensor<S> v({heads, L, L});
  for (int h = 0; h < heads; ++h)
    for (int64_t i = 0; i < int64_t(L) * L; ++i)
      v[int64_t(h) * L * L + i] = table->value[int64_t((*index)[size_t(i)]) * heads + h];
  auto out = t.make(std::move(v), {table});
  out->backward_fn = [o = out.get(), table, index, L, heads]() {
    if (!table->needs_grad) return;
    Tensor<S>& gt = table->grad_ref();
    for (int h = 0; h < heads; ++h)
      for (int64_t i = 0; i < int64_t(L) * L; ++i)
        gt[int64_t((*index)[size_t(i)]) * heads + h] += o->grad[int64_t(h) * L * L + i];
  };
  return out;
}

// Adds bias:[heads,L,L] onto logits:[nw*heads,L,L] (window-major, head-minor).
template <typename S>
Var<S> add_head_bias(Tape<S>& t, const Var<S>& x, const Var<S>& bias) {
  const int N = x->value.dim(0);
  const int heads = bias->value.dim(0);
  const int64_t LL = int64_t(x->value.dim(1)) * x->value.dim(2);
  Tensor<S> v(x->value.shape);
  for (int n = 0; n < N; ++n) {
    const S* b = bias->value.ptr() + int64_t(n % heads) * LL;
    const S* p = x->value.ptr() + int64_t(n) * LL;
    S* q = v.ptr() + int64_t(n) * LL;
    for (int64_t i = 0; i < LL; ++i) q[i] = p[i] + b[i];
  }
  auto out = t.make(std::move(v), {x, bias});
  out->backward_fn = [o = out.get(), x, bias, N, heads, LL]() {
    if (x->needs_grad) {
      Tensor<S>& gx = x->grad_ref();
      for (int64_t i = 0; i < gx.numel(); ++i) gx[i] += o->grad[i];
    }
    if (bias->needs_grad) {
      Tensor<S>& gb = bias->grad_ref();
      for (int n = 0; n < N; ++n) {
        S* b = gb.ptr() + int64_t(n % heads) * LL;
        const S* g = o->grad.ptr() + int64_t(n) * LL;
        for (int64_t i = 0; i < LL; ++i) b[i] += g[i];
      }
    }
  };
  return out;
}

}  // namespace ops
}  // namespace lesionseg
