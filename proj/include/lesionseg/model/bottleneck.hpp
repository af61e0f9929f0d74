#pragma once

#include <algorithm>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "lesionseg/config.hpp"
#include "lesionseg/nn.hpp"

namespace lesionseg {

// ---------------------------------------------------------------------------
// Priority-based pairing of modality streams.
//
// Natural pairs are tried in the fixed order (T1w,T1c), (FLAIR,T2w),
// (DWI,ADC); leftovers keep their input-stream order. side_a / side_b list
// stream indices whose token sequences are concatenated to form T_A and T_B.
struct PairingPlan {
  std::vector<int> side_a;
  std::vector<int> side_b;
};

inline PairingPlan make_pairing_plan(const std::vector<std::string>& modalities) {
  const int n = static_cast<int>(modalities.size());
  if (n < 2) throw ConfigError("stream pairing requires at least 2 modalities");
  auto find = [&](const std::string& name) {
    for (int i = 0; i < n; ++i)
      if (modalities[static_cast<size_t>(i)] == name) return i;
    return -1;
  };
  std::vector<bool> used(static_cast<size_t>(n), false);
  std::vector<std::pair<int, int>> pairs;
  const std::pair<const char*, const char*> natural[3] = {
      {"T1w", "T1c"}, {"FLAIR", "T2w"}, {"DWI", "ADC"}};
  for (const auto& [a, b] : natural) {
    const int ia = find(a), ib = find(b);
    if (ia >= 0 && ib >= 0 && !used[static_cast<size_t>(ia)] && !used[static_cast<size_t>(ib)]) {
      pairs.emplace_back(ia, ib);
      used[static_cast<size_t>(ia)] = used[static_cast<size_t>(ib)] = true;
    }
  }
  std::vector<int> leftovers;
  for (int i = 0; i < n; ++i)
    if (!used[static_cast<size_t>(i)]) leftovers.push_back(i);

  PairingPlan plan;
  if (n == 2 && pairs.size() == 1) {
    // A lone natural pair cross-attends member vs. member.
    plan.side_a = {pairs[0].first};
    plan.side_b = {pairs[0].second};
    return plan;
  }
  if (pairs.size() >= 2) {
    // Alternate pairs across the two sides (|P|=2 puts one pair on each);
    // leftovers join both sides as universal context.
    for (size_t p = 0; p < pairs.size(); ++p) {
      auto& side = (p % 2 == 0) ? plan.side_a : plan.side_b;
      side.push_back(pairs[p].first);
      side.push_back(pairs[p].second);
    }
    for (int o : leftovers) {
      plan.side_a.push_back(o);
      plan.side_b.push_back(o);
    }
    return plan;
  }
  if (pairs.size() == 1 && leftovers.size() == 1) {
    plan.side_a = {pairs[0].first, pairs[0].second};
    plan.side_b = {leftovers[0]};
    return plan;
  }
  if (pairs.size() == 1 && leftovers.size() == 2) {
    // Second leftover serves as universal context on both sides.
    plan.side_a = {pairs[0].first, pairs[0].second, leftovers[1]};
    plan.side_b = {leftovers[0], leftovers[1]};
    return plan;
  }
  if (pairs.size() == 1) {
    // |O| >= 3: pair plus the first half of the leftovers vs. the rest.
    plan.side_a = {pairs[0].first, pairs[0].second};
    const size_t half = leftovers.size() / 2;
    for (size_t i = 0; i < half; ++i) plan.side_a.push_back(leftovers[i]);
    for (size_t i = half; i < leftovers.size(); ++i) plan.side_b.push_back(leftovers[i]);
    return plan;
  }
  // No natural pairs: split the streams in input order.
  const size_t half = leftovers.size() / 2;
  for (size_t i = 0; i < half; ++i) plan.side_a.push_back(leftovers[i]);
  for (size_t i = half; i < leftovers.size(); ++i) plan.side_b.push_back(leftovers[i]);
  return plan;
}

// ---------------------------------------------------------------------------
// Swin attention

inline std::shared_ptr<std::vector<int>> relative_position_index(int M) {
  const int L = M * M;
  auto idx = std::make_shared<std::vector<int>>(static_cast<size_t>(L) * L);
  for (int i = 0; i < L; ++i)
    for (int j = 0; j < L; ++j) {
      const int di = i / M - j / M + M - 1;
      const int dj = i % M - j % M + M - 1;
      (*idx)[static_cast<size_t>(i) * L + j] = di * (2 * M - 1) + dj;
    }
  return idx;
}

// Windowed multi-head self-attention with relative position bias, symmetric
// zero padding to a window multiple, cyclic shift, and additive masking that
// keeps attention within shift regions and away from pad tokens.
template <typename S>
struct WindowAttention {
  nn::Linear<S> qkv, proj;
  Param<S> rpb;  // [(2M-1)^2, heads]
  int heads = 4;
  int window = 7;

  WindowAttention() = default;
  WindowAttention(const std::string& name, int channels, int heads_, int window_, Rng& rng)
      : qkv(name + ".qkv", channels, 3 * channels, rng),
        proj(name + ".proj", channels, channels, rng),
        rpb(name + ".rpb",
            nn::trunc_normal_like<S>({(2 * window_ - 1) * (2 * window_ - 1), heads_}, 0.02, rng)),
        heads(heads_),
        window(window_) {}

  Var<S> forward(Tape<S>& t, const Var<S>& x, bool shifted) {
    const int B = x->value.dim(0), C = x->value.dim(1), h = x->value.dim(2), w = x->value.dim(3);
    const int M = window;
    const int Hp = (h + M - 1) / M * M, Wp = (w + M - 1) / M * M;
    if (Hp % M || Wp % M) throw NumericError("swin: window larger than padded grid");
    const int pt = (Hp - h) / 2, pb = Hp - h - pt;
    const int pl = (Wp - w) / 2, pr = Wp - w - pl;
    // Shifting is meaningful only when there is more than one window.
    const int s = (shifted && (Hp > M || Wp > M)) ? M / 2 : 0;
    const bool padded = pt || pb || pl || pr;

    Var<S> g = padded ? ops::pad2d(t, x, pt, pb, pl, pr) : x;
    if (s) g = ops::roll2d(t, g, -s, -s);

    const int nh = Hp / M, nw = Wp / M, nW = nh * nw, L = M * M;
    auto tokens = ops::window_partition(t, g, M);  // [B*nW, L, C]

    auto qkv_all = qkv.forward(t, tokens);  // [B*nW, L, 3C]
    auto q = ops::heads_split(t, ops::slice(t, qkv_all, 2, 0, C), heads);
    auto k = ops::heads_split(t, ops::slice(t, qkv_all, 2, C, C), heads);
    auto v = ops::heads_split(t, ops::slice(t, qkv_all, 2, 2 * C, C), heads);
    const S inv_sqrt_d = static_cast<S>(1.0 / std::sqrt(double(C) / heads));
    auto logits = ops::bmm_nt(t, ops::scale(t, q, inv_sqrt_d), k);  // [B*nW*heads, L, L]

    auto bias = ops::rpb_gather(t, t.leaf(rpb), relative_position_index(M), L);
    logits = ops::add_head_bias(t, logits, bias);

    if (padded || s) {
      // Region ids on the padded grid; pads get unique ids so nothing
      // attends across them.
      std::vector<int> ids(static_cast<size_t>(Hp) * Wp);
      auto zone = [&](int a, int extent) {
        if (s == 0) return 0;
        if (a < extent - M) return 0;
        if (a < extent - s) return 1;
        return 2;
      };
      for (int i = 0; i < Hp; ++i)
        for (int j = 0; j < Wp; ++j) {
          const bool real = i >= pt && i < pt + h && j >= pl && j < pl + w;
          ids[static_cast<size_t>(i) * Wp + j] = real ? zone(i, Hp) * 3 + zone(j, Wp) : 9 + i * Wp + j;
        }
      if (s) {
        std::vector<int> rolled(ids.size());
        for (int i = 0; i < Hp; ++i)
          for (int j = 0; j < Wp; ++j)
            rolled[static_cast<size_t>(i) * Wp + j] =
                ids[static_cast<size_t>((i + s) % Hp) * Wp + (j + s) % Wp];
        ids.swap(rolled);
      }
      auto mask = std::make_shared<Tensor<S>>(Shape{nW, L, L});
      for (int wh = 0; wh < nh; ++wh)
        for (int ww = 0; ww < nw; ++ww) {
          const int wi = wh * nw + ww;
          for (int a = 0; a < L; ++a)
            for (int b = 0; b < L; ++b) {
              const int ia = ids[static_cast<size_t>(wh * M + a / M) * Wp + ww * M + a % M];
              const int ib = ids[static_cast<size_t>(wh * M + b / M) * Wp + ww * M + b % M];
              mask->at(wi, a, b) = ia == ib ? S(0) : S(-1e9);
            }
        }
      auto group = std::make_shared<std::vector<int>>(static_cast<size_t>(B) * nW * heads);
      for (size_t n = 0; n < group->size(); ++n) (*group)[n] = static_cast<int>(n / heads % nW);
      logits = ops::add_mask(t, logits, mask, group);
    }

    auto attn = ops::softmax_lastdim(t, logits);
    auto ctx = ops::heads_merge(t, ops::bmm(t, attn, v), heads);  // [B*nW, L, C]
    auto out = proj.forward(t, ctx);
    auto grid = ops::window_reverse(t, out, M, B, Hp, Wp);
    if (s) grid = ops::roll2d(t, grid, s, s);
    if (padded) grid = ops::crop2d(t, grid, pt, pl, h, w);
    return grid;
  }

  template <typename F>
  void visit(F&& f) {
    qkv.visit(f);
    proj.visit(f);
    f(rpb);
  }
};

// One Swin block: pre-norm attention and MLP, both residual.
template <typename S>
struct SwinBlock {
  nn::LayerNorm<S> ln1, ln2;
  WindowAttention<S> attn;
  nn::Linear<S> mlp1, mlp2;
  bool shifted = false;

  SwinBlock() = default;
  SwinBlock(const std::string& name, int channels, int heads, int window, bool shifted_, Rng& rng)
      : ln1(name + ".ln1", channels),
        ln2(name + ".ln2", channels),
        attn(name + ".attn", channels, heads, window, rng),
        mlp1(name + ".mlp1", channels, 4 * channels, rng),
        mlp2(name + ".mlp2", 4 * channels, channels, rng),
        shifted(shifted_) {}

  // tokens: [B, h*w, C]
  Var<S> forward(Tape<S>& t, const Var<S>& tokens, int h, int w) {
    auto a = attn.forward(t, ops::detokenize(t, ln1.forward(t, tokens), h, w), shifted);
    auto x1 = ops::add(t, tokens, ops::tokenize(t, a));
    auto m = mlp2.forward(t, ops::gelu(t, mlp1.forward(t, ln2.forward(t, x1))));
    return ops::add(t, x1, m);
  }

  template <typename F>
  void visit(F&& f) {
    ln1.visit(f);
    attn.visit(f);
    ln2.visit(f);
    mlp1.visit(f);
    mlp2.visit(f);
  }
};

// A Swin layer = unshifted block followed by shifted block; a stack holds
// `depth` layers.
template <typename S>
struct SwinStack {
  std::vector<SwinBlock<S>> blocks;

  SwinStack() = default;
  SwinStack(const std::string& name, int channels, int depth, int heads, int window, Rng& rng) {
    for (int l = 0; l < depth; ++l) {
      blocks.emplace_back(name + ".l" + std::to_string(l) + "w", channels, heads, window, false, rng);
      blocks.emplace_back(name + ".l" + std::to_string(l) + "s", channels, heads, window, true, rng);
    }
  }

  Var<S> forward(Tape<S>& t, const Var<S>& x) {
    const int h = x->value.dim(2), w = x->value.dim(3);
    auto tokens = ops::tokenize(t, x);
    for (auto& b : blocks) tokens = b.forward(t, tokens, h, w);
    return ops::detokenize(t, tokens, h, w);
  }

  template <typename F>
  void visit(F&& f) {
    for (auto& b : blocks) b.visit(f);
  }
};

// ---------------------------------------------------------------------------
// Cross-modal attention fusion

template <typename S>
struct CrossAttentionResult {
  Var<S> enriched_a;  // [B, L_A, C]
  Var<S> enriched_b;  // [B, L_B, C]
};

template <typename S>
struct CrossModalFusion {
  nn::Linear<S> wq, wk, wv, wo;  // shared projections for both directions
  nn::LayerNorm<S> ln_a, ln_b;   // separate normalization per direction
  nn::Conv2d<S> fuse_proj;       // 1x1: (|A|+|B|) * C -> C
  nn::ResidualBlock<S> refine;
  int heads = 4;

  CrossModalFusion() = default;
  CrossModalFusion(const std::string& name, int channels, int heads_, int num_grids, Rng& rng)
      : wq(name + ".wq", channels, channels, rng),
        wk(name + ".wk", channels, channels, rng),
        wv(name + ".wv", channels, channels, rng),
        wo(name + ".wo", channels, channels, rng),
        ln_a(name + ".ln_a", channels),
        ln_b(name + ".ln_b", channels),
        fuse_proj(name + ".proj", num_grids * channels, channels, 1, rng),
        refine(name + ".refine", channels, channels, rng),
        heads(heads_) {}

  // One attention direction: queries from `qs`, keys/values from `kv`.
  Var<S> cross_attend(Tape<S>& t, const Var<S>& qs, const Var<S>& kv) {
    const int C = qs->value.dim(2);
    auto q = ops::heads_split(t, wq.forward(t, qs), heads);
    auto k = ops::heads_split(t, wk.forward(t, kv), heads);
    auto v = ops::heads_split(t, wv.forward(t, kv), heads);
    const S inv_sqrt_d = static_cast<S>(1.0 / std::sqrt(double(C) / heads));
    auto attn = ops::softmax_lastdim(t, ops::bmm_nt(t, ops::scale(t, q, inv_sqrt_d), k));
    return wo.forward(t, ops::heads_merge(t, ops::bmm(t, attn, v), heads));
  }

  CrossAttentionResult<S> enrich(Tape<S>& t, const Var<S>& ta, const Var<S>& tb) {
    if (ta->value.dim(2) != tb->value.dim(2))
      throw NumericError("cross_modal_fuse: channel mismatch between token sequences");
    CrossAttentionResult<S> r;
    r.enriched_a = ln_a.forward(t, ops::add(t, ta, cross_attend(t, ta, tb)));
    r.enriched_b = ln_b.forward(t, ops::add(t, tb, cross_attend(t, tb, ta)));
    return r;
  }

  // Full fusion: enrich both sides, de-tokenize every constituent grid,
  // concatenate, project, refine.
  Var<S> forward(Tape<S>& t, const Var<S>& ta, const Var<S>& tb, int h, int w) {
    const int L = h * w;
    if (ta->value.dim(1) % L || tb->value.dim(1) % L)
      throw NumericError("cross_modal_fuse: token count does not match grid");
    auto r = enrich(t, ta, tb);
    std::vector<Var<S>> grids;
    for (const Var<S>& seq : {r.enriched_a, r.enriched_b}) {
      const int k = seq->value.dim(1) / L;
      for (int i = 0; i < k; ++i)
        grids.push_back(ops::detokenize(t, ops::slice(t, seq, 1, i * L, L), h, w));
    }
    auto cat = grids.size() == 1 ? grids[0] : ops::concat(t, 1, grids);
    return refine.forward(t, fuse_proj.forward(t, cat));
  }

  template <typename F>
  void visit(F&& f) {
    wq.visit(f);
    wk.visit(f);
    wv.visit(f);
    wo.visit(f);
    ln_a.visit(f);
    ln_b.visit(f);
    fuse_proj.visit(f);
    refine.visit(f);
  }
};

// ---------------------------------------------------------------------------
// Hybrid bottleneck: per-stream Swin refinement, then cross-modal fusion.

template <typename S>
struct HybridBottleneck {
  std::vector<SwinStack<S>> swin;  // one stack per stream
  PairingPlan plan;
  CrossModalFusion<S> cmaf;
  // Single-stream fallback: projection + refinement without cross-attention.
  bool single_stream = false;
  nn::Conv2d<S> solo_proj;
  nn::ResidualBlock<S> solo_refine;

  HybridBottleneck() = default;
  HybridBottleneck(const ModelConfig& cfg, const std::vector<std::string>& modalities, Rng& rng) {
    const int C = cfg.stage_channels.back();
    for (size_t m = 0; m < modalities.size(); ++m)
      swin.emplace_back("swin" + std::to_string(m), C, cfg.swin_layers, cfg.swin_heads,
                        cfg.swin_window, rng);
    if (modalities.size() >= 2) {
      plan = make_pairing_plan(modalities);
      const int num_grids = static_cast<int>(plan.side_a.size() + plan.side_b.size());
      cmaf = CrossModalFusion<S>("cmaf", C, cfg.swin_heads, num_grids, rng);
    } else {
      single_stream = true;
      solo_proj = nn::Conv2d<S>("cmaf.solo_proj", C, C, 1, rng);
      solo_refine = nn::ResidualBlock<S>("cmaf.solo_refine", C, C, rng);
    }
  }

  // f5s: one [B,C,h,w] map per stream.
  Var<S> forward(Tape<S>& t, const std::vector<Var<S>>& f5s) {
    std::vector<Var<S>> refined;
    refined.reserve(f5s.size());
    for (size_t m = 0; m < f5s.size(); ++m) refined.push_back(swin[m].forward(t, f5s[m]));
    const int h = refined[0]->value.dim(2), w = refined[0]->value.dim(3);
    if (single_stream)
      return solo_refine.forward(t, solo_proj.forward(t, refined[0]));
    auto side = [&](const std::vector<int>& idx) {
      std::vector<Var<S>> toks;
      toks.reserve(idx.size());
      for (int i : idx) toks.push_back(ops::tokenize(t, refined[static_cast<size_t>(i)]));
      return toks.size() == 1 ? toks[0] : ops::concat(t, 1, toks);
    };
    return cmaf.forward(t, side(plan.side_a), side(plan.side_b), h, w);
  }

  template <typename F>
  void visit(F&& f) {
    for (auto& s : swin) s.visit(f);
    if (single_stream) {
      solo_proj.visit(f);
      solo_refine.visit(f);
    } else {
      cmaf.visit(f);
    }
  }
};

}  // namespace lesionseg
