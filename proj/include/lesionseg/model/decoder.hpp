#pragma once

#include <map>
#include <string>
#include <vector>

#include "lesionseg/losses.hpp"
#include "lesionseg/model/skip_fusion.hpp"
#include "lesionseg/nn.hpp"

namespace lesionseg {

// Spatial attention gate: a guidance map from a coarser level is upsampled,
// reduced to a single-logit map by a small convolutional block, and applied
// as a residual gain: out = f + f * sigmoid(gate).
template <typename S>
struct LesionGate {
  nn::Conv2d<S> conv1, conv2;
  nn::GroupNorm<S> norm;

  LesionGate() = default;
  LesionGate(const std::string& name, int guide_ch, int skip_ch, Rng& rng)
      : conv1(name + ".c1", guide_ch, skip_ch, 3, rng),
        conv2(name + ".c2", skip_ch, 1, 3, rng),
        norm(name + ".n1", skip_ch) {}

  // Split from `apply` so tests can force the gate logits directly.
  Var<S> gate_logits(Tape<S>& t, int h, int w, const Var<S>& guide) {
    auto up = ops::upsample_bilinear(t, guide, h, w);
    return conv2.forward(t, ops::relu(t, norm.forward(t, conv1.forward(t, up))));
  }

  Var<S> forward(Tape<S>& t, const Var<S>& skip, const Var<S>& guide) {
    return apply(t, skip, gate_logits(t, skip->value.dim(2), skip->value.dim(3), guide));
  }

  static Var<S> apply(Tape<S>& t, const Var<S>& skip, const Var<S>& logits) {
    if (logits->value.dim(2) != skip->value.dim(2) || logits->value.dim(3) != skip->value.dim(3))
      throw NumericError("lesion_gate: size mismatch after upsampling");
    return ops::add(t, skip, ops::mul_spatial_gate(t, skip, ops::sigmoid(t, logits)));
  }

  template <typename F>
  void visit(F&& f) {
    conv1.visit(f);
    norm.visit(f);
    conv2.visit(f);
  }
};

// Records which tensors fed each dense node, for structural tests.
using DecoderTrace = std::vector<std::pair<std::string, std::vector<std::string>>>;

// UNet++ decoder over rows 0..3 (row i at resolution H/2^i, width c_{i+1}),
// with top-down lesion gates on the f1..f3 skips (f4 enters ungated) and
// deep-supervision heads on x02, x03, x04 plus a low-resolution head on the
// bottleneck tensor.
template <typename S>
struct GatedDecoder {
  // Dense nodes, named x<row><col>.
  nn::ResidualBlock<S> x31, x21, x22, x11, x12, x13, x01, x02, x03, x04;
  LesionGate<S> gate3, gate2, gate1;  // for f3, f2, f1
  nn::Conv2d<S> head_aux1, head_aux2, head_main, head_lesion;

  GatedDecoder() = default;
  GatedDecoder(const ModelConfig& cfg, Rng& rng) {
    const auto& c = cfg.stage_channels;  // c[0..4] = c1..c5
    const int K = cfg.num_classes;
    x31 = nn::ResidualBlock<S>("dec.x31", c[3] + c[4], c[3], rng);
    x21 = nn::ResidualBlock<S>("dec.x21", c[2] + c[3], c[2], rng);
    x22 = nn::ResidualBlock<S>("dec.x22", 2 * c[2] + c[3], c[2], rng);
    x11 = nn::ResidualBlock<S>("dec.x11", c[1] + c[2], c[1], rng);
    x12 = nn::ResidualBlock<S>("dec.x12", 2 * c[1] + c[2], c[1], rng);
    x13 = nn::ResidualBlock<S>("dec.x13", 3 * c[1] + c[2], c[1], rng);
    x01 = nn::ResidualBlock<S>("dec.x01", c[0] + c[1], c[0], rng);
    x02 = nn::ResidualBlock<S>("dec.x02", 2 * c[0] + c[1], c[0], rng);
    x03 = nn::ResidualBlock<S>("dec.x03", 3 * c[0] + c[1], c[0], rng);
    x04 = nn::ResidualBlock<S>("dec.x04", 4 * c[0] + c[1], c[0], rng);
    gate3 = LesionGate<S>("dec.gate3", c[4], c[2], rng);
    gate2 = LesionGate<S>("dec.gate2", c[3], c[1], rng);
    gate1 = LesionGate<S>("dec.gate1", c[2], c[0], rng);
    head_aux1 = nn::Conv2d<S>("dec.head_aux1", c[0], K, 1, rng);
    head_aux2 = nn::Conv2d<S>("dec.head_aux2", c[0], K, 1, rng);
    head_main = nn::Conv2d<S>("dec.head_main", c[0], K, 1, rng);
    head_lesion = nn::Conv2d<S>("dec.head_lesion", c[4], 1, 1, rng);
  }

  HeadVars<S> forward(Tape<S>& t, const Var<S>& center, const FusedSkips<S>& skips,
                      DecoderTrace* trace = nullptr) {
    auto up_to = [&](const Var<S>& v, const Var<S>& like) {
      return ops::upsample_bilinear(t, v, like->value.dim(2), like->value.dim(3));
    };
    auto node = [&](nn::ResidualBlock<S>& blk, const char* name,
                    std::vector<std::pair<std::string, Var<S>>> inputs) {
      std::vector<Var<S>> vars;
      vars.reserve(inputs.size());
      std::vector<std::string> names;
      for (auto& [n, v] : inputs) {
        names.push_back(n);
        vars.push_back(v);
      }
      if (trace) trace->emplace_back(name, names);
      return blk.forward(t, ops::concat(t, 1, vars));
    };

    const Var<S>& f1 = skips.f[0];
    const Var<S>& f2 = skips.f[1];
    const Var<S>& f3 = skips.f[2];
    const Var<S>& f4 = skips.f[3];

    // Gate chain: f3 by center, f2 by x31, f1 by x22.
    auto f3g = gate3.forward(t, f3, center);
    auto v31 = node(x31, "x31", {{"f4", f4}, {"up(center)", up_to(center, f4)}});
    auto f2g = gate2.forward(t, f2, v31);
    auto v21 = node(x21, "x21", {{"x20", f3g}, {"up(x31)", up_to(v31, f3g)}});
    auto v22 = node(x22, "x22", {{"x20", f3g}, {"x21", v21}, {"up(x31)", up_to(v31, f3g)}});
    auto f1g = gate1.forward(t, f1, v22);
    auto v11 = node(x11, "x11", {{"x10", f2g}, {"up(x21)", up_to(v21, f2g)}});
    auto v12 = node(x12, "x12", {{"x10", f2g}, {"x11", v11}, {"up(x22)", up_to(v22, f2g)}});
    auto v13 =
        node(x13, "x13", {{"x10", f2g}, {"x11", v11}, {"x12", v12}, {"up(x22)", up_to(v22, f2g)}});
    auto v01 = node(x01, "x01", {{"x00", f1g}, {"up(x11)", up_to(v11, f1g)}});
    auto v02 = node(x02, "x02", {{"x00", f1g}, {"x01", v01}, {"up(x12)", up_to(v12, f1g)}});
    auto v03 =
        node(x03, "x03", {{"x00", f1g}, {"x01", v01}, {"x02", v02}, {"up(x13)", up_to(v13, f1g)}});
    auto v04 = node(x04, "x04", {{"x00", f1g},
                                 {"x01", v01},
                                 {"x02", v02},
                                 {"x03", v03},
                                 {"up(x13)", up_to(v13, f1g)}});

    HeadVars<S> heads;
    heads.z_aux1 = head_aux1.forward(t, v02);
    heads.z_aux2 = head_aux2.forward(t, v03);
    heads.z_main = head_main.forward(t, v04);
    heads.z_lesion = head_lesion.forward(t, center);
    return heads;
  }

  template <typename F>
  void visit(F&& f) {
    x31.visit(f);
    x21.visit(f);
    x22.visit(f);
    x11.visit(f);
    x12.visit(f);
    x13.visit(f);
    x01.visit(f);
    x02.visit(f);
    x03.visit(f);
    x04.visit(f);
    gate3.visit(f);
    gate2.visit(f);
    gate1.visit(f);
    head_aux1.visit(f);
    head_aux2.visit(f);
    head_main.visit(f);
    head_lesion.visit(f);
  }
};

}  // namespace lesionseg
