#pragma once

#include <array>
#include <string>
#include <vector>

#include "lesionseg/model/encoder.hpp"
#include "lesionseg/nn.hpp"

namespace lesionseg {

// Convolutional block attention: channel gate from pooled descriptors through
// a shared MLP, then a spatial gate from a 7x7 convolution over pooled maps.
template <typename S>
struct Cbam {
  nn::Linear<S> mlp1, mlp2;
  nn::Conv2d<S> spatial;

  Cbam() = default;
  Cbam(const std::string& name, int channels, int reduction, Rng& rng)
      : mlp1(name + ".mlp1", channels, std::max(4, channels / reduction), rng),
        mlp2(name + ".mlp2", std::max(4, channels / reduction), channels, rng),
        spatial(name + ".spatial", 2, 1, 7, rng, /*pad=*/0) {}

  struct Maps {
    Var<S> channel;  // [B,C] in (0,1)
    Var<S> spatial;  // [B,1,H,W] in (0,1)
  };

  Var<S> forward(Tape<S>& t, const Var<S>& x, Maps* maps = nullptr) {
    auto mlp = [&](const Var<S>& v) { return mlp2.forward(t, ops::relu(t, mlp1.forward(t, v))); };
    auto mc = ops::sigmoid(
        t, ops::add(t, mlp(ops::global_avgpool(t, x)), mlp(ops::global_maxpool(t, x))));
    auto xc = ops::mul_channel_gate(t, x, mc);
    auto pooled = ops::concat(t, 1, {ops::channel_avgpool(t, xc), ops::channel_maxpool(t, xc)});
    // Edge-replicating pad keeps the spatial gate constant on constant input.
    auto ms = ops::sigmoid(t, spatial.forward(t, ops::replicate_pad2d(t, pooled, 3)));
    if (maps) *maps = {mc, ms};
    return ops::mul_spatial_gate(t, xc, ms);
  }

  template <typename F>
  void visit(F&& f) {
    mlp1.visit(f);
    mlp2.visit(f);
    spatial.visit(f);
  }
};

// Attention-refined fused skips at levels 1..4 (f5 bypasses this stage and
// feeds the bottleneck).
template <typename S>
struct FusedSkips {
  std::array<Var<S>, 4> f;
};

template <typename S>
struct SkipFusion {
  std::array<nn::Conv2d<S>, 4> proj;  // 1x1, N*c_i -> c_i
  std::array<Cbam<S>, 4> cbam;

  SkipFusion() = default;
  SkipFusion(const std::vector<int>& channels, int num_streams, int reduction, Rng& rng) {
    for (int i = 0; i < 4; ++i) {
      proj[i] = nn::Conv2d<S>("fuse" + std::to_string(i + 1) + ".proj", num_streams * channels[i],
                              channels[i], 1, rng);
      cbam[i] = Cbam<S>("fuse" + std::to_string(i + 1) + ".cbam", channels[i],
                        reduction, rng);
    }
  }

  // Concatenate one level across streams and project back to c_i.
  Var<S> project_level(Tape<S>& t, int level, const std::vector<Var<S>>& maps) {
    for (const auto& m : maps)
      if (m->value.dim(2) != maps[0]->value.dim(2) || m->value.dim(3) != maps[0]->value.dim(3))
        throw NumericError("project_level: heterogeneous spatial sizes");
    auto cat = maps.size() == 1 ? maps[0] : ops::concat(t, 1, maps);
    return proj[level].forward(t, cat);
  }

  FusedSkips<S> forward(Tape<S>& t, const std::vector<FeaturePyramid<S>>& pyramids) {
    if (pyramids.empty()) throw NumericError("fuse_skips: no streams");
    FusedSkips<S> out;
    for (int i = 0; i < 4; ++i) {
      std::vector<Var<S>> level;
      level.reserve(pyramids.size());
      for (const auto& p : pyramids) level.push_back(p.f[i]);
      out.f[i] = cbam[i].forward(t, project_level(t, i, level));
    }
    return out;
  }

  template <typename F>
  void visit(F&& f) {
    for (int i = 0; i < 4; ++i) {
      proj[i].visit(f);
      cbam[i].visit(f);
    }
  }
};

}  // namespace lesionseg
