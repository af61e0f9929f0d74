#pragma once

#include <array>
#include <string>
#include <vector>

#include "lesionseg/config.hpp"
#include "lesionseg/nn.hpp"

namespace lesionseg {

// Per-modality feature pyramid f1..f5 at (H, H/2, H/4, H/8, H/16) with
// channels c1..c5.
template <typename S>
struct FeaturePyramid {
  std::array<Var<S>, 5> f;
  std::string modality;
};

// Five-stage CNN encoder: each stage is two conv blocks; stages 2..5 halve
// the grid with 2x2 max-pooling first.
template <typename S>
struct EncoderStream {
  std::array<nn::ConvBlock<S>, 5> block_a;
  std::array<nn::ConvBlock<S>, 5> block_b;
  std::string modality;

  EncoderStream() = default;
  EncoderStream(const std::string& name, const std::vector<int>& channels, std::string modality_,
                Rng& rng)
      : modality(std::move(modality_)) {
    int cin = 1;
    for (int s = 0; s < 5; ++s) {
      block_a[s] = nn::ConvBlock<S>(name + ".s" + std::to_string(s + 1) + "a", cin, channels[s], rng);
      block_b[s] =
          nn::ConvBlock<S>(name + ".s" + std::to_string(s + 1) + "b", channels[s], channels[s], rng);
      cin = channels[s];
    }
  }

  FeaturePyramid<S> forward(Tape<S>& t, const Var<S>& x) {
    FeaturePyramid<S> p;
    p.modality = modality;
    Var<S> h = x;
    for (int s = 0; s < 5; ++s) {
      if (s > 0) h = ops::maxpool2x2(t, h);
      h = block_b[s].forward(t, block_a[s].forward(t, h));
      p.f[s] = h;
    }
    return p;
  }

  template <typename F>
  void visit(F&& f) {
    for (int s = 0; s < 5; ++s) {
      block_a[s].visit(f);
      block_b[s].visit(f);
    }
  }
};

// N architecturally identical encoders with disjoint weights; input is a
// [B, M, H, W] slice batch, one channel per modality stream.
template <typename S>
struct MultiStreamEncoder {
  std::vector<EncoderStream<S>> streams;

  MultiStreamEncoder() = default;
  MultiStreamEncoder(const std::vector<int>& channels, const std::vector<std::string>& modalities,
                     Rng& rng) {
    streams.reserve(modalities.size());
    for (size_t m = 0; m < modalities.size(); ++m)
      streams.emplace_back("enc" + std::to_string(m), channels, modalities[m], rng);
  }

  std::vector<FeaturePyramid<S>> forward(Tape<S>& t, const Var<S>& x) {
    if (x->value.dim(1) != static_cast<int>(streams.size()))
      throw NumericError("encoder: input has " + std::to_string(x->value.dim(1)) +
                         " modalities, model expects " + std::to_string(streams.size()));
    std::vector<FeaturePyramid<S>> out;
    out.reserve(streams.size());
    for (size_t m = 0; m < streams.size(); ++m)
      out.push_back(streams[m].forward(t, ops::slice(t, x, 1, static_cast<int>(m), 1)));
    return out;
  }

  template <typename F>
  void visit(F&& f) {
    for (auto& s : streams) s.visit(f);
  }
};

}  // namespace lesionseg
