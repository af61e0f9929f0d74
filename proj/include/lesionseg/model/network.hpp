#pragma once

#include <functional>
#include <string>
#include <vector>

#include "lesionseg/model/bottleneck.hpp"
#include "lesionseg/model/decoder.hpp"
#include "lesionseg/model/encoder.hpp"
#include "lesionseg/model/skip_fusion.hpp"

namespace lesionseg {

// End-to-end segmentation network: N parallel CNN encoders, CBAM-refined
// fused skips, Swin + cross-modal-attention bottleneck, gated UNet++ decoder
// with four supervised heads. Inference consumers use z_main only.
template <typename S>
struct MultiStreamNet {
  ModelConfig cfg;
  std::vector<std::string> modalities;
  MultiStreamEncoder<S> encoder;
  SkipFusion<S> fusion;
  HybridBottleneck<S> bottleneck;
  GatedDecoder<S> decoder;

  MultiStreamNet() = default;
  MultiStreamNet(const ModelConfig& cfg_, const std::vector<std::string>& modalities_, Rng& rng)
      : cfg(cfg_),
        modalities(modalities_),
        encoder(cfg_.stage_channels, modalities_, rng),
        fusion(cfg_.stage_channels, static_cast<int>(modalities_.size()), cfg_.cbam_reduction, rng),
        bottleneck(cfg_, modalities_, rng),
        decoder(cfg_, rng) {
    if (static_cast<int>(modalities_.size()) != cfg_.num_streams)
      throw ConfigError("model: num_streams does not match modality list");
  }

  // x: [B, M, H, W] slice batch.
  HeadVars<S> forward(Tape<S>& t, const Var<S>& x, DecoderTrace* trace = nullptr) {
    if (x->value.dim(2) != cfg.input_h || x->value.dim(3) != cfg.input_w)
      throw ConfigError("network: input size " + std::to_string(x->value.dim(2)) + "x" +
                        std::to_string(x->value.dim(3)) + " does not match configured " +
                        std::to_string(cfg.input_h) + "x" + std::to_string(cfg.input_w));
    auto pyramids = encoder.forward(t, x);
    auto skips = fusion.forward(t, pyramids);
    std::vector<Var<S>> f5s;
    f5s.reserve(pyramids.size());
    for (auto& p : pyramids) f5s.push_back(p.f[4]);
    auto center = bottleneck.forward(t, f5s);
    return decoder.forward(t, center, skips, trace);
  }

  template <typename F>
  void visit(F&& f) {
    encoder.visit(f);
    fusion.visit(f);
    bottleneck.visit(f);
    decoder.visit(f);
  }

  std::vector<Param<S>*> parameters() {
    std::vector<Param<S>*> out;
    visit([&](Param<S>& p) { out.push_back(&p); });
    return out;
  }

  int64_t parameter_count() {
    int64_t n = 0;
    visit([&](Param<S>& p) { n += p.value.numel(); });
    return n;
  }
};

// Convenience: logits -> sigmoid probabilities for the main head only.
template <typename S>
Tensor<S> predict_probabilities(MultiStreamNet<S>& net, const Tensor<S>& batch) {
  Tape<S> t;
  auto heads = net.forward(t, t.input(batch));
  Tensor<S> probs(heads.z_main->value.shape);
  for (int64_t i = 0; i < probs.numel(); ++i) {
    const S z = heads.z_main->value[i];
    probs[i] = z >= S(0) ? S(1) / (S(1) + std::exp(-z)) : std::exp(z) / (S(1) + std::exp(z));
  }
  return probs;
}

}  // namespace lesionseg
