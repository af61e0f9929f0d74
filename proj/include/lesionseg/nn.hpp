#pragma once

#include <cmath>
#include <numeric>
#include <string>

#include "lesionseg/autograd.hpp"
#include "lesionseg/ops.hpp"
#include "lesionseg/ops_attention.hpp"
#include "lesionseg/ops_conv.hpp"
#include "lesionseg/ops_norm.hpp"
#include "lesionseg/rng.hpp"

namespace lesionseg {
namespace nn {

// Normalization is batch-independent throughout (desk-scale batches are
// small); group count divides any channel width that occurs in practice.
inline int norm_groups(int channels) { return std::gcd(channels, 8); }

template <typename S>
Tensor<S> kaiming_normal(Shape shape, int fan_in, Rng& rng) {
  Tensor<S> t(std::move(shape));
  const double std = std::sqrt(2.0 / fan_in);
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<S>(rng.normal(0.0, std));
  return t;
}

template <typename S>
Tensor<S> trunc_normal_like(Shape shape, double std, Rng& rng) {
  Tensor<S> t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) {
    double v = rng.normal(0.0, std);
    while (std::abs(v) > 2 * std) v = rng.normal(0.0, std);
    t[i] = static_cast<S>(v);
  }
  return t;
}

template <typename S>
struct Conv2d {
  Param<S> w, b;
  int pad;

  Conv2d() = default;
  Conv2d(const std::string& name, int cin, int cout, int k, Rng& rng, int pad_ = -1)
      : w(name + ".w", kaiming_normal<S>({cout, cin, k, k}, cin * k * k, rng)),
        b(name + ".b", Tensor<S>({cout})),
        pad(pad_ < 0 ? k / 2 : pad_) {}

  Var<S> forward(Tape<S>& t, const Var<S>& x) {
    return ops::conv2d(t, x, t.leaf(w), t.leaf(b), pad);
  }

  template <typename F>
  void visit(F&& f) {
    f(w);
    f(b);
  }
};

template <typename S>
struct GroupNorm {
  Param<S> gamma, beta;
  int groups;

  GroupNorm() = default;
  GroupNorm(const std::string& name, int channels)
      : gamma(name + ".g", Tensor<S>({channels}, S(1))),
        beta(name + ".b", Tensor<S>({channels})),
        groups(norm_groups(channels)) {}

  Var<S> forward(Tape<S>& t, const Var<S>& x) {
    return ops::group_norm(t, x, t.leaf(gamma), t.leaf(beta), groups);
  }

  template <typename F>
  void visit(F&& f) {
    f(gamma);
    f(beta);
  }
};

template <typename S>
struct LayerNorm {
  Param<S> gamma, beta;

  LayerNorm() = default;
  LayerNorm(const std::string& name, int channels)
      : gamma(name + ".g", Tensor<S>({channels}, S(1))), beta(name + ".b", Tensor<S>({channels})) {}

  Var<S> forward(Tape<S>& t, const Var<S>& x) {
    return ops::layer_norm(t, x, t.leaf(gamma), t.leaf(beta));
  }

  template <typename F>
  void visit(F&& f) {
    f(gamma);
    f(beta);
  }
};

template <typename S>
struct Linear {
  Param<S> w, b;

  Linear() = default;
  Linear(const std::string& name, int cin, int cout, Rng& rng)
      : w(name + ".w", kaiming_normal<S>({cout, cin}, cin, rng)), b(name + ".b", Tensor<S>({cout})) {}

  Var<S> forward(Tape<S>& t, const Var<S>& x) {
    return ops::linear(t, x, t.leaf(w), t.leaf(b));
  }

  template <typename F>
  void visit(F&& f) {
    f(w);
    f(b);
  }
};

// conv3x3 + GroupNorm + ReLU
template <typename S>
struct ConvBlock {
  Conv2d<S> conv;
  GroupNorm<S> norm;

  ConvBlock() = default;
  ConvBlock(const std::string& name, int cin, int cout, Rng& rng)
      : conv(name + ".conv", cin, cout, 3, rng), norm(name + ".norm", cout) {}

  Var<S> forward(Tape<S>& t, const Var<S>& x) {
    return ops::relu(t, norm.forward(t, conv.forward(t, x)));
  }

  template <typename F>
  void visit(F&& f) {
    conv.visit(f);
    norm.visit(f);
  }
};

// Two 3x3 convolutions with a projection shortcut when widths differ.
template <typename S>
struct ResidualBlock {
  Conv2d<S> conv1, conv2;
  GroupNorm<S> norm1, norm2;
  bool has_proj = false;
  Conv2d<S> proj;

  ResidualBlock() = default;
  ResidualBlock(const std::string& name, int cin, int cout, Rng& rng)
      : conv1(name + ".c1", cin, cout, 3, rng),
        conv2(name + ".c2", cout, cout, 3, rng),
        norm1(name + ".n1", cout),
        norm2(name + ".n2", cout),
        has_proj(cin != cout) {
    if (has_proj) proj = Conv2d<S>(name + ".proj", cin, cout, 1, rng);
  }

  Var<S> forward(Tape<S>& t, const Var<S>& x) {
    auto h = ops::relu(t, norm1.forward(t, conv1.forward(t, x)));
    h = norm2.forward(t, conv2.forward(t, h));
    auto sc = has_proj ? proj.forward(t, x) : x;
    return ops::relu(t, ops::add(t, h, sc));
  }

  template <typename F>
  void visit(F&& f) {
    conv1.visit(f);
    norm1.visit(f);
    conv2.visit(f);
    norm2.visit(f);
    if (has_proj) proj.visit(f);
  }
};

}  // namespace nn
}  // namespace lesionseg
