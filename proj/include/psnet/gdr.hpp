#pragma once

#include <array>

#include <torch/torch.h>

#include "psnet/encoder.hpp"
#include "psnet/ops.hpp"

namespace psnet {

// Intermediate tensors of the gather pass, kept for inspection and tests.
struct GatherTrace {
  std::array<torch::Tensor, 4> filtered;   // mask-weighted level features
  std::array<torch::Tensor, 4> top_down;   // y_i
  std::array<torch::Tensor, 4> bottom_up;  // y_i'
  torch::Tensor fused;                     // y^f, level-2 resolution
};

struct GdrOutput {
  torch::Tensor mask5;                       // (N, 1, H/32, W/32), sigmoid
  torch::Tensor fused;                       // (N, C_d, H/4, W/4)
  std::array<torch::Tensor, 4> reinforced;   // f_i^r for levels 2..5

  const torch::Tensor& reinforced_level(int i) const { return reinforced.at(static_cast<std::size_t>(i - 2)); }
};

// Gather Diffusion Reinforcement: filters the projected dominant pyramid with a
// coarse semantic mask from level 5, fuses the levels top-down then bottom-up,
// merges them at level-2 resolution and diffuses the result back to every level.
class GdrImpl : public torch::nn::Module {
 public:
  explicit GdrImpl(std::int64_t channels) : channels_(channels) {
    const auto c = channels;
    mask_conv1_ = register_module("mask_conv1", torch::nn::Conv2d(ops::conv_options(c, c, 3)));
    mask_conv2_ = register_module("mask_conv2", torch::nn::Conv2d(ops::conv_options(c, 1, 3)));
    for (std::size_t i = 0; i < 4; ++i) {
      const auto lvl = std::to_string(i + 2);
      lateral_[i] = register_module("lateral" + lvl, torch::nn::Conv2d(ops::conv_options(c, c, 1)));
      top_down_[i] = register_module("top_down" + lvl, torch::nn::Conv2d(ops::conv_options(c, c, 3)));
      bottom_up_[i] = register_module("bottom_up" + lvl, torch::nn::Conv2d(ops::conv_options(c, c, 3)));
      // Level 2 keeps the fused resolution; deeper levels halve it each step.
      diffuse_[i] = register_module("diffuse" + lvl, torch::nn::Conv2d(ops::conv_options(c, c, 3, i == 0 ? 1 : 2)));
    }
    fuse_ = register_module("fuse", torch::nn::Conv2d(ops::conv_options(4 * c, c, 3)));
  }

  torch::Tensor semantic_mask(const torch::Tensor& f5) {
    return torch::sigmoid(mask_conv2_(mask_conv1_(f5)));
  }

  GatherTrace gather(const FeaturePyramid& pyr, const torch::Tensor& mask5) {
    if (!pyr.projected) throw ContractError("GDR gather expects a projected pyramid");
    GatherTrace t;
    for (std::size_t i = 0; i < 4; ++i) {
      const auto& f = pyr.levels[i];
      t.filtered[i] = ops::resize_like(mask5, f) * f;
    }
    // Top-down, deepest level first.
    t.top_down[3] = top_down_[3](lateral_[3](t.filtered[3]));
    for (int i = 2; i >= 0; --i) {
      const auto k = static_cast<std::size_t>(i);
      auto deeper = ops::resize_like(t.top_down[k + 1], t.filtered[k]);
      t.top_down[k] = top_down_[k](lateral_[k](t.filtered[k]) + deeper);
    }
    // Bottom-up, level 2 first.
    t.bottom_up[0] = bottom_up_[0](t.top_down[0]);
    for (std::size_t k = 1; k < 4; ++k) {
      t.bottom_up[k] = bottom_up_[k](t.top_down[k] + ops::downsample2(t.bottom_up[k - 1]));
    }
    const auto& ref = t.bottom_up[0];
    t.fused = fuse_(torch::cat({t.bottom_up[0], ops::resize_like(t.bottom_up[1], ref),
                                ops::resize_like(t.bottom_up[2], ref), ops::resize_like(t.bottom_up[3], ref)},
                               1));
    return t;
  }

  std::array<torch::Tensor, 4> diffuse(const torch::Tensor& fused) {
    std::array<torch::Tensor, 4> out;
    out[0] = diffuse_[0](fused);
    for (std::size_t k = 1; k < 4; ++k) out[k] = diffuse_[k](out[k - 1]);
    return out;
  }

  GdrOutput forward(const FeaturePyramid& pyr) {
    GdrOutput out;
    out.mask5 = semantic_mask(pyr.level(5));
    out.fused = gather(pyr, out.mask5).fused;
    out.reinforced = diffuse(out.fused);
    for (std::size_t k = 0; k < 4; ++k) {
      const auto& r = out.reinforced[k];
      const auto& f = pyr.levels[k];
      if (r.size(2) != f.size(2) || r.size(3) != f.size(3))
        throw ShapeError("GDR level " + std::to_string(k + 2) + " resolution " + ops::shape_string(r) +
                         " does not match encoder level " + ops::shape_string(f));
    }
    return out;
  }

  std::int64_t channels() const { return channels_; }

 private:
  std::int64_t channels_;
  torch::nn::Conv2d mask_conv1_{nullptr}, mask_conv2_{nullptr}, fuse_{nullptr};
  std::array<torch::nn::Conv2d, 4> lateral_{nullptr, nullptr, nullptr, nullptr};
  std::array<torch::nn::Conv2d, 4> top_down_{nullptr, nullptr, nullptr, nullptr};
  std::array<torch::nn::Conv2d, 4> bottom_up_{nullptr, nullptr, nullptr, nullptr};
  std::array<torch::nn::Conv2d, 4> diffuse_{nullptr, nullptr, nullptr, nullptr};
};
TORCH_MODULE(Gdr);

}  // namespace psnet
