#pragma once

#include <array>
#include <optional>

#include <torch/torch.h>

#include "psnet/errors.hpp"
#include "psnet/ops.hpp"

namespace psnet {

inline constexpr std::array<std::int64_t, 3> kDynamicDilations{1, 3, 5};

// Depthwise convolution with per-sample kernels.
//   input:   (N, C, H, W)
//   kernels: (N, C, k, k), k odd
// Zero "same" padding of dilation * (k - 1) / 2. Implemented as an explicit
// shift-and-accumulate so every sample sees exactly the same sequence of
// floating point operations regardless of batch composition.
inline torch::Tensor dynamic_depthwise_conv(const torch::Tensor& input, const torch::Tensor& kernels,
                                            std::int64_t dilation) {
  if (input.dim() != 4 || kernels.dim() != 4 || kernels.size(0) != input.size(0) ||
      kernels.size(1) != input.size(1) || kernels.size(2) != kernels.size(3))
    throw ShapeError("dynamic conv: kernels " + ops::shape_string(kernels) + " incompatible with input " +
                     ops::shape_string(input));
  const auto k = kernels.size(2);
  if (k % 2 == 0) throw ShapeError("dynamic conv: kernel size must be odd");
  const auto h = input.size(2);
  const auto w = input.size(3);
  const auto pad = dilation * (k - 1) / 2;
  auto padded = torch::constant_pad_nd(input, {pad, pad, pad, pad}, 0.0);
  torch::Tensor out;
  for (std::int64_t a = 0; a < k; ++a) {
    for (std::int64_t b = 0; b < k; ++b) {
      using torch::indexing::Slice;
      auto window = padded.index({Slice(), Slice(), Slice(a * dilation, a * dilation + h),
                                  Slice(b * dilation, b * dilation + w)});
      auto weight = kernels.index({Slice(), Slice(), a, b}).unsqueeze(-1).unsqueeze(-1);
      auto term = window * weight;
      out = out.defined() ? out + term : term;
    }
  }
  return out;
}

// Three pre-activation (BN, ReLU, 3x3 conv) layers with dense connectivity,
// closed by a 1x1 transition back to the input width.
class DenseBlockImpl : public torch::nn::Module {
 public:
  DenseBlockImpl(std::int64_t channels, std::int64_t growth, int layers = 3) {
    std::int64_t in = channels;
    for (int l = 0; l < layers; ++l) {
      auto layer = torch::nn::Sequential(torch::nn::BatchNorm2d(in), torch::nn::ReLU(),
                                         torch::nn::Conv2d(ops::conv_options(in, growth, 3)));
      layers_.push_back(register_module("layer" + std::to_string(l + 1), layer));
      in += growth;
    }
    transition_ = register_module("transition", torch::nn::Conv2d(ops::conv_options(in, channels, 1)));
  }

  torch::Tensor forward(const torch::Tensor& x) {
    std::vector<torch::Tensor> features{x};
    for (auto& layer : layers_) features.push_back(layer->forward(torch::cat(features, 1)));
    return transition_(torch::cat(features, 1));
  }

 private:
  std::vector<torch::nn::Sequential> layers_;
  torch::nn::Conv2d transition_{nullptr};
};
TORCH_MODULE(DenseBlock);

// Generates one depthwise k x k kernel per channel and per sample: two convs,
// global average pooling, reshape.
class FilterGeneratorImpl : public torch::nn::Module {
 public:
  FilterGeneratorImpl(std::int64_t channels, std::int64_t kernel_size) : channels_(channels), kernel_size_(kernel_size) {
    conv1_ = register_module("conv1", torch::nn::Conv2d(ops::conv_options(channels, channels, 3)));
    conv2_ = register_module("conv2",
                             torch::nn::Conv2d(ops::conv_options(channels, channels * kernel_size * kernel_size, 1)));
  }

  // (N, C, H, W) -> (N, C, k, k)
  torch::Tensor forward(const torch::Tensor& x) {
    auto y = conv2_(torch::relu(conv1_(x)));
    return ops::global_avg_pool(y).view({x.size(0), channels_, kernel_size_, kernel_size_});
  }

 private:
  std::int64_t channels_, kernel_size_;
  torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr};
};
TORCH_MODULE(FilterGenerator);

// Channel compaction (1x1 conv) followed by squeeze-excitation.
class ChannelAttentionImpl : public torch::nn::Module {
 public:
  ChannelAttentionImpl(std::int64_t channels, std::int64_t reduction = 4) {
    compact_ = register_module("compact", torch::nn::Conv2d(ops::conv_options(channels, channels, 1)));
    fc1_ = register_module("fc1", torch::nn::Linear(channels, channels / reduction));
    fc2_ = register_module("fc2", torch::nn::Linear(channels / reduction, channels));
  }

  torch::Tensor forward(const torch::Tensor& x) {
    auto y = compact_(x);
    auto w = torch::sigmoid(fc2_(torch::relu(fc1_(ops::global_avg_pool(y)))));
    return y * w.unsqueeze(-1).unsqueeze(-1);
  }

 private:
  torch::nn::Conv2d compact_{nullptr};
  torch::nn::Linear fc1_{nullptr}, fc2_{nullptr};
};
TORCH_MODULE(ChannelAttention);

struct ComplementResult {
  torch::Tensor weighted;     // f^waux
  torch::Tensor complemented; // f^caux
};

struct DynamicRefineTrace {
  std::array<torch::Tensor, 3> kernels;    // generated, per dilation 1/3/5
  std::array<torch::Tensor, 3> responses;  // k_1, k_3, k_5
  torch::Tensor refined;                   // f^dy
};

struct RefineResult {
  torch::Tensor features;  // f^ref
  torch::Tensor mask;      // mask^r
};

struct CrcLevelOutput {
  torch::Tensor importance_mask;   // mask^s, supervised
  torch::Tensor refine_mask;       // mask^r (undefined for the baseline block)
  torch::Tensor decoder_features;  // f^{dom,d}
};

// Checks the decoder chaining contract: level 5 starts the chain, every other
// level consumes the previous (deeper) decoder output.
inline void check_decoder_chain(int level, const std::optional<torch::Tensor>& previous) {
  if (level < 2 || level > 5) throw ContractError("decoder level must be in 2..5, got " + std::to_string(level));
  if (level == 5 && previous) throw ContractError("level-5 decoder block takes no previous decoder features");
  if (level < 5 && !previous)
    throw ContractError("level-" + std::to_string(level) + " decoder block requires the level-" +
                        std::to_string(level + 1) + " decoder features");
}

// Cross-modality Refinement and Complement block for one level of one branch.
class CrcImpl : public torch::nn::Module {
 public:
  CrcImpl(std::int64_t channels, std::int64_t kernel_size, int level) : channels_(channels), level_(level) {
    if (kernel_size % 2 == 0) throw ConfigError("dynamic kernel size must be odd for same-size dilated padding");
    const auto c = channels;
    importance_conv3_ = register_module("importance_conv3", torch::nn::Conv2d(ops::conv_options(c, c, 3)));
    importance_conv1_ = register_module("importance_conv1", torch::nn::Conv2d(ops::conv_options(c, 1, 1)));
    dense_ = register_module("dense", DenseBlock(c, c / 4, 3));
    complement_ = register_module("complement", torch::nn::Conv2d(ops::conv_options(c, c, 1)));
    for (std::size_t j = 0; j < 3; ++j) {
      generators_[j] = register_module("generator_d" + std::to_string(kDynamicDilations[j]),
                                       FilterGenerator(c, kernel_size));
    }
    dynamic_fuse_ = register_module("dynamic_fuse", torch::nn::Conv2d(ops::conv_options(3 * c, c, 3)));
    refine_conv_ = register_module("refine_conv", torch::nn::Conv2d(ops::conv_options(2, 1, 3)));
    attention_aux_ = register_module("attention_aux", ChannelAttention(c, 4));
    attention_ref_ = register_module("attention_ref", ChannelAttention(c, 4));
    decode_ = register_module("decode", torch::nn::Conv2d(ops::conv_options(2 * c, c, 3)));
  }

  torch::Tensor importance_mask(const torch::Tensor& dominant_reinforced) {
    return torch::sigmoid(importance_conv1_(importance_conv3_(dominant_reinforced)));
  }

  ComplementResult complement_aux(const torch::Tensor& auxiliary, const torch::Tensor& mask) {
    ComplementResult r;
    r.weighted = mask * auxiliary;
    r.complemented = complement_(dense_(r.weighted) + r.weighted);
    return r;
  }

  std::array<torch::Tensor, 3> generate_kernels(const torch::Tensor& complemented) {
    std::array<torch::Tensor, 3> k;
    for (std::size_t j = 0; j < 3; ++j) k[j] = generators_[j](complemented);
    return k;
  }

  DynamicRefineTrace dynamic_refine_with(const std::array<torch::Tensor, 3>& kernels,
                                         const torch::Tensor& dominant_reinforced) {
    DynamicRefineTrace t;
    t.kernels = kernels;
    for (std::size_t j = 0; j < 3; ++j)
      t.responses[j] = dynamic_depthwise_conv(dominant_reinforced, kernels[j], kDynamicDilations[j]);
    t.refined = dynamic_fuse_(torch::cat({t.responses[0], t.responses[1], t.responses[2]}, 1));
    return t;
  }

  DynamicRefineTrace dynamic_refine(const torch::Tensor& complemented, const torch::Tensor& dominant_reinforced) {
    ops::require_same_shape(complemented, dominant_reinforced, "dynamic_refine");
    return dynamic_refine_with(generate_kernels(complemented), dominant_reinforced);
  }

  RefineResult refine_dominant(const torch::Tensor& dynamic_features, const torch::Tensor& dominant) {
    RefineResult r;
    r.mask = torch::sigmoid(refine_conv_(ops::channel_max_avg(dynamic_features)));
    r.features = r.mask * dominant;
    return r;
  }

  // dominant: projected encoder features of the dominant modality at this level
  // auxiliary: projected encoder features of the other modality
  // dominant_reinforced: GDR output at this level
  // previous: decoder output of level + 1 (absent at level 5)
  CrcLevelOutput forward(const torch::Tensor& dominant, const torch::Tensor& auxiliary,
                         const torch::Tensor& dominant_reinforced, const std::optional<torch::Tensor>& previous) {
    check_decoder_chain(level_, previous);
    ops::require_same_shape(dominant, auxiliary, "CRC dominant/auxiliary");
    ops::require_same_shape(dominant, dominant_reinforced, "CRC dominant/reinforced");

    CrcLevelOutput out;
    out.importance_mask = importance_mask(dominant_reinforced);
    auto comp = complement_aux(auxiliary, out.importance_mask);
    auto dyn = dynamic_refine(comp.complemented, dominant_reinforced);
    auto ref = refine_dominant(dyn.refined, dominant);
    out.refine_mask = ref.mask;
    auto combined = attention_aux_(comp.complemented) + attention_ref_(ref.features);
    auto context = previous ? ops::resize_like(*previous, combined) : dominant_reinforced;
    out.decoder_features = decode_(torch::cat({combined, context}, 1));
    return out;
  }

  int level() const { return level_; }

 private:
  std::int64_t channels_;
  int level_;
  torch::nn::Conv2d importance_conv3_{nullptr}, importance_conv1_{nullptr}, complement_{nullptr};
  DenseBlock dense_{nullptr};
  std::array<FilterGenerator, 3> generators_{nullptr, nullptr, nullptr};
  torch::nn::Conv2d dynamic_fuse_{nullptr}, refine_conv_{nullptr}, decode_{nullptr};
  ChannelAttention attention_aux_{nullptr}, attention_ref_{nullptr};
};
TORCH_MODULE(Crc);

// Ablation decoder block without CRC: keeps the importance sensor, weights the
// auxiliary features with it and concatenates them with the dominant features
// (and the upsampled previous decoder output below level 5).
class BaselineBlockImpl : public torch::nn::Module {
 public:
  BaselineBlockImpl(std::int64_t channels, int level) : level_(level) {
    const auto c = channels;
    importance_conv3_ = register_module("importance_conv3", torch::nn::Conv2d(ops::conv_options(c, c, 3)));
    importance_conv1_ = register_module("importance_conv1", torch::nn::Conv2d(ops::conv_options(c, 1, 1)));
    decode_ = register_module("decode", torch::nn::Conv2d(ops::conv_options(level == 5 ? 2 * c : 3 * c, c, 3)));
  }

  CrcLevelOutput forward(const torch::Tensor& dominant, const torch::Tensor& auxiliary,
                         const std::optional<torch::Tensor>& previous) {
    check_decoder_chain(level_, previous);
    ops::require_same_shape(dominant, auxiliary, "baseline dominant/auxiliary");
    CrcLevelOutput out;
    out.importance_mask = torch::sigmoid(importance_conv1_(importance_conv3_(dominant)));
    auto weighted = out.importance_mask * auxiliary;
    std::vector<torch::Tensor> parts{dominant, weighted};
    if (previous) parts.push_back(ops::resize_like(*previous, dominant));
    out.decoder_features = decode_(torch::cat(parts, 1));
    return out;
  }

 private:
  int level_;
  torch::nn::Conv2d importance_conv3_{nullptr}, importance_conv1_{nullptr}, decode_{nullptr};
};
TORCH_MODULE(BaselineBlock);

}  // namespace psnet
