#pragma once

#include <array>
#include <filesystem>
#include <string>

#include <torch/torch.h>

#include "psnet/config.hpp"
#include "psnet/errors.hpp"
#include "psnet/log.hpp"
#include "psnet/ops.hpp"

namespace psnet {

enum class Branch { appearance, motion };

inline const char* to_string(Branch b) { return b == Branch::appearance ? "appearance" : "motion"; }

inline constexpr std::array<int, 4> kLevels{2, 3, 4, 5};

// Encoder features for levels 2..5 (strides 4, 8, 16, 32). Level 1 is never
// stored. Tensors are batched NCHW.
struct FeaturePyramid {
  std::array<torch::Tensor, 4> levels;
  Branch branch = Branch::appearance;
  bool projected = false;

  torch::Tensor& level(int i) { return levels.at(static_cast<std::size_t>(i - 2)); }
  const torch::Tensor& level(int i) const { return levels.at(static_cast<std::size_t>(i - 2)); }
};

// Throws ShapeError unless `image` is (N, 3, H, W) with H and W divisible by 32.
inline void check_encoder_input(const torch::Tensor& image) {
  if (image.dim() != 4 || image.size(1) != 3)
    throw ShapeError("encoder input must be (N, 3, H, W), got " + ops::shape_string(image));
  if (image.size(2) % 32 != 0)
    throw ShapeError("input height " + std::to_string(image.size(2)) + " is not divisible by 32");
  if (image.size(3) % 32 != 0)
    throw ShapeError("input width " + std::to_string(image.size(3)) + " is not divisible by 32");
}

// torchvision-compatible ResNet-50 bottleneck (stride on the 3x3 conv).
class BottleneckImpl : public torch::nn::Module {
 public:
  BottleneckImpl(std::int64_t in, std::int64_t planes, std::int64_t stride) {
    const auto out = planes * 4;
    conv1 = register_module("conv1", torch::nn::Conv2d(ops::conv_options(in, planes, 1, 1, false)));
    bn1 = register_module("bn1", torch::nn::BatchNorm2d(planes));
    conv2 = register_module("conv2", torch::nn::Conv2d(ops::conv_options(planes, planes, 3, stride, false)));
    bn2 = register_module("bn2", torch::nn::BatchNorm2d(planes));
    conv3 = register_module("conv3", torch::nn::Conv2d(ops::conv_options(planes, out, 1, 1, false)));
    bn3 = register_module("bn3", torch::nn::BatchNorm2d(out));
    if (stride != 1 || in != out) {
      downsample = register_module(
          "downsample", torch::nn::Sequential(torch::nn::Conv2d(ops::conv_options(in, out, 1, stride, false)),
                                              torch::nn::BatchNorm2d(out)));
    }
  }

  torch::Tensor forward(const torch::Tensor& x) {
    auto y = torch::relu(bn1(conv1(x)));
    y = torch::relu(bn2(conv2(y)));
    y = bn3(conv3(y));
    auto identity = downsample ? downsample->forward(x) : x;
    return torch::relu(y + identity);
  }

  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr}, conv3{nullptr};
  torch::nn::BatchNorm2d bn1{nullptr}, bn2{nullptr}, bn3{nullptr};
  torch::nn::Sequential downsample{nullptr};
};
TORCH_MODULE(Bottleneck);

// ResNet-50 without the final pooling and classifier. Submodule names follow
// torchvision so a scripted torchvision model can be loaded with torch::load.
class ResNet50Impl : public torch::nn::Module {
 public:
  ResNet50Impl() {
    conv1 = register_module("conv1", torch::nn::Conv2d(torch::nn::Conv2dOptions(3, 64, 7).stride(2).padding(3).bias(false)));
    bn1 = register_module("bn1", torch::nn::BatchNorm2d(64));
    layer1 = register_module("layer1", make_layer(64, 3, 1));
    layer2 = register_module("layer2", make_layer(128, 4, 2));
    layer3 = register_module("layer3", make_layer(256, 6, 2));
    layer4 = register_module("layer4", make_layer(512, 3, 2));

    for (auto& m : modules(/*include_self=*/false)) {
      if (auto* conv = m->as<torch::nn::Conv2d>()) {
        torch::nn::init::kaiming_normal_(conv->weight, 0.0, torch::kFanOut, torch::kReLU);
      }
    }
  }

  // Levels 1..5 at strides 2, 4, 8, 16, 32.
  std::array<torch::Tensor, 5> forward(const torch::Tensor& x) {
    auto l1 = torch::relu(bn1(conv1(x)));
    auto y = torch::max_pool2d(l1, {3, 3}, {2, 2}, {1, 1});
    auto l2 = layer1->forward(y);
    auto l3 = layer2->forward(l2);
    auto l4 = layer3->forward(l3);
    auto l5 = layer4->forward(l4);
    return {l1, l2, l3, l4, l5};
  }

  torch::nn::Conv2d conv1{nullptr};
  torch::nn::BatchNorm2d bn1{nullptr};
  torch::nn::Sequential layer1{nullptr}, layer2{nullptr}, layer3{nullptr}, layer4{nullptr};

 private:
  torch::nn::Sequential make_layer(std::int64_t planes, int blocks, std::int64_t stride) {
    torch::nn::Sequential seq;
    seq->push_back(Bottleneck(in_planes_, planes, stride));
    in_planes_ = planes * 4;
    for (int i = 1; i < blocks; ++i) seq->push_back(Bottleneck(in_planes_, planes, 1));
    return seq;
  }

  std::int64_t in_planes_ = 64;
};
TORCH_MODULE(ResNet50);

// Desk-scale backbone: a stride-2 stem (level 1) followed by four stride-2
// stages (levels 2..5) whose width doubles from `width`. `depth` counts the
// conv-BN-ReLU layers per stage.
class TinyBackboneImpl : public torch::nn::Module {
 public:
  TinyBackboneImpl(std::int64_t width, std::int64_t depth) {
    stem = register_module("stem", conv_bn_relu(3, width, 2));
    std::int64_t in = width;
    for (int s = 0; s < 4; ++s) {
      const std::int64_t out = width << s;
      torch::nn::Sequential stage;
      append_conv_bn_relu(stage, in, out, 2);
      for (std::int64_t d = 1; d < depth; ++d) append_conv_bn_relu(stage, out, out, 1);
      stages[static_cast<std::size_t>(s)] = register_module("stage" + std::to_string(s + 2), stage);
      in = out;
    }
  }

  std::array<torch::Tensor, 5> forward(const torch::Tensor& x) {
    std::array<torch::Tensor, 5> out;
    out[0] = stem->forward(x);
    for (std::size_t s = 0; s < 4; ++s) out[s + 1] = stages[s]->forward(out[s]);
    return out;
  }

  torch::nn::Sequential stem{nullptr};
  std::array<torch::nn::Sequential, 4> stages{nullptr, nullptr, nullptr, nullptr};

 private:
  static torch::nn::Sequential conv_bn_relu(std::int64_t in, std::int64_t out, std::int64_t stride) {
    torch::nn::Sequential seq;
    append_conv_bn_relu(seq, in, out, stride);
    return seq;
  }

  static void append_conv_bn_relu(torch::nn::Sequential& seq, std::int64_t in, std::int64_t out, std::int64_t stride) {
    seq->push_back(torch::nn::Conv2d(ops::conv_options(in, out, 3, stride, false)));
    seq->push_back(torch::nn::BatchNorm2d(out));
    seq->push_back(torch::nn::ReLU());
  }
};
TORCH_MODULE(TinyBackbone);

// One modality encoder. The appearance and motion encoders are two separate
// instances; nothing is shared between them.
class EncoderImpl : public torch::nn::Module {
 public:
  EncoderImpl(const ModelConfig& config, Branch branch) : branch_(branch), channels_(config.encoder_channels()) {
    switch (config.backbone.kind) {
      case BackboneKind::resnet50:
        resnet_ = register_module("resnet", ResNet50());
        load_pretrained(config.backbone.weights_path);
        break;
      case BackboneKind::tiny:
        tiny_ = register_module("tiny", TinyBackbone(config.backbone.tiny_width, config.backbone.tiny_depth));
        break;
    }
  }

  FeaturePyramid forward(const torch::Tensor& image) {
    check_encoder_input(image);
    auto all = resnet_ ? resnet_->forward(image) : tiny_->forward(image);
    FeaturePyramid pyr;
    pyr.branch = branch_;
    for (std::size_t i = 0; i < 4; ++i) pyr.levels[i] = all[i + 1];
    return pyr;
  }

  const std::array<std::int64_t, 4>& channels() const { return channels_; }
  Branch branch() const { return branch_; }

 private:
  void load_pretrained(const std::string& path) {
    if (path.empty()) {
      logger()->warn("{} encoder: no ResNet-50 weights configured, using random initialization", to_string(branch_));
      return;
    }
    if (!std::filesystem::exists(path)) {
      logger()->warn("{} encoder: weights file '{}' not found, using random initialization", to_string(branch_), path);
      return;
    }
    torch::load(resnet_, path);
    logger()->info("{} encoder: loaded ResNet-50 weights from {}", to_string(branch_), path);
  }

  Branch branch_;
  std::array<std::int64_t, 4> channels_;
  ResNet50 resnet_{nullptr};
  TinyBackbone tiny_{nullptr};
};
TORCH_MODULE(Encoder);

inline FeaturePyramid encode(const torch::Tensor& image, Encoder& encoder) { return encoder->forward(image); }

// 1x1 conv + BN + ReLU per level, mapping every level to the decoder width.
class ProjectionImpl : public torch::nn::Module {
 public:
  ProjectionImpl(const std::array<std::int64_t, 4>& in_channels, std::int64_t out_channels)
      : in_channels_(in_channels), out_channels_(out_channels) {
    for (std::size_t i = 0; i < 4; ++i) {
      levels_[i] = register_module(
          "level" + std::to_string(i + 2),
          torch::nn::Sequential(torch::nn::Conv2d(ops::conv_options(in_channels[i], out_channels, 1, 1, false)),
                                torch::nn::BatchNorm2d(out_channels), torch::nn::ReLU()));
    }
  }

  FeaturePyramid forward(const FeaturePyramid& pyr) {
    FeaturePyramid out;
    out.branch = pyr.branch;
    out.projected = true;
    for (std::size_t i = 0; i < 4; ++i) {
      const auto& f = pyr.levels[i];
      if (f.dim() != 4 || f.size(1) != in_channels_[i])
        throw ShapeError("projection level " + std::to_string(i + 2) + " expects " + std::to_string(in_channels_[i]) +
                         " channels, got " + ops::shape_string(f));
      out.levels[i] = levels_[i]->forward(f);
    }
    return out;
  }

  std::int64_t out_channels() const { return out_channels_; }

 private:
  std::array<std::int64_t, 4> in_channels_;
  std::int64_t out_channels_;
  std::array<torch::nn::Sequential, 4> levels_{nullptr, nullptr, nullptr, nullptr};
};
TORCH_MODULE(Projection);

inline FeaturePyramid project_pyramid(const FeaturePyramid& pyr, Projection& projection) {
  return projection->forward(pyr);
}

}  // namespace psnet
