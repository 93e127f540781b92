#pragma once

#include <torch/torch.h>

#include "psnet/config.hpp"
#include "psnet/errors.hpp"
#include "psnet/ops.hpp"

namespace psnet {

// Channel-wise branch weight, (N, C_d), every entry in (0, 1).
struct ImportanceWeight {
  torch::Tensor values;
};

struct FusionOutput {
  torch::Tensor pre_s;   // (N, 1, H/4, W/4), final prediction
  torch::Tensor fused;   // F_imp (or the variant's merge of the two branches)
  torch::Tensor common;  // F_c = a * m
  torch::Tensor weight;  // (N, C_d); undefined for the add/concat variants
};

// sigma(conv3x3(conv3x3(x))) down to one channel. Used for the per-branch
// saliency predictions S_a / S_m.
class BranchHeadImpl : public torch::nn::Module {
 public:
  explicit BranchHeadImpl(std::int64_t channels) {
    conv1_ = register_module("conv1", torch::nn::Conv2d(ops::conv_options(channels, channels, 3)));
    conv2_ = register_module("conv2", torch::nn::Conv2d(ops::conv_options(channels, 1, 3)));
  }

  torch::Tensor forward(const torch::Tensor& x) { return torch::sigmoid(conv2_(conv1_(x))); }

 private:
  torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr};
};
TORCH_MODULE(BranchHead);

// Importance Perception Fusion. With FusionKind::importance the branch weight
// comes from level-5 encoder statistics; the other kinds are the ablation
// alternatives (plain addition, concatenation + 1x1 conv, channel attention
// over the decoder features). All kinds keep the common-response product.
class IpfImpl : public torch::nn::Module {
 public:
  IpfImpl(std::int64_t channels, FusionKind kind) : channels_(channels), kind_(kind) {
    const auto c = channels;
    switch (kind) {
      case FusionKind::importance:
        fc_ = register_module("fc", torch::nn::Linear(2 * c, c));
        break;
      case FusionKind::attention:
        attention_fc1_ = register_module("attention_fc1", torch::nn::Linear(2 * c, c / 4));
        attention_fc2_ = register_module("attention_fc2", torch::nn::Linear(c / 4, c));
        break;
      case FusionKind::concat:
        merge_ = register_module("merge", torch::nn::Conv2d(ops::conv_options(2 * c, c, 1)));
        break;
      case FusionKind::add:
        break;
    }
    predict_conv1_ = register_module("predict_conv1", torch::nn::Conv2d(ops::conv_options(2 * c, c, 3)));
    predict_conv2_ = register_module("predict_conv2", torch::nn::Conv2d(ops::conv_options(c, 1, 3)));
  }

  ImportanceWeight importance_weight(const torch::Tensor& f5_appearance, const torch::Tensor& f5_motion) {
    if (!fc_) throw ContractError("importance_weight is only available for the IPF fusion kind");
    ops::require_same_shape(f5_appearance, f5_motion, "IPF level-5 features");
    auto pooled = torch::cat({ops::global_avg_pool(f5_appearance), ops::global_avg_pool(f5_motion)}, 1);
    return {torch::sigmoid(fc_(pooled))};
  }

  // Convex channel-wise combination of the two decoder outputs, then prediction.
  FusionOutput fuse(const torch::Tensor& appearance, const torch::Tensor& motion, const ImportanceWeight& w) {
    check_decoder_pair(appearance, motion);
    if (w.values.dim() != 2 || w.values.size(0) != appearance.size(0) || w.values.size(1) != appearance.size(1))
      throw ShapeError("importance weight " + ops::shape_string(w.values) + " does not match decoder features " +
                       ops::shape_string(appearance));
    auto wb = w.values.unsqueeze(-1).unsqueeze(-1);
    FusionOutput out;
    out.weight = w.values;
    out.fused = wb * appearance + (1.0 - wb) * motion;
    out.common = appearance * motion;
    out.pre_s = predict(out.common, out.fused);
    return out;
  }

  FusionOutput forward(const torch::Tensor& f5_appearance, const torch::Tensor& f5_motion,
                       const torch::Tensor& appearance, const torch::Tensor& motion) {
    switch (kind_) {
      case FusionKind::importance:
        return fuse(appearance, motion, importance_weight(f5_appearance, f5_motion));
      case FusionKind::attention: {
        check_decoder_pair(appearance, motion);
        auto pooled = torch::cat({ops::global_avg_pool(appearance), ops::global_avg_pool(motion)}, 1);
        ImportanceWeight w{torch::sigmoid(attention_fc2_(torch::relu(attention_fc1_(pooled))))};
        return fuse(appearance, motion, w);
      }
      case FusionKind::add:
      case FusionKind::concat: {
        check_decoder_pair(appearance, motion);
        FusionOutput out;
        out.fused = kind_ == FusionKind::add ? appearance + motion : merge_(torch::cat({appearance, motion}, 1));
        out.common = appearance * motion;
        out.pre_s = predict(out.common, out.fused);
        return out;
      }
    }
    throw ContractError("unknown fusion kind");
  }

  FusionKind kind() const { return kind_; }

 private:
  torch::Tensor predict(const torch::Tensor& common, const torch::Tensor& fused) {
    return torch::sigmoid(predict_conv2_(predict_conv1_(torch::cat({common, fused}, 1))));
  }

  void check_decoder_pair(const torch::Tensor& a, const torch::Tensor& m) const {
    ops::require_same_shape(a, m, "IPF decoder features");
    if (a.dim() != 4 || a.size(1) != channels_)
      throw ShapeError("IPF expects " + std::to_string(channels_) + "-channel decoder features, got " +
                       ops::shape_string(a));
  }

  std::int64_t channels_;
  FusionKind kind_;
  torch::nn::Linear fc_{nullptr}, attention_fc1_{nullptr}, attention_fc2_{nullptr};
  torch::nn::Conv2d merge_{nullptr}, predict_conv1_{nullptr}, predict_conv2_{nullptr};
};
TORCH_MODULE(Ipf);

}  // namespace psnet
