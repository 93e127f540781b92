#pragma once

#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <string>

#include <torch/torch.h>

#include "psnet/config.hpp"
#include "psnet/errors.hpp"
#include "psnet/model.hpp"
#include "psnet/ops.hpp"

namespace psnet {

inline constexpr double kBceEpsilon = 1e-7;
inline constexpr std::int64_t kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

// Mean binary cross-entropy; predictions clamped to [eps, 1 - eps].
inline torch::Tensor bce_loss(const torch::Tensor& pred, const torch::Tensor& gt) {
  ops::require_same_shape(pred, gt, "bce_loss");
  auto p = pred.clamp(kBceEpsilon, 1.0 - kBceEpsilon);
  return -(gt * torch::log(p) + (1.0 - gt) * torch::log(1.0 - p)).mean();
}

// Normalized 11x11 Gaussian window (sigma 1.5) as a (1, 1, 11, 11) tensor.
inline torch::Tensor ssim_window(torch::TensorOptions options) {
  auto coords = torch::arange(kSsimWindow, options.dtype(torch::kFloat64)) - static_cast<double>(kSsimWindow / 2);
  auto g = torch::exp(-(coords * coords) / (2.0 * kSsimSigma * kSsimSigma));
  g = g / g.sum();
  return torch::outer(g, g).view({1, 1, kSsimWindow, kSsimWindow}).to(options);
}

// 1 - mean SSIM over valid window positions. Inputs are (N, 1, H, W) on a
// [0, 1] dynamic range. Maps smaller than the window are padded to "same"
// size by reflection (replication when too small to reflect).
inline torch::Tensor ssim_loss(const torch::Tensor& pred, const torch::Tensor& gt) {
  ops::require_same_shape(pred, gt, "ssim_loss");
  if (pred.dim() != 4 || pred.size(1) != 1)
    throw ShapeError("ssim_loss expects single-channel (N, 1, H, W) maps, got " + ops::shape_string(pred));
  auto x = pred;
  auto y = gt;
  if (x.size(2) < kSsimWindow || x.size(3) < kSsimWindow) {
    const auto pad = kSsimWindow / 2;
    const bool reflectable = x.size(2) > pad && x.size(3) > pad;
    auto opts = torch::nn::functional::PadFuncOptions({pad, pad, pad, pad});
    if (reflectable)
      opts.mode(torch::kReflect);
    else
      opts.mode(torch::kReplicate);
    x = torch::nn::functional::pad(x, opts);
    y = torch::nn::functional::pad(y, opts);
  }
  auto window = ssim_window(x.options()).repeat({5, 1, 1, 1});
  auto stats = torch::conv2d(torch::cat({x, y, x * x, y * y, x * y}, 1), window, torch::Tensor(), at::IntArrayRef{1},
                             at::IntArrayRef{0}, at::IntArrayRef{1}, 5);
  auto mu_x = stats.select(1, 0);
  auto mu_y = stats.select(1, 1);
  auto mu_xx = mu_x * mu_x;
  auto mu_yy = mu_y * mu_y;
  auto mu_xy = mu_x * mu_y;
  auto var_x = stats.select(1, 2) - mu_xx;
  auto var_y = stats.select(1, 3) - mu_yy;
  auto cov = stats.select(1, 4) - mu_xy;
  auto num = (2.0 * mu_xy + kSsimC1) * (2.0 * cov + kSsimC2);
  auto den = (mu_xx + mu_yy + kSsimC1) * (var_x + var_y + kSsimC2);
  return 1.0 - (num / den).mean();
}

// BCE + SSIM.
inline torch::Tensor saliency_loss(const torch::Tensor& pred, const torch::Tensor& gt) {
  return bce_loss(pred, gt) + ssim_loss(pred, gt);
}

// Ground truth reduced to (h, w) by area interpolation, re-binarized at 0.5.
inline torch::Tensor downsample_target(const torch::Tensor& gt, std::int64_t h, std::int64_t w) {
  if (gt.size(2) == h && gt.size(3) == w) return gt;
  return (ops::area_resize(gt, h, w) >= 0.5).to(gt.scalar_type());
}

inline torch::Tensor target_for(const torch::Tensor& map, const torch::Tensor& gt) {
  auto t = downsample_target(gt, map.size(2), map.size(3));
  if (t.sizes() != map.sizes())
    throw ShapeError("supervision target " + ops::shape_string(t) + " does not match map " + ops::shape_string(map));
  return t;
}

struct LossBundle {
  torch::Tensor l_sal_final;
  torch::Tensor l_appearance;
  torch::Tensor l_motion;
  torch::Tensor l_total;
  std::map<std::string, double> terms;  // per-term breakdown for logging
};

namespace detail {

inline torch::Tensor record(std::map<std::string, double>& terms, const std::string& name, torch::Tensor value) {
  const double v = value.item<double>();
  if (!std::isfinite(v)) throw NumericError("loss term '" + name + "' is not finite");
  terms[name] = v;
  return value;
}

}  // namespace detail

// L_sal(S, GT) + lambda1 * BCE(mask5, GT) + lambda2 * sum_i BCE(mask_i^s, GT),
// every map compared against the ground truth downsampled to its own size.
// `mask5` is absent for variants without GDR.
inline torch::Tensor branch_loss(const torch::Tensor& saliency, const std::optional<torch::Tensor>& mask5,
                                 const std::array<torch::Tensor, 4>& importance_masks, const torch::Tensor& gt,
                                 double lambda1, double lambda2, std::map<std::string, double>* terms = nullptr,
                                 const std::string& prefix = "branch") {
  std::map<std::string, double> scratch;
  auto& t = terms ? *terms : scratch;
  auto target = target_for(saliency, gt);
  auto loss = detail::record(t, prefix + ".sal.bce", bce_loss(saliency, target)) +
              detail::record(t, prefix + ".sal.ssim", ssim_loss(saliency, target));
  if (mask5 && mask5->defined()) {
    loss = loss + lambda1 * detail::record(t, prefix + ".mask5", bce_loss(*mask5, target_for(*mask5, gt)));
  }
  for (std::size_t k = 0; k < 4; ++k) {
    const auto& m = importance_masks[k];
    if (!m.defined()) throw ContractError(prefix + ": missing importance mask for level " + std::to_string(k + 2));
    loss = loss + lambda2 * detail::record(t, prefix + ".mask_s" + std::to_string(k + 2), bce_loss(m, target_for(m, gt)));
  }
  return detail::record(t, prefix, loss);
}

// Full objective: L_sal(pre_s) + L_appearance + L_motion. pre_s is upsampled
// to the ground-truth resolution when it is smaller.
inline LossBundle total_loss(const ForwardOutput& out, const torch::Tensor& gt, const ModelConfig& config) {
  LossBundle b;
  auto pre_s = ops::resize_like(out.fusion.pre_s, gt);
  b.l_sal_final = detail::record(b.terms, "sal.bce", bce_loss(pre_s, gt)) +
                  detail::record(b.terms, "sal.ssim", ssim_loss(pre_s, gt));
  detail::record(b.terms, "sal", b.l_sal_final);
  auto mask5_of = [](const BranchOutputs& br) -> std::optional<torch::Tensor> {
    if (br.gdr) return br.gdr->mask5;
    return std::nullopt;
  };
  b.l_appearance = branch_loss(out.appearance.saliency, mask5_of(out.appearance), out.appearance.importance_masks, gt,
                               config.lambda1, config.lambda2, &b.terms, "appearance");
  b.l_motion = branch_loss(out.motion.saliency, mask5_of(out.motion), out.motion.importance_masks, gt, config.lambda1,
                           config.lambda2, &b.terms, "motion");
  b.l_total = detail::record(b.terms, "total", b.l_sal_final + b.l_appearance + b.l_motion);
  return b;
}

// Objective for single-stream pretraining: L_sal(S) + lambda1 * BCE(mask5).
inline LossBundle pretrain_loss(const SingleBranchOutput& out, Branch branch, const torch::Tensor& gt,
                                const ModelConfig& config) {
  LossBundle b;
  const std::string prefix = to_string(branch);
  auto target = target_for(out.saliency, gt);
  auto loss = detail::record(b.terms, prefix + ".sal.bce", bce_loss(out.saliency, target)) +
              detail::record(b.terms, prefix + ".sal.ssim", ssim_loss(out.saliency, target));
  if (out.mask5.defined())
    loss = loss + config.lambda1 * detail::record(b.terms, prefix + ".mask5", bce_loss(out.mask5, target_for(out.mask5, gt)));
  auto zero = torch::zeros({}, loss.options());
  b.l_sal_final = zero;
  (branch == Branch::appearance ? b.l_appearance : b.l_motion) = loss;
  (branch == Branch::appearance ? b.l_motion : b.l_appearance) = zero;
  b.l_total = detail::record(b.terms, "total", loss);
  return b;
}

}  // namespace psnet
