#pragma once

#include <string>

#include <torch/torch.h>

#include "psnet/errors.hpp"

namespace psnet::ops {

namespace F = torch::nn::functional;

inline torch::nn::Conv2dOptions conv_options(std::int64_t in, std::int64_t out, std::int64_t kernel,
                                             std::int64_t stride = 1, bool bias = true) {
  return torch::nn::Conv2dOptions(in, out, kernel).stride(stride).padding(kernel / 2).bias(bias);
}

inline std::string shape_string(const torch::Tensor& t) {
  std::string s = "(";
  for (std::int64_t i = 0; i < t.dim(); ++i) {
    if (i) s += ", ";
    s += std::to_string(t.size(i));
  }
  return s + ")";
}

// Bilinear resize of an NCHW tensor to an explicit spatial size.
inline torch::Tensor resize_to(const torch::Tensor& x, std::int64_t h, std::int64_t w) {
  if (x.size(2) == h && x.size(3) == w) return x;
  return F::interpolate(x, F::InterpolateFuncOptions()
                               .size(std::vector<std::int64_t>{h, w})
                               .mode(torch::kBilinear)
                               .align_corners(false));
}

inline torch::Tensor resize_like(const torch::Tensor& x, const torch::Tensor& ref) {
  return resize_to(x, ref.size(2), ref.size(3));
}

inline torch::Tensor upsample2(const torch::Tensor& x) {
  return resize_to(x, x.size(2) * 2, x.size(3) * 2);
}

// Parameter-free 2x reduction used by the bottom-up pass.
inline torch::Tensor downsample2(const torch::Tensor& x) { return torch::avg_pool2d(x, {2, 2}, {2, 2}); }

// Mass-preserving reduction (area interpolation) for ground-truth targets.
inline torch::Tensor area_resize(const torch::Tensor& x, std::int64_t h, std::int64_t w) {
  if (x.size(2) == h && x.size(3) == w) return x;
  return torch::adaptive_avg_pool2d(x, {h, w});
}

// Global average pooling: (N, C, H, W) -> (N, C).
inline torch::Tensor global_avg_pool(const torch::Tensor& x) { return x.mean({2, 3}); }

// Channel-axis max and mean, concatenated: (N, C, H, W) -> (N, 2, H, W).
inline torch::Tensor channel_max_avg(const torch::Tensor& x) {
  auto mx = std::get<0>(x.max(1, /*keepdim=*/true));
  auto avg = x.mean(1, /*keepdim=*/true);
  return torch::cat({mx, avg}, 1);
}

inline void require_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  if (a.sizes() != b.sizes())
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_string(a) + " vs " + shape_string(b));
}

inline bool all_finite(const torch::Tensor& t) { return torch::isfinite(t).all().item<bool>(); }

}  // namespace psnet::ops
