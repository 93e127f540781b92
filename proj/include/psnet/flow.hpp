#pragma once

#include <array>
#include <cmath>
#include <numbers>

#include <opencv2/core.hpp>
#include <opencv2/imgproc.hpp>

#include "psnet/config.hpp"
#include "psnet/errors.hpp"

namespace psnet::data {

namespace detail {

// Middlebury color wheel (RY, YG, GC, CB, BM, MR segments), RGB in [0, 1].
inline const std::vector<cv::Vec3f>& middlebury_wheel() {
  static const std::vector<cv::Vec3f> wheel = [] {
    constexpr int ry = 15, yg = 6, gc = 4, cb = 11, bm = 13, mr = 6;
    std::vector<cv::Vec3f> w;
    for (int i = 0; i < ry; ++i) w.emplace_back(1.f, static_cast<float>(i) / ry, 0.f);
    for (int i = 0; i < yg; ++i) w.emplace_back(1.f - static_cast<float>(i) / yg, 1.f, 0.f);
    for (int i = 0; i < gc; ++i) w.emplace_back(0.f, 1.f, static_cast<float>(i) / gc);
    for (int i = 0; i < cb; ++i) w.emplace_back(0.f, 1.f - static_cast<float>(i) / cb, 1.f);
    for (int i = 0; i < bm; ++i) w.emplace_back(static_cast<float>(i) / bm, 0.f, 1.f);
    for (int i = 0; i < mr; ++i) w.emplace_back(1.f, 0.f, 1.f - static_cast<float>(i) / mr);
    return w;
  }();
  return wheel;
}

inline cv::Vec3f middlebury_color(double u, double v, double radius) {
  const auto& wheel = middlebury_wheel();
  const int ncols = static_cast<int>(wheel.size());
  const double a = std::atan2(-v, -u) / std::numbers::pi;
  const double fk = (a + 1.0) / 2.0 * (ncols - 1);
  const int k0 = static_cast<int>(std::floor(fk));
  const int k1 = (k0 + 1) % ncols;
  const double f = fk - k0;
  cv::Vec3f out;
  for (int ch = 0; ch < 3; ++ch) {
    double col = (1.0 - f) * wheel[static_cast<std::size_t>(k0)][ch] + f * wheel[static_cast<std::size_t>(k1)][ch];
    col = radius <= 1.0 ? 1.0 - radius * (1.0 - col) : col * 0.75;
    out[ch] = static_cast<float>(col);
  }
  return out;
}

}  // namespace detail

// Renders a flow field as a 3-channel RGB float image in [0, 1]. Magnitudes
// are normalized by the per-image maximum, so the rendering is invariant to a
// global rescaling of the field; zero motion renders white.
//
// hsv:        hue = atan2(v, u), saturation = |flow| / max|flow|, value = 1
// middlebury: the classic Middlebury color wheel
inline cv::Mat flow_to_rgb(const cv::Mat& u, const cv::Mat& v, FlowEncoding encoding = FlowEncoding::hsv) {
  if (u.size() != v.size()) throw ShapeError("flow_to_rgb: u and v differ in size");
  cv::Mat1f uf, vf;
  u.convertTo(uf, CV_32F);
  v.convertTo(vf, CV_32F);

  cv::Mat1f mag(uf.size());
  double max_mag = 0.0;
  for (int r = 0; r < uf.rows; ++r) {
    for (int c = 0; c < uf.cols; ++c) {
      const double a = uf(r, c), b = vf(r, c);
      const double m = std::sqrt(a * a + b * b);
      mag(r, c) = static_cast<float>(m);
      max_mag = std::max(max_mag, m);
    }
  }
  const double norm = max_mag > 0.0 ? max_mag : 1.0;

  cv::Mat3f out(uf.size());
  if (encoding == FlowEncoding::hsv) {
    cv::Mat3f hsv(uf.size());
    for (int r = 0; r < uf.rows; ++r) {
      for (int c = 0; c < uf.cols; ++c) {
        double hue = std::atan2(static_cast<double>(vf(r, c)), static_cast<double>(uf(r, c))) * 180.0 / std::numbers::pi;
        if (hue < 0.0) hue += 360.0;
        if (hue >= 360.0) hue -= 360.0;
        hsv(r, c) = cv::Vec3f(static_cast<float>(hue), static_cast<float>(mag(r, c) / norm), 1.f);
      }
    }
    cv::cvtColor(hsv, out, cv::COLOR_HSV2RGB);
  } else {
    for (int r = 0; r < uf.rows; ++r)
      for (int c = 0; c < uf.cols; ++c) out(r, c) = detail::middlebury_color(uf(r, c), vf(r, c), mag(r, c) / norm);
  }
  return out;
}

// Two-channel (u, v) field overload.
inline cv::Mat flow_to_rgb(const cv::Mat& field, FlowEncoding encoding = FlowEncoding::hsv) {
  if (field.channels() != 2) throw ShapeError("flow field must have two channels");
  std::array<cv::Mat, 2> uv;
  cv::split(field, uv.data());
  return flow_to_rgb(uv[0], uv[1], encoding);
}

}  // namespace psnet::data
