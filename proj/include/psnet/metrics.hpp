#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>

#include <opencv2/core.hpp>

#include "psnet/errors.hpp"

namespace psnet::metrics {

inline constexpr int kThresholds = 256;
inline constexpr double kBetaSquared = 0.3;
inline constexpr double kStructureAlpha = 0.5;
inline constexpr double kEps = std::numeric_limits<double>::epsilon();

struct FCurve {
  std::array<double, kThresholds> precision{};
  std::array<double, kThresholds> recall{};
  std::array<double, kThresholds> f{};
};

struct FMeasureResult {
  double max_f = 0.0;
  int best_threshold = 0;
  FCurve curve;
};

namespace detail {

inline cv::Mat1d as_double(const cv::Mat& m) {
  if (m.channels() != 1) throw ShapeError("saliency metrics expect single-channel maps");
  cv::Mat1d out;
  m.convertTo(out, CV_64F);
  return out;
}

inline void check_sizes(const cv::Mat& s, const cv::Mat& g) {
  if (s.size() != g.size())
    throw ShapeError("prediction size " + std::to_string(s.cols) + "x" + std::to_string(s.rows) +
                     " does not match ground truth " + std::to_string(g.cols) + "x" + std::to_string(g.rows));
}

// Foreground is every ground-truth value above 0.5.
inline cv::Mat1b foreground(const cv::Mat1d& g) {
  cv::Mat1b fg = g > 0.5;
  return fg;
}

}  // namespace detail

// 8-bit quantization used by the threshold sweep: floor(255 * s + 0.5), clamped.
inline int quantize(double s) { return std::clamp(static_cast<int>(std::floor(s * 255.0 + 0.5)), 0, 255); }

inline double mae(const cv::Mat& saliency, const cv::Mat& gt) {
  detail::check_sizes(saliency, gt);
  auto s = detail::as_double(saliency);
  cv::Mat1d g;
  detail::foreground(detail::as_double(gt)).convertTo(g, CV_64F, 1.0 / 255.0);
  return cv::mean(cv::abs(s - g))[0];
}

// Maximum F-beta (beta^2 = 0.3) over the 256 thresholds t/255: a pixel is
// predicted salient when quantize(s) >= t. Returns nullopt when the ground
// truth has no foreground (the frame is undefined for this metric).
inline std::optional<FMeasureResult> max_f_measure(const cv::Mat& saliency, const cv::Mat& gt) {
  detail::check_sizes(saliency, gt);
  auto s = detail::as_double(saliency);
  auto fg = detail::foreground(detail::as_double(gt));

  std::array<double, kThresholds> fg_hist{};
  std::array<double, kThresholds> bg_hist{};
  for (int r = 0; r < s.rows; ++r) {
    const double* sp = s.ptr<double>(r);
    const unsigned char* gp = fg.ptr<unsigned char>(r);
    for (int c = 0; c < s.cols; ++c) (gp[c] ? fg_hist : bg_hist)[static_cast<std::size_t>(quantize(sp[c]))] += 1.0;
  }
  double total_fg = 0.0;
  for (double v : fg_hist) total_fg += v;
  if (total_fg == 0.0) return std::nullopt;

  FMeasureResult result;
  double tp = 0.0, fp = 0.0;
  for (int t = kThresholds - 1; t >= 0; --t) {
    const auto k = static_cast<std::size_t>(t);
    tp += fg_hist[k];
    fp += bg_hist[k];
    const double precision = (tp + fp) > 0.0 ? tp / (tp + fp) : 0.0;
    const double recall = tp / total_fg;
    const double denom = kBetaSquared * precision + recall;
    const double f = denom > 0.0 ? (1.0 + kBetaSquared) * precision * recall / denom : 0.0;
    result.curve.precision[k] = precision;
    result.curve.recall[k] = recall;
    result.curve.f[k] = f;
  }
  for (int t = 0; t < kThresholds; ++t) {
    const double f = result.curve.f[static_cast<std::size_t>(t)];
    if (f > result.max_f) {
      result.max_f = f;
      result.best_threshold = t;
    }
  }
  return result;
}

namespace detail {

// Object-level similarity of the values of `x` inside `mask`:
// 2 * mean / (mean^2 + 1 + std + eps), std with the (N - 1) normalization.
inline double object_score(const cv::Mat1d& x, const cv::Mat1b& mask) {
  const int n = cv::countNonZero(mask);
  if (n == 0) return 0.0;
  cv::Scalar mean, stddev;
  cv::meanStdDev(x, mean, stddev, mask);
  const double m = mean[0];
  const double sd = n > 1 ? stddev[0] * std::sqrt(static_cast<double>(n) / (n - 1)) : 0.0;
  return 2.0 * m / (m * m + 1.0 + sd + kEps);
}

inline double object_similarity(const cv::Mat1d& s, const cv::Mat1b& fg) {
  cv::Mat1b bg = ~fg;
  cv::Mat1d inv = 1.0 - s;
  const double u = static_cast<double>(cv::countNonZero(fg)) / static_cast<double>(fg.total());
  return u * object_score(s, fg) + (1.0 - u) * object_score(inv, bg);
}

// Region SSIM of one quadrant.
inline double quadrant_ssim(const cv::Mat1d& s, const cv::Mat1d& g) {
  const double n = static_cast<double>(s.total());
  const double x = cv::mean(s)[0];
  const double y = cv::mean(g)[0];
  cv::Mat1d dx = s - x;
  cv::Mat1d dy = g - y;
  const double var_x = cv::sum(dx.mul(dx))[0] / (n - 1.0 + kEps);
  const double var_y = cv::sum(dy.mul(dy))[0] / (n - 1.0 + kEps);
  const double cov = cv::sum(dx.mul(dy))[0] / (n - 1.0 + kEps);
  const double alpha = 4.0 * x * y * cov;
  const double beta = (x * x + y * y) * (var_x + var_y);
  if (alpha != 0.0) return alpha / (beta + kEps);
  if (beta == 0.0) return 1.0;
  return 0.0;
}

inline double region_similarity(const cv::Mat1d& s, const cv::Mat1b& fg) {
  const int rows = s.rows;
  const int cols = s.cols;
  cv::Mat1d g;
  fg.convertTo(g, CV_64F, 1.0 / 255.0);
  // Centroid in 1-based pixel coordinates, rounded half away from zero.
  cv::Mat1d col_sum, row_sum;
  cv::reduce(g, col_sum, 0, cv::REDUCE_SUM);
  cv::reduce(g, row_sum, 1, cv::REDUCE_SUM);
  const double total = cv::sum(g)[0];
  double wx = 0.0, wy = 0.0;
  for (int c = 0; c < cols; ++c) wx += (c + 1) * col_sum(0, c);
  for (int r = 0; r < rows; ++r) wy += (r + 1) * row_sum(r, 0);
  const int cx = static_cast<int>(std::round(wx / total));
  const int cy = static_cast<int>(std::round(wy / total));

  const double area = static_cast<double>(rows) * cols;
  const std::array<cv::Rect, 4> quads{cv::Rect(0, 0, cx, cy), cv::Rect(cx, 0, cols - cx, cy),
                                      cv::Rect(0, cy, cx, rows - cy), cv::Rect(cx, cy, cols - cx, rows - cy)};
  double score = 0.0;
  for (const auto& q : quads) {
    if (q.area() == 0) continue;
    score += (static_cast<double>(q.area()) / area) * quadrant_ssim(s(q), g(q));
  }
  return score;
}

}  // namespace detail

// Structure measure: alpha * object similarity + (1 - alpha) * region
// similarity, alpha = 0.5, clamped at 0. An all-background ground truth scores
// 1 - mean(s); an all-foreground one scores mean(s).
inline double s_measure(const cv::Mat& saliency, const cv::Mat& gt) {
  detail::check_sizes(saliency, gt);
  auto s = detail::as_double(saliency);
  auto fg = detail::foreground(detail::as_double(gt));
  const double fg_ratio = static_cast<double>(cv::countNonZero(fg)) / static_cast<double>(fg.total());
  if (fg_ratio == 0.0) return 1.0 - cv::mean(s)[0];
  if (fg_ratio == 1.0) return cv::mean(s)[0];
  const double q = kStructureAlpha * detail::object_similarity(s, fg) +
                   (1.0 - kStructureAlpha) * detail::region_similarity(s, fg);
  return std::max(q, 0.0);
}

}  // namespace psnet::metrics
