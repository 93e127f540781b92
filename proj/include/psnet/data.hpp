#pragma once

#include <algorithm>
#include <filesystem>
#include <mutex>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <torch/torch.h>

#include "psnet/config.hpp"
#include "psnet/errors.hpp"
#include "psnet/flow.hpp"
#include "psnet/log.hpp"

namespace psnet::data {

namespace fs = std::filesystem;

// One aligned (frame, flow to next frame, mask) triple. Images are float RGB in
// [0, 1]; standardization happens when samples are batched.
struct VideoSample {
  cv::Mat rgb;         // CV_32FC3; empty for flow-only data
  cv::Mat flow_rgb;    // CV_32FC3; empty for static-image data
  cv::Mat gt;          // CV_32FC1 with values in {0, 1}; empty without labels
  cv::Mat flow_field;  // CV_32FC2 analytic (u, v); only for synthetic clips
  std::string sequence_id;
  int frame_index = 0;
  std::string frame_name;
  cv::Size original_size;

  cv::Size size() const {
    if (!rgb.empty()) return rgb.size();
    if (!flow_rgb.empty()) return flow_rgb.size();
    return gt.size();
  }
};

struct Sequence {
  std::string name;
  std::vector<VideoSample> samples;
};

struct LoadOptions {
  std::int64_t height = 384;
  std::int64_t width = 384;
  bool need_rgb = true;
  bool need_flow = true;
  bool need_gt = true;
  std::string split;  // optional subdirectory of the root
};

namespace detail {

inline bool is_image(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

inline std::vector<fs::path> list_images(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && is_image(e.path())) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

// <dir>/<stem>.png, falling back to .jpg. Returns the .png path when neither exists.
inline fs::path find_frame(const fs::path& dir, const std::string& stem) {
  for (const char* ext : {".png", ".jpg", ".jpeg"}) {
    auto p = dir / (stem + ext);
    if (fs::exists(p)) return p;
  }
  return dir / (stem + ".png");
}

inline cv::Mat read_rgb(const fs::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw DataError("cannot read image " + path.string());
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  rgb.convertTo(rgb, CV_32FC3, 1.0 / 255.0);
  return rgb;
}

inline cv::Mat binarize(const cv::Mat& m) {
  cv::Mat out;
  cv::threshold(m, out, 0.5, 1.0, cv::THRESH_BINARY);
  // THRESH_BINARY maps exactly 0.5 to 0; masks treat 0.5 as foreground.
  cv::Mat half = m == 0.5f;
  out.setTo(1.0f, half);
  return out;
}

// Reads an 8-bit mask; gray values are binarized at 0.5 and counted.
inline cv::Mat read_mask(const fs::path& path, std::size_t* gray_pixels) {
  cv::Mat g = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
  if (g.empty()) throw DataError("cannot read mask " + path.string());
  cv::Mat gray = (g > 0) & (g < 255);
  if (gray_pixels) *gray_pixels += static_cast<std::size_t>(cv::countNonZero(gray));
  cv::Mat f;
  g.convertTo(f, CV_32F, 1.0 / 255.0);
  return binarize(f);
}

inline cv::Mat resize_image(const cv::Mat& m, cv::Size size) {
  if (m.empty() || m.size() == size) return m;
  cv::Mat out;
  cv::resize(m, out, size, 0, 0, cv::INTER_LINEAR);
  return out;
}

inline cv::Mat resize_mask(const cv::Mat& m, cv::Size size) {
  if (m.empty() || m.size() == size) return m;
  return binarize(resize_image(m, size));
}

}  // namespace detail

// Loads root/{Sequence}/{rgb,flow,gt}/<frame>.png. In video mode (RGB frames
// plus flow) the last frame of every sequence is dropped because no flow to a
// following frame exists. Frames are resized to the configured input size.
inline std::vector<Sequence> load_dataset(const fs::path& root_in, const LoadOptions& options) {
  fs::path root = root_in;
  if (!options.split.empty() && fs::is_directory(root / options.split)) root /= options.split;
  if (!fs::is_directory(root)) throw DataError("dataset root " + root.string() + " is not a directory");

  std::vector<fs::path> sequence_dirs;
  if (fs::is_directory(root / "rgb") || fs::is_directory(root / "flow")) {
    sequence_dirs.push_back(root);
  } else {
    for (const auto& e : fs::directory_iterator(root))
      if (e.is_directory()) sequence_dirs.push_back(e.path());
    std::sort(sequence_dirs.begin(), sequence_dirs.end());
  }

  const cv::Size target(static_cast<int>(options.width), static_cast<int>(options.height));
  std::vector<Sequence> out;
  for (const auto& dir : sequence_dirs) {
    const bool has_rgb = fs::is_directory(dir / "rgb");
    const bool has_flow = fs::is_directory(dir / "flow");
    if (options.need_rgb && !has_rgb) throw DataError("missing directory " + (dir / "rgb").string());
    if (options.need_flow && !has_flow) throw DataError("missing directory " + (dir / "flow").string());
    if (options.need_gt && !fs::is_directory(dir / "gt")) throw DataError("missing directory " + (dir / "gt").string());

    const fs::path source = has_rgb ? dir / "rgb" : dir / "flow";
    auto frames = detail::list_images(source);
    const bool video_mode = has_rgb && options.need_flow;
    if (video_mode && !frames.empty()) frames.pop_back();

    Sequence seq;
    seq.name = dir.filename().string();
    std::size_t gray_pixels = 0;
    bool resized_nondivisible = false;
    for (std::size_t i = 0; i < frames.size(); ++i) {
      const auto stem = frames[i].stem().string();
      VideoSample s;
      s.sequence_id = seq.name;
      s.frame_index = static_cast<int>(i);
      s.frame_name = stem;
      if (options.need_rgb) s.rgb = detail::read_rgb(frames[i]);
      if (options.need_flow) {
        auto fp = detail::find_frame(dir / "flow", stem);
        if (!fs::exists(fp)) throw DataError("missing flow file " + fp.string());
        s.flow_rgb = detail::read_rgb(fp);
      }
      if (options.need_gt) {
        auto gp = detail::find_frame(dir / "gt", stem);
        if (!fs::exists(gp)) throw DataError("missing ground-truth file " + gp.string());
        s.gt = detail::read_mask(gp, &gray_pixels);
      }
      s.original_size = s.size();
      if (!s.rgb.empty() && !s.flow_rgb.empty() && s.rgb.size() != s.flow_rgb.size())
        throw DataError("frame and flow sizes differ for " + seq.name + "/" + stem);
      if (s.original_size != target) {
        if (s.original_size.width % 32 != 0 || s.original_size.height % 32 != 0) resized_nondivisible = true;
        s.rgb = detail::resize_image(s.rgb, target);
        s.flow_rgb = detail::resize_image(s.flow_rgb, target);
        s.gt = detail::resize_mask(s.gt, target);
      }
      seq.samples.push_back(std::move(s));
    }
    if (gray_pixels > 0)
      logger()->info("sequence {}: binarized {} gray ground-truth pixels at 0.5", seq.name, gray_pixels);
    if (resized_nondivisible)
      logger()->info("sequence {}: frame size not divisible by 32, resized to {}x{}", seq.name, target.width,
                     target.height);
    out.push_back(std::move(seq));
  }
  if (out.empty()) throw DataError("no sequences found under " + root.string());
  return out;
}

inline std::vector<VideoSample> flatten(const std::vector<Sequence>& sequences) {
  std::vector<VideoSample> out;
  for (const auto& s : sequences) out.insert(out.end(), s.samples.begin(), s.samples.end());
  return out;
}

// (H, W, 3) float image -> (3, H, W) standardized tensor.
inline torch::Tensor image_to_tensor(const cv::Mat& image, const Normalization& norm) {
  cv::Mat contiguous = image.isContinuous() ? image : image.clone();
  auto t = torch::from_blob(contiguous.data, {contiguous.rows, contiguous.cols, 3}, torch::kFloat32)
               .permute({2, 0, 1})
               .clone();
  auto mean = torch::tensor(std::vector<float>(norm.mean.begin(), norm.mean.end())).view({3, 1, 1});
  auto stdev = torch::tensor(std::vector<float>(norm.std.begin(), norm.std.end())).view({3, 1, 1});
  return (t - mean) / stdev;
}

inline torch::Tensor mask_to_tensor(const cv::Mat& mask) {
  cv::Mat contiguous = mask.isContinuous() ? mask : mask.clone();
  return torch::from_blob(contiguous.data, {1, contiguous.rows, contiguous.cols}, torch::kFloat32).clone();
}

struct Batch {
  torch::Tensor rgb;   // (N, 3, H, W), undefined if samples carry no RGB
  torch::Tensor flow;  // (N, 3, H, W), undefined if samples carry no flow
  torch::Tensor gt;    // (N, 1, H, W), undefined if samples carry no mask
};

inline Batch make_batch(std::span<const VideoSample> samples, const Normalization& rgb_norm,
                        const Normalization& flow_norm, torch::Dtype dtype = torch::kFloat32) {
  if (samples.empty()) throw DataError("cannot batch zero samples");
  std::vector<torch::Tensor> rgb, flow, gt;
  for (const auto& s : samples) {
    if (!s.rgb.empty()) rgb.push_back(image_to_tensor(s.rgb, rgb_norm));
    if (!s.flow_rgb.empty()) flow.push_back(image_to_tensor(s.flow_rgb, flow_norm));
    if (!s.gt.empty()) gt.push_back(mask_to_tensor(s.gt));
  }
  auto stack = [&](std::vector<torch::Tensor>& v, const char* what) -> torch::Tensor {
    if (v.empty()) return {};
    if (v.size() != samples.size()) throw DataError(std::string("batch mixes samples with and without ") + what);
    return torch::stack(v).to(dtype);
  };
  return {stack(rgb, "rgb"), stack(flow, "flow"), stack(gt, "ground truth")};
}

// ---------------------------------------------------------------------------
// Augmentation

inline constexpr std::array<double, 3> kAugmentScales{0.75, 1.0, 1.25};

struct AugmentChoice {
  double scale = 1.0;
  bool hflip = false;
  bool vflip = false;
};

inline AugmentChoice draw_augmentation(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> pick(0, 2);
  std::bernoulli_distribution coin(0.5);
  AugmentChoice c;
  c.scale = kAugmentScales[static_cast<std::size_t>(pick(rng))];
  c.hflip = coin(rng);
  c.vflip = coin(rng);
  return c;
}

namespace detail {

// Resize by `scale`, then zero-pad (scale < 1) or center-crop (scale > 1) back
// to the original size.
inline cv::Mat rescale_fixed(const cv::Mat& m, double scale, int interpolation) {
  if (m.empty() || scale == 1.0) return m;
  const cv::Size size = m.size();
  const cv::Size scaled(static_cast<int>(std::lround(size.width * scale)),
                        static_cast<int>(std::lround(size.height * scale)));
  cv::Mat resized;
  cv::resize(m, resized, scaled, 0, 0, interpolation);
  if (scale < 1.0) {
    const int top = (size.height - scaled.height) / 2;
    const int left = (size.width - scaled.width) / 2;
    cv::Mat out;
    cv::copyMakeBorder(resized, out, top, size.height - scaled.height - top, left, size.width - scaled.width - left,
                       cv::BORDER_CONSTANT, cv::Scalar::all(0));
    return out;
  }
  const int top = (scaled.height - size.height) / 2;
  const int left = (scaled.width - size.width) / 2;
  return resized(cv::Rect(left, top, size.width, size.height)).clone();
}

inline cv::Mat flip_image(const cv::Mat& m, bool h, bool v) {
  if (m.empty() || (!h && !v)) return m;
  cv::Mat out;
  cv::flip(m, out, h && v ? -1 : (h ? 1 : 0));
  return out;
}

}  // namespace detail

// Applies one scale and the flips identically to frame, flow and mask. When
// the analytic flow field is known, it is transformed too (flipping negates
// the matching component) and the flow image is re-rendered from it;
// otherwise the color-encoded flow is transformed as a plain image.
inline VideoSample apply_augmentation(const VideoSample& in, const AugmentChoice& c,
                                      FlowEncoding encoding = FlowEncoding::hsv) {
  VideoSample s = in;
  s.rgb = detail::flip_image(detail::rescale_fixed(in.rgb, c.scale, cv::INTER_LINEAR), c.hflip, c.vflip);
  if (!in.gt.empty())
    s.gt = detail::binarize(detail::flip_image(detail::rescale_fixed(in.gt, c.scale, cv::INTER_LINEAR), c.hflip, c.vflip));
  if (!in.flow_field.empty()) {
    cv::Mat field = detail::flip_image(detail::rescale_fixed(in.flow_field, c.scale, cv::INTER_LINEAR), c.hflip, c.vflip);
    std::array<cv::Mat, 2> uv;
    cv::split(field, uv.data());
    uv[0] *= c.scale * (c.hflip ? -1.0 : 1.0);
    uv[1] *= c.scale * (c.vflip ? -1.0 : 1.0);
    cv::merge(uv.data(), 2, field);
    s.flow_field = field;
    s.flow_rgb = flow_to_rgb(field, encoding);
  } else if (!in.flow_rgb.empty()) {
    if (c.hflip || c.vflip) {
      static std::once_flag logged;
      std::call_once(logged, [] {
        logger()->info("flipping color-encoded flow images without the analytic field; hues are not mirrored");
      });
    }
    s.flow_rgb = detail::flip_image(detail::rescale_fixed(in.flow_rgb, c.scale, cv::INTER_LINEAR), c.hflip, c.vflip);
  }
  return s;
}

inline VideoSample augment(const VideoSample& sample, std::mt19937_64& rng, FlowEncoding encoding = FlowEncoding::hsv) {
  return apply_augmentation(sample, draw_augmentation(rng), encoding);
}

// ---------------------------------------------------------------------------
// Writing

inline void write_rgb(const fs::path& path, const cv::Mat& rgb) {
  fs::create_directories(path.parent_path());
  cv::Mat bgr, u8;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  bgr.convertTo(u8, CV_8UC3, 255.0);
  if (!cv::imwrite(path.string(), u8)) throw DataError("cannot write " + path.string());
}

// Single-channel map in [0, 1] as 8-bit PNG (rounded).
inline void write_map(const fs::path& path, const cv::Mat& map) {
  fs::create_directories(path.parent_path());
  cv::Mat u8;
  map.convertTo(u8, CV_8U, 255.0);
  if (!cv::imwrite(path.string(), u8)) throw DataError("cannot write " + path.string());
}

}  // namespace psnet::data
