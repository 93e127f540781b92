#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>
#include <opencv2/imgproc.hpp>

#include "psnet/config.hpp"
#include "psnet/data.hpp"
#include "psnet/errors.hpp"
#include "psnet/flow.hpp"

namespace psnet::data {

enum class ShapeKind { disk, rectangle, polygon };
enum class BackgroundKind { flat, noise, stripes };

NLOHMANN_JSON_SERIALIZE_ENUM(ShapeKind, {
                                            {ShapeKind::disk, "disk"},
                                            {ShapeKind::rectangle, "rectangle"},
                                            {ShapeKind::polygon, "polygon"},
                                        })

NLOHMANN_JSON_SERIALIZE_ENUM(BackgroundKind, {
                                                 {BackgroundKind::flat, "flat"},
                                                 {BackgroundKind::noise, "noise"},
                                                 {BackgroundKind::stripes, "stripes"},
                                             })

struct MovingShape {
  ShapeKind kind = ShapeKind::disk;
  double size = 8.0;  // radius (disk, polygon) or half extent (rectangle)
  std::array<double, 2> start{32.0, 32.0};  // center (x, y) at frame 0, pixels
  std::array<double, 2> velocity{0.0, 0.0};  // pixels per frame
  std::optional<std::array<float, 3>> color;  // RGB in [0, 1]; drawn from the seed if absent
};

struct SyntheticClipSpec {
  std::string name = "clip";
  std::uint64_t seed = 0;
  int n_frames = 5;
  int height = 64;
  int width = 64;
  MovingShape target;
  BackgroundKind background = BackgroundKind::noise;
  std::vector<MovingShape> distractors;
  FlowEncoding flow_encoding = FlowEncoding::hsv;
};

inline void to_json(nlohmann::json& j, const MovingShape& s) {
  j = nlohmann::json{{"kind", s.kind}, {"size", s.size}, {"start", s.start}, {"velocity", s.velocity}};
  if (s.color) j["color"] = *s.color;
}

inline void from_json(const nlohmann::json& j, MovingShape& s) {
  if (j.contains("kind")) j.at("kind").get_to(s.kind);
  s.size = j.value("size", s.size);
  if (j.contains("start")) s.start = j.at("start").get<std::array<double, 2>>();
  if (j.contains("velocity")) s.velocity = j.at("velocity").get<std::array<double, 2>>();
  if (j.contains("color")) s.color = j.at("color").get<std::array<float, 3>>();
}

inline void to_json(nlohmann::json& j, const SyntheticClipSpec& s) {
  j = nlohmann::json{{"name", s.name},         {"seed", s.seed},
                     {"n_frames", s.n_frames}, {"size", {s.height, s.width}},
                     {"target", s.target},     {"background", s.background},
                     {"distractors", s.distractors}, {"flow_encoding", s.flow_encoding}};
}

inline void from_json(const nlohmann::json& j, SyntheticClipSpec& s) {
  s.name = j.value("name", s.name);
  s.seed = j.value("seed", s.seed);
  s.n_frames = j.value("n_frames", s.n_frames);
  if (j.contains("size")) {
    s.height = j.at("size")[0].get<int>();
    s.width = j.at("size")[1].get<int>();
  }
  if (j.contains("target")) s.target = j.at("target").get<MovingShape>();
  if (j.contains("background")) j.at("background").get_to(s.background);
  if (j.contains("distractors")) s.distractors = j.at("distractors").get<std::vector<MovingShape>>();
  if (j.contains("flow_encoding")) j.at("flow_encoding").get_to(s.flow_encoding);
}

struct SyntheticClip {
  std::string name;
  std::vector<VideoSample> samples;  // frames 0..n-2, each with flow to the next frame
  cv::Mat last_rgb;                  // final frame (no outgoing flow)
  cv::Mat last_gt;
};

namespace detail {

inline std::array<double, 2> center_at(const MovingShape& s, int frame) {
  return {s.start[0] + frame * s.velocity[0], s.start[1] + frame * s.velocity[1]};
}

inline std::vector<cv::Point2d> polygon_offsets(std::uint64_t seed, double radius) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> count(5, 7);
  std::uniform_real_distribution<double> scale(0.65, 1.0);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  const int n = count(rng);
  const double p0 = phase(rng);
  std::vector<cv::Point2d> pts;
  for (int i = 0; i < n; ++i) {
    const double a = p0 + 2.0 * std::numbers::pi * i / n;
    const double r = radius * scale(rng);
    pts.emplace_back(r * std::cos(a), r * std::sin(a));
  }
  return pts;
}

// Inside test at pixel centers; 0/1 CV_8U mask.
inline cv::Mat1b rasterize(const MovingShape& s, const std::vector<cv::Point2d>& poly, int frame, cv::Size size) {
  const auto c = center_at(s, frame);
  cv::Mat1b mask(size, 0);
  std::vector<cv::Point2f> contour;
  for (const auto& p : poly) contour.emplace_back(static_cast<float>(c[0] + p.x), static_cast<float>(c[1] + p.y));
  for (int y = 0; y < size.height; ++y) {
    for (int x = 0; x < size.width; ++x) {
      const double px = x + 0.5 - c[0];
      const double py = y + 0.5 - c[1];
      bool inside = false;
      switch (s.kind) {
        case ShapeKind::disk: inside = px * px + py * py <= s.size * s.size; break;
        case ShapeKind::rectangle: inside = std::abs(px) <= s.size && std::abs(py) <= s.size; break;
        case ShapeKind::polygon:
          inside = cv::pointPolygonTest(contour, cv::Point2f(static_cast<float>(x + 0.5), static_cast<float>(y + 0.5)),
                                        false) >= 0;
          break;
      }
      mask(y, x) = inside ? 1 : 0;
    }
  }
  return mask;
}

inline bool bbox_intersects_frame(const MovingShape& s, int frame, int height, int width) {
  const auto c = center_at(s, frame);
  return c[0] + s.size > 0.0 && c[0] - s.size < width && c[1] + s.size > 0.0 && c[1] - s.size < height;
}

inline cv::Mat3f make_background(BackgroundKind kind, cv::Size size, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> unit(0.f, 1.f);
  cv::Mat3f bg(size);
  switch (kind) {
    case BackgroundKind::flat: {
      const float g = 0.3f + 0.4f * unit(rng);
      bg.setTo(cv::Scalar(g, g, g));
      break;
    }
    case BackgroundKind::noise: {
      for (int y = 0; y < size.height; ++y)
        for (int x = 0; x < size.width; ++x) bg(y, x) = cv::Vec3f(unit(rng), unit(rng), unit(rng));
      cv::GaussianBlur(bg, bg, cv::Size(0, 0), 2.0);
      bg = bg * 0.5 + cv::Scalar::all(0.25);
      break;
    }
    case BackgroundKind::stripes: {
      const double theta = unit(rng) * std::numbers::pi;
      const double freq = 0.15 + 0.25 * unit(rng);
      const cv::Vec3f a(unit(rng), unit(rng), unit(rng));
      for (int y = 0; y < size.height; ++y) {
        for (int x = 0; x < size.width; ++x) {
          const double t = 0.5 + 0.5 * std::sin(freq * (x * std::cos(theta) + y * std::sin(theta)));
          bg(y, x) = a * static_cast<float>(0.3 + 0.4 * t);
        }
      }
      break;
    }
  }
  return bg;
}

}  // namespace detail

inline void validate(const SyntheticClipSpec& spec) {
  if (spec.height <= 0 || spec.height % 32 != 0)
    throw ConfigError("synthetic clip height " + std::to_string(spec.height) + " is not divisible by 32");
  if (spec.width <= 0 || spec.width % 32 != 0)
    throw ConfigError("synthetic clip width " + std::to_string(spec.width) + " is not divisible by 32");
  if (spec.n_frames < 2) throw ConfigError("synthetic clip needs at least 2 frames");
  auto check = [&](const MovingShape& s, const std::string& what) {
    if (s.size <= 0.0) throw ConfigError(what + " size must be positive");
    for (int f = 0; f < spec.n_frames; ++f)
      if (!detail::bbox_intersects_frame(s, f, spec.height, spec.width))
        throw ConfigError(what + " leaves the frame entirely at frame " + std::to_string(f) + " of clip " + spec.name);
  };
  check(spec.target, "target");
  for (std::size_t i = 0; i < spec.distractors.size(); ++i) check(spec.distractors[i], "distractor " + std::to_string(i));
}

// Renders a clip: static textured background, distractors, then the target on
// top. The mask marks the target only; the flow of frame t is the velocity of
// whichever object covers each pixel (zero on the background).
inline SyntheticClip generate_clip(const SyntheticClipSpec& spec) {
  validate(spec);
  std::mt19937_64 rng(spec.seed);
  const cv::Size size(spec.width, spec.height);
  const auto background = detail::make_background(spec.background, size, rng);

  std::uniform_real_distribution<float> unit(0.f, 1.f);
  auto bright = [&] {
    // Saturated warm colors for the target.
    return cv::Vec3f(0.8f + 0.2f * unit(rng), 0.2f + 0.6f * unit(rng), 0.1f * unit(rng));
  };
  auto dull = [&] { return cv::Vec3f(0.1f + 0.3f * unit(rng), 0.3f + 0.3f * unit(rng), 0.5f + 0.4f * unit(rng)); };

  struct Layer {
    const MovingShape* shape;
    cv::Vec3f color;
    std::vector<cv::Point2d> polygon;
  };
  std::vector<Layer> layers;
  for (std::size_t i = 0; i < spec.distractors.size(); ++i) {
    const auto& d = spec.distractors[i];
    const auto col = d.color ? cv::Vec3f((*d.color)[0], (*d.color)[1], (*d.color)[2]) : dull();
    layers.push_back({&d, col, detail::polygon_offsets(spec.seed * 131 + i + 1, d.size)});
  }
  {
    const auto& t = spec.target;
    const auto col = t.color ? cv::Vec3f((*t.color)[0], (*t.color)[1], (*t.color)[2]) : bright();
    layers.push_back({&t, col, detail::polygon_offsets(spec.seed * 131, t.size)});
  }

  SyntheticClip clip;
  clip.name = spec.name;
  for (int f = 0; f < spec.n_frames; ++f) {
    cv::Mat3f frame = background.clone();
    cv::Mat2f field(size, cv::Vec2f(0.f, 0.f));
    cv::Mat1f gt(size, 0.f);
    for (std::size_t li = 0; li < layers.size(); ++li) {
      const auto& layer = layers[li];
      const bool is_target = li + 1 == layers.size();
      auto mask = detail::rasterize(*layer.shape, layer.polygon, f, size);
      const cv::Vec2f vel(static_cast<float>(layer.shape->velocity[0]), static_cast<float>(layer.shape->velocity[1]));
      for (int y = 0; y < size.height; ++y) {
        for (int x = 0; x < size.width; ++x) {
          if (!mask(y, x)) continue;
          frame(y, x) = layer.color;
          field(y, x) = vel;
          gt(y, x) = is_target ? 1.f : 0.f;
        }
      }
    }
    if (f + 1 == spec.n_frames) {
      clip.last_rgb = frame;
      clip.last_gt = gt;
      break;
    }
    VideoSample s;
    s.rgb = frame;
    s.flow_field = field;
    s.flow_rgb = flow_to_rgb(field, spec.flow_encoding);
    s.gt = gt;
    s.sequence_id = spec.name;
    s.frame_index = f;
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%05d", f);
    s.frame_name = buf;
    s.original_size = size;
    clip.samples.push_back(std::move(s));
  }
  return clip;
}

// Writes root/<name>/{rgb,flow,gt}/%05d.png. The last frame has RGB and mask
// but no flow.
inline void write_clip(const SyntheticClip& clip, const std::filesystem::path& root) {
  const auto dir = root / clip.name;
  for (const auto& s : clip.samples) {
    write_rgb(dir / "rgb" / (s.frame_name + ".png"), s.rgb);
    write_rgb(dir / "flow" / (s.frame_name + ".png"), s.flow_rgb);
    write_map(dir / "gt" / (s.frame_name + ".png"), s.gt);
  }
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%05d", static_cast<int>(clip.samples.size()));
  write_rgb(dir / "rgb" / (std::string(buf) + ".png"), clip.last_rgb);
  write_map(dir / "gt" / (std::string(buf) + ".png"), clip.last_gt);
}

struct RandomClipOptions {
  int height = 64;
  int width = 64;
  int n_frames = 4;
  int distractors = 1;
  // Every `static_target_every`-th clip has a static target and moving
  // distractors (0 disables).
  int static_target_every = 2;
};

// Deterministic batch of clip specs with targets and distractors placed and
// moving so that they stay inside the frame.
inline std::vector<SyntheticClipSpec> random_clip_specs(int count, std::uint64_t seed, const RandomClipOptions& o = {}) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double extent = std::min(o.height, o.width);
  auto place = [&](MovingShape& s, bool moving) {
    const double margin = s.size + 2.0;
    const double travel = moving ? 2.5 * (o.n_frames - 1) : 0.0;
    const double lo = margin + travel;
    const double hi_x = o.width - margin - travel;
    const double hi_y = o.height - margin - travel;
    s.start = {lo + (hi_x - lo) * unit(rng), lo + (hi_y - lo) * unit(rng)};
    if (moving) {
      const double a = 2.0 * std::numbers::pi * unit(rng);
      const double speed = 1.5 + unit(rng);
      s.velocity = {speed * std::cos(a), speed * std::sin(a)};
    } else {
      s.velocity = {0.0, 0.0};
    }
  };
  const std::array<ShapeKind, 3> kinds{ShapeKind::disk, ShapeKind::rectangle, ShapeKind::polygon};
  const std::array<BackgroundKind, 3> backgrounds{BackgroundKind::noise, BackgroundKind::stripes, BackgroundKind::flat};
  std::vector<SyntheticClipSpec> specs;
  for (int i = 0; i < count; ++i) {
    SyntheticClipSpec s;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "synth%03d", i);
    s.name = buf;
    s.seed = seed * 1000003ULL + static_cast<std::uint64_t>(i);
    s.n_frames = o.n_frames;
    s.height = o.height;
    s.width = o.width;
    s.background = backgrounds[static_cast<std::size_t>(i) % 3];
    const bool static_target = o.static_target_every > 0 && (i % o.static_target_every) == o.static_target_every - 1;
    s.target.kind = kinds[static_cast<std::size_t>(i) % 3];
    s.target.size = extent * (0.12 + 0.06 * unit(rng));
    place(s.target, !static_target);
    for (int d = 0; d < o.distractors; ++d) {
      MovingShape m;
      m.kind = kinds[static_cast<std::size_t>(i + d + 1) % 3];
      m.size = extent * (0.07 + 0.04 * unit(rng));
      place(m, true);
      s.distractors.push_back(m);
    }
    specs.push_back(std::move(s));
  }
  return specs;
}

inline void to_json(nlohmann::json& j, const RandomClipOptions& o) {
  j = nlohmann::json{{"size", {o.height, o.width}},
                     {"n_frames", o.n_frames},
                     {"distractors", o.distractors},
                     {"static_target_every", o.static_target_every}};
}

inline void from_json(const nlohmann::json& j, RandomClipOptions& o) {
  if (j.contains("size")) {
    o.height = j.at("size")[0].get<int>();
    o.width = j.at("size")[1].get<int>();
  }
  o.n_frames = j.value("n_frames", o.n_frames);
  o.distractors = j.value("distractors", o.distractors);
  o.static_target_every = j.value("static_target_every", o.static_target_every);
}

}  // namespace psnet::data
