#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "psnet/errors.hpp"

namespace psnet {

enum class BackboneKind { resnet50, tiny };

// Architecture variants. `full` is the complete network (GDR + CRC + IPF);
// the rest are the ablation rows: the baseline decoder without GDR/CRC, each
// module added on its own, and the full network with an alternative branch
// fusion in place of IPF.
enum class Ablation {
  full,
  baseline,
  baseline_gdr,
  baseline_crc,
  parallel_add,
  parallel_concat,
  parallel_attention,
};

// How the two branches' level-2 decoder features are merged.
enum class FusionKind { importance, add, concat, attention };

enum class FlowEncoding { hsv, middlebury };

NLOHMANN_JSON_SERIALIZE_ENUM(BackboneKind, {
                                               {BackboneKind::resnet50, "resnet50"},
                                               {BackboneKind::tiny, "tiny"},
                                           })

NLOHMANN_JSON_SERIALIZE_ENUM(Ablation, {
                                           {Ablation::full, "full"},
                                           {Ablation::baseline, "B"},
                                           {Ablation::baseline_gdr, "B+GDR"},
                                           {Ablation::baseline_crc, "B+CRC"},
                                           {Ablation::parallel_add, "parallel-A"},
                                           {Ablation::parallel_concat, "parallel-C"},
                                           {Ablation::parallel_attention, "parallel-F"},
                                       })

NLOHMANN_JSON_SERIALIZE_ENUM(FlowEncoding, {
                                               {FlowEncoding::hsv, "hsv"},
                                               {FlowEncoding::middlebury, "middlebury"},
                                           })

inline std::string_view to_string(Ablation a) {
  switch (a) {
    case Ablation::full: return "full";
    case Ablation::baseline: return "B";
    case Ablation::baseline_gdr: return "B+GDR";
    case Ablation::baseline_crc: return "B+CRC";
    case Ablation::parallel_add: return "parallel-A";
    case Ablation::parallel_concat: return "parallel-C";
    case Ablation::parallel_attention: return "parallel-F";
  }
  return "unknown";
}

inline Ablation parse_ablation(std::string_view name) {
  if (name == "full" || name == "parallel-IPF" || name == "B+CRC+GDR") return Ablation::full;
  if (name == "B") return Ablation::baseline;
  if (name == "B+GDR") return Ablation::baseline_gdr;
  if (name == "B+CRC") return Ablation::baseline_crc;
  if (name == "parallel-A") return Ablation::parallel_add;
  if (name == "parallel-C") return Ablation::parallel_concat;
  if (name == "parallel-F") return Ablation::parallel_attention;
  throw ConfigError("unknown ablation variant '" + std::string(name) + "'");
}

inline BackboneKind parse_backbone(std::string_view name) {
  if (name == "resnet50" || name == "resnet50-pretrained") return BackboneKind::resnet50;
  if (name == "tiny" || name == "tiny-random") return BackboneKind::tiny;
  throw ConfigError("unknown backbone '" + std::string(name) + "'");
}

struct BackboneConfig {
  BackboneKind kind = BackboneKind::resnet50;
  std::int64_t tiny_width = 8;
  std::int64_t tiny_depth = 1;
  // Serialized ResNet-50 weights (TorchScript archive with torchvision names).
  // Empty or missing file falls back to random init.
  std::string weights_path;

  friend bool operator==(const BackboneConfig&, const BackboneConfig&) = default;
};

struct ModelConfig {
  BackboneConfig backbone;
  std::int64_t decoder_width = 128;
  std::int64_t dyn_kernel_size = 3;
  std::int64_t height = 384;
  std::int64_t width = 384;
  double lambda1 = 0.6;
  double lambda2 = 0.4;
  Ablation ablation = Ablation::full;

  // Desk-scale configuration used throughout the test suites.
  static ModelConfig tiny(std::int64_t size = 64) {
    ModelConfig c;
    c.backbone.kind = BackboneKind::tiny;
    c.backbone.tiny_width = 8;
    c.backbone.tiny_depth = 1;
    c.decoder_width = 16;
    c.height = size;
    c.width = size;
    return c;
  }

  bool uses_gdr() const {
    return ablation != Ablation::baseline && ablation != Ablation::baseline_crc;
  }
  bool uses_crc() const {
    return ablation != Ablation::baseline && ablation != Ablation::baseline_gdr;
  }
  FusionKind fusion() const {
    switch (ablation) {
      case Ablation::parallel_add: return FusionKind::add;
      case Ablation::parallel_concat: return FusionKind::concat;
      case Ablation::parallel_attention: return FusionKind::attention;
      default: return FusionKind::importance;
    }
  }

  // Channel counts of encoder levels 2..5 before projection.
  std::array<std::int64_t, 4> encoder_channels() const {
    if (backbone.kind == BackboneKind::resnet50) return {256, 512, 1024, 2048};
    const auto w = backbone.tiny_width;
    return {w, 2 * w, 4 * w, 8 * w};
  }

  void validate() const {
    if (height <= 0 || height % 32 != 0)
      throw ConfigError("input height " + std::to_string(height) + " is not divisible by 32");
    if (width <= 0 || width % 32 != 0)
      throw ConfigError("input width " + std::to_string(width) + " is not divisible by 32");
    if (decoder_width <= 0) throw ConfigError("decoder_width must be positive");
    if (decoder_width % 4 != 0)
      throw ConfigError("decoder_width must be a multiple of 4 (dense growth and SE reduction)");
    if (dyn_kernel_size <= 0 || dyn_kernel_size % 2 == 0)
      throw ConfigError("dyn_kernel_size must be a positive odd integer");
    if (backbone.kind == BackboneKind::tiny && (backbone.tiny_width <= 0 || backbone.tiny_depth <= 0))
      throw ConfigError("tiny backbone width and depth must be positive");
    if (lambda1 < 0.0 || lambda2 < 0.0) throw ConfigError("loss weights must be non-negative");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline void to_json(nlohmann::json& j, const BackboneConfig& b) {
  j = nlohmann::json{{"kind", b.kind},
                     {"tiny_width", b.tiny_width},
                     {"tiny_depth", b.tiny_depth},
                     {"weights_path", b.weights_path}};
}

inline void from_json(const nlohmann::json& j, BackboneConfig& b) {
  if (j.contains("kind")) b.kind = parse_backbone(j.at("kind").get<std::string>());
  b.tiny_width = j.value("tiny_width", b.tiny_width);
  b.tiny_depth = j.value("tiny_depth", b.tiny_depth);
  b.weights_path = j.value("weights_path", b.weights_path);
}

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"backbone", c.backbone},
                     {"decoder_width", c.decoder_width},
                     {"dyn_kernel_size", c.dyn_kernel_size},
                     {"input_size", {c.height, c.width}},
                     {"lambda1", c.lambda1},
                     {"lambda2", c.lambda2},
                     {"ablation", c.ablation}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  if (j.contains("backbone")) c.backbone = j.at("backbone").get<BackboneConfig>();
  c.decoder_width = j.value("decoder_width", c.decoder_width);
  c.dyn_kernel_size = j.value("dyn_kernel_size", c.dyn_kernel_size);
  if (j.contains("input_size")) {
    const auto& s = j.at("input_size");
    if (!s.is_array() || s.size() != 2) throw ConfigError("input_size must be [height, width]");
    c.height = s[0].get<std::int64_t>();
    c.width = s[1].get<std::int64_t>();
  }
  c.lambda1 = j.value("lambda1", c.lambda1);
  c.lambda2 = j.value("lambda2", c.lambda2);
  if (j.contains("ablation")) c.ablation = parse_ablation(j.at("ablation").get<std::string>());
}

// Per-channel standardization applied when samples are batched.
struct Normalization {
  std::array<float, 3> mean{0.485f, 0.456f, 0.406f};
  std::array<float, 3> std{0.229f, 0.224f, 0.225f};

  friend bool operator==(const Normalization&, const Normalization&) = default;
};

inline void to_json(nlohmann::json& j, const Normalization& n) {
  j = nlohmann::json{{"mean", n.mean}, {"std", n.std}};
}

inline void from_json(const nlohmann::json& j, Normalization& n) {
  if (j.contains("mean")) n.mean = j.at("mean").get<std::array<float, 3>>();
  if (j.contains("std")) n.std = j.at("std").get<std::array<float, 3>>();
}

}  // namespace psnet
