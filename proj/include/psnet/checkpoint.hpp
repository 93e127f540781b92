#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "psnet/config.hpp"
#include "psnet/errors.hpp"
#include "psnet/model.hpp"

namespace psnet {

inline constexpr char kCheckpointMagic[] = "PSNETCKPT";
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Parameters and buffers by module path ("appearance_encoder.stem.0.weight",
// ...), optimizer momentum under "optim.<param>", plus enough run state to
// resume a stage.
struct Checkpoint {
  nlohmann::json config;  // ModelConfig snapshot
  int stage = 0;
  std::int64_t global_step = 0;
  std::int64_t epoch = 0;
  std::string rng_state;  // textual std::mt19937_64 state
  nlohmann::json extra = nlohmann::json::object();
  std::map<std::string, torch::Tensor> tensors;
};

namespace detail {

inline std::uint8_t dtype_code(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat32: return 0;
    case torch::kFloat64: return 1;
    case torch::kInt64: return 2;
    case torch::kInt32: return 3;
    default: throw Error(std::string("checkpoint: unsupported dtype ") + c10::toString(t));
  }
}

inline torch::ScalarType dtype_from_code(std::uint8_t c) {
  switch (c) {
    case 0: return torch::kFloat32;
    case 1: return torch::kFloat64;
    case 2: return torch::kInt64;
    case 3: return torch::kInt32;
    default: throw DataError("checkpoint: unknown dtype code " + std::to_string(c));
  }
}

template <typename T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const std::string& path) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw DataError("checkpoint " + path + " is truncated");
  return v;
}

inline std::string get_bytes(std::istream& is, std::uint64_t n, const std::string& path) {
  std::string s(n, '\0');
  if (n && !is.read(s.data(), static_cast<std::streamsize>(n))) throw DataError("checkpoint " + path + " is truncated");
  return s;
}

}  // namespace detail

// Layout: magic, version (u32), header length (u64), JSON header, tensor
// count (u64), then per tensor in name order: name length (u32), name, dtype
// (u8), rank (u32), dims (i64 each), byte count (u64), raw little-endian data.
inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot write checkpoint " + path.string());
    os.write(kCheckpointMagic, sizeof(kCheckpointMagic) - 1);
    detail::put(os, kCheckpointVersion);
    const nlohmann::json header{{"config", ckpt.config},         {"stage", ckpt.stage},
                                {"global_step", ckpt.global_step}, {"epoch", ckpt.epoch},
                                {"rng_state", ckpt.rng_state},     {"extra", ckpt.extra}};
    const auto text = header.dump();
    detail::put(os, static_cast<std::uint64_t>(text.size()));
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    detail::put(os, static_cast<std::uint64_t>(ckpt.tensors.size()));
    for (const auto& [name, tensor] : ckpt.tensors) {
      auto t = tensor.detach().to(torch::kCPU).contiguous();
      detail::put(os, static_cast<std::uint32_t>(name.size()));
      os.write(name.data(), static_cast<std::streamsize>(name.size()));
      detail::put(os, detail::dtype_code(t.scalar_type()));
      detail::put(os, static_cast<std::uint32_t>(t.dim()));
      for (auto d : t.sizes()) detail::put(os, static_cast<std::int64_t>(d));
      const auto nbytes = static_cast<std::uint64_t>(t.numel() * t.element_size());
      detail::put(os, nbytes);
      os.write(static_cast<const char*>(t.data_ptr()), static_cast<std::streamsize>(nbytes));
    }
    if (!os) throw DataError("failed writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto p = path.string();
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint " + p);
  const auto magic = detail::get_bytes(is, sizeof(kCheckpointMagic) - 1, p);
  if (magic != kCheckpointMagic) throw DataError(p + " is not a checkpoint file");
  const auto version = detail::get<std::uint32_t>(is, p);
  if (version != kCheckpointVersion) throw DataError("checkpoint " + p + " has unsupported version " + std::to_string(version));
  const auto header_len = detail::get<std::uint64_t>(is, p);
  const auto header = nlohmann::json::parse(detail::get_bytes(is, header_len, p));
  Checkpoint ckpt;
  ckpt.config = header.at("config");
  ckpt.stage = header.at("stage").get<int>();
  ckpt.global_step = header.at("global_step").get<std::int64_t>();
  ckpt.epoch = header.at("epoch").get<std::int64_t>();
  ckpt.rng_state = header.at("rng_state").get<std::string>();
  ckpt.extra = header.at("extra");
  const auto count = detail::get<std::uint64_t>(is, p);
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name = detail::get_bytes(is, detail::get<std::uint32_t>(is, p), p);
    const auto dtype = detail::dtype_from_code(detail::get<std::uint8_t>(is, p));
    const auto rank = detail::get<std::uint32_t>(is, p);
    std::vector<std::int64_t> dims(rank);
    for (auto& d : dims) d = detail::get<std::int64_t>(is, p);
    const auto nbytes = detail::get<std::uint64_t>(is, p);
    auto t = torch::empty(dims, torch::TensorOptions().dtype(dtype));
    if (static_cast<std::uint64_t>(t.numel() * t.element_size()) != nbytes)
      throw DataError("checkpoint " + p + ": byte count of '" + name + "' does not match its shape");
    if (nbytes && !is.read(static_cast<char*>(t.data_ptr()), static_cast<std::streamsize>(nbytes)))
      throw DataError("checkpoint " + p + " is truncated");
    ckpt.tensors.emplace(name, std::move(t));
  }
  return ckpt;
}

// Parameters and buffers of `model`, cloned to CPU.
inline std::map<std::string, torch::Tensor> capture_state(const torch::nn::Module& model) {
  std::map<std::string, torch::Tensor> out;
  for (const auto& item : model.named_parameters(true)) out[item.key()] = item.value().detach().to(torch::kCPU).clone();
  for (const auto& item : model.named_buffers(true)) out[item.key()] = item.value().detach().to(torch::kCPU).clone();
  return out;
}

inline bool has_prefix(const std::string& name, const std::vector<std::string>& prefixes) {
  if (prefixes.empty()) return true;
  for (const auto& p : prefixes)
    if (name.rfind(p, 0) == 0) return true;
  return false;
}

// Copies checkpoint tensors into the model's parameters and buffers whose
// names start with one of `prefixes` (all when empty). Every selected model
// tensor must be present in the checkpoint with the same shape. Returns the
// number of tensors copied.
inline std::size_t apply_state(torch::nn::Module& model, const std::map<std::string, torch::Tensor>& tensors,
                               const std::vector<std::string>& prefixes = {}) {
  torch::NoGradGuard no_grad;
  std::size_t copied = 0;
  auto copy = [&](const std::string& name, torch::Tensor& dst) {
    if (!has_prefix(name, prefixes)) return;
    auto it = tensors.find(name);
    if (it == tensors.end()) throw DataError("checkpoint has no tensor '" + name + "'");
    if (it->second.sizes() != dst.sizes())
      throw ShapeError("checkpoint tensor '" + name + "' has shape " + ops::shape_string(it->second) +
                       ", model expects " + ops::shape_string(dst));
    dst.copy_(it->second);
    ++copied;
  };
  for (auto& item : model.named_parameters(true)) copy(item.key(), item.value());
  for (auto& item : model.named_buffers(true)) copy(item.key(), item.value());
  return copied;
}

// A checkpoint can be loaded into a model when the decoder width and the
// backbone agree.
inline void require_compatible(const nlohmann::json& snapshot, const ModelConfig& config) {
  const auto other = snapshot.get<ModelConfig>();
  if (other.decoder_width != config.decoder_width)
    throw ConfigError("checkpoint decoder_width " + std::to_string(other.decoder_width) +
                      " is incompatible with configured " + std::to_string(config.decoder_width));
  if (other.backbone.kind != config.backbone.kind || other.backbone.tiny_width != config.backbone.tiny_width ||
      other.backbone.tiny_depth != config.backbone.tiny_depth)
    throw ConfigError("checkpoint backbone " + nlohmann::json(other.backbone).dump() +
                      " is incompatible with configured " + nlohmann::json(config.backbone).dump());
}

}  // namespace psnet
