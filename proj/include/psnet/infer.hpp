#pragma once

#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>
#include <opencv2/imgproc.hpp>
#include <torch/torch.h>

#include "psnet/checkpoint.hpp"
#include "psnet/data.hpp"
#include "psnet/errors.hpp"
#include "psnet/log.hpp"
#include "psnet/model.hpp"

namespace psnet {

struct Prediction {
  cv::Mat saliency;    // CV_32F in [0, 1] at the original frame size
  cv::Mat appearance;  // s_a, same size; empty for single-branch inference
  cv::Mat motion;      // s_m
  torch::Tensor weight;  // importance weights (C); undefined unless IPF with importance fusion
};

namespace detail {

inline cv::Mat to_map(const torch::Tensor& t, cv::Size size) {
  auto m = ops::resize_to(t.unsqueeze(0), size.height, size.width).squeeze(0).squeeze(0);
  m = m.to(torch::kFloat32).contiguous();
  cv::Mat out(size, CV_32F);
  std::memcpy(out.data, m.data_ptr<float>(), sizeof(float) * static_cast<std::size_t>(m.numel()));
  return out;
}

}  // namespace detail

// Runs the model in eval mode on `samples`. `stage` 1 or 2 uses the
// single-stream path of that branch; 3 the full network.
inline std::vector<Prediction> predict(PSNet& model, std::span<const data::VideoSample> samples,
                                       const Normalization& rgb_norm, const Normalization& flow_norm, int stage = 3,
                                       std::int64_t batch_size = 8) {
  torch::NoGradGuard no_grad;
  model->eval();
  std::vector<Prediction> out;
  for (std::size_t start = 0; start < samples.size(); start += static_cast<std::size_t>(batch_size)) {
    const auto count = std::min(samples.size() - start, static_cast<std::size_t>(batch_size));
    auto chunk = samples.subspan(start, count);
    auto batch = data::make_batch(chunk, rgb_norm, flow_norm);
    if (stage == 3) {
      if (!batch.rgb.defined() || !batch.flow.defined()) throw DataError("full-network inference needs frames and flow");
      auto fwd = model->forward(batch.rgb, batch.flow);
      for (std::size_t i = 0; i < count; ++i) {
        const auto& s = chunk[i];
        const cv::Size size = s.original_size.area() > 0 ? s.original_size : s.size();
        const auto k = static_cast<std::int64_t>(i);
        Prediction p;
        p.saliency = detail::to_map(fwd.fusion.pre_s[k], size);
        p.appearance = detail::to_map(fwd.appearance.saliency[k], size);
        p.motion = detail::to_map(fwd.motion.saliency[k], size);
        if (fwd.fusion.weight.defined()) p.weight = fwd.fusion.weight[k].clone();
        out.push_back(std::move(p));
      }
    } else {
      const auto branch = stage == 2 ? Branch::motion : Branch::appearance;
      const auto& input = branch == Branch::appearance ? batch.rgb : batch.flow;
      if (!input.defined()) throw DataError("single-branch inference lacks its input modality");
      auto single = model->forward_single(input, branch);
      for (std::size_t i = 0; i < count; ++i) {
        const auto& s = chunk[i];
        const cv::Size size = s.original_size.area() > 0 ? s.original_size : s.size();
        Prediction p;
        p.saliency = detail::to_map(single.saliency[static_cast<std::int64_t>(i)], size);
        out.push_back(std::move(p));
      }
    }
  }
  return out;
}

struct InferOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path input;
  std::filesystem::path output;
  bool dump_importance = false;
  bool write_branches = false;   // s_a / s_m under appearance/ and motion/
  bool allow_single_branch = false;  // accept stage-1/2 checkpoints
};

struct InferSummary {
  std::size_t maps = 0;
  int stage = 3;
};

inline Normalization norm_from(const nlohmann::json& extra, const char* key) {
  return extra.contains(key) ? extra.at(key).get<Normalization>() : Normalization{};
}

// One 8-bit PNG per frame pair at the frame's original resolution, written
// to output/<sequence>/<frame>.png.
inline InferSummary run_inference(const InferOptions& o) {
  auto ckpt = load_checkpoint(o.checkpoint);
  if (ckpt.stage != 3 && !o.allow_single_branch)
    throw ConfigError("checkpoint " + o.checkpoint.string() + " is from stage " + std::to_string(ckpt.stage) +
                      "; pass the single-branch flag to run it");
  auto config = ckpt.config.get<ModelConfig>();
  config.backbone.weights_path.clear();
  torch::set_num_threads(1);
  PSNet model(config);
  apply_state(*model, ckpt.tensors);
  const auto rgb_norm = norm_from(ckpt.extra, "rgb_norm");
  const auto flow_norm = norm_from(ckpt.extra, "flow_norm");

  data::LoadOptions lo;
  lo.height = config.height;
  lo.width = config.width;
  lo.need_gt = false;
  lo.need_rgb = ckpt.stage != 2;
  lo.need_flow = ckpt.stage != 1;
  auto sequences = data::load_dataset(o.input, lo);

  InferSummary summary;
  summary.stage = ckpt.stage;
  for (const auto& seq : sequences) {
    auto preds = predict(model, seq.samples, rgb_norm, flow_norm, ckpt.stage);
    for (std::size_t i = 0; i < preds.size(); ++i) {
      const auto& s = seq.samples[i];
      const auto& p = preds[i];
      const auto dir = o.output / seq.name;
      data::write_map(dir / (s.frame_name + ".png"), p.saliency);
      if (o.write_branches && !p.appearance.empty()) {
        data::write_map(dir / "appearance" / (s.frame_name + ".png"), p.appearance);
        data::write_map(dir / "motion" / (s.frame_name + ".png"), p.motion);
      }
      if (o.dump_importance) {
        if (!p.weight.defined()) {
          static bool warned = false;
          if (!warned) logger()->warn("no importance weights in this model variant; skipping the dump");
          warned = true;
        } else {
          nlohmann::json j{{"mean", p.weight.mean().item<double>()},
                           {"min", p.weight.min().item<double>()},
                           {"max", p.weight.max().item<double>()},
                           {"channels", p.weight.numel()}};
          std::ofstream os(dir / (s.frame_name + "_importance.json"));
          os << j.dump(2) << '\n';
        }
      }
      ++summary.maps;
    }
  }
  logger()->info("wrote {} saliency maps to {}", summary.maps, o.output.string());
  return summary;
}

// Blends saliency maps over their frames (red tint) for visual inspection.
inline std::size_t write_overlays(const std::filesystem::path& pred_root, const std::filesystem::path& rgb_root,
                                  const std::filesystem::path& out_root) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(pred_root)) throw DataError("prediction root " + pred_root.string() + " is not a directory");
  std::size_t n = 0;
  std::vector<fs::path> preds;
  for (const auto& e : fs::recursive_directory_iterator(pred_root))
    if (e.is_regular_file() && e.path().extension() == ".png") preds.push_back(e.path());
  std::sort(preds.begin(), preds.end());
  for (const auto& p : preds) {
    const auto rel = fs::relative(p, pred_root);
    const auto seq = rel.has_parent_path() ? rel.parent_path() : fs::path();
    fs::path frame = data::detail::find_frame(rgb_root / seq / "rgb", p.stem().string());
    if (!fs::exists(frame)) frame = data::detail::find_frame(rgb_root / seq, p.stem().string());
    if (!fs::exists(frame)) continue;
    auto rgb = data::detail::read_rgb(frame);
    cv::Mat map = cv::imread(p.string(), cv::IMREAD_GRAYSCALE);
    if (map.empty()) throw DataError("cannot read prediction " + p.string());
    map.convertTo(map, CV_32F, 1.0 / 255.0);
    if (map.size() != rgb.size()) cv::resize(map, map, rgb.size());
    cv::Mat tint(rgb.size(), CV_32FC3, cv::Scalar(1.0, 0.0, 0.0));
    cv::Mat alpha;
    cv::Mat channels[] = {map * 0.6, map * 0.6, map * 0.6};
    cv::merge(channels, 3, alpha);
    cv::Mat blended = rgb.mul(cv::Scalar::all(1.0) - alpha) + tint.mul(alpha);
    data::write_rgb(out_root / rel, blended);
    ++n;
  }
  if (n == 0) throw DataError("no prediction matched a frame under " + rgb_root.string());
  return n;
}

}  // namespace psnet
