#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "psnet/config.hpp"
#include "psnet/crc.hpp"
#include "psnet/encoder.hpp"
#include "psnet/gdr.hpp"
#include "psnet/ipf.hpp"

namespace psnet {

struct BranchOutputs {
  FeaturePyramid projected;                     // f_i after projection
  std::optional<GdrOutput> gdr;                 // absent for B and B+CRC
  std::array<torch::Tensor, 4> importance_masks;  // mask_i^s, levels 2..5
  std::array<torch::Tensor, 4> refine_masks;      // mask_i^r (undefined without CRC)
  std::array<torch::Tensor, 4> decoder;           // f_i^{dom,d}
  torch::Tensor saliency;                         // S_a or S_m, level-2 resolution
};

struct ForwardOutput {
  BranchOutputs appearance;
  BranchOutputs motion;
  FusionOutput fusion;
};

// Stage-1/2 pretraining output of a single stream.
struct SingleBranchOutput {
  torch::Tensor mask5;     // undefined without GDR
  torch::Tensor saliency;  // level-2 resolution
};

// Parallel symmetric two-stream network: two unshared encoders, and per
// branch a projection, GDR, four decoder blocks and a saliency head, with IPF
// merging the two branches.
class PSNetImpl : public torch::nn::Module {
 public:
  explicit PSNetImpl(const ModelConfig& config) : config_(config) {
    config_.validate();
    const auto c = config_.decoder_width;
    for (auto b : {Branch::appearance, Branch::motion}) {
      auto& s = streams_[index(b)];
      const std::string p = to_string(b);
      s.encoder = register_module(p + "_encoder", Encoder(config_, b));
      s.projection = register_module(p + "_projection", Projection(config_.encoder_channels(), c));
      if (config_.uses_gdr()) s.gdr = register_module(p + "_gdr", Gdr(c));
      for (int level : kLevels) {
        const auto k = static_cast<std::size_t>(level - 2);
        const auto name = p + "_decoder" + std::to_string(level);
        if (config_.uses_crc())
          s.crc[k] = register_module(name, Crc(c, config_.dyn_kernel_size, level));
        else
          s.baseline[k] = register_module(name, BaselineBlock(c, level));
      }
      s.head = register_module(p + "_head", BranchHead(c));
    }
    ipf_ = register_module("fusion", Ipf(c, config_.fusion()));
  }

  ForwardOutput forward(const torch::Tensor& rgb, const torch::Tensor& flow) {
    ForwardOutput out;
    auto& app = out.appearance;
    auto& mot = out.motion;
    app.projected = stream(Branch::appearance).projection->forward(stream(Branch::appearance).encoder->forward(rgb));
    mot.projected = stream(Branch::motion).projection->forward(stream(Branch::motion).encoder->forward(flow));
    decode_branch(Branch::appearance, app, mot.projected);
    decode_branch(Branch::motion, mot, app.projected);
    out.fusion = ipf_->forward(app.projected.level(5), mot.projected.level(5), app.decoder[0], mot.decoder[0]);
    return out;
  }

  // Encoder -> projection -> GDR -> head on f_2^r, the reduced network used to
  // pretrain one stream on single-modality data.
  SingleBranchOutput forward_single(const torch::Tensor& image, Branch branch) {
    auto& s = stream(branch);
    auto projected = s.projection->forward(s.encoder->forward(image));
    SingleBranchOutput out;
    if (s.gdr) {
      auto g = s.gdr->forward(projected);
      out.mask5 = g.mask5;
      out.saliency = s.head->forward(g.reinforced[0]);
    } else {
      out.saliency = s.head->forward(projected.level(2));
    }
    return out;
  }

  const ModelConfig& config() const { return config_; }

  Encoder& encoder(Branch b) { return stream(b).encoder; }
  Projection& projection(Branch b) { return stream(b).projection; }
  Gdr& gdr(Branch b) { return stream(b).gdr; }
  Crc& crc(Branch b, int level) { return stream(b).crc.at(static_cast<std::size_t>(level - 2)); }
  BranchHead& head(Branch b) { return stream(b).head; }
  Ipf& fusion() { return ipf_; }

  // Module-name prefixes of the parameters trained in single-stream pretraining.
  static std::vector<std::string> single_branch_prefixes(Branch b) {
    const std::string p = to_string(b);
    return {p + "_encoder.", p + "_projection.", p + "_gdr.", p + "_head."};
  }

  std::vector<torch::Tensor> parameters_with_prefixes(const std::vector<std::string>& prefixes) const {
    std::vector<torch::Tensor> out;
    for (const auto& item : named_parameters(/*recurse=*/true)) {
      for (const auto& prefix : prefixes) {
        if (item.key().rfind(prefix, 0) == 0) {
          out.push_back(item.value());
          break;
        }
      }
    }
    return out;
  }

  std::int64_t parameter_count() const {
    std::int64_t n = 0;
    for (const auto& p : parameters()) n += p.numel();
    return n;
  }

 private:
  struct Stream {
    Encoder encoder{nullptr};
    Projection projection{nullptr};
    Gdr gdr{nullptr};
    std::array<Crc, 4> crc{nullptr, nullptr, nullptr, nullptr};
    std::array<BaselineBlock, 4> baseline{nullptr, nullptr, nullptr, nullptr};
    BranchHead head{nullptr};
  };

  static std::size_t index(Branch b) { return b == Branch::appearance ? 0 : 1; }
  Stream& stream(Branch b) { return streams_[index(b)]; }

  void decode_branch(Branch b, BranchOutputs& out, const FeaturePyramid& auxiliary) {
    auto& s = stream(b);
    if (s.gdr) out.gdr = s.gdr->forward(out.projected);
    std::optional<torch::Tensor> previous;
    for (int level = 5; level >= 2; --level) {
      const auto k = static_cast<std::size_t>(level - 2);
      const auto& dominant = out.projected.level(level);
      const auto& reinforced = out.gdr ? out.gdr->reinforced[k] : dominant;
      CrcLevelOutput lvl = s.crc[k] ? s.crc[k]->forward(dominant, auxiliary.level(level), reinforced, previous)
                                    : s.baseline[k]->forward(reinforced, auxiliary.level(level), previous);
      out.importance_masks[k] = lvl.importance_mask;
      out.refine_masks[k] = lvl.refine_mask;
      out.decoder[k] = lvl.decoder_features;
      previous = lvl.decoder_features;
    }
    out.saliency = s.head->forward(out.decoder[0]);
  }

  ModelConfig config_;
  std::array<Stream, 2> streams_;
  Ipf ipf_{nullptr};
};
TORCH_MODULE(PSNet);

}  // namespace psnet
