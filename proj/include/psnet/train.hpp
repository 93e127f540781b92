#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "psnet/checkpoint.hpp"
#include "psnet/config.hpp"
#include "psnet/data.hpp"
#include "psnet/errors.hpp"
#include "psnet/log.hpp"
#include "psnet/losses.hpp"
#include "psnet/model.hpp"
#include "psnet/synthetic.hpp"

namespace psnet {

enum class OptimizerKind { sgd, adam };

NLOHMANN_JSON_SERIALIZE_ENUM(OptimizerKind, {
                                                {OptimizerKind::sgd, "sgd"},
                                                {OptimizerKind::adam, "adam"},
                                            })

// Synthetic clips used as the training set in place of dataset roots.
struct SyntheticSource {
  int clips = 8;
  std::uint64_t seed = 0;
  data::RandomClipOptions options;
};

struct TrainStageSpec {
  int stage = 3;  // 1: appearance pretrain, 2: motion pretrain, 3: joint fine-tune
  std::vector<std::string> data_roots;
  std::optional<SyntheticSource> synthetic;
  std::int64_t batch_size = 8;
  double lr = 2e-4;
  double lr_decay_factor = 0.1;
  std::int64_t lr_decay_period = 10;  // epochs; 0 disables decay
  std::int64_t max_epochs = 20;
  std::optional<std::int64_t> max_steps;
  OptimizerKind optimizer = OptimizerKind::sgd;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::uint64_t seed = 0;
  bool augment = true;
  std::string stage1_checkpoint;
  std::string stage2_checkpoint;
  bool from_scratch = false;
  std::string output_dir = "runs";
  std::int64_t checkpoint_every = 0;  // steps; 0 saves only at the end
  std::string log_path;               // JSON lines; empty disables the file log
  Normalization rgb_norm;
  Normalization flow_norm;
  FlowEncoding flow_encoding = FlowEncoding::hsv;

  // Published protocol defaults per stage.
  static TrainStageSpec defaults(int stage) {
    TrainStageSpec s;
    s.stage = stage;
    if (stage == 1 || stage == 2) {
      s.batch_size = 16;
      s.lr = 0.002;
      s.lr_decay_factor = 0.1;
      s.lr_decay_period = 10;
      s.max_epochs = 30;
    } else {
      s.batch_size = 8;
      s.lr = 0.0002;
      s.lr_decay_period = 0;
      s.max_epochs = 20;
    }
    return s;
  }

  void validate() const {
    if (stage < 1 || stage > 3) throw ConfigError("stage must be 1, 2 or 3");
    if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
    if (batch_size <= 0) throw ConfigError("batch_size must be positive");
    if (max_epochs <= 0) throw ConfigError("max_epochs must be positive");
    if (max_steps && *max_steps <= 0) throw ConfigError("max_steps must be positive");
    if (lr_decay_period < 0) throw ConfigError("lr_decay_period must be non-negative");
    if (stage == 3 && !from_scratch && (stage1_checkpoint.empty() || stage2_checkpoint.empty()))
      throw ConfigError("stage 3 needs stage1_checkpoint and stage2_checkpoint (or from_scratch: true)");
    if (data_roots.empty() && !synthetic) throw ConfigError("no training data: set data_roots or synthetic");
  }
};

inline void to_json(nlohmann::json& j, const SyntheticSource& s) {
  j = nlohmann::json{{"clips", s.clips}, {"seed", s.seed}, {"options", s.options}};
}

inline void from_json(const nlohmann::json& j, SyntheticSource& s) {
  s.clips = j.value("clips", s.clips);
  s.seed = j.value("seed", s.seed);
  if (j.contains("options")) s.options = j.at("options").get<data::RandomClipOptions>();
}

inline void to_json(nlohmann::json& j, const TrainStageSpec& s) {
  j = nlohmann::json{{"stage", s.stage},
                     {"data_roots", s.data_roots},
                     {"batch_size", s.batch_size},
                     {"lr", s.lr},
                     {"lr_decay_factor", s.lr_decay_factor},
                     {"lr_decay_period", s.lr_decay_period},
                     {"max_epochs", s.max_epochs},
                     {"optimizer", s.optimizer},
                     {"momentum", s.momentum},
                     {"weight_decay", s.weight_decay},
                     {"seed", s.seed},
                     {"augment", s.augment},
                     {"stage1_checkpoint", s.stage1_checkpoint},
                     {"stage2_checkpoint", s.stage2_checkpoint},
                     {"from_scratch", s.from_scratch},
                     {"output_dir", s.output_dir},
                     {"checkpoint_every", s.checkpoint_every},
                     {"log_path", s.log_path},
                     {"rgb_norm", s.rgb_norm},
                     {"flow_norm", s.flow_norm},
                     {"flow_encoding", s.flow_encoding}};
  if (s.synthetic) j["synthetic"] = *s.synthetic;
  if (s.max_steps) j["max_steps"] = *s.max_steps;
}

// Fields absent from `j` keep their current value, so a stage section only
// needs to list its overrides of the stage defaults.
inline void from_json(const nlohmann::json& j, TrainStageSpec& s) {
  s.stage = j.value("stage", s.stage);
  if (j.contains("data_roots")) s.data_roots = j.at("data_roots").get<std::vector<std::string>>();
  if (j.contains("synthetic")) s.synthetic = j.at("synthetic").get<SyntheticSource>();
  s.batch_size = j.value("batch_size", s.batch_size);
  s.lr = j.value("lr", s.lr);
  s.lr_decay_factor = j.value("lr_decay_factor", s.lr_decay_factor);
  s.lr_decay_period = j.value("lr_decay_period", s.lr_decay_period);
  s.max_epochs = j.value("max_epochs", s.max_epochs);
  if (j.contains("max_steps")) s.max_steps = j.at("max_steps").get<std::int64_t>();
  if (j.contains("optimizer")) j.at("optimizer").get_to(s.optimizer);
  s.momentum = j.value("momentum", s.momentum);
  s.weight_decay = j.value("weight_decay", s.weight_decay);
  s.seed = j.value("seed", s.seed);
  s.augment = j.value("augment", s.augment);
  s.stage1_checkpoint = j.value("stage1_checkpoint", s.stage1_checkpoint);
  s.stage2_checkpoint = j.value("stage2_checkpoint", s.stage2_checkpoint);
  s.from_scratch = j.value("from_scratch", s.from_scratch);
  s.output_dir = j.value("output_dir", s.output_dir);
  s.checkpoint_every = j.value("checkpoint_every", s.checkpoint_every);
  s.log_path = j.value("log_path", s.log_path);
  if (j.contains("rgb_norm")) s.rgb_norm = j.at("rgb_norm").get<Normalization>();
  if (j.contains("flow_norm")) s.flow_norm = j.at("flow_norm").get<Normalization>();
  if (j.contains("flow_encoding")) j.at("flow_encoding").get_to(s.flow_encoding);
}

// Run configuration file: {"model": {...}, "train": {shared fields...,
// "stage1": {...}, "stage2": {...}, "stage3": {...}}}.
struct RunConfig {
  ModelConfig model;
  nlohmann::json train = nlohmann::json::object();

  // Stage defaults, then shared train fields, then the stage section, then
  // the PSNET_SEED environment override.
  TrainStageSpec stage_spec(int stage) const {
    auto spec = TrainStageSpec::defaults(stage);
    nlohmann::json shared = train;
    for (const char* k : {"stage1", "stage2", "stage3"}) shared.erase(k);
    from_json(shared, spec);
    const auto key = "stage" + std::to_string(stage);
    if (train.contains(key)) from_json(train.at(key), spec);
    spec.stage = stage;
    if (const char* env = std::getenv("PSNET_SEED")) {
      try {
        spec.seed = std::stoull(env);
      } catch (const std::exception&) {
        throw ConfigError(std::string("PSNET_SEED is not an unsigned integer: ") + env);
      }
    }
    return spec;
  }
};

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  RunConfig rc;
  try {
    if (j.contains("model")) rc.model = j.at("model").get<ModelConfig>();
    if (j.contains("train")) rc.train = j.at("train");
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  rc.model.validate();
  return rc;
}

struct StepRecord {
  std::int64_t step = 0;
  std::int64_t epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  std::map<std::string, double> terms;
};

namespace detail {

inline std::string rng_to_string(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

inline std::mt19937_64 rng_from_string(const std::string& s) {
  std::mt19937_64 rng;
  std::istringstream is(s);
  is >> rng;
  if (!is) throw DataError("checkpoint rng state is malformed");
  return rng;
}

}  // namespace detail

// Runs one training stage. Everything stochastic (initialization, shuffling,
// augmentation) derives from the stage seed; with a single intra-op thread a
// run is reproducible bit for bit.
class Trainer {
 public:
  Trainer(ModelConfig config, TrainStageSpec spec) : config_(std::move(config)), spec_(std::move(spec)) {
    config_.validate();
    spec_.validate();
    torch::set_num_threads(1);
    torch::manual_seed(spec_.seed);
    rng_.seed(spec_.seed);
    model_ = PSNet(config_);
    if (spec_.stage == 3 && !spec_.from_scratch) load_pretrained();
    build_optimizer();
  }

  PSNet& model() { return model_; }
  const TrainStageSpec& spec() const { return spec_; }
  std::int64_t global_step() const { return global_step_; }
  const std::vector<StepRecord>& history() const { return history_; }

  // Parameters optimized in this stage.
  std::vector<torch::Tensor> trainable_parameters() const {
    if (spec_.stage == 3) return model_->parameters();
    return model_->parameters_with_prefixes(PSNetImpl::single_branch_prefixes(stage_branch()));
  }

  std::vector<data::VideoSample> load_training_samples() const {
    std::vector<data::VideoSample> samples;
    if (spec_.synthetic) {
      auto opts = spec_.synthetic->options;
      opts.height = static_cast<int>(config_.height);
      opts.width = static_cast<int>(config_.width);
      for (const auto& cs : data::random_clip_specs(spec_.synthetic->clips, spec_.synthetic->seed, opts)) {
        auto s = cs;
        s.flow_encoding = spec_.flow_encoding;
        auto clip = data::generate_clip(s);
        samples.insert(samples.end(), clip.samples.begin(), clip.samples.end());
      }
    }
    data::LoadOptions lo;
    lo.height = config_.height;
    lo.width = config_.width;
    lo.need_rgb = spec_.stage != 2;
    lo.need_flow = spec_.stage != 1;
    for (const auto& root : spec_.data_roots) {
      auto seqs = data::load_dataset(root, lo);
      auto flat = data::flatten(seqs);
      samples.insert(samples.end(), flat.begin(), flat.end());
    }
    if (samples.empty()) throw DataError("training set is empty");
    return samples;
  }

  void resume(const std::filesystem::path& path) {
    auto ckpt = load_checkpoint(path);
    require_compatible(ckpt.config, config_);
    if (ckpt.stage != spec_.stage)
      throw ConfigError("cannot resume stage " + std::to_string(spec_.stage) + " from a stage " +
                        std::to_string(ckpt.stage) + " checkpoint");
    apply_state(*model_, ckpt.tensors);
    restore_optimizer(ckpt.tensors);
    global_step_ = ckpt.global_step;
    epoch_ = ckpt.epoch;
    if (!ckpt.rng_state.empty()) epoch_rng_ = detail::rng_from_string(ckpt.rng_state);
    resumed_ = true;
    logger()->info("resumed stage {} at step {} (epoch {})", spec_.stage, global_step_, epoch_);
  }

  Checkpoint checkpoint() const {
    Checkpoint c;
    c.config = config_;
    c.stage = spec_.stage;
    c.global_step = global_step_;
    c.epoch = epoch_;
    c.rng_state = detail::rng_to_string(epoch_rng_ ? *epoch_rng_ : rng_);
    c.extra = {{"rgb_norm", spec_.rgb_norm}, {"flow_norm", spec_.flow_norm}, {"flow_encoding", spec_.flow_encoding}};
    c.tensors = capture_state(*model_);
    capture_optimizer(c.tensors);
    return c;
  }

  std::filesystem::path save(const std::string& tag) const {
    const auto path = std::filesystem::path(spec_.output_dir) / ("stage" + std::to_string(spec_.stage) + "_" + tag + ".ckpt");
    save_checkpoint(path, checkpoint());
    return path;
  }

  double lr_at_epoch(std::int64_t epoch) const {
    if (spec_.lr_decay_period <= 0) return spec_.lr;
    return spec_.lr * std::pow(spec_.lr_decay_factor, static_cast<double>(epoch / spec_.lr_decay_period));
  }

  // One optimizer step on a prepared batch; returns the loss bundle computed
  // before the update.
  LossBundle step(const data::Batch& batch) {
    model_->train();
    optimizer_->zero_grad();
    LossBundle loss;
    try {
      loss = compute_loss(batch);
    } catch (const NumericError& e) {
      const auto path = save("last_good");
      throw NumericError(std::string(e.what()) + " at step " + std::to_string(global_step_) +
                         "; last good checkpoint: " + path.string());
    }
    loss.l_total.backward();
    optimizer_->step();
    ++global_step_;
    StepRecord rec{global_step_, epoch_, current_lr(), loss.terms.at("total"), loss.terms};
    log_step(rec);
    history_.push_back(std::move(rec));
    return loss;
  }

  // Trains on `samples` until max_epochs or max_steps. Returns the path of
  // the final checkpoint when `write_final` is set.
  std::optional<std::filesystem::path> run(const std::vector<data::VideoSample>& samples, bool write_final = true) {
    if (samples.empty()) throw DataError("training set is empty");
    const auto n = static_cast<std::int64_t>(samples.size());
    const auto batches_per_epoch = (n + spec_.batch_size - 1) / spec_.batch_size;
    std::int64_t skip = resumed_ ? global_step_ - epoch_ * batches_per_epoch : 0;
    if (skip < 0 || skip > batches_per_epoch) skip = 0;
    while (epoch_ < spec_.max_epochs && !done()) {
      // Shuffling and augmentation for the epoch come from a generator whose
      // state is checkpointed at epoch start, so a resumed run replays them.
      if (!epoch_rng_ || !resumed_) epoch_rng_ = rng_;
      resumed_ = false;
      auto erng = *epoch_rng_;
      set_lr(lr_at_epoch(epoch_));
      std::vector<std::size_t> order(samples.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      std::shuffle(order.begin(), order.end(), erng);
      std::int64_t b = 0;
      for (; b < batches_per_epoch && !done(); ++b) {
        std::vector<data::VideoSample> batch_samples;
        for (auto i = b * spec_.batch_size; i < std::min(n, (b + 1) * spec_.batch_size); ++i) {
          const auto& s = samples[order[static_cast<std::size_t>(i)]];
          if (spec_.augment) {
            const auto choice = data::draw_augmentation(erng);
            if (b >= skip) batch_samples.push_back(data::apply_augmentation(s, choice, spec_.flow_encoding));
          } else if (b >= skip) {
            batch_samples.push_back(s);
          }
        }
        if (b < skip) continue;
        step(make_stage_batch(batch_samples));
        if (spec_.checkpoint_every > 0 && global_step_ % spec_.checkpoint_every == 0)
          save("step" + std::to_string(global_step_));
      }
      if (b < batches_per_epoch) break;  // stopped mid-epoch; epoch_rng_ keeps its start state
      skip = 0;
      rng_ = erng;
      epoch_rng_.reset();
      ++epoch_;
    }
    if (!write_final) return std::nullopt;
    auto path = save("final");
    logger()->info("stage {} finished after {} steps; checkpoint {}", spec_.stage, global_step_, path.string());
    return path;
  }

  data::Batch make_stage_batch(std::span<const data::VideoSample> samples) const {
    auto batch = data::make_batch(samples, spec_.rgb_norm, spec_.flow_norm);
    if (!batch.gt.defined()) throw DataError("training samples carry no ground truth");
    return batch;
  }

 private:
  Branch stage_branch() const { return spec_.stage == 2 ? Branch::motion : Branch::appearance; }

  bool done() const { return spec_.max_steps && global_step_ >= *spec_.max_steps; }

  LossBundle compute_loss(const data::Batch& batch) {
    if (spec_.stage == 3) {
      if (!batch.rgb.defined() || !batch.flow.defined()) throw DataError("stage 3 needs frames and flow");
      return total_loss(model_->forward(batch.rgb, batch.flow), batch.gt, config_);
    }
    const auto branch = stage_branch();
    const auto& input = branch == Branch::appearance ? batch.rgb : batch.flow;
    if (!input.defined()) throw DataError("stage " + std::to_string(spec_.stage) + " batch lacks its input modality");
    return pretrain_loss(model_->forward_single(input, branch), branch, batch.gt, config_);
  }

  void load_pretrained() {
    const std::pair<const std::string*, Branch> sources[] = {{&spec_.stage1_checkpoint, Branch::appearance},
                                                            {&spec_.stage2_checkpoint, Branch::motion}};
    for (const auto& [path, branch] : sources) {
      auto ckpt = load_checkpoint(*path);
      require_compatible(ckpt.config, config_);
      const int expected = branch == Branch::appearance ? 1 : 2;
      if (ckpt.stage != expected)
        throw ConfigError(*path + " is a stage " + std::to_string(ckpt.stage) + " checkpoint, expected stage " +
                          std::to_string(expected));
      const auto n = apply_state(*model_, ckpt.tensors, PSNetImpl::single_branch_prefixes(branch));
      logger()->info("loaded {} {} tensors from {}", n, to_string(branch), *path);
    }
  }

  void build_optimizer() {
    auto params = trainable_parameters();
    for (const auto& p : model_->parameters()) p.set_requires_grad(false);
    for (auto& p : params) p.set_requires_grad(true);
    if (spec_.optimizer == OptimizerKind::sgd) {
      optimizer_ = std::make_unique<torch::optim::SGD>(
          params, torch::optim::SGDOptions(spec_.lr).momentum(spec_.momentum).weight_decay(spec_.weight_decay));
    } else {
      optimizer_ = std::make_unique<torch::optim::Adam>(
          params, torch::optim::AdamOptions(spec_.lr).weight_decay(spec_.weight_decay));
    }
  }

  double current_lr() const { return optimizer_->param_groups().front().options().get_lr(); }

  void set_lr(double lr) {
    for (auto& g : optimizer_->param_groups()) g.options().set_lr(lr);
  }

  void capture_optimizer(std::map<std::string, torch::Tensor>& out) const {
    const auto& state = optimizer_->state();
    for (const auto& item : model_->named_parameters(true)) {
      auto it = state.find(item.value().unsafeGetTensorImpl());
      if (it == state.end()) continue;
      const auto prefix = "optim." + item.key() + ".";
      if (auto* sgd = dynamic_cast<torch::optim::SGDParamState*>(it->second.get())) {
        if (sgd->momentum_buffer().defined()) out[prefix + "momentum_buffer"] = sgd->momentum_buffer().clone();
      } else if (auto* adam = dynamic_cast<torch::optim::AdamParamState*>(it->second.get())) {
        out[prefix + "exp_avg"] = adam->exp_avg().clone();
        out[prefix + "exp_avg_sq"] = adam->exp_avg_sq().clone();
        out[prefix + "step"] = torch::tensor(adam->step(), torch::kInt64);
      }
    }
  }

  void restore_optimizer(const std::map<std::string, torch::Tensor>& tensors) {
    auto& state = optimizer_->state();
    for (const auto& item : model_->named_parameters(true)) {
      const auto prefix = "optim." + item.key() + ".";
      void* key = item.value().unsafeGetTensorImpl();
      if (spec_.optimizer == OptimizerKind::sgd) {
        auto it = tensors.find(prefix + "momentum_buffer");
        if (it == tensors.end()) continue;
        auto st = std::make_unique<torch::optim::SGDParamState>();
        st->momentum_buffer(it->second.clone());
        state[key] = std::move(st);
      } else {
        auto a = tensors.find(prefix + "exp_avg");
        auto b = tensors.find(prefix + "exp_avg_sq");
        auto s = tensors.find(prefix + "step");
        if (a == tensors.end() || b == tensors.end() || s == tensors.end()) continue;
        auto st = std::make_unique<torch::optim::AdamParamState>();
        st->exp_avg(a->second.clone());
        st->exp_avg_sq(b->second.clone());
        st->step(s->second.item<std::int64_t>());
        state[key] = std::move(st);
      }
    }
  }

  void log_step(const StepRecord& rec) {
    if (spec_.log_path.empty()) return;
    if (!log_) {
      const std::filesystem::path p(spec_.log_path);
      if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
      log_ = std::make_unique<std::ofstream>(p, std::ios::app);
      if (!*log_) throw DataError("cannot open training log " + spec_.log_path);
    }
    nlohmann::json j{{"stage", spec_.stage}, {"step", rec.step}, {"epoch", rec.epoch}, {"lr", rec.lr}};
    for (const auto& [k, v] : rec.terms) j["loss." + k] = v;
    *log_ << j.dump() << '\n';
    log_->flush();
  }

  ModelConfig config_;
  TrainStageSpec spec_;
  PSNet model_{nullptr};
  std::unique_ptr<torch::optim::Optimizer> optimizer_;
  std::mt19937_64 rng_;
  std::optional<std::mt19937_64> epoch_rng_;
  bool resumed_ = false;
  std::int64_t global_step_ = 0;
  std::int64_t epoch_ = 0;
  std::vector<StepRecord> history_;
  std::unique_ptr<std::ofstream> log_;
};

}  // namespace psnet
