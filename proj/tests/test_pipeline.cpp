#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <set>

#include <opencv2/imgcodecs.hpp>

#include "helpers.hpp"
#include "psnet/psnet.hpp"

using namespace psnet;
using testing_util::bitwise_equal;
using testing_util::TempDir;

namespace {

TrainStageSpec small_spec(int stage, const std::filesystem::path& out, std::uint64_t seed = 1) {
  auto s = TrainStageSpec::defaults(stage);
  s.output_dir = out.string();
  s.seed = seed;
  s.batch_size = 4;
  s.lr = 1e-3;
  s.max_steps = 2;
  s.synthetic = SyntheticSource{4, 9, {}};
  s.synthetic->options.n_frames = 4;
  if (stage == 3) s.from_scratch = true;
  return s;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

std::map<std::string, torch::Tensor> params_of(PSNet& m) {
  std::map<std::string, torch::Tensor> out;
  for (const auto& p : m->named_parameters()) out[p.key()] = p.value().detach().clone();
  return out;
}

void expect_same_params(PSNet& a, PSNet& b) {
  auto pa = params_of(a), pb = params_of(b);
  ASSERT_EQ(pa.size(), pb.size());
  for (const auto& [k, v] : pa) EXPECT_TRUE(bitwise_equal(v, pb.at(k))) << k;
}

struct ScopedEnv {
  std::string name;
  ScopedEnv(std::string n, const char* value) : name(std::move(n)) { ::setenv(name.c_str(), value, 1); }
  ~ScopedEnv() { ::unsetenv(name.c_str()); }
};

}  // namespace

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  TempDir dir("ckpt");
  Trainer t(ModelConfig::tiny(64), small_spec(3, dir.path()));
  t.run(t.load_training_samples(), false);
  const auto first = t.save("a");
  auto loaded = load_checkpoint(first);
  save_checkpoint(dir / "b.ckpt", loaded);
  EXPECT_EQ(read_file(first), read_file(dir / "b.ckpt"));

  EXPECT_EQ(loaded.stage, 3);
  EXPECT_EQ(loaded.global_step, 2);
  const auto state = capture_state(*t.model());
  for (const auto& [k, v] : state) EXPECT_TRUE(bitwise_equal(v, loaded.tensors.at(k))) << k;
  // Momentum buffers travel with the weights.
  EXPECT_TRUE(loaded.tensors.count("optim.fusion.fc.weight.momentum_buffer"));
  EXPECT_FALSE(std::filesystem::exists(first.string() + ".tmp"));
}

TEST(Checkpoint, RejectsCorruptAndIncompatible) {
  TempDir dir("ckpt_bad");
  {
    std::ofstream os(dir / "junk.ckpt", std::ios::binary);
    os << "not a checkpoint";
  }
  EXPECT_THROW(load_checkpoint(dir / "junk.ckpt"), DataError);
  EXPECT_THROW(load_checkpoint(dir / "absent.ckpt"), DataError);

  auto cfg = ModelConfig::tiny(64);
  nlohmann::json snap = cfg;
  auto other = cfg;
  other.decoder_width = 32;
  EXPECT_THROW(require_compatible(snap, other), ConfigError);
  other = cfg;
  other.backbone.tiny_width = 16;
  EXPECT_THROW(require_compatible(snap, other), ConfigError);
  EXPECT_NO_THROW(require_compatible(snap, cfg));

  PSNet model(cfg);
  auto state = capture_state(*model);
  state.erase(state.begin());
  EXPECT_THROW(apply_state(*model, state), DataError);
  state = capture_state(*model);
  state.begin()->second = torch::zeros({1});
  EXPECT_THROW(apply_state(*model, state), ShapeError);
}

TEST(Stages, PretrainingTouchesOnlyItsBranch) {
  TempDir dir("stage1");
  Trainer t(ModelConfig::tiny(64), small_spec(1, dir.path()));
  auto before = params_of(t.model());
  t.run(t.load_training_samples(), false);
  auto after = params_of(t.model());
  int changed = 0;
  for (const auto& [k, v] : before) {
    const bool same = bitwise_equal(v, after.at(k));
    if (k.rfind("appearance_encoder.", 0) == 0 || k.rfind("appearance_head.", 0) == 0) changed += !same;
    if (k.rfind("motion_", 0) == 0 || k.rfind("fusion.", 0) == 0 || k.find("_decoder") != std::string::npos)
      EXPECT_TRUE(same) << k;
  }
  EXPECT_GT(changed, 0);
}

TEST(Stages, JointStageStartsFromPretrainedBranches) {
  TempDir dir("stages");
  Trainer s1(ModelConfig::tiny(64), small_spec(1, dir.path(), 1));
  const auto c1 = *s1.run(s1.load_training_samples());
  Trainer s2(ModelConfig::tiny(64), small_spec(2, dir.path(), 2));
  const auto c2 = *s2.run(s2.load_training_samples());

  auto spec = small_spec(3, dir.path(), 3);
  spec.from_scratch = false;
  spec.stage1_checkpoint = c1.string();
  spec.stage2_checkpoint = c2.string();
  Trainer s3(ModelConfig::tiny(64), spec);
  auto p1 = params_of(s1.model()), p2 = params_of(s2.model()), p3 = params_of(s3.model());
  int from1 = 0, from2 = 0;
  for (const auto& [k, v] : p3) {
    if (has_prefix(k, PSNetImpl::single_branch_prefixes(Branch::appearance))) {
      EXPECT_TRUE(bitwise_equal(v, p1.at(k))) << k;
      ++from1;
    } else if (has_prefix(k, PSNetImpl::single_branch_prefixes(Branch::motion))) {
      EXPECT_TRUE(bitwise_equal(v, p2.at(k))) << k;
      ++from2;
    }
  }
  EXPECT_GT(from1, 0);
  EXPECT_EQ(from1, from2);

  // Swapped checkpoints are rejected by stage id.
  spec.stage1_checkpoint = c2.string();
  spec.stage2_checkpoint = c1.string();
  EXPECT_THROW(Trainer(ModelConfig::tiny(64), spec), ConfigError);
}

TEST(Stages, JointStageNeedsCheckpointsOrScratchFlag) {
  auto spec = small_spec(3, "unused");
  spec.from_scratch = false;
  try {
    spec.validate();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("from_scratch"), std::string::npos) << e.what();
  }
  spec.synthetic.reset();
  spec.from_scratch = true;
  EXPECT_THROW(spec.validate(), ConfigError);
}

TEST(Training, SameSeedSameTrace) {
  TempDir dir("determinism");
  auto spec = small_spec(3, dir.path(), 5);
  spec.max_steps = 4;
  spec.augment = true;
  Trainer a(ModelConfig::tiny(64), spec), b(ModelConfig::tiny(64), spec);
  const auto samples = a.load_training_samples();
  a.run(samples, false);
  b.run(samples, false);
  ASSERT_EQ(a.history().size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(a.history()[i].loss, b.history()[i].loss);
  expect_same_params(a.model(), b.model());

  auto other = spec;
  other.seed = 6;
  Trainer c(ModelConfig::tiny(64), other);
  c.run(samples, false);
  EXPECT_NE(a.history().back().loss, c.history().back().loss);
}

// 12 samples at batch 4 give 3 steps per epoch: step 2 is mid-epoch, step 3
// closes the first epoch.
TEST(Training, ResumeReproducesUninterruptedRun) {
  TempDir dir("resume");
  auto spec = small_spec(3, dir.path(), 7);
  spec.max_steps = 6;
  spec.checkpoint_every = 1;
  Trainer full(ModelConfig::tiny(64), spec);
  const auto samples = full.load_training_samples();
  ASSERT_EQ(samples.size(), 12u);
  full.run(samples, false);

  for (int at : {2, 3, 4}) {
    Trainer resumed(ModelConfig::tiny(64), spec);
    resumed.resume(dir / ("stage3_step" + std::to_string(at) + ".ckpt"));
    EXPECT_EQ(resumed.global_step(), at);
    resumed.run(samples, false);
    EXPECT_EQ(resumed.global_step(), 6);
    ASSERT_EQ(resumed.history().size(), static_cast<std::size_t>(6 - at));
    EXPECT_EQ(resumed.history().back().loss, full.history().back().loss) << "resumed at " << at;
    expect_same_params(resumed.model(), full.model());
  }

  auto wrong = small_spec(1, dir.path(), 7);
  Trainer s1(ModelConfig::tiny(64), wrong);
  EXPECT_THROW(s1.resume(dir / "stage3_step2.ckpt"), ConfigError);
}

TEST(Training, LearningRateSchedule) {
  auto spec = TrainStageSpec::defaults(1);
  spec.synthetic = SyntheticSource{};
  spec.output_dir = "unused";
  Trainer t(ModelConfig::tiny(64), spec);
  EXPECT_DOUBLE_EQ(t.lr_at_epoch(0), 0.002);
  EXPECT_DOUBLE_EQ(t.lr_at_epoch(9), 0.002);
  EXPECT_NEAR(t.lr_at_epoch(10), 0.0002, 1e-12);
  EXPECT_NEAR(t.lr_at_epoch(25), 0.00002, 1e-12);
  EXPECT_EQ(TrainStageSpec::defaults(3).batch_size, 8);
  EXPECT_EQ(TrainStageSpec::defaults(3).lr, 2e-4);
}

TEST(Training, NonFiniteLossAbortsWithLastGoodCheckpoint) {
  TempDir dir("nan");
  auto spec = small_spec(3, dir.path());
  spec.log_path = (dir / "log.jsonl").string();
  Trainer t(ModelConfig::tiny(64), spec);
  auto samples = t.load_training_samples();
  t.run(samples, false);
  std::vector<data::VideoSample> bad(samples.begin(), samples.begin() + 2);
  bad[0].rgb = bad[0].rgb.clone();
  bad[0].rgb.at<cv::Vec3f>(3, 3)[0] = std::numeric_limits<float>::quiet_NaN();
  try {
    t.step(t.make_stage_batch(bad));
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("stage3_last_good.ckpt"), std::string::npos) << msg;
    EXPECT_NE(msg.find("at step 2"), std::string::npos) << msg;
  }
  auto ckpt = load_checkpoint(dir / "stage3_last_good.ckpt");
  EXPECT_EQ(ckpt.global_step, 2);

  std::ifstream log(spec.log_path);
  std::string line;
  int lines = 0;
  while (std::getline(log, line)) {
    auto j = nlohmann::json::parse(line);
    EXPECT_TRUE(j.contains("loss.total"));
    ++lines;
  }
  EXPECT_EQ(lines, 2);
}

TEST(Config, StageSectionsAndSeedOverride) {
  TempDir dir("config");
  const auto path = dir / "run.json";
  {
    std::ofstream os(path);
    os << R"({"model": {"backbone": {"kind": "tiny", "tiny_width": 8}, "decoder_width": 16, "input_size": [64, 96]},
              "train": {"lr": 0.01, "seed": 3, "synthetic": {"clips": 2},
                        "stage3": {"lr": 0.0005, "from_scratch": true, "max_steps": 7}}})";
  }
  auto rc = load_run_config(path);
  EXPECT_EQ(rc.model.width, 96);
  EXPECT_EQ(rc.model.backbone.kind, BackboneKind::tiny);
  auto s1 = rc.stage_spec(1);
  EXPECT_EQ(s1.lr, 0.01);
  EXPECT_EQ(s1.batch_size, 16);
  EXPECT_EQ(s1.seed, 3u);
  auto s3 = rc.stage_spec(3);
  EXPECT_EQ(s3.lr, 0.0005);
  EXPECT_EQ(s3.max_steps, 7);
  EXPECT_EQ(s3.batch_size, 8);
  EXPECT_NO_THROW(s3.validate());
  {
    ScopedEnv env("PSNET_SEED", "42");
    EXPECT_EQ(rc.stage_spec(3).seed, 42u);
  }
  {
    ScopedEnv env("PSNET_SEED", "abc");
    EXPECT_THROW(rc.stage_spec(3), ConfigError);
  }
  {
    std::ofstream os(dir / "bad.json");
    os << R"({"model": {"input_size": [60, 64]}})";
  }
  EXPECT_THROW(load_run_config(dir / "bad.json"), ConfigError);
  {
    std::ofstream os(dir / "broken.json");
    os << "{ nope";
  }
  EXPECT_THROW(load_run_config(dir / "broken.json"), ConfigError);
}

TEST(Inference, WritesOneMapPerFramePair) {
  TempDir dir("infer");
  Trainer t(ModelConfig::tiny(64), small_spec(3, dir.path()));
  const auto ckpt = *t.run(t.load_training_samples());

  data::SyntheticClipSpec clip_spec;
  clip_spec.name = "walk";
  clip_spec.seed = 4;
  clip_spec.n_frames = 5;
  clip_spec.target.velocity = {2.0, 1.0};
  data::write_clip(data::generate_clip(clip_spec), dir / "input");

  InferOptions o;
  o.checkpoint = ckpt;
  o.input = dir / "input";
  o.output = dir / "pred";
  o.dump_importance = true;
  o.write_branches = true;
  auto summary = run_inference(o);
  EXPECT_EQ(summary.maps, 4u);
  for (int f = 0; f < 4; ++f) {
    char name[16];
    std::snprintf(name, sizeof(name), "%05d", f);
    auto map = cv::imread((o.output / "walk" / (std::string(name) + ".png")).string(), cv::IMREAD_UNCHANGED);
    ASSERT_FALSE(map.empty()) << name;
    EXPECT_EQ(map.type(), CV_8UC1);
    EXPECT_EQ(map.size(), cv::Size(64, 64));
    double lo = 0, hi = 0;
    cv::minMaxLoc(map, &lo, &hi);
    EXPECT_LT(lo, hi) << "constant map " << name;
    EXPECT_TRUE(std::filesystem::exists(o.output / "walk" / "appearance" / (std::string(name) + ".png")));
    std::ifstream js(o.output / "walk" / (std::string(name) + "_importance.json"));
    auto j = nlohmann::json::parse(js);
    EXPECT_EQ(j.at("channels"), 16);
    EXPECT_GT(j.at("min").get<double>(), 0.0);
    EXPECT_LT(j.at("max").get<double>(), 1.0);
  }
  EXPECT_FALSE(std::filesystem::exists(o.output / "walk" / "00004.png"));

  // Evaluation of the written maps against the clip's own masks.
  auto report = metrics::evaluate_dataset(o.output, dir / "input");
  EXPECT_EQ(report.frames, 4u);
  EXPECT_GE(report.aggregate.mae, 0.0);
  EXPECT_LE(report.aggregate.mae, 1.0);

  EXPECT_EQ(write_overlays(o.output, dir / "input", dir / "overlay"), 4u);
}

TEST(Inference, PretrainCheckpointNeedsFlag) {
  TempDir dir("infer1");
  Trainer t(ModelConfig::tiny(64), small_spec(1, dir.path()));
  const auto ckpt = *t.run(t.load_training_samples());
  data::SyntheticClipSpec clip_spec;
  clip_spec.n_frames = 3;
  data::write_clip(data::generate_clip(clip_spec), dir / "input");
  InferOptions o;
  o.checkpoint = ckpt;
  o.input = dir / "input";
  o.output = dir / "pred";
  EXPECT_THROW(run_inference(o), ConfigError);
  o.allow_single_branch = true;
  // Appearance-only inference covers every frame.
  EXPECT_EQ(run_inference(o).maps, 3u);
}

TEST(Inference, BatchedMatchesSingleSample) {
  auto clip = data::generate_clip(data::SyntheticClipSpec{});
  torch::manual_seed(2);
  PSNet model(ModelConfig::tiny(64));
  auto batched = predict(model, clip.samples, Normalization{}, Normalization{}, 3, 4);
  for (std::size_t i = 0; i < clip.samples.size(); ++i) {
    auto single = predict(model, std::span(clip.samples).subspan(i, 1), Normalization{}, Normalization{}, 3, 1);
    EXPECT_LT(cv::norm(batched[i].saliency, single[0].saliency, cv::NORM_INF), 1e-5);
  }
}
