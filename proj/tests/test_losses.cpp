#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "helpers.hpp"
#include "oracles.hpp"
#include "psnet/losses.hpp"
#include "psnet/model.hpp"

using namespace psnet;

namespace {

torch::Tensor random_binary(std::vector<std::int64_t> shape, std::uint64_t seed, torch::Dtype dtype = torch::kFloat32) {
  auto gen = at::detail::createCPUGenerator(seed);
  return (torch::rand(shape, gen) > 0.6).to(dtype);
}

oracle::Map as_map(const torch::Tensor& t) {
  auto d = t.to(torch::kFloat64).contiguous();
  oracle::Map m{static_cast<int>(d.size(-2)), static_cast<int>(d.size(-1)), {}};
  m.v.assign(d.data_ptr<double>(), d.data_ptr<double>() + d.numel());
  return m;
}

}  // namespace

TEST(Bce, HalfPredictionIsLn2) {
  for (auto dtype : {torch::kFloat32, torch::kFloat64}) {
    auto gt = random_binary({2, 1, 16, 16}, 1, dtype);
    auto pred = torch::full({2, 1, 16, 16}, 0.5, torch::TensorOptions().dtype(dtype));
    EXPECT_NEAR(bce_loss(pred, gt).item<double>(), std::log(2.0), 1e-6);
  }
}

TEST(Bce, MatchesElementwiseDefinitionAndClamps) {
  auto gen = at::detail::createCPUGenerator(7);
  auto pred = torch::rand({1, 1, 5, 6}, gen, torch::kFloat64);
  auto gt = random_binary({1, 1, 5, 6}, 8, torch::kFloat64);
  const auto p = as_map(pred), g = as_map(gt);
  double expected = 0.0;
  for (std::size_t i = 0; i < p.v.size(); ++i)
    expected -= g.v[i] * std::log(p.v[i]) + (1 - g.v[i]) * std::log(1 - p.v[i]);
  EXPECT_NEAR(bce_loss(pred, gt).item<double>(), expected / p.v.size(), 1e-12);

  auto zero = torch::zeros({1, 1, 2, 2}, torch::kFloat64);
  auto one = torch::ones({1, 1, 2, 2}, torch::kFloat64);
  EXPECT_NEAR(bce_loss(zero, one).item<double>(), -std::log(kBceEpsilon), 1e-9);
  EXPECT_THROW(bce_loss(zero, torch::ones({1, 1, 2, 3})), ShapeError);
}

TEST(SsimWindow, NormalizedAndSymmetric) {
  auto w = ssim_window(torch::TensorOptions().dtype(torch::kFloat64));
  EXPECT_NEAR(w.sum().item<double>(), 1.0, 1e-15);
  EXPECT_TRUE(torch::allclose(w, w.transpose(2, 3)));
  EXPECT_TRUE(torch::allclose(w, w.flip({2})));
  EXPECT_EQ(w.argmax().item<std::int64_t>(), 5 * 11 + 5);
}

TEST(Ssim, SelfComparisonIsZero) {
  for (std::int64_t size : {8, 16, 64}) {
    auto gen = at::detail::createCPUGenerator(static_cast<std::uint64_t>(size));
    auto x = torch::rand({3, 1, size, size}, gen);
    EXPECT_NEAR(ssim_loss(x, x).item<double>(), 0.0, 1e-7) << size;
  }
  auto tiny = torch::rand({1, 1, 2, 2});
  EXPECT_NEAR(ssim_loss(tiny, tiny).item<double>(), 0.0, 1e-7);
}

TEST(Ssim, MatchesDirectWindowSum) {
  auto gen = at::detail::createCPUGenerator(3);
  auto x = torch::rand({1, 1, 20, 24}, gen, torch::kFloat64);
  auto y = random_binary({1, 1, 20, 24}, 4, torch::kFloat64);
  EXPECT_NEAR(ssim_loss(x, y).item<double>(), oracle::ssim_loss(as_map(x[0][0]), as_map(y[0][0])), 1e-12);
}

TEST(Ssim, RejectsMultiChannel) {
  auto x = torch::rand({1, 2, 16, 16});
  EXPECT_THROW(ssim_loss(x, x), ShapeError);
}

TEST(Targets, AreaDownsampleIsBinary) {
  auto gt = random_binary({2, 1, 64, 64}, 5);
  auto t = downsample_target(gt, 16, 16);
  EXPECT_EQ(t.sizes(), (std::vector<std::int64_t>{2, 1, 16, 16}));
  EXPECT_TRUE(((t == 0) | (t == 1)).all().item<bool>());
  // A 4x4 block that is at least half foreground maps to 1.
  auto block = torch::zeros({1, 1, 4, 4});
  block.index_put_({0, 0, torch::indexing::Slice(0, 2)}, 1.0);
  EXPECT_EQ(downsample_target(block, 1, 1).item<float>(), 1.0f);
  block.index_put_({0, 0, 1}, 0.0);
  EXPECT_EQ(downsample_target(block, 1, 1).item<float>(), 0.0f);
}

namespace {

struct Fixture {
  ModelConfig config = ModelConfig::tiny(64);
  PSNet model{nullptr};
  torch::Tensor rgb, flow, gt;

  explicit Fixture(std::uint64_t seed, torch::Dtype dtype = torch::kFloat32, std::int64_t batch = 2,
                   Ablation ablation = Ablation::full) {
    config.ablation = ablation;
    torch::manual_seed(seed);
    model = PSNet(config);
    model->to(dtype);
    rgb = torch::randn({batch, 3, 64, 64}, torch::TensorOptions().dtype(dtype));
    flow = torch::randn({batch, 3, 64, 64}, torch::TensorOptions().dtype(dtype));
    gt = random_binary({batch, 1, 64, 64}, seed + 100, dtype);
  }
};

}  // namespace

TEST(TotalLoss, IsTheSumOfItsParts) {
  Fixture f(1);
  auto out = f.model->forward(f.rgb, f.flow);
  auto b = total_loss(out, f.gt, f.config);
  EXPECT_EQ(b.l_total.item<float>(), (b.l_sal_final + b.l_appearance + b.l_motion).item<float>());

  // Recompute the appearance branch term by term.
  const auto& a = out.appearance;
  auto target = [&](const torch::Tensor& m) { return downsample_target(f.gt, m.size(2), m.size(3)); };
  auto manual = saliency_loss(a.saliency, target(a.saliency)) + 0.6 * bce_loss(a.gdr->mask5, target(a.gdr->mask5));
  for (const auto& m : a.importance_masks) manual = manual + 0.4 * bce_loss(m, target(m));
  EXPECT_NEAR(b.l_appearance.item<double>(), manual.item<double>(), 1e-5);
  for (const char* key : {"sal", "sal.bce", "sal.ssim", "appearance", "appearance.mask5", "appearance.mask_s2",
                          "appearance.mask_s5", "motion.sal.ssim", "total"})
    EXPECT_TRUE(b.terms.count(key)) << key;
  EXPECT_GE(b.l_total.item<double>(), 0.0);
}

TEST(TotalLoss, NoMask5TermWithoutGdr) {
  Fixture f(2, torch::kFloat32, 2, Ablation::baseline);
  auto b = total_loss(f.model->forward(f.rgb, f.flow), f.gt, f.config);
  EXPECT_FALSE(b.terms.count("appearance.mask5"));
  EXPECT_TRUE(b.terms.count("appearance.mask_s3"));
}

TEST(TotalLoss, NanTermIsNamed) {
  Fixture f(3);
  auto out = f.model->forward(f.rgb, f.flow);
  out.motion.importance_masks[1] = torch::full_like(out.motion.importance_masks[1], std::nan(""));
  try {
    total_loss(out, f.gt, f.config);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("motion.mask_s3"), std::string::npos) << e.what();
  }
}

TEST(PretrainLoss, CoversSaliencyAndMask5) {
  Fixture f(4);
  auto single = f.model->forward_single(f.rgb, Branch::appearance);
  auto b = pretrain_loss(single, Branch::appearance, f.gt, f.config);
  auto target = downsample_target(f.gt, 16, 16);
  auto mask_target = downsample_target(f.gt, 2, 2);
  const double expected = saliency_loss(single.saliency, target).item<double>() +
                          0.6 * bce_loss(single.mask5, mask_target).item<double>();
  EXPECT_NEAR(b.l_total.item<double>(), expected, 1e-5);
  EXPECT_TRUE(b.terms.count("appearance.mask5"));
  EXPECT_EQ(b.l_motion.item<double>(), 0.0);
}

// A small plain gradient step on one sample should not increase its loss.
TEST(TotalLoss, SmallStepDescends) {
  int failures = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Fixture f(seed, torch::kFloat32, 1);
    f.model->train();
    torch::optim::SGD opt(f.model->parameters(), torch::optim::SGDOptions(1e-4));
    auto before = total_loss(f.model->forward(f.rgb, f.flow), f.gt, f.config).l_total;
    opt.zero_grad();
    before.backward();
    opt.step();
    torch::NoGradGuard guard;
    auto after = total_loss(f.model->forward(f.rgb, f.flow), f.gt, f.config).l_total;
    if (after.item<double>() > before.item<double>()) ++failures;
  }
  EXPECT_LE(failures, 1);
}
