#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include <opencv2/imgcodecs.hpp>

#include "helpers.hpp"
#include "oracles.hpp"
#include "psnet/data.hpp"
#include "psnet/evaluate.hpp"
#include "psnet/metrics.hpp"

namespace m = psnet::metrics;
using testing_util::TempDir;
using testing_util::to_cv;

namespace {

// 4x4 map with values k/16 in row-major order, upper half foreground.
oracle::Map graded4() {
  oracle::Map s{4, 4, {}};
  for (int k = 0; k < 16; ++k) s.v.push_back(k / 16.0);
  return s;
}

oracle::Map upper_half4() {
  oracle::Map g{4, 4, std::vector<double>(16, 0.0)};
  for (int k = 0; k < 8; ++k) g.v[static_cast<std::size_t>(k)] = 1.0;
  return g;
}

}  // namespace

TEST(Mae, IdentityAndComplement) {
  cv::Mat1d g = cv::Mat1d::zeros(5, 7);
  g(2, 3) = 1.0;
  EXPECT_EQ(m::mae(g, g), 0.0);
  EXPECT_DOUBLE_EQ(m::mae(cv::Mat1d::ones(5, 7), cv::Mat1d::zeros(5, 7)), 1.0);
}

TEST(Mae, GradedMatchesExhaustiveSum) {
  const auto s = graded4();
  const auto g = upper_half4();
  // Rows 0-1 are foreground: sum |k/16 - 1| for k < 8 plus sum k/16 for k >= 8.
  double expected = 0.0;
  for (int k = 0; k < 8; ++k) expected += 1.0 - k / 16.0;
  for (int k = 8; k < 16; ++k) expected += k / 16.0;
  expected /= 16.0;
  EXPECT_NEAR(m::mae(to_cv(s), to_cv(g)), expected, 1e-15);
  EXPECT_NEAR(m::mae(to_cv(s), to_cv(g)), oracle::mae(s, g), 1e-15);
}

TEST(Mae, SizeMismatchThrows) {
  EXPECT_THROW(m::mae(cv::Mat1d::zeros(4, 4), cv::Mat1d::zeros(4, 5)), psnet::ShapeError);
}

TEST(MaxF, PerfectAndEmptyPrediction) {
  std::mt19937_64 rng(3);
  const auto g = oracle::random_binary(rng, 8, 8);
  auto r = m::max_f_measure(to_cv(g), to_cv(g));
  ASSERT_TRUE(r);
  EXPECT_DOUBLE_EQ(r->max_f, 1.0);
  auto z = m::max_f_measure(cv::Mat1d::zeros(8, 8), to_cv(g));
  ASSERT_TRUE(z);
  // With s = 0 only t = 0 predicts anything: precision = fg ratio, recall 1.
  // Every other threshold has TP = 0.
  const double p = std::count(g.v.begin(), g.v.end(), 1.0) / 64.0;
  EXPECT_NEAR(z->max_f, 1.3 * p / (0.3 * p + 1.0), 1e-15);
  EXPECT_EQ(z->curve.f[1], 0.0);
  EXPECT_EQ(z->curve.f[255], 0.0);
}

TEST(MaxF, EmptyGroundTruthIsUndefined) {
  EXPECT_FALSE(m::max_f_measure(cv::Mat1d::ones(4, 4), cv::Mat1d::zeros(4, 4)));
}

TEST(MaxF, GradedMatchesOracleExactly) {
  const auto s = graded4();
  const auto g = upper_half4();
  auto r = m::max_f_measure(to_cv(s), to_cv(g));
  ASSERT_TRUE(r);
  EXPECT_EQ(r->max_f, *oracle::max_f(s, g));
}

TEST(MaxF, RecallIsNonIncreasingInThreshold) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    auto r = m::max_f_measure(to_cv(oracle::random_map(rng, 9, 7)), to_cv(oracle::random_binary(rng, 9, 7)));
    ASSERT_TRUE(r);
    for (int t = 1; t < m::kThresholds; ++t) ASSERT_LE(r->curve.recall[t], r->curve.recall[t - 1]);
  }
}

TEST(MaxF, BinaryPredictionEqualsSingleThresholdF) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const auto s = oracle::random_binary(rng, 8, 8, 0.5);
    const auto g = oracle::random_binary(rng, 8, 8, 0.3);
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < s.v.size(); ++i) {
      tp += s.v[i] * g.v[i];
      fp += s.v[i] * (1 - g.v[i]);
      fn += (1 - s.v[i]) * g.v[i];
    }
    const double p = tp / (tp + fp), rc = tp / (tp + fn);
    const double f = tp > 0 ? 1.3 * p * rc / (0.3 * p + rc) : 0.0;
    // Thresholds 1..255 all binarize at s = 1; t = 0 selects everything.
    auto r = m::max_f_measure(to_cv(s), to_cv(g));
    ASSERT_TRUE(r);
    EXPECT_NEAR(r->curve.f[128], f, 1e-15);
    const double all_p = (tp + fn) / 64.0;
    EXPECT_NEAR(r->max_f, std::max(f, 1.3 * all_p / (0.3 * all_p + 1.0)), 1e-15);
  }
}

TEST(SMeasure, SelfSimilarityAndDegenerateCases) {
  std::mt19937_64 rng(9);
  const auto g = oracle::random_binary(rng, 8, 8);
  EXPECT_NEAR(m::s_measure(to_cv(g), to_cv(g)), 1.0, 1e-12);
  EXPECT_DOUBLE_EQ(m::s_measure(cv::Mat1d::zeros(6, 6), cv::Mat1d::zeros(6, 6)), 1.0);
  EXPECT_DOUBLE_EQ(m::s_measure(cv::Mat1d::ones(6, 6), cv::Mat1d::zeros(6, 6)), 0.0);
  EXPECT_DOUBLE_EQ(m::s_measure(cv::Mat1d::ones(6, 6) * 0.25, cv::Mat1d::ones(6, 6)), 0.25);
}

TEST(SMeasure, MatchesStraightLineOracle) {
  std::mt19937_64 rng(21);
  const auto g = oracle::random_binary(rng, 8, 8);
  for (int trial = 0; trial < 100; ++trial) {
    const auto s = oracle::random_map(rng, 8, 8);
    EXPECT_NEAR(m::s_measure(to_cv(s), to_cv(g)), oracle::s_measure(s, g), 1e-12);
  }
}

TEST(SMeasure, CentroidOnBorderSkipsEmptyQuadrants) {
  // A single top-left foreground pixel puts the centroid at (1, 1): the
  // top-left quadrant is one pixel and its N - 1 normalization degenerates.
  oracle::Map g{6, 6, std::vector<double>(36, 0.0)};
  g.v[0] = 1.0;
  std::mt19937_64 rng(2);
  const auto s = oracle::random_map(rng, 6, 6);
  const double v = m::s_measure(to_cv(s), to_cv(g));
  EXPECT_TRUE(std::isfinite(v));
  EXPECT_NEAR(v, oracle::s_measure(s, g), 1e-12);
}

TEST(SMeasure, RangeOnRandomInputs) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const double v = m::s_measure(to_cv(oracle::random_map(rng, 8, 8)), to_cv(oracle::random_binary(rng, 8, 8)));
    ASSERT_GE(v, 0.0);
    ASSERT_LE(v, 1.0 + 1e-12);
  }
}

namespace {

void write_u8(const std::filesystem::path& p, const cv::Mat& m01) {
  std::filesystem::create_directories(p.parent_path());
  cv::Mat u8;
  m01.convertTo(u8, CV_8U, 255.0);
  cv::imwrite(p.string(), u8);
}

void copy_tree(const std::filesystem::path& from, const std::filesystem::path& to) {
  std::filesystem::create_directories(to.parent_path());
  std::filesystem::copy(from, to, std::filesystem::copy_options::recursive);
}

// Two sequences of binary masks under root/<seq>/gt/%05d.png.
void write_gt_tree(const std::filesystem::path& root, std::mt19937_64& rng, int frames = 3) {
  for (const char* seq : {"alpha", "beta"}) {
    for (int f = 0; f < frames; ++f) {
      char name[16];
      std::snprintf(name, sizeof(name), "%05d.png", f);
      write_u8(root / seq / "gt" / name, to_cv(oracle::random_binary(rng, 16, 16)));
    }
  }
}

}  // namespace

TEST(Evaluate, GroundTruthCopiesScorePerfect) {
  TempDir dir("eval_copy");
  std::mt19937_64 rng(1);
  write_gt_tree(dir / "gt", rng);
  for (const char* seq : {"alpha", "beta"})
    copy_tree(dir / "gt" / seq / "gt", dir / "pred" / seq);
  auto r = m::evaluate_dataset(dir / "pred", dir / "gt");
  EXPECT_EQ(r.frames, 6u);
  EXPECT_NEAR(r.aggregate.max_f, 1.0, 1e-12);
  // Only the eps terms of the structure measure keep this off 1.
  EXPECT_NEAR(r.aggregate.s_measure, 1.0, 1e-9);
  EXPECT_EQ(r.aggregate.mae, 0.0);
  ASSERT_EQ(r.per_sequence.size(), 2u);
  EXPECT_EQ(r.per_sequence[0].name, "alpha");
}

TEST(Evaluate, GrayPredictionHasHalfMae) {
  TempDir dir("eval_gray");
  std::mt19937_64 rng(2);
  write_gt_tree(dir / "gt", rng);
  cv::Mat gray(16, 16, CV_8U, cv::Scalar(128));
  for (const char* seq : {"alpha", "beta"})
    for (int f = 0; f < 3; ++f) {
      char name[16];
      std::snprintf(name, sizeof(name), "%05d.png", f);
      std::filesystem::create_directories(dir / "pred" / seq);
      cv::imwrite((dir / "pred" / seq / name).string(), gray);
    }
  auto r = m::evaluate_dataset(dir / "pred", dir / "gt");
  // 128/255 is the nearest 8-bit level to one half.
  EXPECT_NEAR(r.aggregate.mae, 0.5, 0.5 / 255.0 + 1e-12);
  std::mt19937_64 rng2(9);
  const auto g = to_cv(oracle::random_binary(rng2, 16, 16));
  EXPECT_EQ(m::mae(cv::Mat1d(16, 16, 0.5), g), 0.5);
}

TEST(Evaluate, AggregateIsFrameWeightedMean) {
  TempDir dir("eval_weight");
  std::mt19937_64 rng(3);
  write_gt_tree(dir / "gt", rng, 4);
  // Extra frames in one sequence make the weighting observable.
  for (int f = 4; f < 7; ++f) {
    char name[16];
    std::snprintf(name, sizeof(name), "%05d.png", f);
    write_u8(dir / "gt" / "beta" / "gt" / name, to_cv(oracle::random_binary(rng, 16, 16)));
  }
  double total_mae = 0.0;
  int frames = 0;
  for (const char* seq : {"alpha", "beta"}) {
    for (const auto& g : psnet::data::detail::list_images(dir / "gt" / seq / "gt")) {
      auto s = to_cv(oracle::random_map(rng, 16, 16));
      write_u8(dir / "pred" / seq / g.filename(), s);
      cv::Mat back = cv::imread((dir / "pred" / seq / g.filename()).string(), cv::IMREAD_GRAYSCALE);
      back.convertTo(back, CV_64F, 1.0 / 255.0);
      cv::Mat gt = cv::imread(g.string(), cv::IMREAD_GRAYSCALE);
      gt.convertTo(gt, CV_64F, 1.0 / 255.0);
      total_mae += m::mae(back, gt);
      ++frames;
    }
  }
  auto r = m::evaluate_dataset(dir / "pred", dir / "gt");
  EXPECT_EQ(r.frames, static_cast<std::size_t>(frames));
  EXPECT_NEAR(r.aggregate.mae, total_mae / frames, 1e-12);
  const double weighted = (r.per_sequence[0].metrics.mae * r.per_sequence[0].frames +
                           r.per_sequence[1].metrics.mae * r.per_sequence[1].frames) /
                          static_cast<double>(r.frames);
  EXPECT_NEAR(r.aggregate.mae, weighted, 1e-12);
}

TEST(Evaluate, LastFrameMayLackPrediction) {
  TempDir dir("eval_pairs");
  std::mt19937_64 rng(4);
  write_gt_tree(dir / "gt", rng, 3);
  for (const char* seq : {"alpha", "beta"}) {
    std::filesystem::create_directories(dir / "pred" / seq);
    for (int f = 0; f < 2; ++f) {
      char name[16];
      std::snprintf(name, sizeof(name), "%05d.png", f);
      std::filesystem::copy_file(dir / "gt" / seq / "gt" / name, dir / "pred" / seq / name);
    }
  }
  EXPECT_EQ(m::evaluate_dataset(dir / "pred", dir / "gt").frames, 4u);
  std::filesystem::remove(dir / "pred" / "beta" / "00000.png");
  try {
    m::evaluate_dataset(dir / "pred", dir / "gt");
    FAIL() << "expected an error for the missing prediction";
  } catch (const psnet::DataError& e) {
    EXPECT_NE(std::string(e.what()).find("00000.png"), std::string::npos) << e.what();
  }
}

TEST(Evaluate, MissingSequenceIsNamed) {
  TempDir dir("eval_missing");
  std::mt19937_64 rng(5);
  write_gt_tree(dir / "gt", rng);
  copy_tree(dir / "gt" / "alpha" / "gt", dir / "pred" / "alpha");
  try {
    m::evaluate_dataset(dir / "pred", dir / "gt");
    FAIL() << "expected an error";
  } catch (const psnet::DataError& e) {
    EXPECT_NE(std::string(e.what()).find("beta"), std::string::npos) << e.what();
  }
}

TEST(Evaluate, EmptyDatasetAndUnmatchedPredictionFail) {
  TempDir dir("eval_empty");
  std::filesystem::create_directories(dir / "pred");
  std::filesystem::create_directories(dir / "gt");
  EXPECT_THROW(m::evaluate_dataset(dir / "pred", dir / "gt"), psnet::DataError);
  std::mt19937_64 rng(6);
  write_gt_tree(dir / "gt", rng);
  for (const char* seq : {"alpha", "beta"})
    copy_tree(dir / "gt" / seq / "gt", dir / "pred" / seq);
  write_u8(dir / "pred" / "alpha" / "00099.png", cv::Mat1d::zeros(16, 16));
  EXPECT_THROW(m::evaluate_dataset(dir / "pred", dir / "gt"), psnet::DataError);
}

TEST(Evaluate, EmptyGroundTruthFramesAreCounted) {
  TempDir dir("eval_undef");
  std::mt19937_64 rng(7);
  write_gt_tree(dir / "gt", rng, 2);
  write_u8(dir / "gt" / "alpha" / "gt" / "00000.png", cv::Mat1d::zeros(16, 16));
  for (const char* seq : {"alpha", "beta"})
    copy_tree(dir / "gt" / seq / "gt", dir / "pred" / seq);
  auto r = m::evaluate_dataset(dir / "pred", dir / "gt");
  EXPECT_EQ(r.undefined_f, 1u);
  EXPECT_EQ(r.per_sequence[0].f_frames, 1u);
  EXPECT_NEAR(r.aggregate.max_f, 1.0, 1e-12);
}

TEST(Evaluate, ReportRoundTripsExactly) {
  TempDir dir("eval_report");
  std::mt19937_64 rng(8);
  write_gt_tree(dir / "gt", rng);
  for (const char* seq : {"alpha", "beta"})
    for (const auto& g : psnet::data::detail::list_images(dir / "gt" / seq / "gt"))
      write_u8(dir / "pred" / seq / g.filename(), to_cv(oracle::random_map(rng, 16, 16)));
  auto r = m::evaluate_dataset(dir / "pred", dir / "gt");
  m::write_report(r, dir / "out" / "report.txt");
  EXPECT_TRUE(std::filesystem::exists(dir / "out" / "report.txt"));
  auto back = m::read_report_json(m::report_json_path(dir / "out" / "report.txt"));
  EXPECT_TRUE(back == r);
}
