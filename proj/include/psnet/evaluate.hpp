#pragma once

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "psnet/data.hpp"
#include "psnet/errors.hpp"
#include "psnet/log.hpp"
#include "psnet/metrics.hpp"

namespace psnet::metrics {

struct MetricTriple {
  double max_f = 0.0;
  double s_measure = 0.0;
  double mae = 0.0;

  friend bool operator==(const MetricTriple&, const MetricTriple&) = default;
};

struct SequenceMetrics {
  std::string name;
  MetricTriple metrics;
  std::size_t frames = 0;
  std::size_t f_frames = 0;  // frames with a defined F-measure

  friend bool operator==(const SequenceMetrics&, const SequenceMetrics&) = default;
};

// max_f is averaged over frames with foreground; s_measure and mae over all
// frames. The aggregate weights every frame equally.
struct MetricReport {
  std::vector<SequenceMetrics> per_sequence;  // sorted by name
  MetricTriple aggregate;
  std::size_t frames = 0;
  std::size_t undefined_f = 0;
  FCurve mean_curve;  // averaged over frames with a defined F-measure

  friend bool operator==(const MetricReport& a, const MetricReport& b) {
    return a.per_sequence == b.per_sequence && a.aggregate == b.aggregate && a.frames == b.frames &&
           a.undefined_f == b.undefined_f && a.mean_curve.precision == b.mean_curve.precision &&
           a.mean_curve.recall == b.mean_curve.recall && a.mean_curve.f == b.mean_curve.f;
  }
};

struct FrameMetrics {
  double mae = 0.0;
  double s_measure = 0.0;
  std::optional<FMeasureResult> f;
};

inline FrameMetrics evaluate_frame(const cv::Mat& saliency, const cv::Mat& gt) {
  return {mae(saliency, gt), s_measure(saliency, gt), max_f_measure(saliency, gt)};
}

namespace detail {

namespace fs = std::filesystem;

inline fs::path gt_dir_of(const fs::path& seq_dir) {
  return fs::is_directory(seq_dir / "gt") ? seq_dir / "gt" : seq_dir;
}

inline std::vector<std::string> subdirectories(const fs::path& root) {
  std::vector<std::string> out;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory()) out.push_back(e.path().filename().string());
  std::sort(out.begin(), out.end());
  return out;
}

inline cv::Mat read_prediction(const fs::path& path, cv::Size size) {
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
  if (m.empty()) throw DataError("cannot read prediction " + path.string());
  cv::Mat f;
  m.convertTo(f, CV_64F, 1.0 / 255.0);
  if (f.size() != size) {
    logger()->info("prediction {} resized from {}x{} to the ground-truth size", path.string(), f.cols, f.rows);
    cv::resize(f, f, size, 0, 0, cv::INTER_LINEAR);
  }
  return f;
}

}  // namespace detail

// Matches predictions to masks by sequence and frame name. Predictions live at
// pred_root/<seq>/<frame>.png; masks at gt_root/<seq>/gt/<frame>.png (or
// directly under gt_root/<seq>). The last mask of a sequence may lack a
// prediction, since a frame-pair model emits none for it.
inline MetricReport evaluate_dataset(const std::filesystem::path& pred_root, const std::filesystem::path& gt_root) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(pred_root)) throw DataError("prediction root " + pred_root.string() + " is not a directory");
  if (!fs::is_directory(gt_root)) throw DataError("ground-truth root " + gt_root.string() + " is not a directory");
  const auto gt_seqs = detail::subdirectories(gt_root);
  if (gt_seqs.empty()) throw DataError("no sequences under " + gt_root.string());
  const std::set<std::string> known(gt_seqs.begin(), gt_seqs.end());
  for (const auto& p : detail::subdirectories(pred_root))
    if (!known.count(p)) throw DataError("prediction sequence " + (pred_root / p).string() + " has no ground truth");

  MetricReport report;
  double sum_f = 0.0, sum_s = 0.0, sum_mae = 0.0;
  std::size_t f_frames = 0;
  for (const auto& name : gt_seqs) {
    const auto pred_dir = pred_root / name;
    if (!fs::is_directory(pred_dir)) throw DataError("sequence " + name + " is missing from " + pred_root.string());
    const auto gt_dir = detail::gt_dir_of(gt_root / name);
    const auto gts = data::detail::list_images(gt_dir);
    std::map<std::string, fs::path> gt_by_stem;
    for (const auto& g : gts) gt_by_stem[g.stem().string()] = g;

    SequenceMetrics seq;
    seq.name = name;
    double seq_f = 0.0, seq_s = 0.0, seq_mae = 0.0;
    std::set<std::string> matched;
    for (const auto& pred : data::detail::list_images(pred_dir)) {
      const auto stem = pred.stem().string();
      auto it = gt_by_stem.find(stem);
      if (it == gt_by_stem.end()) throw DataError("no ground truth for prediction " + pred.string());
      matched.insert(stem);
      std::size_t gray = 0;
      auto gt = data::detail::read_mask(it->second, &gray);
      auto s = detail::read_prediction(pred, gt.size());
      auto fm = evaluate_frame(s, gt);
      seq_s += fm.s_measure;
      seq_mae += fm.mae;
      ++seq.frames;
      if (fm.f) {
        seq_f += fm.f->max_f;
        ++seq.f_frames;
        for (int t = 0; t < kThresholds; ++t) {
          const auto k = static_cast<std::size_t>(t);
          report.mean_curve.precision[k] += fm.f->curve.precision[k];
          report.mean_curve.recall[k] += fm.f->curve.recall[k];
          report.mean_curve.f[k] += fm.f->curve.f[k];
        }
      }
    }
    for (std::size_t i = 0; i < gts.size(); ++i) {
      const auto stem = gts[i].stem().string();
      if (!matched.count(stem) && i + 1 != gts.size())
        throw DataError("missing prediction " + (pred_dir / (stem + ".png")).string());
    }
    if (seq.frames == 0) throw DataError("sequence " + name + " has no predictions");
    seq.metrics.s_measure = seq_s / static_cast<double>(seq.frames);
    seq.metrics.mae = seq_mae / static_cast<double>(seq.frames);
    seq.metrics.max_f = seq.f_frames ? seq_f / static_cast<double>(seq.f_frames) : 0.0;
    sum_f += seq_f;
    sum_s += seq_s;
    sum_mae += seq_mae;
    f_frames += seq.f_frames;
    report.frames += seq.frames;
    report.per_sequence.push_back(seq);
  }
  report.undefined_f = report.frames - f_frames;
  const auto n = static_cast<double>(report.frames);
  report.aggregate = {f_frames ? sum_f / static_cast<double>(f_frames) : 0.0, sum_s / n, sum_mae / n};
  if (f_frames) {
    for (int t = 0; t < kThresholds; ++t) {
      const auto k = static_cast<std::size_t>(t);
      report.mean_curve.precision[k] /= static_cast<double>(f_frames);
      report.mean_curve.recall[k] /= static_cast<double>(f_frames);
      report.mean_curve.f[k] /= static_cast<double>(f_frames);
    }
  }
  if (report.undefined_f)
    logger()->info("{} frame(s) with empty ground truth excluded from the F-measure average", report.undefined_f);
  return report;
}

inline void to_json(nlohmann::json& j, const MetricTriple& m) {
  j = nlohmann::json{{"max_f", m.max_f}, {"s_measure", m.s_measure}, {"mae", m.mae}};
}

inline void from_json(const nlohmann::json& j, MetricTriple& m) {
  j.at("max_f").get_to(m.max_f);
  j.at("s_measure").get_to(m.s_measure);
  j.at("mae").get_to(m.mae);
}

inline void to_json(nlohmann::json& j, const MetricReport& r) {
  nlohmann::json seqs = nlohmann::json::array();
  for (const auto& s : r.per_sequence)
    seqs.push_back({{"name", s.name}, {"metrics", s.metrics}, {"frames", s.frames}, {"f_frames", s.f_frames}});
  j = nlohmann::json{{"per_sequence", seqs},
                     {"aggregate", r.aggregate},
                     {"frames", r.frames},
                     {"undefined_f", r.undefined_f},
                     {"f_curve",
                      {{"precision", r.mean_curve.precision}, {"recall", r.mean_curve.recall}, {"f", r.mean_curve.f}}}};
}

inline void from_json(const nlohmann::json& j, MetricReport& r) {
  r.per_sequence.clear();
  for (const auto& s : j.at("per_sequence")) {
    SequenceMetrics m;
    m.name = s.at("name").get<std::string>();
    m.metrics = s.at("metrics").get<MetricTriple>();
    m.frames = s.at("frames").get<std::size_t>();
    m.f_frames = s.at("f_frames").get<std::size_t>();
    r.per_sequence.push_back(m);
  }
  r.aggregate = j.at("aggregate").get<MetricTriple>();
  r.frames = j.at("frames").get<std::size_t>();
  r.undefined_f = j.at("undefined_f").get<std::size_t>();
  const auto& c = j.at("f_curve");
  r.mean_curve.precision = c.at("precision").get<std::array<double, kThresholds>>();
  r.mean_curve.recall = c.at("recall").get<std::array<double, kThresholds>>();
  r.mean_curve.f = c.at("f").get<std::array<double, kThresholds>>();
}

inline std::string format_report(const MetricReport& r) {
  std::ostringstream os;
  os << std::left << std::setw(24) << "sequence" << std::right << std::setw(8) << "frames" << std::setw(10) << "maxF"
     << std::setw(10) << "S" << std::setw(10) << "MAE" << '\n';
  os << std::fixed << std::setprecision(4);
  auto row = [&](const std::string& name, std::size_t frames, const MetricTriple& m) {
    os << std::left << std::setw(24) << name << std::right << std::setw(8) << frames << std::setw(10) << m.max_f
       << std::setw(10) << m.s_measure << std::setw(10) << m.mae << '\n';
  };
  for (const auto& s : r.per_sequence) row(s.name, s.frames, s.metrics);
  row("ALL", r.frames, r.aggregate);
  os << "frames without foreground (excluded from maxF): " << r.undefined_f << '\n';
  return os.str();
}

inline std::filesystem::path report_json_path(const std::filesystem::path& report_path) {
  return std::filesystem::path(report_path.string() + ".json");
}

// Text table at `report_path`, machine-readable JSON at `<report_path>.json`.
inline void write_report(const MetricReport& r, const std::filesystem::path& report_path) {
  if (report_path.has_parent_path()) std::filesystem::create_directories(report_path.parent_path());
  {
    std::ofstream os(report_path);
    if (!os) throw DataError("cannot write report " + report_path.string());
    os << format_report(r);
  }
  std::ofstream os(report_json_path(report_path));
  if (!os) throw DataError("cannot write report " + report_json_path(report_path).string());
  os << nlohmann::json(r).dump(2) << '\n';
}

inline MetricReport read_report_json(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot read report " + path.string());
  return nlohmann::json::parse(is).get<MetricReport>();
}

}  // namespace psnet::metrics
