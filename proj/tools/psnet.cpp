// psnet command line: train, infer, eval, synth, overlay.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "psnet/psnet.hpp"

namespace fs = std::filesystem;

namespace {

int train(int stage, const std::string& config_path, const std::string& resume) {
  auto rc = psnet::load_run_config(config_path);
  auto spec = rc.stage_spec(stage);
  psnet::Trainer trainer(rc.model, spec);
  if (!resume.empty()) trainer.resume(resume);
  auto samples = trainer.load_training_samples();
  psnet::logger()->info("stage {}: {} training samples, batch {}, lr {}", stage, samples.size(), spec.batch_size, spec.lr);
  auto path = trainer.run(samples);
  std::cout << path->string() << '\n';
  return 0;
}

// Accepts one clip spec, an array of them, or {"random": {"count", "seed",
// "options"}}.
std::vector<psnet::data::SyntheticClipSpec> read_clip_specs(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw psnet::ConfigError("cannot read synthetic spec " + path);
  auto j = nlohmann::json::parse(is);
  if (j.is_array()) return j.get<std::vector<psnet::data::SyntheticClipSpec>>();
  if (j.contains("random")) {
    const auto& r = j.at("random");
    psnet::data::RandomClipOptions opts;
    if (r.contains("options")) opts = r.at("options").get<psnet::data::RandomClipOptions>();
    return psnet::data::random_clip_specs(r.value("count", 8), r.value("seed", std::uint64_t{0}), opts);
  }
  return {j.get<psnet::data::SyntheticClipSpec>()};
}

int synth(const std::string& spec_path, const std::string& output) {
  const auto specs = read_clip_specs(spec_path);
  for (const auto& s : specs) psnet::data::write_clip(psnet::data::generate_clip(s), output);
  psnet::logger()->info("wrote {} clip(s) to {}", specs.size(), output);
  return 0;
}

int eval(const std::string& pred, const std::string& gt, const std::string& report_path) {
  auto report = psnet::metrics::evaluate_dataset(pred, gt);
  psnet::metrics::write_report(report, report_path);
  std::cout << psnet::metrics::format_report(report);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PSNet video salient object detection"};
  app.require_subcommand(1);

  int stage = 3;
  std::string config, resume;
  auto* train_cmd = app.add_subcommand("train", "train one stage");
  train_cmd->add_option("--stage", stage, "1: appearance pretrain, 2: motion pretrain, 3: joint")
      ->required()
      ->check(CLI::Range(1, 3));
  train_cmd->add_option("--config", config, "JSON run configuration")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--resume", resume, "checkpoint to resume from")->check(CLI::ExistingFile);

  psnet::InferOptions infer_opts;
  std::string ckpt, input, output;
  auto* infer_cmd = app.add_subcommand("infer", "write saliency maps for a dataset or a single sequence");
  infer_cmd->add_option("--ckpt", ckpt, "checkpoint")->required()->check(CLI::ExistingFile);
  infer_cmd->add_option("--input", input, "dataset or sequence root")->required()->check(CLI::ExistingDirectory);
  infer_cmd->add_option("--output", output, "output root")->required();
  infer_cmd->add_flag("--dump-importance", infer_opts.dump_importance, "write importance-weight statistics per frame");
  infer_cmd->add_flag("--branches", infer_opts.write_branches, "also write the two branch maps");
  infer_cmd->add_flag("--single-branch", infer_opts.allow_single_branch, "accept stage-1/2 checkpoints");

  std::string pred, gt, report;
  auto* eval_cmd = app.add_subcommand("eval", "score predictions against ground truth");
  eval_cmd->add_option("--pred", pred, "prediction root")->required()->check(CLI::ExistingDirectory);
  eval_cmd->add_option("--gt", gt, "ground-truth root")->required()->check(CLI::ExistingDirectory);
  eval_cmd->add_option("--report", report, "text report path (JSON written next to it)")->required();

  std::string synth_spec, synth_out;
  auto* synth_cmd = app.add_subcommand("synth", "render synthetic clips");
  synth_cmd->add_option("--spec", synth_spec, "clip spec JSON")->required()->check(CLI::ExistingFile);
  synth_cmd->add_option("--output", synth_out, "output root")->required();

  std::string ov_pred, ov_rgb, ov_out;
  auto* overlay_cmd = app.add_subcommand("overlay", "blend saliency maps over their frames");
  overlay_cmd->add_option("--pred", ov_pred, "prediction root")->required()->check(CLI::ExistingDirectory);
  overlay_cmd->add_option("--rgb", ov_rgb, "dataset root with the frames")->required()->check(CLI::ExistingDirectory);
  overlay_cmd->add_option("--output", ov_out, "output root")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) return train(stage, config, resume);
    if (*infer_cmd) {
      infer_opts.checkpoint = ckpt;
      infer_opts.input = input;
      infer_opts.output = output;
      psnet::run_inference(infer_opts);
      return 0;
    }
    if (*eval_cmd) return eval(pred, gt, report);
    if (*synth_cmd) return synth(synth_spec, synth_out);
    if (*overlay_cmd) {
      const auto n = psnet::write_overlays(ov_pred, ov_rgb, ov_out);
      psnet::logger()->info("wrote {} overlays to {}", n, ov_out);
      return 0;
    }
  } catch (const psnet::Error& e) {
    psnet::logger()->error("{}", e.what());
    return 2;
  } catch (const std::exception& e) {
    psnet::logger()->error("{}", e.what());
    return 1;
  }
  return 0;
}
