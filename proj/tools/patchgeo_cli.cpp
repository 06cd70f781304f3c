// Command-line driver: dataset generation, training, inference, evaluation
// and the attention/positional ablation.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "patchgeo/checkpoint.hpp"
#include "patchgeo/config.hpp"
#include "patchgeo/dataset.hpp"
#include "patchgeo/evaluate.hpp"
#include "patchgeo/infer.hpp"
#include "patchgeo/pfm.hpp"
#include "patchgeo/train.hpp"

namespace fs = std::filesystem;
using namespace patchgeo;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("short write to " + path.string());
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

struct CommonArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string data;
  std::optional<int> iterations;
};

TrainConfig load_config(const CommonArgs& args) {
  TrainConfig cfg = args.config.empty() ? TrainConfig{} : TrainConfig::load(args.config);
  if (args.seed) cfg.seed = *args.seed;
  if (!args.data.empty()) cfg.dataset = args.data;
  if (args.iterations) cfg.iterations = *args.iterations;
  cfg.validate();
  if (cfg.dataset.empty()) throw ConfigError("no dataset: set 'dataset' in the config or pass --data");
  return cfg;
}

std::string timing_line(double seconds) { return "wall_clock_seconds=" + std::to_string(seconds) + "\n"; }

int run_gen(int frames, int extent, std::uint64_t seed, const std::string& out) {
  DatasetParams p;
  p.scenes = frames;
  p.extent = {extent, extent};
  p.seed = seed;
  const Manifest m = make_dataset(p, out);
  std::cout << "wrote " << m.records.size() << " frames to " << out << "\n";
  return 0;
}

int run_train(const CommonArgs& args) {
  const TrainConfig cfg = load_config(args);
  const fs::path out = args.out.empty() ? fs::path("run") : fs::path(args.out);
  ensure_dir(out);
  const Manifest manifest = read_manifest(cfg.dataset);
  TrainOptions opts;
  opts.checkpoint_dir = out;
  opts.on_step = [&](const TraceRow& r) {
    if ((r.iteration + 1) % 100 == 0 || r.iteration + 1 == cfg.iterations) {
      std::cout << "iter " << r.iteration + 1 << " loss " << r.loss << " grad_norm " << r.grad_norm << "\n";
    }
  };
  const TrainResult result = train(cfg, FrameSource::from_manifest(manifest, "train"), opts);
  save_checkpoint(out / "checkpoint.bin", result.checkpoint);
  write_text(out / "loss_trace.csv", result.report.trace_csv());

  std::string report = result.report.config + timing_line(result.report.seconds);
  report += "iterations_run=" + std::to_string(result.report.trace.size()) + "\n";
  const auto val = manifest.split("val");
  if (!val.empty()) {
    const MetricReport metrics = evaluate(result.checkpoint, FrameSource::from_manifest(manifest, "val"),
                                          InferOptions{0, 0, cfg.token_budget});
    report += "# validation\n" + metrics.to_text();
  }
  write_text(out / "run_report.txt", report);
  std::cout << "checkpoint written to " << (out / "checkpoint.bin").string() << "\n";
  return 0;
}

int run_infer(const std::string& checkpoint, const std::string& data, const std::string& split, int stride,
              Index budget, const std::string& out_dir) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  const Manifest manifest = read_manifest(data);
  const fs::path out = out_dir.empty() ? fs::path("refined") : fs::path(out_dir);
  ensure_dir(out);
  const auto records = manifest.split(split);
  if (records.empty()) throw ConfigError("split '" + split + "' is empty");
  std::string report;
  for (const auto& rec : records) {
    const Sample s = load_sample(manifest, rec);
    const InferResult r = infer(ck, s.input, InferOptions{stride, stride, budget});
    char stem[16];
    std::snprintf(stem, sizeof stem, "%06d", rec.id);
    write_pfm(out / (std::string(stem) + "_refined_depth.pfm"), r.depth);
    write_pfm(out / (std::string(stem) + "_refined_normal.pfm"), r.normal);
    report += std::string(stem) + " tiles=" + std::to_string(r.cover.size()) + " passes=" + std::to_string(r.passes) +
              " banded=" + (r.banded ? "yes" : "no") + "\n";
  }
  write_text(out / "infer_report.txt", report);
  std::cout << "refined " << records.size() << " frames into " << out.string() << "\n";
  return 0;
}

int run_eval(const std::string& checkpoint, const std::string& data, const std::string& split, int stride,
             Index budget, const std::string& out_dir) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  const Manifest manifest = read_manifest(data);
  const FrameSource frames = FrameSource::from_manifest(manifest, split);
  const fs::path out = out_dir.empty() ? fs::path("eval") : fs::path(out_dir);
  ensure_dir(out);
  const MetricReport refined = evaluate(ck, frames, InferOptions{stride, stride, budget});
  const MetricReport coarse = evaluate(frames, coarse_predictor());
  write_text(out / "metrics.txt", refined.to_text());
  write_text(out / "coarse_metrics.txt", coarse.to_text());
  std::cout << "refined\n" << refined.to_text() << "coarse\n" << coarse.to_text();
  return 0;
}

int run_ablate(const CommonArgs& args, const std::string& split) {
  const TrainConfig cfg = load_config(args);
  const fs::path out = args.out.empty() ? fs::path("ablation") : fs::path(args.out);
  ensure_dir(out);
  const Manifest manifest = read_manifest(cfg.dataset);
  const auto runs = run_ablation(cfg, FrameSource::from_manifest(manifest, "train"),
                                 FrameSource::from_manifest(manifest, split), InferOptions{0, 0, cfg.token_budget});
  std::string summary = "variant\tabsrel\tce\tnormal_mean\tpdbe_acc\n";
  for (const auto& r : runs) {
    write_text(out / (r.name + "_metrics.txt"), r.report.to_text());
    write_text(out / (r.name + "_loss_trace.csv"), r.run.trace_csv());
    summary += r.name + "\t" + std::to_string(r.report.absrel) + "\t" + std::to_string(r.report.ce) + "\t" +
               std::to_string(r.report.normal_mean) + "\t" + std::to_string(r.report.pdbe_acc) + "\n";
  }
  write_text(out / "summary.txt", summary);
  std::cout << summary;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-patch depth and normal refiner"};
  app.require_subcommand(1);

  CommonArgs common;
  int frames = 500;
  int extent = 96;
  std::uint64_t gen_seed = 0;
  std::string checkpoint;
  std::string split = "test";
  int stride = 0;
  Index budget = 0;

  auto* gen = app.add_subcommand("gen", "synthesize a dataset");
  gen->add_option("--seed", gen_seed, "dataset seed");
  gen->add_option("--out", common.out, "output directory")->required();
  gen->add_option("--frames", frames, "number of scenes")->check(CLI::PositiveNumber);
  gen->add_option("--extent", extent, "square frame size in pixels")->check(CLI::PositiveNumber);

  auto add_train_flags = [&](CLI::App* sub) {
    sub->add_option("--config", common.config, "key = value config file");
    sub->add_option("--seed", common.seed, "override the config seed");
    sub->add_option("--out", common.out, "output directory");
    sub->add_option("--data", common.data, "dataset directory (overrides config)");
    sub->add_option("--iterations", common.iterations, "override the iteration count");
  };
  auto* train_cmd = app.add_subcommand("train", "train a refiner");
  add_train_flags(train_cmd);
  auto* ablate = app.add_subcommand("ablate", "train the full, no-cross-attention and local-RoPE variants");
  add_train_flags(ablate);
  ablate->add_option("--split", split, "evaluation split");

  auto add_model_flags = [&](CLI::App* sub) {
    sub->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
    sub->add_option("--data", common.data, "dataset directory")->required();
    sub->add_option("--split", split, "split to process");
    sub->add_option("--stride", stride, "tile stride in pixels (0 = patch size)")->check(CLI::NonNegativeNumber);
    sub->add_option("--token-budget", budget, "tokens per forward pass (0 = unlimited)");
    sub->add_option("--out", common.out, "output directory");
    sub->add_option("--seed", common.seed, "unused; accepted for uniformity");
  };
  auto* infer_cmd = app.add_subcommand("infer", "refine frames of a dataset split");
  add_model_flags(infer_cmd);
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint against ground truth");
  add_model_flags(eval_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) return run_gen(frames, extent, gen_seed, common.out);
    if (train_cmd->parsed()) return run_train(common);
    if (infer_cmd->parsed()) return run_infer(checkpoint, common.data, split, stride, budget, common.out);
    if (eval_cmd->parsed()) return run_eval(checkpoint, common.data, split, stride, budget, common.out);
    if (ablate->parsed()) return run_ablate(common, split);
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
