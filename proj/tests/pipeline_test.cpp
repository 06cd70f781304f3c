#include <gtest/gtest.h>

#include <sys/wait.h>

#include <bit>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "patchgeo/checkpoint.hpp"
#include "patchgeo/config.hpp"
#include "patchgeo/evaluate.hpp"
#include "patchgeo/infer.hpp"
#include "patchgeo/pfm.hpp"
#include "patchgeo/train.hpp"
#include "test_util.hpp"

using namespace patchgeo;
using namespace patchgeo::testing;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("patchgeo_pipe_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

int run_cli(const std::string& args) {
  const std::string cmd = std::string(PATCHGEO_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string float_bytes(float v, bool big_endian) {
  char b[4];
  std::memcpy(b, &v, 4);
  if (big_endian == (std::endian::native == std::endian::little)) std::swap(b[0], b[3]), std::swap(b[1], b[2]);
  return std::string(b, 4);
}

std::vector<Sample> small_samples(int n, std::uint64_t seed = 3) {
  DatasetParams p;
  p.scenes = n;
  p.extent = {32, 32};
  p.seed = seed;
  std::vector<Sample> out;
  for (int i = 0; i < n; ++i) out.push_back(generate_sample(p, i));
  return out;
}

TrainConfig small_config(int iterations, std::uint64_t seed = 5) {
  TrainConfig cfg;
  cfg.arch = tiny_arch();
  cfg.iterations = iterations;
  cfg.seed = seed;
  return cfg;
}

bool same_weights(const ModelParams& a, const ModelParams& b) {
  if (a.weights.size() != b.weights.size()) return false;
  for (const auto& [name, w] : a.weights) {
    const auto it = b.weights.find(name);
    if (it == b.weights.end() || it->second.rows() != w.rows() || it->second.cols() != w.cols()) return false;
    if (it->second != w) return false;
  }
  return true;
}

DepthMap region_depth(const ModelParams& params, const RefineInput& input, const PatchSet& set) {
  GradRecord rec(false);
  return ad::refine_region(rec, register_params(rec, params), params.arch, input, set).depth.value().array();
}

}  // namespace

TEST(PfmTest, RoundTripIsBitExactAtFloatPrecision) {
  Rng rng(1);
  const fs::path dir = scratch("pfm");
  for (int trial = 0; trial < 5; ++trial) {
    const DepthMap d = random_depth(7 + trial, 13 - trial, rng).cast<float>().cast<double>();
    const NormalMap n = random_normals(5 + trial, 9, rng).cast<float>().cast<double>();
    write_pfm(dir / "d.pfm", d);
    write_pfm(dir / "n.pfm", n);
    EXPECT_TRUE((read_pfm1(dir / "d.pfm") == d).all());
    EXPECT_TRUE(read_pfm3(dir / "n.pfm") == n);
  }
  fs::remove_all(dir);
}

TEST(PfmTest, HandWrittenBytes) {
  const PfmImage one = parse_pfm("Pf\n1 1\n-1.0\n" + float_bytes(0.5f, false));
  ASSERT_EQ(one.width, 1);
  ASSERT_EQ(one.height, 1);
  EXPECT_EQ(one.channels, 1);
  EXPECT_EQ(one.at(0, 0), 0.5f);

  // Width 1, height 2, big-endian; the first stored row is the bottom one.
  const PfmImage be = parse_pfm("Pf\n1 2\n1.0\n" + float_bytes(1.0f, true) + float_bytes(-2.5f, true));
  EXPECT_EQ(be.at(0, 0), -2.5f);
  EXPECT_EQ(be.at(1, 0), 1.0f);

  const PfmImage rgb = parse_pfm("PF\n1 1\n-1\n" + float_bytes(0.25f, false) + float_bytes(0.5f, false) +
                                 float_bytes(0.75f, false));
  EXPECT_EQ(rgb.channels, 3);
  EXPECT_EQ(rgb.at(0, 0, 2), 0.75f);

  EXPECT_EQ(encode_pfm(one), "Pf\n1 1\n-1.0\n" + float_bytes(0.5f, false));
}

TEST(PfmTest, MalformedInputReportsByteOffset) {
  const std::string header = "Pf\n2 2\n-1.0\n";
  try {
    parse_pfm(header + float_bytes(1.0f, false));
    FAIL() << "truncated payload accepted";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), header.size() + 4);
  }
  EXPECT_THROW(parse_pfm("P5\n1 1\n-1.0\n" + float_bytes(0.5f, false)), ParseError);
  EXPECT_THROW(parse_pfm("Pf\nx 1\n-1.0\n" + float_bytes(0.5f, false)), ParseError);
  EXPECT_THROW(parse_pfm("Pf\n1 1\n0\n" + float_bytes(0.5f, false)), ParseError);
  EXPECT_THROW(parse_pfm(""), ParseError);
  EXPECT_THROW(read_pfm(fs::temp_directory_path() / "patchgeo_no_such_file.pfm"), IoError);
}

TEST(ConfigTest, TextRoundTripAndValidation) {
  TrainConfig cfg = small_config(17, 9);
  cfg.grid.rho = {0.25, 0.25, 0.25, 0.25};
  cfg.learning_rate = 3e-4;
  cfg.arch.layout = AttentionLayout::intra_only;
  cfg.arch.rope = RopeFrame::local;
  cfg.dataset = "/some/where";
  const TrainConfig back = TrainConfig::parse(cfg.to_text());
  EXPECT_EQ(back.to_text(), cfg.to_text());

  const TrainConfig parsed = TrainConfig::parse("# comment\n\niterations = 12\n  seed=4  \nrho = 0.1, 0.2, 0.3, 0.4\n");
  EXPECT_EQ(parsed.iterations, 12);
  EXPECT_EQ(parsed.seed, 4u);
  EXPECT_EQ(parsed.grid.rho[3], 0.4);

  try {
    TrainConfig::parse("iterations = 3\nlearning_rte = 0.1\n");
    FAIL() << "unknown key accepted";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find('2'), std::string::npos) << e.what();
  }
  EXPECT_THROW(TrainConfig::parse("rho = 0.1, 0.2, 0.3, 0.3\n"), ConfigError);
  EXPECT_THROW(TrainConfig::parse("learning_rate = 0\n"), ConfigError);
  EXPECT_THROW(TrainConfig::parse("clip_norm = -1\n"), ConfigError);
  EXPECT_THROW(TrainConfig::parse("iterations = many\n"), ConfigError);
}

TEST(CheckpointTest, SaveLoadGivesBitExactInference) {
  const auto samples = small_samples(3);
  const TrainResult run = train(small_config(4), FrameSource::from_samples(samples));
  const fs::path dir = scratch("ckpt");
  save_checkpoint(dir / "c.bin", run.checkpoint);
  const Checkpoint back = load_checkpoint(dir / "c.bin");
  EXPECT_TRUE(same_weights(back.params, run.checkpoint.params));
  EXPECT_EQ(back.iteration, run.checkpoint.iteration);
  EXPECT_EQ(back.rng_state, run.checkpoint.rng_state);
  EXPECT_EQ(back.adam.step, run.checkpoint.adam.step);
  for (const Sample& s : samples) {
    const InferResult a = infer(run.checkpoint, s.input);
    const InferResult b = infer(back, s.input);
    EXPECT_TRUE((a.depth == b.depth).all());
    EXPECT_TRUE(a.normal == b.normal);
  }
  EXPECT_EQ(encode_checkpoint(back), slurp(dir / "c.bin"));
  fs::remove_all(dir);
}

TEST(CheckpointTest, RejectsMalformedBytes) {
  Rng rng(2);
  Checkpoint ck;
  ck.params = ModelParams::initialize(tiny_arch(), rng);
  ck.patch_h = ck.patch_w = 8;
  const std::string bytes = encode_checkpoint(ck);
  EXPECT_EQ(bytes.substr(0, 8), std::string(kCheckpointMagic, 8));
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), ParseError);
  std::string bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad), ParseError);
  Checkpoint missing = ck;
  missing.params.weights.erase("head.depth.bias");
  EXPECT_THROW(decode_checkpoint(encode_checkpoint(missing)), ContractError);
}

TEST(TrainTest, ZeroIterationsReturnsInitialization) {
  const TrainConfig cfg = small_config(0, 21);
  const TrainResult run = train(cfg, FrameSource::from_samples(small_samples(2)));
  EXPECT_TRUE(run.report.trace.empty());
  Rng rng(21);
  EXPECT_TRUE(same_weights(run.checkpoint.params, ModelParams::initialize(cfg.arch, rng)));
  EXPECT_EQ(run.checkpoint.iteration, 0u);
}

TEST(TrainTest, SameSeedGivesIdenticalTraceAndWeights) {
  const auto samples = small_samples(4);
  const TrainResult a = train(small_config(6), FrameSource::from_samples(samples));
  const TrainResult b = train(small_config(6), FrameSource::from_samples(samples));
  ASSERT_EQ(a.report.trace.size(), 6u);
  EXPECT_EQ(a.report.trace_csv(), b.report.trace_csv());
  EXPECT_TRUE(same_weights(a.checkpoint.params, b.checkpoint.params));
  const TrainResult c = train(small_config(6, 6), FrameSource::from_samples(samples));
  EXPECT_NE(a.report.trace_csv(), c.report.trace_csv());
}

TEST(TrainTest, CosineScheduleStartsAtThePeakRate) {
  const auto samples = small_samples(4);
  const TrainResult flat = train(small_config(6), FrameSource::from_samples(samples));
  TrainConfig cfg = small_config(6);
  cfg.lr_schedule = "cosine";
  const TrainResult cosine = train(cfg, FrameSource::from_samples(samples));
  ASSERT_EQ(cosine.report.trace.size(), 6u);
  // the first update uses the full rate, later ones a smaller one
  EXPECT_EQ(cosine.report.trace[1].loss, flat.report.trace[1].loss);
  EXPECT_NE(cosine.report.trace[2].loss, flat.report.trace[2].loss);
  EXPECT_FALSE(same_weights(cosine.checkpoint.params, flat.checkpoint.params));
  EXPECT_THROW(TrainConfig::parse("lr_schedule = step\n"), ConfigError);
  EXPECT_EQ(TrainConfig::parse("lr_schedule = cosine\n").lr_schedule, "cosine");
}

TEST(TrainTest, ClippingBoundsTheGlobalNorm) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    Gradients g;
    g["a"] = random_mat(4, 5, rng, 30.0);
    g["b"] = random_mat(1, 7, rng, 30.0);
    const double before = global_norm(g);
    double oracle = 0.0;
    for (const auto& [name, m] : g) oracle += m.squaredNorm();
    EXPECT_NEAR(before, std::sqrt(oracle), 1e-9 * before);
    Gradients h = g;
    EXPECT_EQ(clip_global_norm(h, 35.0), before);
    if (before > 35.0) {
      EXPECT_LE(global_norm(h), 35.0 + 1e-9);
      EXPECT_NEAR(global_norm(h), 35.0, 1e-9);
    } else {
      EXPECT_EQ(h["a"], g["a"]);
    }
  }

  TrainConfig cfg = small_config(8);
  cfg.clip_norm = 1e-3;
  const TrainResult run = train(cfg, FrameSource::from_samples(small_samples(2)));
  for (const TraceRow& r : run.report.trace) {
    EXPECT_LE(r.clipped_norm, cfg.clip_norm + 1e-9);
    if (r.grad_norm > cfg.clip_norm) EXPECT_NEAR(r.clipped_norm, cfg.clip_norm, 1e-12);
  }
}

TEST(TrainTest, StepZeroDepthLossIsCoarseMse) {
  const auto samples = small_samples(3);
  TrainConfig cfg = small_config(1);
  Rng init_rng(7);
  const ModelParams params = ModelParams::initialize(cfg.arch, init_rng);
  Rng rng(8);
  for (int trial = 0; trial < 12; ++trial) {
    const Sample& s = samples[static_cast<std::size_t>(trial % 3)];
    const StepResult step = training_step(params, s, cfg, rng);
    const TraceRow& r = step.row;
    const Index side = static_cast<Index>(r.grid) * 8;
    double sq = 0.0;
    for (Index y = 0; y < side; ++y) {
      for (Index x = 0; x < side; ++x) {
        const double e = s.input.coarse_depth(r.origin_y + y, r.origin_x + x) - s.gt.depth(r.origin_y + y, r.origin_x + x);
        sq += e * e;
      }
    }
    EXPECT_NEAR(r.depth_mse, sq / static_cast<double>(side * side), 1e-12);
  }
}

TEST(TrainTest, NonFiniteLossAborts) {
  auto samples = small_samples(1);
  samples[0].input.rgb.ch[0](3, 3) = std::nan("");
  try {
    train(small_config(3), FrameSource::from_samples(samples));
    FAIL() << "non-finite loss accepted";
  } catch (const LossError& e) {
    EXPECT_NE(std::string(e.what()).find("iteration"), std::string::npos) << e.what();
  }
}

TEST(InferTest, InitializedModelReturnsCoarseInput) {
  Rng rng(9);
  const ModelParams params = ModelParams::initialize(tiny_arch(), rng);
  for (Sample s : small_samples(2)) {
    for (bool stored : {false, true}) {
      if (stored) {
        // inputs read back from PFM are unit length only to float precision
        s.input.coarse_depth = s.input.coarse_depth.cast<float>().cast<double>();
        for (auto& ch : s.input.coarse_normal.ch) ch = ch.cast<float>().cast<double>();
      }
      for (const InferOptions& opt : {InferOptions{}, InferOptions{4, 4, 0}, InferOptions{0, 0, 8}}) {
        const InferResult r = infer(params, 8, 8, s.input, opt);
        EXPECT_TRUE((r.depth == s.input.coarse_depth).all());
        EXPECT_TRUE(r.normal == s.input.coarse_normal);
      }
    }
  }
}

TEST(InferTest, FullStrideCoverIsTheFourByFourTrainingGrid) {
  Rng rng(10);
  const ModelParams params = ModelParams::randomized(tiny_arch(), rng);
  const RefineInput input = random_input(32, 32, rng);
  const InferResult r = infer(params, 8, 8, input);
  ASSERT_EQ(r.cover.size(), 16u);
  EXPECT_EQ(r.passes, 1);
  EXPECT_FALSE(r.banded);
  Rng grid_rng(11);
  const PatchSet grid = sample_grid({32, 32}, 4, grid_rng, 4);
  ASSERT_EQ(grid.size(), 16u);
  for (std::size_t i = 0; i < 16; ++i) {
    EXPECT_EQ(r.cover.patches[i].x, grid.patches[i].x);
    EXPECT_EQ(r.cover.patches[i].y, grid.patches[i].y);
  }
  EXPECT_LT((r.depth - region_depth(params, input, grid)).abs().maxCoeff(), 1e-12);
}

TEST(InferTest, OverlapAveragingKeepsConstantScenesConstant) {
  Rng rng(12);
  RefineInput input;
  input.rgb = RgbImage(32, 32);
  for (auto& c : input.rgb.ch) c.setConstant(0.4);
  input.coarse_depth = DepthMap::Constant(32, 32, 3.0);
  input.coarse_normal = NormalMap(32, 32);
  input.coarse_normal.ch[2].setConstant(1.0);

  const ModelParams init = ModelParams::initialize(tiny_arch(), rng);
  const InferResult flat = infer(init, 8, 8, input, InferOptions{4, 4, 0});
  EXPECT_TRUE((flat.depth == 3.0).all());

  const ModelParams params = ModelParams::randomized(tiny_arch(), rng);
  const InferResult whole = infer(params, 8, 8, input);
  const InferResult half = infer(params, 8, 8, input, InferOptions{4, 4, 0});
  EXPECT_GT(half.cover.size(), whole.cover.size());
  EXPECT_LT((half.depth - whole.depth).abs().maxCoeff(), 1e-12);
}

TEST(InferTest, TokenBudgetSplitsTheCoverIntoBands) {
  Rng rng(13);
  const ModelParams params = ModelParams::randomized(tiny_arch(), rng);
  const RefineInput input = random_input(32, 32, rng);
  const InferResult one = infer(params, 8, 8, input, InferOptions{0, 0, 64});
  EXPECT_FALSE(one.banded);
  const InferResult bands = infer(params, 8, 8, input, InferOptions{0, 0, 16});
  EXPECT_TRUE(bands.banded);
  EXPECT_EQ(bands.passes, 4);
  EXPECT_EQ(bands.cover.size(), 16u);
  // Each band is one row of tiles refined with its own global coordinates.
  for (int row = 0; row < 4; ++row) {
    PatchSet band = bands.cover;
    band.patches.assign(bands.cover.patches.begin() + 4 * row, bands.cover.patches.begin() + 4 * row + 4);
    band.rows = 1;
    for (int i = 0; i < 4; ++i) band.patches[static_cast<std::size_t>(i)].index = i;
    EXPECT_LT((bands.depth.middleRows(8 * row, 8) - region_depth(params, input, band)).abs().maxCoeff(), 1e-12) << row;
  }
  EXPECT_GT((bands.depth - one.depth).abs().maxCoeff(), 0.0);
  EXPECT_THROW(infer(params, 8, 8, random_input(30, 32, rng)), ResolutionError);
  EXPECT_THROW(infer(params, 8, 8, random_input(4, 32, rng)), ResolutionError);
}

TEST(EvaluateTest, GroundTruthAgainstItself) {
  const FrameSource frames = FrameSource::from_samples(small_samples(3));
  const MetricReport m = evaluate(frames, [](const Sample& s) { return Prediction{s.gt.depth, s.gt.normal, 0.0}; });
  EXPECT_EQ(m.absrel, 0.0);
  EXPECT_EQ(m.delta1, 1.0);
  EXPECT_EQ(m.rmse, 0.0);
  EXPECT_EQ(m.normal_mean, 0.0);
  EXPECT_EQ(m.normal_median, 0.0);
  EXPECT_EQ(m.pct_5, 1.0);
  EXPECT_EQ(m.frames, 3);
}

TEST(EvaluateTest, ReportFieldsAreFiniteOnThreeFrames) {
  const auto samples = small_samples(3);
  const TrainResult run = train(small_config(3), FrameSource::from_samples(samples));
  const MetricReport refined = evaluate(run.checkpoint, FrameSource::from_samples(samples));
  EXPECT_TRUE(refined.all_finite()) << refined.to_text();
  EXPECT_EQ(refined.frames, 3);
  const MetricReport coarse = evaluate(FrameSource::from_samples(samples), coarse_predictor());
  EXPECT_TRUE(coarse.all_finite()) << coarse.to_text();
  EXPECT_GT(coarse.absrel, 0.0);
  EXPECT_THROW(evaluate(FrameSource::from_samples({}), coarse_predictor()), Error);
}

TEST(CliTest, GenIsDeterministic) {
  const fs::path a = scratch("gen_a");
  const fs::path b = scratch("gen_b");
  ASSERT_EQ(run_cli("gen --seed 7 --frames 3 --extent 32 --out " + a.string()), 0);
  ASSERT_EQ(run_cli("gen --seed 7 --frames 3 --extent 32 --out " + b.string()), 0);
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    EXPECT_EQ(slurp(e.path()), slurp(b / fs::relative(e.path(), a)));
    ++files;
  }
  EXPECT_EQ(files, 16u);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(CliTest, ExitCodes) {
  const fs::path dir = scratch("cli");
  ASSERT_EQ(run_cli("gen --seed 1 --frames 10 --extent 32 --out " + (dir / "data").string()), 0);
  spit(dir / "bad.txt", "rho = 0.1, 0.2, 0.3, 0.3\ndataset = " + (dir / "data").string() + "\n");
  EXPECT_EQ(run_cli("train --config " + (dir / "bad.txt").string() + " --out " + (dir / "run").string()), 1);
  spit(dir / "typo.txt", "iteratons = 2\n");
  EXPECT_EQ(run_cli("train --config " + (dir / "typo.txt").string()), 1);
  EXPECT_EQ(run_cli("frobnicate"), 1);
  EXPECT_EQ(run_cli("train --bogus-flag 3"), 1);
  EXPECT_EQ(run_cli("eval --checkpoint " + (dir / "missing.bin").string() + " --data " + (dir / "data").string()), 2);

  spit(dir / "ok.txt", "iterations = 2\nblocks = 2\nwidth = 16\ndataset = " + (dir / "data").string() + "\n");
  ASSERT_EQ(run_cli("train --config " + (dir / "ok.txt").string() + " --out " + (dir / "run").string()), 0);
  EXPECT_TRUE(fs::exists(dir / "run" / "checkpoint.bin"));
  EXPECT_TRUE(fs::exists(dir / "run" / "loss_trace.csv"));
  EXPECT_TRUE(fs::exists(dir / "run" / "run_report.txt"));
  ASSERT_EQ(run_cli("eval --checkpoint " + (dir / "run" / "checkpoint.bin").string() + " --data " +
                    (dir / "data").string() + " --out " + (dir / "eval").string()),
            0);
  const MetricReport m = MetricReport::from_text(slurp(dir / "eval" / "metrics.txt"));
  EXPECT_EQ(m.frames, 1);
  EXPECT_TRUE(m.all_finite());
  ASSERT_EQ(run_cli("infer --checkpoint " + (dir / "run" / "checkpoint.bin").string() + " --data " +
                    (dir / "data").string() + " --stride 4 --out " + (dir / "refined").string()),
            0);
  EXPECT_TRUE(fs::exists(dir / "refined" / "000009_refined_depth.pfm"));
  fs::remove_all(dir);
}
