#pragma once

#include <functional>
#include <string>
#include <vector>

#include "patchgeo/infer.hpp"
#include "patchgeo/metrics.hpp"
#include "patchgeo/train.hpp"

namespace patchgeo {

struct Prediction {
  DepthMap depth;
  NormalMap normal;
  double ce = 0.0;  ///< consistency error of the tiled second pass
};

using Predictor = std::function<Prediction(const Sample&)>;

/// All metrics of one frame against its ground truth (analytic normals).
MetricReport frame_report(const Prediction& pred, const GeometryFrame& gt);

/// Unweighted mean over frames. PDBE accuracy is averaged over frames whose
/// ground truth has edges and completeness over frames whose prediction has
/// edges; frames lacking either are counted in pdbe_no_edge_frames.
MetricReport aggregate(const std::vector<MetricReport>& frames, const std::vector<PdbeResult>& pdbe);

MetricReport evaluate(const FrameSource& frames, const Predictor& predict);

/// Refined prediction plus CE from a second cover whose neighbors overlap by
/// exactly the band width round(270 * patch_h / 540).
Predictor model_predictor(const Checkpoint& ck, const InferOptions& options = {});

/// The coarse inputs themselves (the baseline row).
Predictor coarse_predictor();

inline MetricReport evaluate(const Checkpoint& ck, const FrameSource& frames, const InferOptions& options = {}) {
  return evaluate(frames, model_predictor(ck, options));
}

struct AblationRun {
  std::string name;
  TrainConfig config;
  MetricReport report;
  RunReport run;
};

/// Trains and evaluates the full model, the variant without cross-patch
/// attention, and the variant with patch-local RoPE coordinates under one
/// config and seed.
std::vector<AblationRun> run_ablation(const TrainConfig& base, const FrameSource& train_frames,
                                      const FrameSource& eval_frames, const InferOptions& options = {});

}  // namespace patchgeo
