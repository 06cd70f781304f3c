#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "patchgeo/checkpoint.hpp"
#include "patchgeo/config.hpp"
#include "patchgeo/dataset.hpp"

namespace patchgeo {

/// Indexed access to training frames, either from disk or in memory.
struct FrameSource {
  std::size_t size = 0;
  std::function<Sample(std::size_t)> get;

  static FrameSource from_manifest(const Manifest& manifest, const std::string& split);
  static FrameSource from_samples(std::vector<Sample> samples);
};

struct TraceRow {
  int iteration = 0;
  int frame = 0;
  int grid = 0;  ///< M of the sampled M x M grid
  int origin_x = 0;
  int origin_y = 0;
  double loss = 0.0;
  double depth_loss = 0.0;
  double depth_mse = 0.0;
  double depth_grad = 0.0;
  double normal_loss = 0.0;
  double grad_norm = 0.0;     ///< before clipping
  double clipped_norm = 0.0;  ///< after clipping
};

struct RunReport {
  std::vector<TraceRow> trace;
  double seconds = 0.0;
  std::string config;

  /// Header plus one line per iteration.
  std::string trace_csv() const;
};

/// Decoupled-weight-decay Adam with bias correction.
struct AdamW {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-6;

  void step(std::map<std::string, Mat>& weights, const Gradients& grads, AdamState& state) const;
};

/// Global L2 norm over all gradient tensors.
double global_norm(const Gradients& grads);

/// Rescales so the global norm is at most `max_norm`; returns the norm
/// before clipping.
double clip_global_norm(Gradients& grads, double max_norm);

/// One sampled training step's loss and gradients without updating anything.
struct StepResult {
  TraceRow row;
  Gradients grads;
};

StepResult training_step(const ModelParams& params, const Sample& sample, const TrainConfig& config, Rng& rng);

struct TrainOptions {
  std::filesystem::path checkpoint_dir;  ///< used when checkpoint_every > 0
  std::function<void(const TraceRow&)> on_step;
};

struct TrainResult {
  Checkpoint checkpoint;
  RunReport report;
};

/// Seeds one engine from config.seed, initializes the model, then for every
/// iteration draws a frame, a grid size and a grid placement, runs the
/// refiner on the grid, and updates with clipped AdamW. Throws LossError
/// naming the iteration and term when the loss stops being finite.
TrainResult train(const TrainConfig& config, const FrameSource& frames, const TrainOptions& options = {});

}  // namespace patchgeo
