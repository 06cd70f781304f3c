#include "patchgeo/train.hpp"

#include <chrono>
#include <cmath>
#include <memory>
#include <numbers>
#include <sstream>

namespace patchgeo {

FrameSource FrameSource::from_manifest(const Manifest& manifest, const std::string& split) {
  auto records = std::make_shared<std::vector<FrameRecord>>(manifest.split(split));
  if (records->empty()) throw ConfigError("dataset split '" + split + "' is empty");
  auto m = std::make_shared<Manifest>(manifest);
  return {records->size(), [m, records](std::size_t i) { return load_sample(*m, records->at(i)); }};
}

FrameSource FrameSource::from_samples(std::vector<Sample> samples) {
  auto shared = std::make_shared<std::vector<Sample>>(std::move(samples));
  return {shared->size(), [shared](std::size_t i) { return shared->at(i); }};
}

std::string RunReport::trace_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "iteration,frame,grid,origin_x,origin_y,loss,depth_loss,depth_mse,depth_grad,normal_loss,grad_norm,"
        "clipped_norm\n";
  for (const auto& r : trace) {
    os << r.iteration << ',' << r.frame << ',' << r.grid << ',' << r.origin_x << ',' << r.origin_y << ',' << r.loss
       << ',' << r.depth_loss << ',' << r.depth_mse << ',' << r.depth_grad << ',' << r.normal_loss << ','
       << r.grad_norm << ',' << r.clipped_norm << '\n';
  }
  return os.str();
}

void AdamW::step(std::map<std::string, Mat>& weights, const Gradients& grads, AdamState& state) const {
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(beta1, t);
  const double c2 = 1.0 - std::pow(beta2, t);
  for (auto& [name, w] : weights) {
    const auto g = grads.find(name);
    if (g == grads.end()) throw ContractError("optimizer: no gradient for '" + name + "'");
    auto [mi, m_new] = state.m.try_emplace(name, Mat::Zero(w.rows(), w.cols()));
    auto [vi, v_new] = state.v.try_emplace(name, Mat::Zero(w.rows(), w.cols()));
    Mat& m = mi->second;
    Mat& v = vi->second;
    m = beta1 * m + (1.0 - beta1) * g->second;
    v = beta2 * v + (1.0 - beta2) * g->second.cwiseAbs2();
    w -= lr * weight_decay * w;
    w.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  }
}

double global_norm(const Gradients& grads) {
  double sq = 0.0;
  for (const auto& [_, g] : grads) sq += g.squaredNorm();
  return std::sqrt(sq);
}

double clip_global_norm(Gradients& grads, double max_norm) {
  const double norm = global_norm(grads);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& [_, g] : grads) g *= s;
  }
  return norm;
}

StepResult training_step(const ModelParams& params, const Sample& sample, const TrainConfig& config, Rng& rng) {
  const ImageExtent extent = sample.gt.extent();
  extent.validate(params.arch.cell);
  const int m = choose_config(config.grid, rng);
  const PatchSet set = sample_grid(extent, m, rng, params.arch.cell);
  GradRecord rec(true);
  const ParamVars p = register_params(rec, params);
  const auto [refined_depth, refined_normal] = ad::refine_region(rec, p, params.arch, sample.input, set);

  const PatchSpec& origin = set.patches.front();
  const Index rh = static_cast<Index>(set.rows) * set.patch_h;
  const Index rw = static_cast<Index>(set.cols) * set.patch_w;
  const DepthMap gt = sample.gt.depth.block(origin.y, origin.x, rh, rw);
  const PseudoNormalField full = pseudo_normals(sample.gt.depth, sample.gt.camera);
  const PseudoNormalField pseudo{full.normals.block(origin.y, origin.x, rh, rw),
                                 full.valid.block(origin.y, origin.x, rh, rw)};
  const ad::LossVars loss = ad::total_loss(refined_depth, refined_normal, gt, pseudo, config.loss);

  StepResult out;
  TraceRow& row = out.row;
  row.frame = sample.id;
  row.grid = m;
  row.origin_x = origin.x;
  row.origin_y = origin.y;
  row.loss = loss.total.value()(0, 0);
  if (loss.depth.valid()) {
    const DepthLossTerms terms = depth_loss(refined_depth.value().array(), gt, config.loss.grad);
    row.depth_loss = loss.depth.value()(0, 0);
    row.depth_mse = terms.mse;
    row.depth_grad = terms.grad;
  }
  if (loss.normal.valid()) row.normal_loss = loss.normal.value()(0, 0);
  out.grads = rec.backward(loss.total);
  return out;
}

TrainResult train(const TrainConfig& config, const FrameSource& frames, const TrainOptions& options) {
  config.validate();
  if (frames.size == 0) throw ConfigError("training needs at least one frame");
  const auto start = std::chrono::steady_clock::now();

  Rng rng(config.seed);
  TrainResult result;
  Checkpoint& ck = result.checkpoint;
  ck.params = ModelParams::initialize(config.arch, rng);
  result.report.config = config.to_text();

  AdamW opt{config.learning_rate, 0.9, 0.999, 1e-8, config.weight_decay};
  std::uniform_int_distribution<std::size_t> pick(0, frames.size - 1);
  auto snapshot = [&](std::uint64_t iteration) {
    std::ostringstream os;
    os << rng;
    ck.iteration = iteration;
    ck.rng_state = os.str();
  };
  snapshot(0);
  const ImageExtent extent = frames.get(0).gt.extent();
  extent.validate(config.arch.cell);
  ck.patch_h = extent.height / 4;
  ck.patch_w = extent.width / 4;

  for (int it = 0; it < config.iterations; ++it) {
    const Sample sample = frames.get(pick(rng));
    if (ck.patch_h != sample.gt.extent().height / 4 || ck.patch_w != sample.gt.extent().width / 4) {
      throw ContractError("training frames must share one extent");
    }
    StepResult step;
    try {
      step = training_step(ck.params, sample, config, rng);
    } catch (const NumericError& e) {
      throw LossError("iteration " + std::to_string(it) + ": non-finite value in forward/backward: " + e.what());
    }
    TraceRow& row = step.row;
    row.iteration = it;
    for (const auto& [term, value] :
         {std::pair{"depth", row.depth_loss}, std::pair{"normal", row.normal_loss}, std::pair{"total", row.loss}}) {
      if (!std::isfinite(value)) {
        throw LossError("iteration " + std::to_string(it) + ": non-finite " + term + " loss");
      }
    }
    row.grad_norm = clip_global_norm(step.grads, config.clip_norm);
    row.clipped_norm = global_norm(step.grads);
    if (!std::isfinite(row.grad_norm)) {
      throw LossError("iteration " + std::to_string(it) + ": non-finite gradient norm");
    }
    if (config.lr_schedule == "cosine") {
      opt.lr = 0.5 * config.learning_rate * (1.0 + std::cos(std::numbers::pi * it / config.iterations));
    }
    opt.step(ck.params.weights, step.grads, ck.adam);
    result.report.trace.push_back(row);
    if (options.on_step) options.on_step(row);

    if (config.checkpoint_every > 0 && !options.checkpoint_dir.empty() && (it + 1) % config.checkpoint_every == 0) {
      snapshot(static_cast<std::uint64_t>(it + 1));
      save_checkpoint(options.checkpoint_dir / ("checkpoint_" + std::to_string(it + 1) + ".bin"), ck);
    }
  }
  snapshot(static_cast<std::uint64_t>(config.iterations));
  result.report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

}  // namespace patchgeo
