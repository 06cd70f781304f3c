#include "patchgeo/evaluate.hpp"

namespace patchgeo {

namespace {

struct FrameResult {
  MetricReport report;
  PdbeResult pdbe;
};

FrameResult score(const Prediction& pred, const GeometryFrame& gt) {
  FrameResult out;
  MetricReport& m = out.report;
  const DepthMetrics d = depth_metrics(pred.depth, gt.depth);
  const NormalMetrics n = normal_metrics(pred.normal, gt.normal);
  out.pdbe = pdbe(pred.depth, gt.depth);
  m.absrel = d.absrel;
  m.delta1 = d.delta1;
  m.rmse = d.rmse;
  m.ce = pred.ce;
  m.pdbe_acc = out.pdbe.accuracy;
  m.pdbe_compl = out.pdbe.completeness;
  m.normal_mean = n.mean;
  m.normal_median = n.median;
  m.normal_rms = n.rms;
  m.pct_5 = n.pct_5;
  m.pct_11_25 = n.pct_11_25;
  m.pct_30 = n.pct_30;
  m.frames = 1;
  m.pdbe_no_edge_frames = (out.pdbe.gt_no_edges || out.pdbe.pred_no_edges) ? 1 : 0;
  return out;
}

}  // namespace

MetricReport frame_report(const Prediction& pred, const GeometryFrame& gt) { return score(pred, gt).report; }

MetricReport aggregate(const std::vector<MetricReport>& frames, const std::vector<PdbeResult>& pdbe) {
  if (frames.empty()) throw MetricError("aggregate: no frames");
  if (pdbe.size() != frames.size()) throw DimensionError("aggregate: one PDBE result per frame required");
  MetricReport out;
  int acc_frames = 0;
  int compl_frames = 0;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const MetricReport& f = frames[i];
    out.absrel += f.absrel;
    out.delta1 += f.delta1;
    out.rmse += f.rmse;
    out.ce += f.ce;
    out.normal_mean += f.normal_mean;
    out.normal_median += f.normal_median;
    out.normal_rms += f.normal_rms;
    out.pct_5 += f.pct_5;
    out.pct_11_25 += f.pct_11_25;
    out.pct_30 += f.pct_30;
    if (!pdbe[i].gt_no_edges) {
      out.pdbe_acc += pdbe[i].accuracy;
      ++acc_frames;
    }
    if (!pdbe[i].pred_no_edges) {
      out.pdbe_compl += pdbe[i].completeness;
      ++compl_frames;
    }
    out.pdbe_no_edge_frames += (pdbe[i].gt_no_edges || pdbe[i].pred_no_edges) ? 1 : 0;
  }
  const double n = static_cast<double>(frames.size());
  for (double* v : {&out.absrel, &out.delta1, &out.rmse, &out.ce, &out.normal_mean, &out.normal_median,
                    &out.normal_rms, &out.pct_5, &out.pct_11_25, &out.pct_30}) {
    *v /= n;
  }
  if (acc_frames > 0) out.pdbe_acc /= acc_frames;
  if (compl_frames > 0) out.pdbe_compl /= compl_frames;
  out.frames = static_cast<int>(frames.size());
  return out;
}

MetricReport evaluate(const FrameSource& frames, const Predictor& predict) {
  if (frames.size == 0) throw ConfigError("evaluate: split is empty");
  std::vector<MetricReport> reports;
  std::vector<PdbeResult> edges;
  for (std::size_t i = 0; i < frames.size; ++i) {
    const Sample s = frames.get(i);
    FrameResult r = score(predict(s), s.gt);
    reports.push_back(r.report);
    edges.push_back(r.pdbe);
  }
  return aggregate(reports, edges);
}

Predictor model_predictor(const Checkpoint& ck, const InferOptions& options) {
  return [ck, options](const Sample& s) {
    const InferResult main = infer(ck, s.input, options);
    const int band = consistency_band(ck.patch_h);
    InferOptions second = options;
    second.stride_y = ck.patch_h - band;
    second.stride_x = ck.patch_w - band;
    const InferResult overlapped = infer(ck, s.input, second);
    return Prediction{main.depth, main.normal, consistency_error(overlapped.depth_tiles, overlapped.cover, band)};
  };
}

Predictor coarse_predictor() {
  return [](const Sample& s) { return Prediction{s.input.coarse_depth, s.input.coarse_normal, 0.0}; };
}

std::vector<AblationRun> run_ablation(const TrainConfig& base, const FrameSource& train_frames,
                                      const FrameSource& eval_frames, const InferOptions& options) {
  std::vector<AblationRun> runs;
  auto variant = [&](const std::string& name, AttentionLayout layout, RopeFrame rope) {
    AblationRun run;
    run.name = name;
    run.config = base;
    run.config.arch.layout = layout;
    run.config.arch.rope = rope;
    TrainResult trained = train(run.config, train_frames);
    run.report = evaluate(trained.checkpoint, eval_frames, options);
    run.run = std::move(trained.report);
    runs.push_back(std::move(run));
  };
  variant("full", AttentionLayout::alternating, RopeFrame::global);
  variant("no_cross", AttentionLayout::intra_only, RopeFrame::global);
  variant("local_rope", AttentionLayout::alternating, RopeFrame::local);
  return runs;
}

}  // namespace patchgeo
