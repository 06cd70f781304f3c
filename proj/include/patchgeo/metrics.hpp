#pragma once

#include <cstdint>
#include <span>
#include <string>

#include "patchgeo/patchgrid.hpp"
#include "patchgeo/raster.hpp"

namespace patchgeo {

inline constexpr double kDeltaThreshold = 1.25;
inline constexpr double kDistanceTruncation = 10.0;

struct DepthMetrics {
  double absrel = 0.0;
  double delta1 = 0.0;  ///< fraction in [0, 1]
  double rmse = 0.0;
};

/// AbsRel, delta_1 (max(pred/gt, gt/pred) < 1.25; non-positive predictions
/// never count) and RMSE over valid pixels. Empty mask = all valid.
DepthMetrics depth_metrics(const DepthMap& pred, const DepthMap& gt, const Mask& mask = {});

/// Boundary band width for a given patch height: round(270 * patch_h / 540).
int consistency_band(int patch_h);

/// Mean absolute disagreement of neighboring tiles inside a band of width
/// `band` centered on each shared overlap, averaged over all horizontally
/// and vertically adjacent tile pairs of `cover`.
double consistency_error(std::span<const DepthMap> tiles, const PatchSet& cover, int band);

struct NormalMetrics {
  double mean = 0.0;    ///< degrees
  double median = 0.0;  ///< degrees
  double rms = 0.0;     ///< degrees
  double pct_5 = 0.0;   ///< fraction below 5 degrees
  double pct_11_25 = 0.0;
  double pct_30 = 0.0;
};

NormalMetrics normal_metrics(const NormalMap& pred, const NormalMap& gt, const Mask& mask = {});

using EdgeMap = Raster<std::uint8_t>;

struct CannyParams {
  double sigma = 1.0;
  double low = 0.1;   ///< fraction of the maximum gradient magnitude
  double high = 0.2;
};

/// Gaussian blur (radius ceil(3 sigma), replicated borders), Sobel gradients,
/// non-maximum suppression along the gradient direction quantized to 45
/// degrees, then double-threshold hysteresis with 8-connectivity.
EdgeMap canny(const DepthMap& raster, const CannyParams& params = {});

/// Euclidean distance to the nearest edge pixel (exact two-pass transform),
/// truncated at `truncate`. With no edges every value is `truncate`.
DepthMap distance_field(const EdgeMap& edges, double truncate = kDistanceTruncation);

/// Min-max normalization to [0, 1]; a constant raster maps to zeros.
DepthMap normalize_unit(const DepthMap& raster);

/// Union of the Canny edges of normalized depth and normalized disparity.
EdgeMap boundary_edges(const DepthMap& depth, const CannyParams& params = {});

struct PdbeResult {
  double accuracy = 0.0;
  double completeness = 0.0;
  bool gt_no_edges = false;    ///< accuracy reported as 0
  bool pred_no_edges = false;  ///< completeness reported as 0
};

/// acc = sum T_pred * E_gt / sum E_gt, compl = sum T_gt * E_pred / sum E_pred.
PdbeResult pdbe(const DepthMap& pred_depth, const DepthMap& gt_depth, const CannyParams& params = {});

struct MetricReport {
  double absrel = 0.0;
  double delta1 = 0.0;
  double rmse = 0.0;
  double ce = 0.0;
  double pdbe_acc = 0.0;
  double pdbe_compl = 0.0;
  double normal_mean = 0.0;
  double normal_median = 0.0;
  double normal_rms = 0.0;
  double pct_5 = 0.0;
  double pct_11_25 = 0.0;
  double pct_30 = 0.0;
  int frames = 0;
  int pdbe_no_edge_frames = 0;

  /// Flat `key=value` lines (fractions, not percentages).
  std::string to_text() const;
  static MetricReport from_text(const std::string& text);
  bool all_finite() const;
};

}  // namespace patchgeo
