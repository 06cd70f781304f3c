#pragma once

#include "patchgeo/frame.hpp"
#include "patchgeo/numcore.hpp"
#include "patchgeo/raster.hpp"

namespace patchgeo {

struct LossWeights {
  double grad = 0.5;    ///< gradient-matching term inside the depth loss
  double mse = 1.0;     ///< per-pixel MSE inside the normal loss
  double depth = 1.0;
  double normal = 0.01;

  void validate() const;
};

struct PseudoNormalField {
  NormalMap normals;  ///< unit length where valid, zero elsewhere
  Mask valid;
};

/// Least-squares plane normals from a depth map. Each pixel's window x window
/// neighborhood is lifted to 3-D through the camera, the plane normal is the
/// eigenvector of the smallest eigenvalue of the centered covariance, and it
/// is oriented toward the camera. Pixels whose window leaves the image, or
/// whose points do not span a plane, are marked invalid.
///
/// (origin_x, origin_y) is the source-image position of depth(0, 0), so crops
/// lift through the full-image camera.
PseudoNormalField pseudo_normals(const DepthMap& depth, const CameraModel& camera, int window = 5,
                                 int origin_x = 0, int origin_y = 0);

struct DepthLossTerms {
  double mse = 0.0;
  double grad = 0.0;
  double total = 0.0;
};

/// MSE over valid pixels plus lambda_grad times the mean squared mismatch of
/// horizontal and vertical forward differences (pairs with both ends valid).
/// An empty mask means "all valid".
DepthLossTerms depth_loss(const DepthMap& refined, const DepthMap& gt, double lambda_grad, const Mask& mask = {});

struct NormalLossTerms {
  double angular = 0.0;
  double mse = 0.0;
  double total = 0.0;
};

/// Mean (1 - cos) between the normalized prediction and the target plus
/// lambda_mse times the per-channel MSE of the raw prediction.
NormalLossTerms normal_loss(const NormalMap& refined, const NormalMap& pseudo, const Mask& mask, double lambda_mse);

struct TotalLossTerms {
  DepthLossTerms depth;
  NormalLossTerms normal;
  double total = 0.0;
};

/// lambda_depth * depth loss + lambda_normal * normal loss with targets
/// derived from the ground-truth depth only. A zero weight skips its term.
TotalLossTerms total_loss(const DepthMap& refined_depth, const NormalMap& refined_normal, const DepthMap& gt_depth,
                          const CameraModel& camera, const LossWeights& weights);

/// Rows = pixels (row-major), columns = x/y/z.
Mat to_rows(const NormalMap& n);
NormalMap from_rows(const Mat& rows, Index height, Index width);

namespace ad {

Var depth_loss(const Var& refined, const DepthMap& gt, double lambda_grad, const Mask& mask = {});
/// `refined` and `pseudo` are (pixels x 3); `valid` holds one flag per pixel.
Var normal_loss(const Var& refined, const Mat& pseudo, const Mask& valid, double lambda_mse);

struct LossVars {
  Var total;
  Var depth;
  Var normal;
};

/// Depth is a region map (H x W); normals are (H*W x 3) raw refined vectors.
LossVars total_loss(const Var& refined_depth, const Var& refined_normal, const DepthMap& gt_depth,
                    const PseudoNormalField& pseudo, const LossWeights& weights);

}  // namespace ad

}  // namespace patchgeo
