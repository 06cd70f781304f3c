#pragma once

#include <vector>

#include "patchgeo/checkpoint.hpp"
#include "patchgeo/model.hpp"
#include "patchgeo/patchgrid.hpp"

namespace patchgeo {

struct InferOptions {
  int stride_y = 0;        ///< 0 = patch height (non-overlapping cover)
  int stride_x = 0;        ///< 0 = patch width
  Index token_budget = 0;  ///< tokens per forward pass; 0 = whole cover at once
};

struct InferResult {
  DepthMap depth;
  NormalMap normal;
  PatchSet cover;
  std::vector<DepthMap> depth_tiles;  ///< per-tile refined depth, cover order
  int passes = 1;                     ///< forward passes used
  bool banded = false;                ///< true when the cover was split to fit the budget
};

/// Tiles the frame with patch-sized windows, refines each group of tiles in
/// one forward pass (cross-patch attention spans the group), and averages
/// overlaps. Averaged normals are renormalized where tiles disagree. Tiles keep their
/// global coordinates when the cover is split into bands.
///
/// Throws ResolutionError when the extent is not a multiple of the cell
/// size or is smaller than one patch.
InferResult infer(const ModelParams& params, int patch_h, int patch_w, const RefineInput& input,
                  const InferOptions& options = {});

inline InferResult infer(const Checkpoint& ck, const RefineInput& input, const InferOptions& options = {}) {
  return infer(ck.params, ck.patch_h, ck.patch_w, input, options);
}

}  // namespace patchgeo
