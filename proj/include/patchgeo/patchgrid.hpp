#pragma once

#include <array>
#include <random>
#include <span>
#include <vector>

#include "patchgeo/frame.hpp"
#include "patchgeo/raster.hpp"

namespace patchgeo {

/// Probabilities of sampling an M x M grid, M = 1..4.
struct GridConfig {
  std::array<double, 4> rho{0.1, 0.2, 0.3, 0.4};

  void validate() const;
};

struct PatchSpec {
  int index = 0;
  int x = 0;  ///< top-left column in the source image
  int y = 0;  ///< top-left row in the source image
  int h = 0;
  int w = 0;

  friend bool operator==(const PatchSpec&, const PatchSpec&) = default;
};

/// A rows x cols grid of equally sized patches, stored row-major.
struct PatchSet {
  ImageExtent extent;
  int rows = 0;
  int cols = 0;
  int patch_h = 0;
  int patch_w = 0;
  std::vector<PatchSpec> patches;

  const PatchSpec& at(int r, int c) const { return patches[static_cast<std::size_t>(r * cols + c)]; }
  std::size_t size() const { return patches.size(); }
};

using Rng = std::mt19937_64;

/// Draws M with probability rho[M-1].
int choose_config(const GridConfig& cfg, Rng& rng);

/// M x M contiguous patches of size (H/4, W/4) sharing one random grid
/// origin. Origins are multiples of `align`; M = 4 always covers the image.
PatchSet sample_grid(const ImageExtent& extent, int m, Rng& rng, int align = 1);

/// Tiles of a fixed size placed every `stride` pixels; the last row/column
/// is pinned to the far edge so the cover is complete.
PatchSet tile_cover(const ImageExtent& extent, int patch_h, int patch_w, int stride_y, int stride_x);

struct PatchCrop {
  RgbImage rgb;
  DepthMap depth;
  NormalMap normal;
};

template <typename Scalar>
Raster<Scalar> crop(const Raster<Scalar>& map, const PatchSpec& p) {
  return map.block(p.y, p.x, p.h, p.w);
}

template <typename Scalar>
Raster3<Scalar> crop(const Raster3<Scalar>& map, const PatchSpec& p) {
  return map.block(p.y, p.x, p.h, p.w);
}

/// Exact pixel windows of the image and its coarse priors.
std::vector<PatchCrop> extract(const RefineInput& input, const PatchSet& set);

/// Local (u, v) inside a patch to source-image pixel coordinates.
inline std::array<int, 2> global_coords(const PatchSpec& p, int u, int v) { return {u + p.x, v + p.y}; }

/// Writes each tile into its window. Overlapping pixels are averaged with
/// uniform weights, accumulated in patch-index order. Throws CoverageError
/// if any pixel is left uncovered.
DepthMap assemble(const PatchSet& set, std::span<const DepthMap> tiles);
NormalMap assemble(const PatchSet& set, std::span<const NormalMap> tiles);

}  // namespace patchgeo
