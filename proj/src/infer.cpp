#include "patchgeo/infer.hpp"

#include <algorithm>

namespace patchgeo {

namespace {

int round_up(int v, int m) { return (v + m - 1) / m * m; }

}  // namespace

InferResult infer(const ModelParams& params, int patch_h, int patch_w, const RefineInput& input,
                  const InferOptions& options) {
  const ImageExtent extent = input.extent();
  const int cell = params.arch.cell;
  if (extent.height % cell != 0 || extent.width % cell != 0) {
    throw ResolutionError("frame " + shape_string(extent.height, extent.width) + " is not a multiple of the cell size " +
                          std::to_string(cell) + "; pad to " +
                          shape_string(round_up(extent.height, cell), round_up(extent.width, cell)));
  }
  if (extent.height < patch_h || extent.width < patch_w) {
    throw ResolutionError("frame " + shape_string(extent.height, extent.width) + " is smaller than one patch " +
                          shape_string(patch_h, patch_w));
  }
  if (patch_h % cell != 0 || patch_w % cell != 0) {
    throw ConfigError("patch " + shape_string(patch_h, patch_w) + " is not a multiple of the cell size");
  }
  if (options.token_budget < 0) throw ConfigError("token budget must be non-negative");

  InferResult out;
  out.cover = tile_cover(extent, patch_h, patch_w, options.stride_y > 0 ? options.stride_y : patch_h,
                         options.stride_x > 0 ? options.stride_x : patch_w);
  const Index tokens_per_tile = static_cast<Index>(patch_h / cell) * (patch_w / cell);
  const std::size_t total = out.cover.size();

  std::size_t group = total;
  if (options.token_budget > 0 && static_cast<Index>(total) * tokens_per_tile > options.token_budget) {
    group = static_cast<std::size_t>(std::max<Index>(1, options.token_budget / tokens_per_tile));
    // Prefer whole rows of tiles so each pass is a band.
    const auto cols = static_cast<std::size_t>(out.cover.cols);
    if (group >= cols) group -= group % cols;
    out.banded = true;
  }

  std::vector<NormalMap> normal_tiles;
  out.depth_tiles.reserve(total);
  normal_tiles.reserve(total);
  out.passes = 0;
  for (std::size_t start = 0; start < total; start += group) {
    PatchSet part = out.cover;
    part.patches.assign(out.cover.patches.begin() + static_cast<std::ptrdiff_t>(start),
                        out.cover.patches.begin() + static_cast<std::ptrdiff_t>(std::min(total, start + group)));
    for (const auto& refined : refine_patches(input, part, params)) {
      out.depth_tiles.push_back(refined.depth);
      normal_tiles.push_back(refined.normal);
    }
    ++out.passes;
  }

  out.depth = assemble(out.cover, out.depth_tiles);
  out.normal = assemble(out.cover, normal_tiles);
  // Only pixels whose covering tiles disagree are renormalized, so agreeing
  // tiles pass through bit-exactly even when they are unit length only to
  // float precision.
  Raster<bool> disagree = Raster<bool>::Constant(extent.height, extent.width, false);
  for (std::size_t i = 0; i < total; ++i) {
    const PatchSpec& p = out.cover.patches[i];
    for (int k = 0; k < 3; ++k) {
      disagree.block(p.y, p.x, p.h, p.w) =
          disagree.block(p.y, p.x, p.h, p.w) || (normal_tiles[i].ch[k] != out.normal.ch[k].block(p.y, p.x, p.h, p.w));
    }
  }
  for (Index r = 0; r < extent.height; ++r) {
    for (Index c = 0; c < extent.width; ++c) {
      if (!disagree(r, c)) continue;
      const Eigen::Vector3d n = out.normal.at(r, c);
      const double len = n.norm();
      out.normal.set(r, c, len < kNormalFloor ? input.coarse_normal.at(r, c) : Eigen::Vector3d(n / len));
    }
  }
  return out;
}

}  // namespace patchgeo
