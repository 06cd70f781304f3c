#include "patchgeo/patchgrid.hpp"

#include <cmath>
#include <numeric>
#include <string>

namespace patchgeo {

void GridConfig::validate() const {
  double total = 0.0;
  for (double p : rho) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw ConfigError("grid probabilities must be finite and non-negative");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw ConfigError("grid probabilities sum to " + std::to_string(total) + ", expected 1");
  }
}

int choose_config(const GridConfig& cfg, Rng& rng) {
  cfg.validate();
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  double acc = 0.0;
  int last_positive = 1;
  for (int m = 1; m <= 4; ++m) {
    const double p = cfg.rho[static_cast<std::size_t>(m - 1)];
    if (p <= 0.0) continue;
    last_positive = m;
    acc += p;
    if (u < acc) return m;
  }
  return last_positive;
}

namespace {

PatchSet make_grid(const ImageExtent& extent, int rows, int cols, int ph, int pw, int y0, int x0, int sy,
                   int sx) {
  PatchSet set;
  set.extent = extent;
  set.rows = rows;
  set.cols = cols;
  set.patch_h = ph;
  set.patch_w = pw;
  set.patches.reserve(static_cast<std::size_t>(rows * cols));
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      set.patches.push_back({r * cols + c, x0 + c * sx, y0 + r * sy, ph, pw});
    }
  }
  return set;
}

std::vector<int> cover_positions(int length, int patch, int stride) {
  std::vector<int> pos;
  for (int p = 0; p + patch <= length; p += stride) pos.push_back(p);
  if (pos.back() + patch < length) pos.push_back(length - patch);
  return pos;
}

template <typename Tile, typename Acc>
void accumulate_tiles(const PatchSet& set, std::span<const Tile> tiles, Acc&& add) {
  if (tiles.size() != set.patches.size()) {
    throw ContractError("assemble: " + std::to_string(tiles.size()) + " tiles for " +
                        std::to_string(set.patches.size()) + " patches");
  }
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    const auto& p = set.patches[i];
    if (tiles[i].rows() != p.h || tiles[i].cols() != p.w) {
      throw DimensionError("assemble: tile " + std::to_string(i) + " is " +
                           shape_string(tiles[i].rows(), tiles[i].cols()) + ", patch is " + shape_string(p.h, p.w));
    }
    add(tiles[i], p);
  }
}

Raster<int> coverage(const PatchSet& set) {
  Raster<int> count = Raster<int>::Zero(set.extent.height, set.extent.width);
  for (const auto& p : set.patches) count.block(p.y, p.x, p.h, p.w) += 1;
  std::string holes;
  int n_holes = 0;
  for (Index r = 0; r < count.rows(); ++r) {
    for (Index c = 0; c < count.cols(); ++c) {
      if (count(r, c) > 0) continue;
      if (n_holes < 10) holes += " (" + std::to_string(r) + "," + std::to_string(c) + ")";
      ++n_holes;
    }
  }
  if (n_holes > 0) {
    throw CoverageError("assemble: " + std::to_string(n_holes) + " uncovered pixels (row,col):" + holes +
                        (n_holes > 10 ? " ..." : ""));
  }
  return count;
}

}  // namespace

PatchSet sample_grid(const ImageExtent& extent, int m, Rng& rng, int align) {
  extent.validate(0);
  if (m < 1 || m > 4) throw ConfigError("grid side must be in 1..4, got " + std::to_string(m));
  if (align < 1) throw ConfigError("origin alignment must be positive");
  const int ph = extent.height / 4;
  const int pw = extent.width / 4;
  int x0 = 0;
  int y0 = 0;
  if (m < 4) {
    const int range_x = (extent.width - m * pw) / align;
    const int range_y = (extent.height - m * ph) / align;
    x0 = std::uniform_int_distribution<int>(0, range_x)(rng) * align;
    y0 = std::uniform_int_distribution<int>(0, range_y)(rng) * align;
  }
  return make_grid(extent, m, m, ph, pw, y0, x0, ph, pw);
}

PatchSet tile_cover(const ImageExtent& extent, int patch_h, int patch_w, int stride_y, int stride_x) {
  if (patch_h <= 0 || patch_w <= 0 || stride_y <= 0 || stride_x <= 0) {
    throw ConfigError("tile_cover: patch size and stride must be positive");
  }
  if (patch_h > extent.height || patch_w > extent.width) {
    throw ConfigError("tile_cover: patch " + shape_string(patch_h, patch_w) + " exceeds image " +
                      shape_string(extent.height, extent.width));
  }
  const auto ys = cover_positions(extent.height, patch_h, stride_y);
  const auto xs = cover_positions(extent.width, patch_w, stride_x);
  PatchSet set;
  set.extent = extent;
  set.rows = static_cast<int>(ys.size());
  set.cols = static_cast<int>(xs.size());
  set.patch_h = patch_h;
  set.patch_w = patch_w;
  for (int r = 0; r < set.rows; ++r) {
    for (int c = 0; c < set.cols; ++c) {
      set.patches.push_back({r * set.cols + c, xs[static_cast<std::size_t>(c)], ys[static_cast<std::size_t>(r)],
                             patch_h, patch_w});
    }
  }
  return set;
}

std::vector<PatchCrop> extract(const RefineInput& input, const PatchSet& set) {
  require_same_extent(input.rgb, input.coarse_depth, "extract rgb");
  require_same_extent(input.coarse_normal, input.coarse_depth, "extract normal");
  if (input.extent() != set.extent) {
    throw ContractError("extract: frame extent " + shape_string(input.extent().height, input.extent().width) +
                        " does not match patch set extent " + shape_string(set.extent.height, set.extent.width));
  }
  std::vector<PatchCrop> out;
  out.reserve(set.size());
  for (const auto& p : set.patches) {
    if (p.x < 0 || p.y < 0 || p.x + p.w > set.extent.width || p.y + p.h > set.extent.height) {
      throw ContractError("extract: patch " + std::to_string(p.index) + " leaves the image");
    }
    out.push_back({crop(input.rgb, p), crop(input.coarse_depth, p), crop(input.coarse_normal, p)});
  }
  return out;
}

DepthMap assemble(const PatchSet& set, std::span<const DepthMap> tiles) {
  DepthMap sum = DepthMap::Zero(set.extent.height, set.extent.width);
  accumulate_tiles(set, tiles, [&](const DepthMap& t, const PatchSpec& p) { sum.block(p.y, p.x, p.h, p.w) += t; });
  const Raster<int> count = coverage(set);
  // Single-coverage pixels are copied so exact tilings reproduce tiles bit for bit.
  return (count == 1).select(sum, sum / count.cast<double>());
}

NormalMap assemble(const PatchSet& set, std::span<const NormalMap> tiles) {
  NormalMap sum(set.extent.height, set.extent.width);
  accumulate_tiles(set, tiles, [&](const NormalMap& t, const PatchSpec& p) {
    for (int k = 0; k < 3; ++k) sum.ch[k].block(p.y, p.x, p.h, p.w) += t.ch[k];
  });
  const Raster<int> count = coverage(set);
  for (int k = 0; k < 3; ++k) sum.ch[k] = (count == 1).select(sum.ch[k], sum.ch[k] / count.cast<double>());
  return sum;
}

}  // namespace patchgeo
