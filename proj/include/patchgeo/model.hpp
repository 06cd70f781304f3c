#pragma once

#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "patchgeo/numcore.hpp"
#include "patchgeo/patchgrid.hpp"

namespace patchgeo {

enum class AttentionLayout {
  alternating,  ///< intra, cross, intra, cross, ...
  intra_only,   ///< ablation: no cross-patch attention
};

enum class RopeFrame {
  global,  ///< token coordinates in source-image pixels
  local,   ///< ablation: coordinates relative to the patch origin
};

std::string to_string(AttentionLayout layout);
std::string to_string(RopeFrame frame);
AttentionLayout parse_attention_layout(const std::string& text);
RopeFrame parse_rope_frame(const std::string& text);

struct Architecture {
  int blocks = 4;
  int width = 32;
  int heads = 2;
  int cell = 4;
  int mlp_ratio = 4;
  AttentionLayout layout = AttentionLayout::alternating;
  RopeFrame rope = RopeFrame::global;

  int head_dim() const { return width / heads; }
  /// Width divisible by heads, per-head width divisible by 4, positive sizes.
  void validate() const;
  bool cross_block(int index) const {
    return layout == AttentionLayout::alternating && index % 2 == 1;
  }
  friend bool operator==(const Architecture&, const Architecture&) = default;
};

/// All trainable tensors, keyed by name (ordered, so iteration is deterministic).
struct ModelParams {
  Architecture arch;
  std::map<std::string, Mat> weights;

  /// Truncated-normal (std 0.02, cut at 2 std) projections; residual output
  /// projections and both heads start at zero so the model is the identity
  /// refiner at step 0.
  static ModelParams initialize(const Architecture& arch, Rng& rng);

  /// Same tensors, all drawn at random (nothing zeroed). Gradient checks use
  /// this so every path carries signal.
  static ModelParams randomized(const Architecture& arch, Rng& rng, double stddev = 0.2);

  const Mat& at(const std::string& name) const;
  std::size_t parameter_count() const;
};

/// Per-token pixel coordinates (u, v), one row per token.
using Coords = Eigen::Matrix<double, Eigen::Dynamic, 2, Eigen::RowMajor>;

/// Half-open row ranges [start, start + length) that attend among themselves.
using Segments = std::vector<std::pair<Index, Index>>;

struct TokenBatch {
  Mat tokens;  ///< (patches * tokens_per_patch) x width, patch-major
  Coords coords;
  int patches = 0;
  int tokens_per_patch = 0;
};

/// Cell-unfolded crops: one row per token, channel-major within a cell
/// (channel, dy, dx).
struct CellInputs {
  Mat rgb;
  Mat depth;
  Mat normal;
  int patches = 0;
  int grid_h = 0;  ///< cells per patch column
  int grid_w = 0;  ///< cells per patch row
  int tokens_per_patch() const { return grid_h * grid_w; }
};

CellInputs unfold_cells(std::span<const PatchCrop> crops, int cell);

/// Top-left pixel of every cell, patch-major, global or patch-local.
Coords token_coords(const PatchSet& set, int cell, RopeFrame frame);

/// Axial 2-D rotary encoding on rows of x (width = per-head width, divisible
/// by 4). The first half of the channels rotates by theta_j * u, the second
/// half by theta_j * v, with theta_j = 10000^(-2j / (width/2)) and adjacent
/// channel pairs (2j, 2j+1) forming the rotation planes. `inverse` applies
/// the transpose rotation.
Mat rope_apply(const Mat& x, const Coords& coords, bool inverse = false);

Segments intra_segments(int patches, int tokens_per_patch);
Segments cross_segments(int patches, int tokens_per_patch);

/// Softmax attention per head and per segment with RoPE on queries and keys
/// (values untouched), scale 1/sqrt(head_dim). When `weights` is non-null it
/// receives one attention matrix per (head, segment), head-major.
Mat multi_head_attention(const Mat& q, const Mat& k, const Mat& v, const Coords& coords, const Segments& segments,
                         int heads, std::vector<Mat>* weights = nullptr);

using ParamVars = std::map<std::string, Var>;

ParamVars register_params(GradRecord& rec, const ModelParams& params);

namespace ad {

Var attention(const Var& q, const Var& k, const Var& v, Coords coords, Segments segments, int heads);

/// Joint token sum of the three linear cell embeddings.
Var embed(GradRecord& rec, const ParamVars& p, const CellInputs& cells);

/// Pre-norm attention sub-layer with residual add.
Var attention_block(const Var& x, const ParamVars& p, const Architecture& arch, int block, const Coords& coords,
                    const Segments& segments);
Var mlp_block(const Var& x, const ParamVars& p, int block);

/// All blocks in order, intra/cross per the architecture's layout.
Var forward(const Var& tokens, const ParamVars& p, const Architecture& arch, const Coords& coords, int patches,
            int tokens_per_patch);

/// Per-token projections: depth (N x c^2) and normal (N x 3c^2).
std::pair<Var, Var> heads(const Var& features, const ParamVars& p);

struct RegionVars {
  Var depth;   ///< (rows*patch_h) x (cols*patch_w) refined depth
  Var normal;  ///< one row per region pixel, raw coarse + offset (not renormalized)
};

/// Full differentiable refinement of a contiguous patch grid: crops, cell
/// embedding, all blocks, heads, unshuffle into one region, and the coarse
/// priors added back.
RegionVars refine_region(GradRecord& rec, const ParamVars& p, const Architecture& arch, const RefineInput& input,
                         const PatchSet& set);

}  // namespace ad

// Plain evaluation entry points (no gradient tracking).

TokenBatch embed_patches(std::span<const PatchCrop> crops, const PatchSet& set, const ModelParams& params);
TokenBatch intra_attention(const TokenBatch& batch, const ModelParams& params, int block);
TokenBatch cross_attention(const TokenBatch& batch, const ModelParams& params, int block);
Mat forward(const TokenBatch& batch, const ModelParams& params);

struct OffsetMaps {
  std::vector<DepthMap> depth;
  std::vector<NormalMap> normal;
};

/// Reshapes per-token head outputs into patch-sized maps: output channel
/// k*c^2 + dy*c + dx of the token at cell (gy, gx) lands at pixel
/// (gy*c + dy, gx*c + dx) of channel k.
OffsetMaps unshuffle(const Mat& depth_head, const Mat& normal_head, int patches, int grid_h, int grid_w, int cell);
OffsetMaps predict_offsets(const Mat& features, const ModelParams& params, int patches, int grid_h, int grid_w);

/// Flat gather indices that place per-token head channels of contiguous
/// patches into one region map (row-major, `channels` interleaved per pixel
/// when channels > 1 so the result is (pixels x channels)).
std::vector<Index> region_unshuffle_index(const PatchSet& set, int cell, int channels);

struct RefinedCrop {
  DepthMap depth;
  NormalMap normal;
};

inline constexpr double kNormalFloor = 1e-8;

/// Depth: coarse + offset. Normal: coarse + offset renormalized per pixel;
/// where the sum's norm is below 1e-8, or the offset is exactly zero, the
/// coarse normal is kept as is.
RefinedCrop refine(const DepthMap& coarse_depth, const NormalMap& coarse_normal, const DepthMap& depth_offset,
                   const NormalMap& normal_offset);

/// Full refinement of one patch set in a single forward pass.
std::vector<RefinedCrop> refine_patches(const RefineInput& input, const PatchSet& set, const ModelParams& params);

}  // namespace patchgeo
