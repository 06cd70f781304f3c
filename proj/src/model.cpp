#include "patchgeo/model.hpp"

#include <cmath>
#include <memory>

namespace patchgeo {

namespace {

constexpr double kRopeBase = 10000.0;
constexpr double kInitStd = 0.02;

std::string block_name(int b, const char* leaf) { return "blocks." + std::to_string(b) + "." + leaf; }

Mat truncated_normal(Index rows, Index cols, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Mat m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) {
    double z = dist(rng);
    while (std::abs(z) > 2.0) z = dist(rng);
    m.data()[i] = z * stddev;
  }
  return m;
}

struct Shape {
  std::string name;
  Index rows;
  Index cols;
  enum class Init { random, zero, one } init;
};

std::vector<Shape> parameter_shapes(const Architecture& a) {
  const Index d = a.width;
  const Index c2 = static_cast<Index>(a.cell) * a.cell;
  const Index hidden = d * a.mlp_ratio;
  using I = Shape::Init;
  std::vector<Shape> s = {
      {"embed.rgb.weight", 3 * c2, d, I::random},    {"embed.rgb.bias", 1, d, I::zero},
      {"embed.depth.weight", c2, d, I::random},      {"embed.depth.bias", 1, d, I::zero},
      {"embed.normal.weight", 3 * c2, d, I::random}, {"embed.normal.bias", 1, d, I::zero},
      {"head.depth.weight", d, c2, I::zero},         {"head.depth.bias", 1, c2, I::zero},
      {"head.normal.weight", d, 3 * c2, I::zero},    {"head.normal.bias", 1, 3 * c2, I::zero},
  };
  for (int b = 0; b < a.blocks; ++b) {
    s.push_back({block_name(b, "ln1.gain"), 1, d, I::one});
    s.push_back({block_name(b, "ln1.bias"), 1, d, I::zero});
    s.push_back({block_name(b, "attn.wq"), d, d, I::random});
    s.push_back({block_name(b, "attn.bq"), 1, d, I::zero});
    s.push_back({block_name(b, "attn.wk"), d, d, I::random});
    s.push_back({block_name(b, "attn.bk"), 1, d, I::zero});
    s.push_back({block_name(b, "attn.wv"), d, d, I::random});
    s.push_back({block_name(b, "attn.bv"), 1, d, I::zero});
    s.push_back({block_name(b, "attn.wo"), d, d, I::zero});
    s.push_back({block_name(b, "attn.bo"), 1, d, I::zero});
    s.push_back({block_name(b, "ln2.gain"), 1, d, I::one});
    s.push_back({block_name(b, "ln2.bias"), 1, d, I::zero});
    s.push_back({block_name(b, "mlp.w1"), d, hidden, I::random});
    s.push_back({block_name(b, "mlp.b1"), 1, hidden, I::zero});
    s.push_back({block_name(b, "mlp.w2"), hidden, d, I::zero});
    s.push_back({block_name(b, "mlp.b2"), 1, d, I::zero});
  }
  return s;
}

const Var& param(const ParamVars& p, const std::string& name) {
  auto it = p.find(name);
  if (it == p.end()) throw ContractError("missing model parameter '" + name + "'");
  return it->second;
}

void check_segments(const Segments& segments, Index n) {
  for (const auto& [start, len] : segments) {
    if (start < 0 || len <= 0 || start + len > n) {
      throw ContractError("attention segment [" + std::to_string(start) + ", " + std::to_string(start + len) +
                          ") outside " + std::to_string(n) + " tokens");
    }
  }
}

// Per-head slices of q and k rotated once, shared by every segment.
struct RotatedHead {
  Mat q;
  Mat k;
};

RotatedHead rotate_head(const Mat& q, const Mat& k, const Coords& coords, int h, int dh) {
  return {rope_apply(q.middleCols(h * dh, dh), coords), rope_apply(k.middleCols(h * dh, dh), coords)};
}

}  // namespace

// ---------------------------------------------------------------------------
// Architecture / parameters
// ---------------------------------------------------------------------------

std::string to_string(AttentionLayout layout) {
  return layout == AttentionLayout::alternating ? "alternating" : "intra_only";
}

std::string to_string(RopeFrame frame) { return frame == RopeFrame::global ? "global" : "local"; }

AttentionLayout parse_attention_layout(const std::string& text) {
  if (text == "alternating") return AttentionLayout::alternating;
  if (text == "intra_only") return AttentionLayout::intra_only;
  throw ConfigError("unknown attention layout '" + text + "' (alternating | intra_only)");
}

RopeFrame parse_rope_frame(const std::string& text) {
  if (text == "global") return RopeFrame::global;
  if (text == "local") return RopeFrame::local;
  throw ConfigError("unknown rope frame '" + text + "' (global | local)");
}

void Architecture::validate() const {
  if (blocks < 0 || width <= 0 || heads <= 0 || cell <= 0 || mlp_ratio <= 0) {
    throw ConfigError("architecture sizes must be positive (blocks may be 0)");
  }
  if (width % heads != 0) {
    throw ConfigError("width " + std::to_string(width) + " not divisible by heads " + std::to_string(heads));
  }
  if (head_dim() % 4 != 0) {
    throw ConfigError("per-head width " + std::to_string(head_dim()) + " not divisible by 4 (axial RoPE pairs)");
  }
}

ModelParams ModelParams::initialize(const Architecture& arch, Rng& rng) {
  arch.validate();
  ModelParams p;
  p.arch = arch;
  for (const auto& s : parameter_shapes(arch)) {
    switch (s.init) {
      case Shape::Init::random: p.weights[s.name] = truncated_normal(s.rows, s.cols, kInitStd, rng); break;
      case Shape::Init::zero: p.weights[s.name] = Mat::Zero(s.rows, s.cols); break;
      case Shape::Init::one: p.weights[s.name] = Mat::Ones(s.rows, s.cols); break;
    }
  }
  return p;
}

ModelParams ModelParams::randomized(const Architecture& arch, Rng& rng, double stddev) {
  arch.validate();
  ModelParams p;
  p.arch = arch;
  std::normal_distribution<double> dist(0.0, stddev);
  for (const auto& s : parameter_shapes(arch)) {
    Mat m(s.rows, s.cols);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng) + (s.init == Shape::Init::one ? 1.0 : 0.0);
    p.weights[s.name] = std::move(m);
  }
  return p;
}

const Mat& ModelParams::at(const std::string& name) const {
  auto it = weights.find(name);
  if (it == weights.end()) throw ContractError("missing model parameter '" + name + "'");
  return it->second;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [_, m] : weights) n += static_cast<std::size_t>(m.size());
  return n;
}

ParamVars register_params(GradRecord& rec, const ModelParams& params) {
  ParamVars vars;
  for (const auto& [name, value] : params.weights) vars[name] = rec.parameter(name, value);
  return vars;
}

// ---------------------------------------------------------------------------
// Tokens and positions
// ---------------------------------------------------------------------------

CellInputs unfold_cells(std::span<const PatchCrop> crops, int cell) {
  if (crops.empty()) throw ContractError("unfold_cells: no crops");
  const Index h = crops[0].depth.rows();
  const Index w = crops[0].depth.cols();
  if (cell <= 0 || h % cell != 0 || w % cell != 0) {
    throw ConfigError("crop " + shape_string(h, w) + " not divisible by cell size " + std::to_string(cell));
  }
  CellInputs out;
  out.patches = static_cast<int>(crops.size());
  out.grid_h = static_cast<int>(h / cell);
  out.grid_w = static_cast<int>(w / cell);
  const Index t = out.tokens_per_patch();
  const Index n = t * out.patches;
  const Index c2 = static_cast<Index>(cell) * cell;
  out.rgb.resize(n, 3 * c2);
  out.depth.resize(n, c2);
  out.normal.resize(n, 3 * c2);
  for (int p = 0; p < out.patches; ++p) {
    const auto& crop = crops[static_cast<std::size_t>(p)];
    if (crop.depth.rows() != h || crop.depth.cols() != w) throw DimensionError("unfold_cells: crops differ in size");
    for (int gy = 0; gy < out.grid_h; ++gy) {
      for (int gx = 0; gx < out.grid_w; ++gx) {
        const Index row = p * t + gy * out.grid_w + gx;
        for (int dy = 0; dy < cell; ++dy) {
          for (int dx = 0; dx < cell; ++dx) {
            const Index py = gy * cell + dy;
            const Index px = gx * cell + dx;
            const Index j = dy * cell + dx;
            out.depth(row, j) = crop.depth(py, px);
            for (int k = 0; k < 3; ++k) {
              out.rgb(row, k * c2 + j) = crop.rgb.ch[k](py, px);
              out.normal(row, k * c2 + j) = crop.normal.ch[k](py, px);
            }
          }
        }
      }
    }
  }
  return out;
}

Coords token_coords(const PatchSet& set, int cell, RopeFrame frame) {
  if (set.patch_h % cell != 0 || set.patch_w % cell != 0) {
    throw ConfigError("patch " + shape_string(set.patch_h, set.patch_w) + " not divisible by cell size " +
                      std::to_string(cell));
  }
  const int gh = set.patch_h / cell;
  const int gw = set.patch_w / cell;
  Coords coords(static_cast<Index>(set.size()) * gh * gw, 2);
  Index row = 0;
  for (const auto& p : set.patches) {
    const int ox = frame == RopeFrame::global ? p.x : 0;
    const int oy = frame == RopeFrame::global ? p.y : 0;
    for (int gy = 0; gy < gh; ++gy) {
      for (int gx = 0; gx < gw; ++gx) {
        coords(row, 0) = ox + gx * cell;
        coords(row, 1) = oy + gy * cell;
        ++row;
      }
    }
  }
  return coords;
}

Mat rope_apply(const Mat& x, const Coords& coords, bool inverse) {
  const Index dh = x.cols();
  if (dh % 4 != 0) {
    throw ConfigError("rope: width " + std::to_string(dh) + " gives an odd number of rotation pairs per axis");
  }
  if (coords.rows() != x.rows()) {
    throw DimensionError("rope: " + std::to_string(x.rows()) + " rows vs " + std::to_string(coords.rows()) +
                         " coordinates");
  }
  const Index half = dh / 2;
  const Index pairs = half / 2;
  const double sign = inverse ? -1.0 : 1.0;
  Eigen::VectorXd theta(pairs);
  for (Index j = 0; j < pairs; ++j) {
    theta(j) = std::pow(kRopeBase, -2.0 * static_cast<double>(j) / static_cast<double>(half));
  }
  Mat out(x.rows(), dh);
  for (Index r = 0; r < x.rows(); ++r) {
    for (Index axis = 0; axis < 2; ++axis) {
      const double pos = coords(r, axis);
      for (Index j = 0; j < pairs; ++j) {
        const double angle = sign * theta(j) * pos;
        const double cs = std::cos(angle);
        const double sn = std::sin(angle);
        const Index c0 = axis * half + 2 * j;
        const double a = x(r, c0);
        const double b = x(r, c0 + 1);
        out(r, c0) = a * cs - b * sn;
        out(r, c0 + 1) = a * sn + b * cs;
      }
    }
  }
  return out;
}

Segments intra_segments(int patches, int tokens_per_patch) {
  Segments s;
  for (int p = 0; p < patches; ++p) s.emplace_back(static_cast<Index>(p) * tokens_per_patch, tokens_per_patch);
  return s;
}

Segments cross_segments(int patches, int tokens_per_patch) {
  return {{0, static_cast<Index>(patches) * tokens_per_patch}};
}

// ---------------------------------------------------------------------------
// Attention
// ---------------------------------------------------------------------------

Mat multi_head_attention(const Mat& q, const Mat& k, const Mat& v, const Coords& coords, const Segments& segments,
                         int heads, std::vector<Mat>* weights) {
  if (q.rows() != k.rows() || q.rows() != v.rows() || q.cols() != k.cols() || q.cols() != v.cols()) {
    throw DimensionError("attention: q " + shape_string(q.rows(), q.cols()) + ", k " +
                         shape_string(k.rows(), k.cols()) + ", v " + shape_string(v.rows(), v.cols()));
  }
  if (heads <= 0 || q.cols() % heads != 0) throw ConfigError("attention: width not divisible by heads");
  check_segments(segments, q.rows());
  const int dh = static_cast<int>(q.cols()) / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Mat out = Mat::Zero(q.rows(), q.cols());
  if (weights) weights->clear();
  for (int h = 0; h < heads; ++h) {
    const RotatedHead rh = rotate_head(q, k, coords, h, dh);
    for (const auto& [start, len] : segments) {
      const Mat logits = rh.q.middleRows(start, len) * rh.k.middleRows(start, len).transpose() * scale;
      Mat a = softmax_rows(logits);
      out.block(start, static_cast<Index>(h) * dh, len, dh) = a * v.block(start, static_cast<Index>(h) * dh, len, dh);
      if (weights) weights->push_back(std::move(a));
    }
  }
  return out;
}

namespace ad {

Var attention(const Var& q, const Var& k, const Var& v, Coords coords, Segments segments, int heads) {
  auto cache = std::make_shared<std::vector<Mat>>();
  auto pos = std::make_shared<const Coords>(std::move(coords));
  auto segs = std::make_shared<const Segments>(std::move(segments));
  return q.record()->record(
      "attention", {q, k, v},
      [=](const GradRecord& r) {
        return multi_head_attention(r.value(q), r.value(k), r.value(v), *pos, *segs, heads,
                                    r.tracking() ? cache.get() : nullptr);
      },
      [=](GradRecord& r, const Mat& g) {
        const Mat& qv = r.value(q);
        const Mat& kv = r.value(k);
        const Mat& vv = r.value(v);
        const int dh = static_cast<int>(qv.cols()) / heads;
        const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
        Mat dq = Mat::Zero(qv.rows(), qv.cols());
        Mat dk = Mat::Zero(kv.rows(), kv.cols());
        Mat dv = Mat::Zero(vv.rows(), vv.cols());
        std::size_t slot = 0;
        for (int h = 0; h < heads; ++h) {
          const RotatedHead rh = rotate_head(qv, kv, *pos, h, dh);
          Mat dqr = Mat::Zero(qv.rows(), dh);
          Mat dkr = Mat::Zero(kv.rows(), dh);
          const Index col = static_cast<Index>(h) * dh;
          for (const auto& [start, len] : *segs) {
            const Mat& a = (*cache)[slot++];
            const auto go = g.block(start, col, len, dh);
            dv.block(start, col, len, dh) += a.transpose() * go;
            const Mat da = go * vv.block(start, col, len, dh).transpose();
            const Eigen::VectorXd inner = da.cwiseProduct(a).rowwise().sum();
            const Mat ds = a.cwiseProduct(Mat(da.colwise() - inner)) * scale;
            dqr.middleRows(start, len) += ds * rh.k.middleRows(start, len);
            dkr.middleRows(start, len) += ds.transpose() * rh.q.middleRows(start, len);
          }
          dq.middleCols(col, dh) = rope_apply(dqr, *pos, true);
          dk.middleCols(col, dh) = rope_apply(dkr, *pos, true);
        }
        if (r.needs_grad(q)) r.accumulate(q, dq);
        if (r.needs_grad(k)) r.accumulate(k, dk);
        if (r.needs_grad(v)) r.accumulate(v, dv);
      });
}

Var embed(GradRecord& rec, const ParamVars& p, const CellInputs& cells) {
  auto project = [&](const Mat& x, const char* w, const char* b) {
    return add_rowwise(matmul(rec.constant(x), param(p, w)), param(p, b));
  };
  const Var rgb = project(cells.rgb, "embed.rgb.weight", "embed.rgb.bias");
  const Var depth = project(cells.depth, "embed.depth.weight", "embed.depth.bias");
  const Var normal = project(cells.normal, "embed.normal.weight", "embed.normal.bias");
  return add(add(rgb, depth), normal);
}

Var attention_block(const Var& x, const ParamVars& p, const Architecture& arch, int block, const Coords& coords,
                    const Segments& segments) {
  auto pn = [&](const char* leaf) -> const Var& { return param(p, block_name(block, leaf)); };
  const Var h = layer_norm(x, pn("ln1.gain"), pn("ln1.bias"));
  const Var q = add_rowwise(matmul(h, pn("attn.wq")), pn("attn.bq"));
  const Var k = add_rowwise(matmul(h, pn("attn.wk")), pn("attn.bk"));
  const Var v = add_rowwise(matmul(h, pn("attn.wv")), pn("attn.bv"));
  const Var a = attention(q, k, v, coords, segments, arch.heads);
  return add(x, add_rowwise(matmul(a, pn("attn.wo")), pn("attn.bo")));
}

Var mlp_block(const Var& x, const ParamVars& p, int block) {
  auto pn = [&](const char* leaf) -> const Var& { return param(p, block_name(block, leaf)); };
  const Var h = layer_norm(x, pn("ln2.gain"), pn("ln2.bias"));
  const Var hidden = gelu(add_rowwise(matmul(h, pn("mlp.w1")), pn("mlp.b1")));
  return add(x, add_rowwise(matmul(hidden, pn("mlp.w2")), pn("mlp.b2")));
}

Var forward(const Var& tokens, const ParamVars& p, const Architecture& arch, const Coords& coords, int patches,
            int tokens_per_patch) {
  const Segments intra = intra_segments(patches, tokens_per_patch);
  const Segments cross = cross_segments(patches, tokens_per_patch);
  Var x = tokens;
  for (int b = 0; b < arch.blocks; ++b) {
    x = attention_block(x, p, arch, b, coords, arch.cross_block(b) ? cross : intra);
    x = mlp_block(x, p, b);
  }
  return x;
}

std::pair<Var, Var> heads(const Var& features, const ParamVars& p) {
  const Var depth = add_rowwise(matmul(features, param(p, "head.depth.weight")), param(p, "head.depth.bias"));
  const Var normal = add_rowwise(matmul(features, param(p, "head.normal.weight")), param(p, "head.normal.bias"));
  return {depth, normal};
}

RegionVars refine_region(GradRecord& rec, const ParamVars& p, const Architecture& arch, const RefineInput& input,
                         const PatchSet& set) {
  const int cell = arch.cell;
  const auto crops = extract(input, set);
  const CellInputs cells = unfold_cells(crops, cell);
  const Coords coords = token_coords(set, cell, arch.rope);
  const Var features = forward(embed(rec, p, cells), p, arch, coords, cells.patches, cells.tokens_per_patch());
  const auto [depth_head, normal_head] = heads(features, p);

  const PatchSpec& origin = set.patches.front();
  const Index rh = static_cast<Index>(set.rows) * set.patch_h;
  const Index rw = static_cast<Index>(set.cols) * set.patch_w;
  const Var depth_offset = gather(depth_head, region_unshuffle_index(set, cell, 1), rh, rw);
  const Var normal_offset = gather(normal_head, region_unshuffle_index(set, cell, 3), rh * rw, 3);
  const Mat coarse_depth = input.coarse_depth.block(origin.y, origin.x, rh, rw).matrix();
  Mat coarse_normal(rh * rw, 3);
  for (Index r = 0; r < rh; ++r) {
    for (Index c = 0; c < rw; ++c) {
      coarse_normal.row(r * rw + c) = input.coarse_normal.at(origin.y + r, origin.x + c).transpose();
    }
  }
  return {add_constant(depth_offset, coarse_depth), add_constant(normal_offset, coarse_normal)};
}

}  // namespace ad

// ---------------------------------------------------------------------------
// Plain entry points
// ---------------------------------------------------------------------------

TokenBatch embed_patches(std::span<const PatchCrop> crops, const PatchSet& set, const ModelParams& params) {
  GradRecord rec(false);
  const ParamVars p = register_params(rec, params);
  const CellInputs cells = unfold_cells(crops, params.arch.cell);
  TokenBatch batch;
  batch.tokens = ad::embed(rec, p, cells).value();
  batch.coords = token_coords(set, params.arch.cell, params.arch.rope);
  batch.patches = cells.patches;
  batch.tokens_per_patch = cells.tokens_per_patch();
  return batch;
}

namespace {

TokenBatch attention_only(const TokenBatch& batch, const ModelParams& params, int block, const Segments& segments) {
  GradRecord rec(false);
  const ParamVars p = register_params(rec, params);
  TokenBatch out = batch;
  out.tokens = ad::attention_block(rec.constant(batch.tokens), p, params.arch, block, batch.coords, segments).value();
  return out;
}

}  // namespace

TokenBatch intra_attention(const TokenBatch& batch, const ModelParams& params, int block) {
  return attention_only(batch, params, block, intra_segments(batch.patches, batch.tokens_per_patch));
}

TokenBatch cross_attention(const TokenBatch& batch, const ModelParams& params, int block) {
  return attention_only(batch, params, block, cross_segments(batch.patches, batch.tokens_per_patch));
}

Mat forward(const TokenBatch& batch, const ModelParams& params) {
  GradRecord rec(false);
  const ParamVars p = register_params(rec, params);
  return ad::forward(rec.constant(batch.tokens), p, params.arch, batch.coords, batch.patches, batch.tokens_per_patch)
      .value();
}

OffsetMaps unshuffle(const Mat& depth_head, const Mat& normal_head, int patches, int grid_h, int grid_w, int cell) {
  const Index c2 = static_cast<Index>(cell) * cell;
  const Index t = static_cast<Index>(grid_h) * grid_w;
  if (depth_head.rows() != patches * t || depth_head.cols() != c2 || normal_head.rows() != patches * t ||
      normal_head.cols() != 3 * c2) {
    throw DimensionError("unshuffle: head outputs " + shape_string(depth_head.rows(), depth_head.cols()) + " / " +
                         shape_string(normal_head.rows(), normal_head.cols()) + " for " + std::to_string(patches) +
                         " patches of " + std::to_string(t) + " tokens");
  }
  OffsetMaps out;
  const Index h = static_cast<Index>(grid_h) * cell;
  const Index w = static_cast<Index>(grid_w) * cell;
  for (int p = 0; p < patches; ++p) {
    DepthMap d(h, w);
    NormalMap n(h, w);
    for (int gy = 0; gy < grid_h; ++gy) {
      for (int gx = 0; gx < grid_w; ++gx) {
        const Index row = p * t + gy * grid_w + gx;
        for (int dy = 0; dy < cell; ++dy) {
          for (int dx = 0; dx < cell; ++dx) {
            const Index j = dy * cell + dx;
            d(gy * cell + dy, gx * cell + dx) = depth_head(row, j);
            for (int k = 0; k < 3; ++k) n.ch[k](gy * cell + dy, gx * cell + dx) = normal_head(row, k * c2 + j);
          }
        }
      }
    }
    out.depth.push_back(std::move(d));
    out.normal.push_back(std::move(n));
  }
  return out;
}

OffsetMaps predict_offsets(const Mat& features, const ModelParams& params, int patches, int grid_h, int grid_w) {
  GradRecord rec(false);
  const ParamVars p = register_params(rec, params);
  const auto [depth, normal] = ad::heads(rec.constant(features), p);
  return unshuffle(depth.value(), normal.value(), patches, grid_h, grid_w, params.arch.cell);
}

std::vector<Index> region_unshuffle_index(const PatchSet& set, int cell, int channels) {
  for (const auto& p : set.patches) {
    const int r = p.index / set.cols;
    const int c = p.index % set.cols;
    if (p.x != set.patches[0].x + c * set.patch_w || p.y != set.patches[0].y + r * set.patch_h) {
      throw ContractError("region_unshuffle_index: patches are not a contiguous grid");
    }
  }
  const Index ph = set.patch_h;
  const Index pw = set.patch_w;
  const Index gw = pw / cell;
  const Index t = (ph / cell) * gw;
  const Index c2 = static_cast<Index>(cell) * cell;
  const Index width = channels * c2;
  const Index region_h = ph * set.rows;
  const Index region_w = pw * set.cols;
  std::vector<Index> index;
  index.reserve(static_cast<std::size_t>(region_h * region_w * channels));
  for (Index r = 0; r < region_h; ++r) {
    for (Index c = 0; c < region_w; ++c) {
      const Index patch = (r / ph) * set.cols + c / pw;
      const Index ly = r % ph;
      const Index lx = c % pw;
      const Index token = patch * t + (ly / cell) * gw + lx / cell;
      const Index j = (ly % cell) * cell + lx % cell;
      for (int k = 0; k < channels; ++k) index.push_back(token * width + k * c2 + j);
    }
  }
  return index;
}

RefinedCrop refine(const DepthMap& coarse_depth, const NormalMap& coarse_normal, const DepthMap& depth_offset,
                   const NormalMap& normal_offset) {
  require_same_extent(coarse_depth, depth_offset, "refine depth");
  require_same_extent(coarse_normal, normal_offset, "refine normal");
  require_same_extent(coarse_normal, coarse_depth, "refine coarse");
  RefinedCrop out;
  out.depth = coarse_depth + depth_offset;
  out.normal = NormalMap(coarse_normal.rows(), coarse_normal.cols());
  for (Index r = 0; r < coarse_normal.rows(); ++r) {
    for (Index c = 0; c < coarse_normal.cols(); ++c) {
      const Eigen::Vector3d base = coarse_normal.at(r, c);
      const Eigen::Vector3d off = normal_offset.at(r, c);
      if (off.isZero(0.0)) {
        out.normal.set(r, c, base);
        continue;
      }
      const Eigen::Vector3d s = base + off;
      const double n = s.norm();
      out.normal.set(r, c, n < kNormalFloor ? base : Eigen::Vector3d(s / n));
    }
  }
  return out;
}

std::vector<RefinedCrop> refine_patches(const RefineInput& input, const PatchSet& set, const ModelParams& params) {
  const auto crops = extract(input, set);
  GradRecord rec(false);
  const ParamVars p = register_params(rec, params);
  const CellInputs cells = unfold_cells(crops, params.arch.cell);
  const Coords coords = token_coords(set, params.arch.cell, params.arch.rope);
  const Var tokens = ad::embed(rec, p, cells);
  const Var features = ad::forward(tokens, p, params.arch, coords, cells.patches, cells.tokens_per_patch());
  const auto [depth_head, normal_head] = ad::heads(features, p);
  const OffsetMaps off =
      unshuffle(depth_head.value(), normal_head.value(), cells.patches, cells.grid_h, cells.grid_w, params.arch.cell);
  std::vector<RefinedCrop> out;
  out.reserve(crops.size());
  for (std::size_t i = 0; i < crops.size(); ++i) {
    out.push_back(refine(crops[i].depth, crops[i].normal, off.depth[i], off.normal[i]));
  }
  return out;
}

}  // namespace patchgeo
