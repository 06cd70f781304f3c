#include "patchgeo/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <map>
#include <numbers>
#include <sstream>
#include <vector>

namespace patchgeo {

namespace {

bool is_valid(const Mask& mask, Index r, Index c) { return mask.size() == 0 || mask(r, c); }

DepthMap convolve_rows(const DepthMap& in, const std::vector<double>& k) {
  const Index rad = static_cast<Index>(k.size() / 2);
  DepthMap out(in.rows(), in.cols());
  for (Index r = 0; r < in.rows(); ++r) {
    for (Index c = 0; c < in.cols(); ++c) {
      double acc = 0.0;
      for (Index j = -rad; j <= rad; ++j) {
        acc += k[static_cast<std::size_t>(j + rad)] * in(r, std::clamp<Index>(c + j, 0, in.cols() - 1));
      }
      out(r, c) = acc;
    }
  }
  return out;
}

DepthMap convolve_cols(const DepthMap& in, const std::vector<double>& k) {
  const Index rad = static_cast<Index>(k.size() / 2);
  DepthMap out(in.rows(), in.cols());
  for (Index r = 0; r < in.rows(); ++r) {
    for (Index c = 0; c < in.cols(); ++c) {
      double acc = 0.0;
      for (Index j = -rad; j <= rad; ++j) {
        acc += k[static_cast<std::size_t>(j + rad)] * in(std::clamp<Index>(r + j, 0, in.rows() - 1), c);
      }
      out(r, c) = acc;
    }
  }
  return out;
}

// 1-D squared distance transform of a sampled function (lower envelope of parabolas).
void edt_1d(const std::vector<double>& f, std::vector<double>& d) {
  const std::size_t n = f.size();
  std::vector<std::size_t> v(n);
  std::vector<double> z(n + 1);
  std::size_t k = 0;
  v[0] = 0;
  z[0] = -std::numeric_limits<double>::infinity();
  z[1] = std::numeric_limits<double>::infinity();
  for (std::size_t q = 1; q < n; ++q) {
    const auto qd = static_cast<double>(q);
    double s = 0.0;
    while (true) {
      const auto vk = static_cast<double>(v[k]);
      s = ((f[q] + qd * qd) - (f[v[k]] + vk * vk)) / (2.0 * qd - 2.0 * vk);
      if (s <= z[k] && k > 0) {
        --k;
        continue;
      }
      break;
    }
    if (s <= z[k]) {
      // k == 0: the new parabola dominates everywhere.
      v[0] = q;
      z[0] = -std::numeric_limits<double>::infinity();
      z[1] = std::numeric_limits<double>::infinity();
      continue;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = std::numeric_limits<double>::infinity();
  }
  k = 0;
  for (std::size_t q = 0; q < n; ++q) {
    while (z[k + 1] < static_cast<double>(q)) ++k;
    const double diff = static_cast<double>(q) - static_cast<double>(v[k]);
    d[q] = diff * diff + f[v[k]];
  }
}

double median_of(std::vector<double> v) {
  const std::size_t n = v.size();
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(n / 2), v.end());
  const double upper = v[n / 2];
  if (n % 2 == 1) return upper;
  const double lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(n / 2));
  return 0.5 * (lower + upper);
}

// Mean |a - b| over one shared band of two tiles; `horizontal` = side by side.
double pair_band_error(const DepthMap& a, const PatchSpec& pa, const DepthMap& b, const PatchSpec& pb, int band,
                       bool horizontal) {
  const int overlap = horizontal ? pa.x + pa.w - pb.x : pa.y + pa.h - pb.y;
  if (overlap < band) {
    throw ContractError("consistency_error: tiles " + std::to_string(pa.index) + " and " + std::to_string(pb.index) +
                        " overlap by " + std::to_string(overlap) + " px, band needs " + std::to_string(band));
  }
  const int start = (horizontal ? pb.x : pb.y) + (overlap - band) / 2;
  double sum = 0.0;
  Index n = 0;
  if (horizontal) {
    const int y0 = std::max(pa.y, pb.y);
    const int y1 = std::min(pa.y + pa.h, pb.y + pb.h);
    for (int y = y0; y < y1; ++y) {
      for (int x = start; x < start + band; ++x) {
        sum += std::abs(a(y - pa.y, x - pa.x) - b(y - pb.y, x - pb.x));
        ++n;
      }
    }
  } else {
    const int x0 = std::max(pa.x, pb.x);
    const int x1 = std::min(pa.x + pa.w, pb.x + pb.w);
    for (int y = start; y < start + band; ++y) {
      for (int x = x0; x < x1; ++x) {
        sum += std::abs(a(y - pa.y, x - pa.x) - b(y - pb.y, x - pb.x));
        ++n;
      }
    }
  }
  return n > 0 ? sum / static_cast<double>(n) : 0.0;
}

}  // namespace

DepthMetrics depth_metrics(const DepthMap& pred, const DepthMap& gt, const Mask& mask) {
  require_same_extent(pred, gt, "depth_metrics");
  if (mask.size() != 0) require_same_extent(mask, gt, "depth_metrics mask");
  double abs_rel = 0.0;
  double sq = 0.0;
  Index within = 0;
  Index n = 0;
  for (Index r = 0; r < gt.rows(); ++r) {
    for (Index c = 0; c < gt.cols(); ++c) {
      if (!is_valid(mask, r, c)) continue;
      const double g = gt(r, c);
      const double p = pred(r, c);
      if (!(g > 0.0)) throw MetricError("depth_metrics: ground truth must be positive on valid pixels");
      abs_rel += std::abs(p - g) / g;
      sq += (p - g) * (p - g);
      if (p > 0.0 && std::max(p / g, g / p) < kDeltaThreshold) ++within;
      ++n;
    }
  }
  if (n == 0) throw MetricError("depth_metrics: empty mask");
  const double inv = 1.0 / static_cast<double>(n);
  return {abs_rel * inv, static_cast<double>(within) * inv, std::sqrt(sq * inv)};
}

int consistency_band(int patch_h) { return static_cast<int>(std::lround(270.0 * patch_h / 540.0)); }

double consistency_error(std::span<const DepthMap> tiles, const PatchSet& cover, int band) {
  if (tiles.size() != cover.size()) throw ContractError("consistency_error: tile count mismatch");
  if (band <= 0 || band > cover.patch_h || band > cover.patch_w) {
    throw ConfigError("consistency_error: band " + std::to_string(band) + " exceeds patch extent " +
                      shape_string(cover.patch_h, cover.patch_w));
  }
  double total = 0.0;
  int pairs = 0;
  for (int r = 0; r < cover.rows; ++r) {
    for (int c = 0; c < cover.cols; ++c) {
      const std::size_t i = static_cast<std::size_t>(r * cover.cols + c);
      if (c + 1 < cover.cols) {
        total += pair_band_error(tiles[i], cover.patches[i], tiles[i + 1], cover.patches[i + 1], band, true);
        ++pairs;
      }
      if (r + 1 < cover.rows) {
        const std::size_t j = i + static_cast<std::size_t>(cover.cols);
        total += pair_band_error(tiles[i], cover.patches[i], tiles[j], cover.patches[j], band, false);
        ++pairs;
      }
    }
  }
  return pairs > 0 ? total / pairs : 0.0;
}

NormalMetrics normal_metrics(const NormalMap& pred, const NormalMap& gt, const Mask& mask) {
  require_same_extent(pred, gt, "normal_metrics");
  if (mask.size() != 0) require_same_extent(mask, gt, "normal_metrics mask");
  std::vector<double> angles;
  angles.reserve(static_cast<std::size_t>(gt.rows() * gt.cols()));
  for (Index r = 0; r < gt.rows(); ++r) {
    for (Index c = 0; c < gt.cols(); ++c) {
      if (!is_valid(mask, r, c)) continue;
      const Eigen::Vector3d a = pred.at(r, c);
      const Eigen::Vector3d b = gt.at(r, c);
      // atan2 form stays accurate near 0 and 180 degrees, unlike acos.
      angles.push_back(std::atan2(a.cross(b).norm(), a.dot(b)) * 180.0 / std::numbers::pi);
    }
  }
  if (angles.empty()) throw MetricError("normal_metrics: empty mask");
  NormalMetrics m;
  double sum = 0.0;
  double sq = 0.0;
  Index below5 = 0;
  Index below11 = 0;
  Index below30 = 0;
  for (double a : angles) {
    sum += a;
    sq += a * a;
    below5 += a < 5.0;
    below11 += a < 11.25;
    below30 += a < 30.0;
  }
  const double n = static_cast<double>(angles.size());
  m.mean = sum / n;
  m.rms = std::sqrt(sq / n);
  m.pct_5 = static_cast<double>(below5) / n;
  m.pct_11_25 = static_cast<double>(below11) / n;
  m.pct_30 = static_cast<double>(below30) / n;
  m.median = median_of(std::move(angles));
  return m;
}

EdgeMap canny(const DepthMap& raster, const CannyParams& params) {
  if (!(params.low >= 0.0 && params.low < params.high)) throw ConfigError("canny: need 0 <= low < high");
  const Index h = raster.rows();
  const Index w = raster.cols();
  EdgeMap edges = EdgeMap::Zero(h, w);
  if (h == 0 || w == 0) return edges;

  const int rad = static_cast<int>(std::ceil(3.0 * params.sigma));
  std::vector<double> kernel(static_cast<std::size_t>(2 * rad + 1));
  double ksum = 0.0;
  for (int i = -rad; i <= rad; ++i) {
    const double v = std::exp(-0.5 * i * i / (params.sigma * params.sigma));
    kernel[static_cast<std::size_t>(i + rad)] = v;
    ksum += v;
  }
  for (double& v : kernel) v /= ksum;
  const DepthMap blurred = convolve_cols(convolve_rows(raster, kernel), kernel);

  const DepthMap gx = convolve_cols(convolve_rows(blurred, {-1.0, 0.0, 1.0}), {1.0, 2.0, 1.0});
  const DepthMap gy = convolve_rows(convolve_cols(blurred, {-1.0, 0.0, 1.0}), {1.0, 2.0, 1.0});
  const DepthMap mag = (gx.square() + gy.square()).sqrt();
  const double max_mag = mag.maxCoeff();
  if (!(max_mag > 0.0)) return edges;

  auto mag_at = [&](Index r, Index c) {
    return (r < 0 || c < 0 || r >= h || c >= w) ? 0.0 : mag(r, c);
  };
  DepthMap thin = DepthMap::Zero(h, w);
  for (Index r = 0; r < h; ++r) {
    for (Index c = 0; c < w; ++c) {
      const double m = mag(r, c);
      if (m <= 0.0) continue;
      double angle = std::atan2(gy(r, c), gx(r, c)) * 180.0 / std::numbers::pi;
      if (angle < 0.0) angle += 180.0;
      Index dr = 0;
      Index dc = 0;
      if (angle < 22.5 || angle >= 157.5) {
        dc = 1;
      } else if (angle < 67.5) {
        dr = 1;
        dc = 1;
      } else if (angle < 112.5) {
        dr = 1;
      } else {
        dr = 1;
        dc = -1;
      }
      // Strict on the negative side, inclusive on the positive side: a
      // symmetric ridge two pixels wide keeps exactly one pixel.
      if (m > mag_at(r - dr, c - dc) && m >= mag_at(r + dr, c + dc)) thin(r, c) = m;
    }
  }

  const double hi = params.high * max_mag;
  const double lo = params.low * max_mag;
  std::deque<std::pair<Index, Index>> queue;
  for (Index r = 0; r < h; ++r) {
    for (Index c = 0; c < w; ++c) {
      if (thin(r, c) >= hi && thin(r, c) > 0.0) {
        edges(r, c) = 1;
        queue.emplace_back(r, c);
      }
    }
  }
  while (!queue.empty()) {
    const auto [r, c] = queue.front();
    queue.pop_front();
    for (Index dr = -1; dr <= 1; ++dr) {
      for (Index dc = -1; dc <= 1; ++dc) {
        const Index rr = r + dr;
        const Index cc = c + dc;
        if (rr < 0 || cc < 0 || rr >= h || cc >= w || edges(rr, cc)) continue;
        if (thin(rr, cc) >= lo && thin(rr, cc) > 0.0) {
          edges(rr, cc) = 1;
          queue.emplace_back(rr, cc);
        }
      }
    }
  }
  return edges;
}

DepthMap distance_field(const EdgeMap& edges, double truncate) {
  const Index h = edges.rows();
  const Index w = edges.cols();
  constexpr double kFar = 1e20;
  DepthMap sq(h, w);
  std::vector<double> f(static_cast<std::size_t>(h));
  std::vector<double> d(static_cast<std::size_t>(h));
  for (Index c = 0; c < w; ++c) {
    for (Index r = 0; r < h; ++r) f[static_cast<std::size_t>(r)] = edges(r, c) ? 0.0 : kFar;
    edt_1d(f, d);
    for (Index r = 0; r < h; ++r) sq(r, c) = d[static_cast<std::size_t>(r)];
  }
  f.resize(static_cast<std::size_t>(w));
  d.resize(static_cast<std::size_t>(w));
  for (Index r = 0; r < h; ++r) {
    for (Index c = 0; c < w; ++c) f[static_cast<std::size_t>(c)] = sq(r, c);
    edt_1d(f, d);
    for (Index c = 0; c < w; ++c) sq(r, c) = d[static_cast<std::size_t>(c)];
  }
  return sq.sqrt().min(truncate);
}

DepthMap normalize_unit(const DepthMap& raster) {
  const double lo = raster.minCoeff();
  const double hi = raster.maxCoeff();
  if (!(hi > lo)) return DepthMap::Zero(raster.rows(), raster.cols());
  return (raster - lo) / (hi - lo);
}

EdgeMap boundary_edges(const DepthMap& depth, const CannyParams& params) {
  if (!depth.allFinite() || (depth <= 0.0).any()) throw MetricError("pdbe: depth must be positive");
  const EdgeMap from_depth = canny(normalize_unit(depth), params);
  const EdgeMap from_disparity = canny(normalize_unit(depth.inverse()), params);
  return from_depth.max(from_disparity);
}

PdbeResult pdbe(const DepthMap& pred_depth, const DepthMap& gt_depth, const CannyParams& params) {
  require_same_extent(pred_depth, gt_depth, "pdbe");
  const EdgeMap e_pred = boundary_edges(pred_depth, params);
  const EdgeMap e_gt = boundary_edges(gt_depth, params);
  const DepthMap t_pred = distance_field(e_pred);
  const DepthMap t_gt = distance_field(e_gt);
  PdbeResult out;
  const double n_gt = e_gt.cast<double>().sum();
  const double n_pred = e_pred.cast<double>().sum();
  out.gt_no_edges = n_gt == 0.0;
  out.pred_no_edges = n_pred == 0.0;
  if (!out.gt_no_edges) out.accuracy = (t_pred * e_gt.cast<double>()).sum() / n_gt;
  if (!out.pred_no_edges) out.completeness = (t_gt * e_pred.cast<double>()).sum() / n_pred;
  return out;
}

std::string MetricReport::to_text() const {
  std::ostringstream os;
  os.precision(10);
  os << "absrel=" << absrel << '\n'
     << "delta1=" << delta1 << '\n'
     << "rmse=" << rmse << '\n'
     << "ce=" << ce << '\n'
     << "pdbe_acc=" << pdbe_acc << '\n'
     << "pdbe_compl=" << pdbe_compl << '\n'
     << "normal_mean=" << normal_mean << '\n'
     << "normal_median=" << normal_median << '\n'
     << "normal_rms=" << normal_rms << '\n'
     << "pct_5=" << pct_5 << '\n'
     << "pct_11_25=" << pct_11_25 << '\n'
     << "pct_30=" << pct_30 << '\n'
     << "frames=" << frames << '\n'
     << "pdbe_no_edge_frames=" << pdbe_no_edge_frames << '\n';
  return os.str();
}

MetricReport MetricReport::from_text(const std::string& text) {
  std::map<std::string, double*> fields;
  MetricReport m;
  fields["absrel"] = &m.absrel;
  fields["delta1"] = &m.delta1;
  fields["rmse"] = &m.rmse;
  fields["ce"] = &m.ce;
  fields["pdbe_acc"] = &m.pdbe_acc;
  fields["pdbe_compl"] = &m.pdbe_compl;
  fields["normal_mean"] = &m.normal_mean;
  fields["normal_median"] = &m.normal_median;
  fields["normal_rms"] = &m.normal_rms;
  fields["pct_5"] = &m.pct_5;
  fields["pct_11_25"] = &m.pct_11_25;
  fields["pct_30"] = &m.pct_30;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq);
    const double value = std::stod(line.substr(eq + 1));
    if (key == "frames") {
      m.frames = static_cast<int>(value);
    } else if (key == "pdbe_no_edge_frames") {
      m.pdbe_no_edge_frames = static_cast<int>(value);
    } else if (auto it = fields.find(key); it != fields.end()) {
      *it->second = value;
    } else {
      throw ConfigError("unknown metric key '" + key + "'");
    }
  }
  return m;
}

bool MetricReport::all_finite() const {
  for (double v : {absrel, delta1, rmse, ce, pdbe_acc, pdbe_compl, normal_mean, normal_median, normal_rms, pct_5,
                   pct_11_25, pct_30}) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace patchgeo
