#include "patchgeo/synthscene.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <random>

#include "patchgeo/supervision.hpp"

namespace patchgeo {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Hit {
  double t = kInf;
  Eigen::Vector3d normal = Eigen::Vector3d::UnitZ();  // reported frame: normal.dot(direction) > 0
  int surface = -1;
};

// Sign so the normal points away from the camera along the ray, matching
// the reported-normal convention.
Eigen::Vector3d orient(Eigen::Vector3d n, const Eigen::Vector3d& d) {
  n.normalize();
  return n.dot(d) < 0.0 ? Eigen::Vector3d(-n) : n;
}

double plane_t(double z0, double a, double b, double xc, double yc, const Eigen::Vector3d& o,
               const Eigen::Vector3d& d) {
  const double denom = 1.0 - a * d.x() - b * d.y();
  if (!(denom > 0.0)) return kInf;
  return (z0 + a * (o.x() - xc) + b * (o.y() - yc)) / denom;
}

void intersect(const Sphere& s, const Eigen::Vector3d& o, const Eigen::Vector3d& d, int id, Hit& best) {
  const Eigen::Vector3d oc = o - s.center;
  const double qa = d.squaredNorm();
  const double qb = 2.0 * d.dot(oc);
  const double qc = oc.squaredNorm() - s.radius * s.radius;
  const double disc = qb * qb - 4.0 * qa * qc;
  if (disc < 0.0) return;
  const double t = (-qb - std::sqrt(disc)) / (2.0 * qa);
  if (t <= 0.0 || t >= best.t) return;
  best = {t, orient(o + t * d - s.center, d), id};
}

void intersect(const Box& box, const Eigen::Vector3d& o, const Eigen::Vector3d& d, int id, Hit& best) {
  double t_enter = -kInf;
  double t_exit = kInf;
  int axis = -1;
  for (int i = 0; i < 3; ++i) {
    const double lo = box.center(i) - box.half_extents(i);
    const double hi = box.center(i) + box.half_extents(i);
    if (d(i) == 0.0) {
      if (o(i) < lo || o(i) > hi) return;
      continue;
    }
    double t0 = (lo - o(i)) / d(i);
    double t1 = (hi - o(i)) / d(i);
    if (t0 > t1) std::swap(t0, t1);
    if (t0 > t_enter) {
      t_enter = t0;
      axis = i;
    }
    t_exit = std::min(t_exit, t1);
  }
  if (axis < 0 || t_enter > t_exit || t_enter <= 0.0 || t_enter >= best.t) return;
  Eigen::Vector3d n = Eigen::Vector3d::Zero();
  n(axis) = 1.0;
  best = {t_enter, orient(n, d), id};
}

void intersect(const PlanePatch& p, const Eigen::Vector3d& o, const Eigen::Vector3d& d, int id, Hit& best) {
  const double t = plane_t(p.center.z(), p.a, p.b, p.center.x(), p.center.y(), o, d);
  if (t <= 0.0 || t >= best.t) return;
  const Eigen::Vector3d x = o + t * d;
  if (std::abs(x.x() - p.center.x()) > p.half_x || std::abs(x.y() - p.center.y()) > p.half_y) return;
  best = {t, orient({-p.a, -p.b, 1.0}, d), id};
}

struct Albedo {
  Eigen::Vector3d base;
  double fx = 1.0;
  double fy = 1.0;
  double fz = 1.0;
  double px = 0.0;
  double py = 0.0;

  Eigen::Vector3d at(const Eigen::Vector3d& x) const {
    return base * (0.85 + 0.15 * std::sin(fx * x.x() + px) * std::sin(fy * x.y() + fz * x.z() + py));
  }
};

Albedo make_albedo(std::uint64_t seed, int surface) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(surface + 1)};
  Rng rng(seq);
  std::uniform_real_distribution<double> color(0.35, 0.9);
  std::uniform_real_distribution<double> freq(1.0, 4.0);
  std::uniform_real_distribution<double> phase(0.0, 6.283185307179586);
  Albedo a;
  a.base = {color(rng), color(rng), color(rng)};
  a.fx = freq(rng);
  a.fy = freq(rng);
  a.fz = freq(rng);
  a.px = phase(rng);
  a.py = phase(rng);
  return a;
}

// One axis of the area-average/bilinear round trip: `low` holds block means,
// output sample u sits at low-resolution coordinate (u + 0.5) / s - 0.5.
double lerp_extrapolated(const auto& low, Index n, double x) {
  if (n == 1) return low(0);
  const Index i0 = std::clamp<Index>(static_cast<Index>(std::floor(x)), 0, n - 2);
  const double t = x - static_cast<double>(i0);
  return low(i0) + t * (low(i0 + 1) - low(i0));
}

std::vector<double> gaussian_kernel(double sigma) {
  const int rad = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * rad + 1));
  double sum = 0.0;
  for (int i = -rad; i <= rad; ++i) {
    k[static_cast<std::size_t>(i + rad)] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += k[static_cast<std::size_t>(i + rad)];
  }
  for (double& v : k) v /= sum;
  return k;
}

// Weighted mean written as center + sum w (x - center) so constants are exact.
DepthMap blur_axis(const DepthMap& in, const std::vector<double>& k, bool along_rows) {
  const Index rad = static_cast<Index>(k.size() / 2);
  DepthMap out(in.rows(), in.cols());
  for (Index r = 0; r < in.rows(); ++r) {
    for (Index c = 0; c < in.cols(); ++c) {
      const double center = in(r, c);
      double acc = 0.0;
      for (Index j = -rad; j <= rad; ++j) {
        const double v = along_rows ? in(r, std::clamp<Index>(c + j, 0, in.cols() - 1))
                                    : in(std::clamp<Index>(r + j, 0, in.rows() - 1), c);
        acc += k[static_cast<std::size_t>(j + rad)] * (v - center);
      }
      out(r, c) = center + acc;
    }
  }
  return out;
}

NormalMap fill_from_nearest(const PseudoNormalField& field) {
  const Index h = field.normals.rows();
  const Index w = field.normals.cols();
  NormalMap out = field.normals;
  Mask done = field.valid;
  std::deque<std::pair<Index, Index>> queue;
  for (Index r = 0; r < h; ++r) {
    for (Index c = 0; c < w; ++c) {
      if (done(r, c)) queue.emplace_back(r, c);
    }
  }
  if (queue.empty()) {
    for (Index r = 0; r < h; ++r) {
      for (Index c = 0; c < w; ++c) out.set(r, c, Eigen::Vector3d::UnitZ());
    }
    return out;
  }
  constexpr Index kDr[4] = {-1, 1, 0, 0};
  constexpr Index kDc[4] = {0, 0, -1, 1};
  while (!queue.empty()) {
    const auto [r, c] = queue.front();
    queue.pop_front();
    for (int k = 0; k < 4; ++k) {
      const Index rr = r + kDr[k];
      const Index cc = c + kDc[k];
      if (rr < 0 || cc < 0 || rr >= h || cc >= w || done(rr, cc)) continue;
      out.set(rr, cc, out.at(r, c));
      done(rr, cc) = true;
      queue.emplace_back(rr, cc);
    }
  }
  return out;
}

}  // namespace

GeometryFrame render(const SceneSpec& spec, const ImageExtent& extent) {
  spec.camera.validate();
  const Index h = extent.height;
  const Index w = extent.width;
  if (h <= 0 || w <= 0) throw ConfigError("render: extent must be positive");

  const Eigen::Vector3d center_origin = spec.camera.ray_origin(0.5 * (w - 1), 0.5 * (h - 1));
  std::vector<Albedo> albedo;
  for (std::size_t i = 0; i <= spec.primitives.size(); ++i) albedo.push_back(make_albedo(spec.texture_seed, static_cast<int>(i)));

  GeometryFrame frame;
  frame.camera = spec.camera;
  frame.depth = DepthMap(h, w);
  frame.normal = NormalMap(h, w);
  frame.rgb = RgbImage(h, w);
  for (Index r = 0; r < h; ++r) {
    for (Index c = 0; c < w; ++c) {
      const double u = static_cast<double>(c);
      const double v = static_cast<double>(r);
      const Eigen::Vector3d o = spec.camera.ray_origin(u, v);
      const Eigen::Vector3d d = spec.camera.ray_direction(u, v);
      Hit hit;
      const Background& bg = spec.background;
      const double tb = plane_t(bg.depth, bg.a, bg.b, center_origin.x(), center_origin.y(), o, d);
      if (tb > 0.0) hit = {tb, orient({-bg.a, -bg.b, 1.0}, d), 0};
      for (std::size_t i = 0; i < spec.primitives.size(); ++i) {
        std::visit([&](const auto& prim) { intersect(prim, o, d, static_cast<int>(i) + 1, hit); }, spec.primitives[i]);
      }
      if (hit.surface < 0) {
        throw ContractError("render: pixel " + shape_string(r, c) + " sees nothing in front of the camera");
      }
      const Eigen::Vector3d x = o + hit.t * d;
      frame.depth(r, c) = x.z();
      frame.normal.set(r, c, hit.normal);
      const double shade = std::max(0.0, hit.normal.dot(kLightDirection));
      const Eigen::Vector3d color = albedo[static_cast<std::size_t>(hit.surface)].at(x) * shade;
      frame.rgb.set(r, c, color.cwiseMax(0.0).cwiseMin(1.0));
    }
  }
  return frame;
}

SceneSpec random_scene(const ImageExtent& extent, Rng& rng) {
  extent.validate();
  const double w = extent.width;
  const double h = extent.height;
  SceneSpec spec;
  spec.camera = CameraModel::pinhole(w, w, 0.5 * (w - 1.0), 0.5 * (h - 1.0));
  using U = std::uniform_real_distribution<double>;

  // Keep the background denominator 1 - a dx - b dy at 0.7 or more.
  const double max_dx = 0.5 * (w + 1.0) / w;
  const double max_dy = 0.5 * (h + 1.0) / w;
  const double tilt = std::min(0.3, 0.3 / (max_dx + max_dy));
  spec.background.depth = U(6.0, 10.0)(rng);
  spec.background.a = U(-tilt, tilt)(rng);
  spec.background.b = U(-tilt, tilt)(rng);

  const int count = std::uniform_int_distribution<int>(2, 6)(rng);
  for (int i = 0; i < count; ++i) {
    const int kind = std::uniform_int_distribution<int>(0, 2)(rng);
    const double u = U(0.15 * w, 0.85 * w)(rng);
    const double v = U(0.15 * h, 0.85 * h)(rng);
    const double z = U(3.0, 7.0)(rng);
    const Eigen::Vector3d center = spec.camera.back_project(u, v, z);
    if (kind == 0) {
      spec.primitives.emplace_back(Sphere{center, U(0.4, 1.0)(rng)});
    } else if (kind == 1) {
      U half(0.3, 0.9);
      const double hx = half(rng);
      const double hy = half(rng);
      const double hz = half(rng);
      spec.primitives.emplace_back(Box{center, {hx, hy, hz}});
    } else {
      U half(0.5, 1.3);
      U slope(-0.6, 0.6);
      PlanePatch p;
      p.center = center;
      p.half_x = half(rng);
      p.half_y = half(rng);
      p.a = slope(rng);
      p.b = slope(rng);
      spec.primitives.emplace_back(p);
    }
  }
  spec.texture_seed = rng();
  return spec;
}

DepthMap resample_down_up(const DepthMap& depth, int factor) {
  if (factor < 1) throw ConfigError("resample: factor must be positive");
  const Index h = depth.rows();
  const Index w = depth.cols();
  if (h % factor != 0 || w % factor != 0) {
    throw ConfigError("resample: factor " + std::to_string(factor) + " does not divide " + shape_string(h, w));
  }
  if (factor == 1) return depth;
  const Index lh = h / factor;
  const Index lw = w / factor;
  DepthMap low(lh, lw);
  for (Index i = 0; i < lh; ++i) {
    for (Index j = 0; j < lw; ++j) {
      const double anchor = depth(i * factor, j * factor);
      double acc = 0.0;
      for (Index a = 0; a < factor; ++a) {
        for (Index b = 0; b < factor; ++b) acc += depth(i * factor + a, j * factor + b) - anchor;
      }
      low(i, j) = anchor + acc / static_cast<double>(factor * factor);
    }
  }
  const double s = factor;
  DepthMap rows_up(lh, w);
  for (Index i = 0; i < lh; ++i) {
    for (Index c = 0; c < w; ++c) rows_up(i, c) = lerp_extrapolated(low.row(i), lw, (c + 0.5) / s - 0.5);
  }
  DepthMap out(h, w);
  for (Index r = 0; r < h; ++r) {
    for (Index c = 0; c < w; ++c) out(r, c) = lerp_extrapolated(rows_up.col(c), lh, (r + 0.5) / s - 0.5);
  }
  return out;
}

DepthMap gaussian_blur(const DepthMap& raster, double sigma) {
  if (sigma <= 0.0) return raster;
  const auto k = gaussian_kernel(sigma);
  return blur_axis(blur_axis(raster, k, true), k, false);
}

DepthMap low_frequency_field(Index height, Index width, int lattice, Rng& rng) {
  if (lattice < 2) throw ConfigError("bias lattice needs at least 2 points per side");
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  Mat grid(lattice, lattice);
  for (Index i = 0; i < lattice; ++i) {
    for (Index j = 0; j < lattice; ++j) grid(i, j) = unit(rng);
  }
  DepthMap out(height, width);
  const double sy = height > 1 ? static_cast<double>(lattice - 1) / static_cast<double>(height - 1) : 0.0;
  const double sx = width > 1 ? static_cast<double>(lattice - 1) / static_cast<double>(width - 1) : 0.0;
  for (Index r = 0; r < height; ++r) {
    const double y = r * sy;
    const Index i0 = std::min<Index>(static_cast<Index>(y), lattice - 2);
    const double ty = y - static_cast<double>(i0);
    for (Index c = 0; c < width; ++c) {
      const double x = c * sx;
      const Index j0 = std::min<Index>(static_cast<Index>(x), lattice - 2);
      const double tx = x - static_cast<double>(j0);
      const double top = grid(i0, j0) + tx * (grid(i0, j0 + 1) - grid(i0, j0));
      const double bottom = grid(i0 + 1, j0) + tx * (grid(i0 + 1, j0 + 1) - grid(i0 + 1, j0));
      out(r, c) = top + ty * (bottom - top);
    }
  }
  return out;
}

CoarseInputs degrade(const GeometryFrame& frame, const DegradeParams& params, Rng& rng) {
  DepthMap depth = gaussian_blur(resample_down_up(frame.depth, params.factor), params.blur_sigma);
  const DepthMap field = low_frequency_field(depth.rows(), depth.cols(), params.bias_lattice, rng);
  depth *= 1.0 + params.bias_amplitude * field;
  CoarseInputs out;
  out.normal = fill_from_nearest(pseudo_normals(depth, frame.camera));
  for (Index r = 0; r < depth.rows(); ++r) {
    for (Index c = 0; c < depth.cols(); ++c) out.normal.set(r, c, out.normal.at(r, c).normalized());
  }
  out.depth = std::move(depth);
  return out;
}

}  // namespace patchgeo
