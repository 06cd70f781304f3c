#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <variant>
#include <vector>

#include "patchgeo/frame.hpp"
#include "patchgeo/patchgrid.hpp"

namespace patchgeo {

struct Sphere {
  Eigen::Vector3d center;
  double radius = 1.0;
};

struct Box {
  Eigen::Vector3d center;
  Eigen::Vector3d half_extents;
};

/// Plane Z = center.z + a (X - center.x) + b (Y - center.y), kept where
/// |X - center.x| <= half_x and |Y - center.y| <= half_y.
struct PlanePatch {
  Eigen::Vector3d center;
  double half_x = 1.0;
  double half_y = 1.0;
  double a = 0.0;
  double b = 0.0;
};

using Primitive = std::variant<Sphere, Box, PlanePatch>;

/// Unbounded plane Z = depth + a (X - Xc) + b (Y - Yc) behind everything;
/// (Xc, Yc) is the ray-origin offset of the image center (zero for pinhole).
struct Background {
  double depth = 5.0;
  double a = 0.0;
  double b = 0.0;
};

struct SceneSpec {
  CameraModel camera;
  Background background;
  std::vector<Primitive> primitives;
  std::uint64_t texture_seed = 0;
};

inline const Eigen::Vector3d kLightDirection = Eigen::Vector3d(0.3, 0.4, 0.87).normalized();

/// Ray-casts every pixel center. Depth is the nearest positive hit, normals
/// are analytic and reported in the frame where camera-facing surfaces have
/// positive z, rgb is albedo * max(0, <n, light>). Throws ContractError if a
/// pixel sees nothing in front of the camera.
GeometryFrame render(const SceneSpec& spec, const ImageExtent& extent);

/// Random pinhole scene (fx = fy = W, principal point at the image center)
/// with 2-6 primitives in front of a tilted background.
SceneSpec random_scene(const ImageExtent& extent, Rng& rng);

struct DegradeParams {
  int factor = 4;
  double blur_sigma = 1.5;
  double bias_amplitude = 0.05;
  int bias_lattice = 4;  ///< control points per side of the bias field
};

struct CoarseInputs {
  DepthMap depth;
  NormalMap normal;
};

/// Area-average downsample by `factor`, then bilinear upsample back with
/// linear extrapolation at the borders. Affine and bilinear ramps are
/// reproduced exactly up to rounding.
DepthMap resample_down_up(const DepthMap& depth, int factor);

/// Separable Gaussian blur, radius ceil(3 sigma), replicated borders.
DepthMap gaussian_blur(const DepthMap& raster, double sigma);

/// Smooth field in [-1, 1]: a lattice x lattice grid of uniform draws,
/// bilinearly interpolated across the image.
DepthMap low_frequency_field(Index height, Index width, int lattice, Rng& rng);

/// Simulated coarse prediction: resample, blur, multiplicative bias
/// (1 + beta * field), and normals fitted to the degraded depth. Pixels
/// without a plane fit take the nearest fitted normal.
CoarseInputs degrade(const GeometryFrame& frame, const DegradeParams& params, Rng& rng);

}  // namespace patchgeo
