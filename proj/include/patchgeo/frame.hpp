#pragma once

#include <Eigen/Dense>
#include <string>

#include "patchgeo/raster.hpp"

namespace patchgeo {

/// Image size in pixels.
struct ImageExtent {
  int height = 0;
  int width = 0;

  /// Throws ConfigError unless both sides are positive and divisible by 4
  /// (patch size is a quarter of the extent) and by `cell`.
  void validate(int cell = 1) const;
  friend bool operator==(const ImageExtent&, const ImageExtent&) = default;
};

/// Camera used to lift depth to 3-D points. The camera frame is x right,
/// y down, z forward; depth is the z coordinate. Orthographic cameras map
/// pixel (u, v) to (u, v) in world units.
struct CameraModel {
  enum class Kind { orthographic, pinhole };
  Kind kind = Kind::orthographic;
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;

  static CameraModel orthographic() { return {}; }
  static CameraModel pinhole(double fx, double fy, double cx, double cy) {
    return {Kind::pinhole, fx, fy, cx, cy};
  }

  void validate() const;

  /// Ray through pixel (u, v): point = origin + z * direction, direction.z() == 1.
  Eigen::Vector3d ray_origin(double u, double v) const;
  Eigen::Vector3d ray_direction(double u, double v) const;
  Eigen::Vector3d back_project(double u, double v, double depth) const {
    return ray_origin(u, v) + depth * ray_direction(u, v);
  }

  /// "pinhole fx fy cx cy" or "orthographic".
  std::string to_string() const;
  static CameraModel parse(const std::string& text);

  friend bool operator==(const CameraModel&, const CameraModel&) = default;
};

/// Normals are reported in the frame (-x, -y, -z) of the camera frame, so a
/// surface facing the camera has a positive third component and the plane
/// depth = a*u + b*v + c (orthographic) has normal (-a, -b, 1)/norm.
inline Eigen::Vector3d to_reported_normal(const Eigen::Vector3d& camera_facing) { return -camera_facing; }

/// Aligned ground-truth rasters of one scene.
struct GeometryFrame {
  RgbImage rgb;
  DepthMap depth;
  NormalMap normal;
  CameraModel camera;

  ImageExtent extent() const { return {static_cast<int>(depth.rows()), static_cast<int>(depth.cols())}; }

  /// Throws ContractError naming the first violated invariant
  /// (unit normals within `tol`, finite positive depth, rgb in [0, 1]).
  void validate(double tol = 1e-6) const;
};

/// What the refiner consumes: the image plus coarse priors already
/// upsampled to full resolution.
struct RefineInput {
  RgbImage rgb;
  DepthMap coarse_depth;
  NormalMap coarse_normal;

  ImageExtent extent() const {
    return {static_cast<int>(coarse_depth.rows()), static_cast<int>(coarse_depth.cols())};
  }
};

}  // namespace patchgeo
