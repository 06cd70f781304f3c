#include "patchgeo/frame.hpp"

#include <cmath>
#include <sstream>

namespace patchgeo {

void ImageExtent::validate(int cell) const {
  if (height <= 0 || width <= 0) {
    throw ConfigError("image extent must be positive, got " + shape_string(height, width));
  }
  if (height % 4 != 0 || width % 4 != 0) {
    throw ConfigError("image extent " + shape_string(height, width) + " is not divisible by 4");
  }
  if (cell > 0 && ((height / 4) % cell != 0 || (width / 4) % cell != 0)) {
    throw ConfigError("patch extent " + shape_string(height / 4, width / 4) + " is not divisible by cell size " +
                      std::to_string(cell));
  }
}

void CameraModel::validate() const {
  if (kind == Kind::pinhole && !(fx > 0.0 && fy > 0.0)) {
    throw ConfigError("pinhole focal lengths must be positive");
  }
}

Eigen::Vector3d CameraModel::ray_origin(double u, double v) const {
  if (kind == Kind::orthographic) return {u, v, 0.0};
  return Eigen::Vector3d::Zero();
}

Eigen::Vector3d CameraModel::ray_direction(double u, double v) const {
  if (kind == Kind::orthographic) return {0.0, 0.0, 1.0};
  return {(u - cx) / fx, (v - cy) / fy, 1.0};
}

std::string CameraModel::to_string() const {
  if (kind == Kind::orthographic) return "orthographic";
  std::ostringstream os;
  os.precision(17);
  os << "pinhole " << fx << ' ' << fy << ' ' << cx << ' ' << cy;
  return os.str();
}

CameraModel CameraModel::parse(const std::string& text) {
  std::istringstream is(text);
  std::string kind;
  is >> kind;
  if (kind == "orthographic") return orthographic();
  if (kind == "pinhole") {
    CameraModel cam;
    cam.kind = Kind::pinhole;
    if (!(is >> cam.fx >> cam.fy >> cam.cx >> cam.cy)) throw ConfigError("malformed pinhole camera: " + text);
    cam.validate();
    return cam;
  }
  throw ConfigError("unknown camera model: " + text);
}

void GeometryFrame::validate(double tol) const {
  const Index h = depth.rows();
  const Index w = depth.cols();
  require_same_extent(rgb, depth, "frame rgb");
  require_same_extent(normal, depth, "frame normal");
  if (!depth.allFinite() || (depth <= 0.0).any()) throw ContractError("frame depth must be finite and positive");
  if (!rgb.allFinite()) throw ContractError("frame rgb must be finite");
  for (const auto& c : rgb.ch) {
    if ((c < 0.0).any() || (c > 1.0).any()) throw ContractError("frame rgb outside [0, 1]");
  }
  for (Index r = 0; r < h; ++r) {
    for (Index c = 0; c < w; ++c) {
      const double n = normal.at(r, c).norm();
      if (!(std::abs(n - 1.0) <= tol)) {
        throw ContractError("frame normal at (" + std::to_string(r) + "," + std::to_string(c) +
                            ") has norm " + std::to_string(n));
      }
    }
  }
}

}  // namespace patchgeo
