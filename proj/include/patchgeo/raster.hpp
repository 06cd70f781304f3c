#pragma once

#include <Eigen/Dense>
#include <array>
#include <string>

#include "patchgeo/errors.hpp"

namespace patchgeo {

using Index = Eigen::Index;

/// Single-channel image, row index = image row (v), column index = u.
template <typename Scalar>
using Raster = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Three aligned channels (rgb or a normal field's x/y/z).
template <typename Scalar>
struct Raster3 {
  std::array<Raster<Scalar>, 3> ch;

  Raster3() = default;
  Raster3(Index rows, Index cols) {
    for (auto& c : ch) c.setZero(rows, cols);
  }

  Index rows() const { return ch[0].rows(); }
  Index cols() const { return ch[0].cols(); }

  Eigen::Matrix<Scalar, 3, 1> at(Index r, Index c) const {
    return {ch[0](r, c), ch[1](r, c), ch[2](r, c)};
  }
  void set(Index r, Index c, const Eigen::Matrix<Scalar, 3, 1>& v) {
    ch[0](r, c) = v.x();
    ch[1](r, c) = v.y();
    ch[2](r, c) = v.z();
  }

  Raster3 block(Index r, Index c, Index h, Index w) const {
    Raster3 out;
    for (int k = 0; k < 3; ++k) out.ch[k] = ch[k].block(r, c, h, w);
    return out;
  }

  bool allFinite() const {
    return ch[0].allFinite() && ch[1].allFinite() && ch[2].allFinite();
  }

  template <typename Other>
  Raster3<Other> cast() const {
    Raster3<Other> out;
    for (int k = 0; k < 3; ++k) out.ch[k] = ch[k].template cast<Other>();
    return out;
  }

  friend bool operator==(const Raster3& a, const Raster3& b) {
    for (int k = 0; k < 3; ++k) {
      if (a.ch[k].rows() != b.ch[k].rows() || a.ch[k].cols() != b.ch[k].cols()) return false;
      if ((a.ch[k] != b.ch[k]).any()) return false;
    }
    return true;
  }
};

using DepthMap = Raster<double>;
using Mask = Raster<bool>;
using NormalMap = Raster3<double>;
using RgbImage = Raster3<double>;

inline std::string shape_string(Index rows, Index cols) {
  return std::to_string(rows) + "x" + std::to_string(cols);
}

template <typename A, typename B>
void require_same_extent(const A& a, const B& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(what) + ": extent " + shape_string(a.rows(), a.cols()) +
                         " vs " + shape_string(b.rows(), b.cols()));
  }
}

}  // namespace patchgeo
