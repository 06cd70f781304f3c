#include "patchgeo/supervision.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>

namespace patchgeo {

namespace {

// Relative eigenvalue gap below which the neighborhood does not span a plane.
constexpr double kRankTolerance = 1e-10;
constexpr double kNormalFloorLoss = 1e-8;

bool is_valid(const Mask& mask, Index r, Index c) { return mask.size() == 0 || mask(r, c); }

Index count_valid(const Mask& mask, Index total) { return mask.size() == 0 ? total : mask.count(); }

struct DepthLossCore {
  DepthLossTerms terms;
  DepthMap gradient;  // d total / d refined
};

DepthLossCore depth_loss_core(const DepthMap& refined, const DepthMap& gt, double lambda_grad, const Mask& mask,
                              bool want_gradient) {
  require_same_extent(refined, gt, "depth_loss");
  if (mask.size() != 0) require_same_extent(mask, gt, "depth_loss mask");
  const Index h = gt.rows();
  const Index w = gt.cols();
  const Index n_valid = count_valid(mask, gt.size());
  if (n_valid == 0) throw LossError("depth_loss: empty valid mask");

  DepthLossCore out;
  if (want_gradient) out.gradient = DepthMap::Zero(h, w);
  double sq = 0.0;
  for (Index r = 0; r < h; ++r) {
    for (Index c = 0; c < w; ++c) {
      if (!is_valid(mask, r, c)) continue;
      const double e = refined(r, c) - gt(r, c);
      sq += e * e;
    }
  }
  out.terms.mse = sq / static_cast<double>(n_valid);

  // Count pairs first so the gradient can be scaled in one pass.
  Index pairs = 0;
  for (Index r = 0; r < h; ++r) {
    for (Index c = 0; c < w; ++c) {
      if (!is_valid(mask, r, c)) continue;
      if (c + 1 < w && is_valid(mask, r, c + 1)) ++pairs;
      if (r + 1 < h && is_valid(mask, r + 1, c)) ++pairs;
    }
  }
  double gsq = 0.0;
  const double gscale = pairs > 0 ? 2.0 * lambda_grad / static_cast<double>(pairs) : 0.0;
  auto visit_pair = [&](Index r0, Index c0, Index r1, Index c1) {
    const double e = (refined(r1, c1) - refined(r0, c0)) - (gt(r1, c1) - gt(r0, c0));
    gsq += e * e;
    if (want_gradient) {
      out.gradient(r1, c1) += gscale * e;
      out.gradient(r0, c0) -= gscale * e;
    }
  };
  for (Index r = 0; r < h; ++r) {
    for (Index c = 0; c < w; ++c) {
      if (!is_valid(mask, r, c)) continue;
      if (c + 1 < w && is_valid(mask, r, c + 1)) visit_pair(r, c, r, c + 1);
      if (r + 1 < h && is_valid(mask, r + 1, c)) visit_pair(r, c, r + 1, c);
    }
  }
  out.terms.grad = pairs > 0 ? gsq / static_cast<double>(pairs) : 0.0;
  out.terms.total = out.terms.mse + lambda_grad * out.terms.grad;
  if (want_gradient) {
    const double mscale = 2.0 / static_cast<double>(n_valid);
    for (Index r = 0; r < h; ++r) {
      for (Index c = 0; c < w; ++c) {
        if (is_valid(mask, r, c)) out.gradient(r, c) += mscale * (refined(r, c) - gt(r, c));
      }
    }
  }
  return out;
}

struct NormalLossCore {
  NormalLossTerms terms;
  Mat gradient;
};

NormalLossCore normal_loss_core(const Mat& refined, const Mat& pseudo, const Mask& valid, double lambda_mse,
                                bool want_gradient) {
  if (refined.rows() != pseudo.rows() || refined.cols() != 3 || pseudo.cols() != 3) {
    throw DimensionError("normal_loss: " + shape_string(refined.rows(), refined.cols()) + " vs " +
                         shape_string(pseudo.rows(), pseudo.cols()));
  }
  if (valid.size() != refined.rows()) {
    throw DimensionError("normal_loss: mask has " + std::to_string(valid.size()) + " entries for " +
                         std::to_string(refined.rows()) + " pixels");
  }
  const Index n_valid = valid.count();
  if (n_valid == 0) throw LossError("normal_loss: all pixels invalid");
  NormalLossCore out;
  if (want_gradient) out.gradient = Mat::Zero(refined.rows(), 3);
  const double inv_n = 1.0 / static_cast<double>(n_valid);
  double ang = 0.0;
  double sq = 0.0;
  for (Index i = 0; i < refined.rows(); ++i) {
    if (!valid.data()[i]) continue;
    const Eigen::Vector3d n = refined.row(i).transpose();
    const Eigen::Vector3d t = pseudo.row(i).transpose();
    const double len = std::max(n.norm(), kNormalFloorLoss);
    const Eigen::Vector3d nh = n / len;
    const double cosv = nh.dot(t);
    ang += 1.0 - cosv;
    sq += (n - t).squaredNorm();
    if (want_gradient) {
      Eigen::Vector3d g = n.norm() >= kNormalFloorLoss ? Eigen::Vector3d(-(t - nh * cosv) / len)
                                                       : Eigen::Vector3d(-t / len);
      g *= inv_n;
      g += lambda_mse * 2.0 * (n - t) * inv_n / 3.0;
      out.gradient.row(i) = g.transpose();
    }
  }
  out.terms.angular = ang * inv_n;
  out.terms.mse = sq * inv_n / 3.0;
  out.terms.total = out.terms.angular + lambda_mse * out.terms.mse;
  return out;
}

}  // namespace

void LossWeights::validate() const {
  for (double v : {grad, mse, depth, normal}) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("loss weights must be finite and non-negative");
  }
}

PseudoNormalField pseudo_normals(const DepthMap& depth, const CameraModel& camera, int window, int origin_x,
                                 int origin_y) {
  if (window < 3 || window % 2 == 0) throw ConfigError("pseudo_normals: window must be odd and >= 3");
  if (!depth.allFinite() || (depth <= 0.0).any()) throw ContractError("pseudo_normals: depth must be positive");
  camera.validate();
  const Index h = depth.rows();
  const Index w = depth.cols();
  const int rad = window / 2;
  PseudoNormalField out;
  out.normals = NormalMap(h, w);
  out.valid = Mask::Constant(h, w, false);

  // Lift every pixel once.
  std::vector<Eigen::Vector3d> points(static_cast<std::size_t>(h * w));
  for (Index r = 0; r < h; ++r) {
    for (Index c = 0; c < w; ++c) {
      points[static_cast<std::size_t>(r * w + c)] =
          camera.back_project(static_cast<double>(c + origin_x), static_cast<double>(r + origin_y), depth(r, c));
    }
  }

  const double count = static_cast<double>(window * window);
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> solver;
  for (Index r = rad; r + rad < h; ++r) {
    for (Index c = rad; c + rad < w; ++c) {
      Eigen::Vector3d mean = Eigen::Vector3d::Zero();
      for (Index dr = -rad; dr <= rad; ++dr) {
        for (Index dc = -rad; dc <= rad; ++dc) mean += points[static_cast<std::size_t>((r + dr) * w + c + dc)];
      }
      mean /= count;
      Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
      for (Index dr = -rad; dr <= rad; ++dr) {
        for (Index dc = -rad; dc <= rad; ++dc) {
          const Eigen::Vector3d d = points[static_cast<std::size_t>((r + dr) * w + c + dc)] - mean;
          cov.noalias() += d * d.transpose();
        }
      }
      solver.compute(cov);
      const Eigen::Vector3d ev = solver.eigenvalues();
      if (!(ev(2) > 0.0) || ev(1) <= kRankTolerance * ev(2)) continue;
      Eigen::Vector3d n = solver.eigenvectors().col(0).normalized();
      // Face the camera: toward -z for orthographic, toward the optical center for pinhole.
      const double facing = camera.kind == CameraModel::Kind::orthographic ? -n.z() : -n.dot(mean);
      if (facing < 0.0) n = -n;
      out.normals.set(r, c, to_reported_normal(n));
      out.valid(r, c) = true;
    }
  }
  return out;
}

DepthLossTerms depth_loss(const DepthMap& refined, const DepthMap& gt, double lambda_grad, const Mask& mask) {
  return depth_loss_core(refined, gt, lambda_grad, mask, false).terms;
}

Mat to_rows(const NormalMap& n) {
  Mat out(n.rows() * n.cols(), 3);
  for (int k = 0; k < 3; ++k) out.col(k) = Eigen::Map<const Eigen::VectorXd>(n.ch[k].data(), n.ch[k].size());
  return out;
}

NormalMap from_rows(const Mat& rows, Index height, Index width) {
  if (rows.rows() != height * width || rows.cols() != 3) throw DimensionError("from_rows: shape mismatch");
  NormalMap out(height, width);
  for (int k = 0; k < 3; ++k) {
    Eigen::Map<Eigen::VectorXd>(out.ch[k].data(), out.ch[k].size()) = rows.col(k);
  }
  return out;
}

NormalLossTerms normal_loss(const NormalMap& refined, const NormalMap& pseudo, const Mask& mask, double lambda_mse) {
  require_same_extent(refined, pseudo, "normal_loss");
  require_same_extent(mask, pseudo, "normal_loss mask");
  return normal_loss_core(to_rows(refined), to_rows(pseudo), mask, lambda_mse, false).terms;
}

TotalLossTerms total_loss(const DepthMap& refined_depth, const NormalMap& refined_normal, const DepthMap& gt_depth,
                          const CameraModel& camera, const LossWeights& weights) {
  weights.validate();
  TotalLossTerms out;
  if (weights.depth != 0.0) {
    out.depth = depth_loss(refined_depth, gt_depth, weights.grad);
    out.total += weights.depth * out.depth.total;
  }
  if (weights.normal != 0.0) {
    const PseudoNormalField pseudo = pseudo_normals(gt_depth, camera);
    out.normal = normal_loss(refined_normal, pseudo.normals, pseudo.valid, weights.mse);
    out.total += weights.normal * out.normal.total;
  }
  return out;
}

namespace ad {

Var depth_loss(const Var& refined, const DepthMap& gt, double lambda_grad, const Mask& mask) {
  return refined.record()->record(
      "depth_loss", {refined},
      [=](const GradRecord& r) {
        return Mat::Constant(1, 1, depth_loss_core(r.value(refined).array(), gt, lambda_grad, mask, false).terms.total);
      },
      [=](GradRecord& r, const Mat& g) {
        const DepthMap grad = depth_loss_core(r.value(refined).array(), gt, lambda_grad, mask, true).gradient;
        r.accumulate(refined, Mat(grad.matrix() * g(0, 0)));
      });
}

Var normal_loss(const Var& refined, const Mat& pseudo, const Mask& valid, double lambda_mse) {
  return refined.record()->record(
      "normal_loss", {refined},
      [=](const GradRecord& r) {
        return Mat::Constant(1, 1, normal_loss_core(r.value(refined), pseudo, valid, lambda_mse, false).terms.total);
      },
      [=](GradRecord& r, const Mat& g) {
        r.accumulate(refined, Mat(normal_loss_core(r.value(refined), pseudo, valid, lambda_mse, true).gradient * g(0, 0)));
      });
}

LossVars total_loss(const Var& refined_depth, const Var& refined_normal, const DepthMap& gt_depth,
                    const PseudoNormalField& pseudo, const LossWeights& weights) {
  weights.validate();
  GradRecord& rec = *refined_depth.record();
  LossVars out;
  Var total;
  if (weights.depth != 0.0) {
    out.depth = depth_loss(refined_depth, gt_depth, weights.grad);
    total = scale(out.depth, weights.depth);
  }
  if (weights.normal != 0.0) {
    out.normal = normal_loss(refined_normal, to_rows(pseudo.normals), pseudo.valid, weights.mse);
    const Var term = scale(out.normal, weights.normal);
    total = total.valid() ? add(total, term) : term;
  }
  out.total = total.valid() ? total : rec.constant(Mat::Zero(1, 1));
  return out;
}

}  // namespace ad

}  // namespace patchgeo
