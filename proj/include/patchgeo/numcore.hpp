#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "patchgeo/errors.hpp"
#include "patchgeo/raster.hpp"

namespace patchgeo {

template <typename Scalar>
using MatrixR = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using RowVectorR = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

/// Dense row-major 2-D tensor used throughout training (64-bit).
using Mat = MatrixR<double>;

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kFdStep = 1e-5;
inline constexpr double kFdDenominatorFloor = 1e-8;

// ---------------------------------------------------------------------------
// Plain kernels. These are the forward definitions the recorded ops reuse.
// ---------------------------------------------------------------------------

template <typename DA, typename DB>
MatrixR<typename DA::Scalar> matmul(const Eigen::MatrixBase<DA>& a, const Eigen::MatrixBase<DB>& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: lhs " + shape_string(a.rows(), a.cols()) + " vs rhs " +
                         shape_string(b.rows(), b.cols()));
  }
  return a * b;
}

/// Row-wise softmax with max subtraction.
template <typename Derived>
MatrixR<typename Derived::Scalar> softmax_rows(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  if (!x.allFinite()) throw NumericError("softmax_rows: non-finite input");
  MatrixR<Scalar> out(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    const Scalar m = x.row(r).maxCoeff();
    out.row(r) = (x.row(r).array() - m).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

/// Per-row normalization to zero mean and unit variance, then gain/bias.
/// Variance is the biased (1/n) estimate; eps sits inside the square root.
template <typename DX, typename DG, typename DB>
MatrixR<typename DX::Scalar> layer_norm_rows(const Eigen::MatrixBase<DX>& x, const Eigen::MatrixBase<DG>& gain,
                                             const Eigen::MatrixBase<DB>& bias,
                                             typename DX::Scalar eps = kLayerNormEps) {
  using Scalar = typename DX::Scalar;
  if (x.cols() < 2) throw ContractError("layer_norm: normalized extent must be >= 2");
  if (gain.size() != x.cols() || bias.size() != x.cols()) {
    throw DimensionError("layer_norm: width " + std::to_string(x.cols()) + " vs gain " +
                         std::to_string(gain.size()) + " / bias " + std::to_string(bias.size()));
  }
  MatrixR<Scalar> out(x.rows(), x.cols());
  const Scalar n = static_cast<Scalar>(x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    const Scalar mean = x.row(r).sum() / n;
    const auto centered = (x.row(r).array() - mean).eval();
    const Scalar var = centered.square().sum() / n;
    const Scalar inv = Scalar(1) / std::sqrt(var + eps);
    for (Index c = 0; c < x.cols(); ++c) out(r, c) = centered(c) * inv * gain(c) + bias(c);
  }
  return out;
}

/// Exact (erf) GELU.
template <typename Derived>
MatrixR<typename Derived::Scalar> gelu(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  return x.unaryExpr([](Scalar v) { return Scalar(0.5) * v * (Scalar(1) + std::erf(v / std::sqrt(Scalar(2)))); });
}

// ---------------------------------------------------------------------------
// Reverse-mode gradient record.
// ---------------------------------------------------------------------------

class GradRecord;

/// Handle to one value in a GradRecord.
class Var {
 public:
  Var() = default;

  const Mat& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  int id() const { return id_; }
  GradRecord* record() const { return record_; }
  bool valid() const { return record_ != nullptr; }

 private:
  friend class GradRecord;
  Var(GradRecord* record, int id) : record_(record), id_(id) {}

  GradRecord* record_ = nullptr;
  int id_ = -1;
};

using Gradients = std::map<std::string, Mat>;

/// Topologically ordered tape of primitive operations. One training step
/// builds and consumes one record on a single thread.
///
/// A record created with `track_gradients = false` evaluates forward values
/// only; it keeps no closures, so it is the cheap path for inference.
class GradRecord {
 public:
  using ForwardFn = std::function<Mat(const GradRecord&)>;
  /// Receives the gradient flowing into the node and distributes it to parents.
  using BackwardFn = std::function<void(GradRecord&, const Mat&)>;

  explicit GradRecord(bool track_gradients = true) : tracking_(track_gradients) {}
  GradRecord(const GradRecord&) = delete;
  GradRecord& operator=(const GradRecord&) = delete;

  bool tracking() const { return tracking_; }
  std::size_t size() const { return nodes_.size(); }

  Var constant(Mat value);
  Var parameter(const std::string& name, Mat value);

  /// Evaluates `forward` and appends the result as a new node.
  Var record(const char* op, std::vector<Var> parents, ForwardFn forward, BackwardFn backward);

  const Mat& value(const Var& v) const;
  bool needs_grad(const Var& v) const;

  /// Adds `grad` into the gradient slot of `v` (only valid during backward()).
  void accumulate(const Var& v, const Mat& grad);

  /// dloss/dparam for every registered parameter. Parameters the loss does
  /// not depend on receive an exact zero tensor.
  Gradients backward(const Var& loss);

  /// Re-evaluates every recorded op from its parents and returns the largest
  /// absolute difference from the stored forward values.
  double replay();

  std::vector<std::string> parameter_names() const;

 private:
  struct Node {
    const char* op = "";
    Mat value;
    std::vector<int> parents;
    ForwardFn forward;
    BackwardFn backward;
    bool needs_grad = false;
    std::string param_name;
  };

  Var push(Node node);
  void check(const Var& v, const char* where) const;

  bool tracking_;
  std::vector<Node> nodes_;
  std::vector<Mat> grads_;
  bool in_backward_ = false;
};

inline const Mat& Var::value() const { return record_->value(*this); }

// Recorded operations. Each mirrors a plain kernel above and registers the
// matching vector-Jacobian product.
namespace ad {

Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
/// a + row, with `row` (1 x n) broadcast over every row of a.
Var add_rowwise(const Var& a, const Var& row);
Var add_constant(const Var& a, const Mat& c);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var sum(const Var& a);
Var log(const Var& a);
Var gelu(const Var& a);
Var softmax_rows(const Var& a);
Var layer_norm(const Var& x, const Var& gain, const Var& bias);
/// out.reshaped(rows*cols)[i] = a.reshaped()[index[i]] (row-major flat indices).
/// Indices may repeat; the backward pass scatter-adds.
Var gather(const Var& a, std::vector<Index> index, Index rows, Index cols);

}  // namespace ad

/// Builds a scalar loss inside a fresh record from named parameter handles.
using LossBuilder = std::function<Var(GradRecord&, const std::map<std::string, Var>&)>;

struct FdReport {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  Index worst_index = -1;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
};

/// Fourth-order central differences (five-point stencil at +-h, +-2h)
/// against backward(), elementwise, with
/// relative error |a-b| / max(|a|, |b|, 1e-8). `max_per_param` > 0 limits the
/// number of probed entries per parameter (evenly strided).
FdReport finite_difference_check(const LossBuilder& f, const std::map<std::string, Mat>& params,
                                 double h = kFdStep, Index max_per_param = 0);

/// Scalar value of a loss builder at the given parameters, no gradient tracking.
double evaluate_loss(const LossBuilder& f, const std::map<std::string, Mat>& params);

}  // namespace patchgeo
