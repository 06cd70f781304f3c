#include "patchgeo/numcore.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

namespace patchgeo {

// ---------------------------------------------------------------------------
// GradRecord
// ---------------------------------------------------------------------------

Var GradRecord::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

void GradRecord::check(const Var& v, const char* where) const {
  if (v.record_ != this || v.id_ < 0 || v.id_ >= static_cast<int>(nodes_.size())) {
    throw ContractError(std::string(where) + ": variable does not belong to this record");
  }
}

Var GradRecord::constant(Mat value) {
  if (!value.allFinite()) throw NumericError("constant: non-finite values");
  Node n;
  n.op = "constant";
  n.value = std::move(value);
  return push(std::move(n));
}

Var GradRecord::parameter(const std::string& name, Mat value) {
  if (!value.allFinite()) throw NumericError("parameter '" + name + "': non-finite values");
  for (const auto& n : nodes_) {
    if (n.param_name == name) throw ContractError("parameter '" + name + "' registered twice");
  }
  Node n;
  n.op = "parameter";
  n.value = std::move(value);
  n.needs_grad = tracking_;
  n.param_name = name;
  return push(std::move(n));
}

Var GradRecord::record(const char* op, std::vector<Var> parents, ForwardFn forward, BackwardFn backward) {
  Node n;
  n.op = op;
  for (const auto& p : parents) {
    check(p, op);
    n.needs_grad = n.needs_grad || nodes_[p.id_].needs_grad;
  }
  n.value = forward(*this);
  if (!n.value.allFinite()) throw NumericError(std::string(op) + ": produced non-finite values");
  if (tracking_) {
    for (const auto& p : parents) n.parents.push_back(p.id_);
    n.forward = std::move(forward);
    if (n.needs_grad) n.backward = std::move(backward);
  }
  return push(std::move(n));
}

const Mat& GradRecord::value(const Var& v) const {
  check(v, "value");
  return nodes_[v.id_].value;
}

bool GradRecord::needs_grad(const Var& v) const {
  check(v, "needs_grad");
  return nodes_[v.id_].needs_grad;
}

void GradRecord::accumulate(const Var& v, const Mat& grad) {
  check(v, "accumulate");
  if (!in_backward_) throw ContractError("accumulate outside backward()");
  auto& slot = grads_[v.id_];
  if (grad.rows() != nodes_[v.id_].value.rows() || grad.cols() != nodes_[v.id_].value.cols()) {
    throw DimensionError(std::string("gradient for '") + nodes_[v.id_].op + "': " +
                         shape_string(grad.rows(), grad.cols()) + " vs value " +
                         shape_string(nodes_[v.id_].value.rows(), nodes_[v.id_].value.cols()));
  }
  if (slot.size() == 0) {
    slot = grad;
  } else {
    slot += grad;
  }
}

Gradients GradRecord::backward(const Var& loss) {
  check(loss, "backward");
  if (!tracking_) throw ContractError("backward: record was created without gradient tracking");
  const Mat& lv = nodes_[loss.id_].value;
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw ContractError("backward: loss must be scalar, got " + shape_string(lv.rows(), lv.cols()));
  }
  grads_.assign(nodes_.size(), Mat());
  in_backward_ = true;
  grads_[loss.id_] = Mat::Ones(1, 1);
  for (int i = loss.id_; i >= 0; --i) {
    if (grads_[i].size() == 0 || !nodes_[i].backward) continue;
    nodes_[i].backward(*this, grads_[i]);
  }
  in_backward_ = false;

  Gradients out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const auto& n = nodes_[i];
    if (n.param_name.empty()) continue;
    out[n.param_name] = grads_[i].size() ? grads_[i] : Mat::Zero(n.value.rows(), n.value.cols());
  }
  grads_.clear();
  return out;
}

double GradRecord::replay() {
  if (!tracking_) throw ContractError("replay: record was created without gradient tracking");
  double worst = 0.0;
  for (auto& n : nodes_) {
    if (!n.forward) continue;
    Mat v = n.forward(*this);
    worst = std::max(worst, (v - n.value).cwiseAbs().maxCoeff());
    n.value = std::move(v);
  }
  return worst;
}

std::vector<std::string> GradRecord::parameter_names() const {
  std::vector<std::string> names;
  for (const auto& n : nodes_) {
    if (!n.param_name.empty()) names.push_back(n.param_name);
  }
  return names;
}

// ---------------------------------------------------------------------------
// Recorded ops
// ---------------------------------------------------------------------------

namespace ad {
namespace {

void require_same_shape(const Mat& a, const Mat& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": " + shape_string(a.rows(), a.cols()) + " vs " +
                         shape_string(b.rows(), b.cols()));
  }
}

GradRecord& rec_of(const Var& v) {
  if (!v.valid()) throw ContractError("operation on an empty variable");
  return *v.record();
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  return rec_of(a).record(
      "matmul", {a, b}, [a, b](const GradRecord& r) { return patchgeo::matmul(r.value(a), r.value(b)); },
      [a, b](GradRecord& r, const Mat& g) {
        if (r.needs_grad(a)) r.accumulate(a, g * r.value(b).transpose());
        if (r.needs_grad(b)) r.accumulate(b, r.value(a).transpose() * g);
      });
}

Var add(const Var& a, const Var& b) {
  return rec_of(a).record(
      "add", {a, b},
      [a, b](const GradRecord& r) {
        require_same_shape(r.value(a), r.value(b), "add");
        return Mat(r.value(a) + r.value(b));
      },
      [a, b](GradRecord& r, const Mat& g) {
        if (r.needs_grad(a)) r.accumulate(a, g);
        if (r.needs_grad(b)) r.accumulate(b, g);
      });
}

Var sub(const Var& a, const Var& b) {
  return rec_of(a).record(
      "sub", {a, b},
      [a, b](const GradRecord& r) {
        require_same_shape(r.value(a), r.value(b), "sub");
        return Mat(r.value(a) - r.value(b));
      },
      [a, b](GradRecord& r, const Mat& g) {
        if (r.needs_grad(a)) r.accumulate(a, g);
        if (r.needs_grad(b)) r.accumulate(b, -g);
      });
}

Var add_rowwise(const Var& a, const Var& row) {
  return rec_of(a).record(
      "add_rowwise", {a, row},
      [a, row](const GradRecord& r) {
        const Mat& x = r.value(a);
        const Mat& b = r.value(row);
        if (b.rows() != 1 || b.cols() != x.cols()) {
          throw DimensionError("add_rowwise: " + shape_string(x.rows(), x.cols()) + " vs row " +
                               shape_string(b.rows(), b.cols()));
        }
        return Mat(x.rowwise() + b.row(0));
      },
      [a, row](GradRecord& r, const Mat& g) {
        if (r.needs_grad(a)) r.accumulate(a, g);
        if (r.needs_grad(row)) r.accumulate(row, g.colwise().sum());
      });
}

Var add_constant(const Var& a, const Mat& c) {
  return rec_of(a).record(
      "add_constant", {a},
      [a, c](const GradRecord& r) {
        require_same_shape(r.value(a), c, "add_constant");
        return Mat(r.value(a) + c);
      },
      [a](GradRecord& r, const Mat& g) { r.accumulate(a, g); });
}

Var mul(const Var& a, const Var& b) {
  return rec_of(a).record(
      "mul", {a, b},
      [a, b](const GradRecord& r) {
        require_same_shape(r.value(a), r.value(b), "mul");
        return Mat(r.value(a).cwiseProduct(r.value(b)));
      },
      [a, b](GradRecord& r, const Mat& g) {
        if (r.needs_grad(a)) r.accumulate(a, g.cwiseProduct(r.value(b)));
        if (r.needs_grad(b)) r.accumulate(b, g.cwiseProduct(r.value(a)));
      });
}

Var scale(const Var& a, double s) {
  return rec_of(a).record(
      "scale", {a}, [a, s](const GradRecord& r) { return Mat(r.value(a) * s); },
      [a, s](GradRecord& r, const Mat& g) { r.accumulate(a, g * s); });
}

Var sum(const Var& a) {
  return rec_of(a).record(
      "sum", {a}, [a](const GradRecord& r) { return Mat::Constant(1, 1, r.value(a).sum()); },
      [a](GradRecord& r, const Mat& g) {
        r.accumulate(a, Mat::Constant(r.value(a).rows(), r.value(a).cols(), g(0, 0)));
      });
}

Var log(const Var& a) {
  return rec_of(a).record(
      "log", {a}, [a](const GradRecord& r) { return Mat(r.value(a).array().log().matrix()); },
      [a](GradRecord& r, const Mat& g) { r.accumulate(a, Mat(g.array() / r.value(a).array())); });
}

Var gelu(const Var& a) {
  return rec_of(a).record(
      "gelu", {a}, [a](const GradRecord& r) { return patchgeo::gelu(r.value(a)); },
      [a](GradRecord& r, const Mat& g) {
        const double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
        const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
        Mat d = r.value(a).unaryExpr([&](double x) {
          return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
        });
        r.accumulate(a, g.cwiseProduct(d));
      });
}

Var softmax_rows(const Var& a) {
  return rec_of(a).record(
      "softmax_rows", {a}, [a](const GradRecord& r) { return patchgeo::softmax_rows(r.value(a)); },
      [a](GradRecord& r, const Mat& g) {
        const Mat y = patchgeo::softmax_rows(r.value(a));
        const Eigen::VectorXd inner = g.cwiseProduct(y).rowwise().sum();
        Mat dx = y.cwiseProduct(Mat(g.colwise() - inner));
        r.accumulate(a, dx);
      });
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias) {
  return rec_of(x).record(
      "layer_norm", {x, gain, bias},
      [x, gain, bias](const GradRecord& r) { return layer_norm_rows(r.value(x), r.value(gain), r.value(bias)); },
      [x, gain, bias](GradRecord& r, const Mat& g) {
        const Mat& xv = r.value(x);
        const Mat& gv = r.value(gain);
        const Index rows = xv.rows();
        const Index cols = xv.cols();
        const double n = static_cast<double>(cols);
        Mat xhat(rows, cols);
        Eigen::VectorXd inv(rows);
        for (Index i = 0; i < rows; ++i) {
          const double mean = xv.row(i).sum() / n;
          const Eigen::RowVectorXd c = xv.row(i).array() - mean;
          inv(i) = 1.0 / std::sqrt(c.squaredNorm() / n + kLayerNormEps);
          xhat.row(i) = c * inv(i);
        }
        if (r.needs_grad(bias)) r.accumulate(bias, g.colwise().sum());
        if (r.needs_grad(gain)) r.accumulate(gain, g.cwiseProduct(xhat).colwise().sum());
        if (r.needs_grad(x)) {
          Mat dx(rows, cols);
          for (Index i = 0; i < rows; ++i) {
            const Eigen::RowVectorXd dxh = g.row(i).cwiseProduct(gv.row(0));
            const double m1 = dxh.sum() / n;
            const double m2 = dxh.cwiseProduct(xhat.row(i)).sum() / n;
            dx.row(i) = inv(i) * (dxh.array() - m1 - xhat.row(i).array() * m2).matrix();
          }
          r.accumulate(x, dx);
        }
      });
}

Var gather(const Var& a, std::vector<Index> index, Index rows, Index cols) {
  if (static_cast<Index>(index.size()) != rows * cols) {
    throw DimensionError("gather: " + std::to_string(index.size()) + " indices for " + shape_string(rows, cols));
  }
  auto idx = std::make_shared<const std::vector<Index>>(std::move(index));
  return rec_of(a).record(
      "gather", {a},
      [a, idx, rows, cols](const GradRecord& r) {
        const Mat& src = r.value(a);
        Mat out(rows, cols);
        const Index n = src.size();
        for (Index i = 0; i < rows * cols; ++i) {
          const Index k = (*idx)[i];
          if (k < 0 || k >= n) throw ContractError("gather: index " + std::to_string(k) + " out of range");
          out.data()[i] = src.data()[k];
        }
        return out;
      },
      [a, idx](GradRecord& r, const Mat& g) {
        Mat d = Mat::Zero(r.value(a).rows(), r.value(a).cols());
        for (Index i = 0; i < g.size(); ++i) d.data()[(*idx)[i]] += g.data()[i];
        r.accumulate(a, d);
      });
}

}  // namespace ad

// ---------------------------------------------------------------------------
// Finite differences
// ---------------------------------------------------------------------------

double evaluate_loss(const LossBuilder& f, const std::map<std::string, Mat>& params) {
  GradRecord rec(false);
  std::map<std::string, Var> vars;
  for (const auto& [name, value] : params) vars[name] = rec.parameter(name, value);
  const Var loss = f(rec, vars);
  if (loss.rows() != 1 || loss.cols() != 1) throw ContractError("evaluate_loss: loss is not scalar");
  return loss.value()(0, 0);
}

FdReport finite_difference_check(const LossBuilder& f, const std::map<std::string, Mat>& params, double h,
                                 Index max_per_param) {
  Gradients analytic;
  {
    GradRecord rec;
    std::map<std::string, Var> vars;
    for (const auto& [name, value] : params) vars[name] = rec.parameter(name, value);
    analytic = rec.backward(f(rec, vars));
  }

  FdReport report;
  auto probe = params;
  for (auto& [name, value] : probe) {
    const Index n = value.size();
    const Index stride = (max_per_param > 0 && n > max_per_param) ? n / max_per_param : 1;
    for (Index k = 0; k < n; k += stride) {
      const double orig = value.data()[k];
      auto at = [&](double offset) {
        value.data()[k] = orig + offset;
        return evaluate_loss(f, probe);
      };
      const double d1 = at(h) - at(-h);
      const double d2 = at(2.0 * h) - at(-2.0 * h);
      value.data()[k] = orig;

      const double numeric = (8.0 * d1 - d2) / (12.0 * h);
      const double a = analytic.at(name).data()[k];
      const double denom = std::max({std::abs(a), std::abs(numeric), kFdDenominatorFloor});
      const double rel = std::abs(a - numeric) / denom;
      ++report.checked;
      if (rel > report.max_relative_error || report.worst_index < 0) {
        report.max_relative_error = rel;
        report.worst_parameter = name;
        report.worst_index = k;
        report.analytic = a;
        report.numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace patchgeo
