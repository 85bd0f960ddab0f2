#include "kdmot/losses.hpp"

#include <cmath>

#include <fmt/format.h>

#include "kdmot/error.hpp"

namespace kdmot {

std::string_view to_string(LossKind kind) { return kind == LossKind::cosine ? "cosine" : "mse"; }

LossKind parse_loss_kind(std::string_view text) {
  if (text == "cosine") return LossKind::cosine;
  if (text == "mse") return LossKind::mse;
  throw DomainError(fmt::format("unknown loss '{}' (expected cosine or mse)", text));
}

Alpha::Alpha(double value) : value_(value) {
  if (!(value >= 0.0 && value <= 1.0)) throw DomainError(fmt::format("alpha must lie in [0, 1], got {}", value));
}

Tensor cosine_embedding_loss(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape() || a.rank() != 2) {
    throw ShapeError(fmt::format("cosine_embedding_loss expects equal [batch, d] shapes, got {} and {}",
                                 shape_string(a.shape()), shape_string(b.shape())));
  }
  using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const auto rows = static_cast<Eigen::Index>(a.dim(0));
  const auto cols = static_cast<Eigen::Index>(a.dim(1));
  const Eigen::Map<const RowMatrix> x(a.values().data(), rows, cols);
  const Eigen::Map<const RowMatrix> y(b.values().data(), rows, cols);

  Eigen::VectorXd norm_x = x.rowwise().norm();
  Eigen::VectorXd norm_y = y.rowwise().norm();
  for (Eigen::Index r = 0; r < rows; ++r) {
    if (norm_x[r] == 0.0) throw DomainError(fmt::format("cosine_embedding_loss: row {} of the first input has zero norm", r));
    if (norm_y[r] == 0.0) throw DomainError(fmt::format("cosine_embedding_loss: row {} of the second input has zero norm", r));
  }
  Eigen::VectorXd cosine = x.cwiseProduct(y).rowwise().sum().cwiseQuotient(norm_x.cwiseProduct(norm_y));
  const double loss = (1.0 - cosine.array()).mean();

  return Tensor::from_op(
      {1}, Array::Constant(1, loss), {a, b},
      [xa = Array(a.values()), ya = Array(b.values()), norm_x, norm_y, cosine, rows, cols](
          const Array& grad, std::span<Array* const> in) {
        const Eigen::Map<const RowMatrix> x(xa.data(), rows, cols);
        const Eigen::Map<const RowMatrix> y(ya.data(), rows, cols);
        const double g = grad[0] / static_cast<double>(rows);
        for (Eigen::Index r = 0; r < rows; ++r) {
          const double inv = 1.0 / (norm_x[r] * norm_y[r]);
          if (in[0]) {
            Eigen::Map<RowMatrix> dx(in[0]->data(), rows, cols);
            dx.row(r) -= g * (y.row(r) * inv - x.row(r) * (cosine[r] / (norm_x[r] * norm_x[r])));
          }
          if (in[1]) {
            Eigen::Map<RowMatrix> dy(in[1]->data(), rows, cols);
            dy.row(r) -= g * (x.row(r) * inv - y.row(r) * (cosine[r] / (norm_y[r] * norm_y[r])));
          }
        }
      });
}

Tensor mse_loss(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(fmt::format("mse_loss: shape mismatch {} vs {}", shape_string(a.shape()), shape_string(b.shape())));
  }
  Array diff = b.values() - a.values();
  const double n = static_cast<double>(a.numel());
  const double loss = diff.square().sum() / n;
  return Tensor::from_op({1}, Array::Constant(1, loss), {a, b},
                         [diff = std::move(diff), n](const Array& grad, std::span<Array* const> in) {
                           const double k = 2.0 * grad[0] / n;
                           if (in[0]) *in[0] -= k * diff;
                           if (in[1]) *in[1] += k * diff;
                         });
}

Tensor combined_loss(const Tensor& task_loss, const Tensor& distill_loss, Alpha alpha) {
  if (task_loss.numel() != 1 || distill_loss.numel() != 1) {
    throw ShapeError("combined_loss expects scalar task and distillation losses");
  }
  const double a = alpha.value();
  return linear_combination(view(task_loss, {1}), 1.0 - a, view(distill_loss, {1}), a);
}

Tensor distillation_loss(LossKind kind, const FeatureMap& aligned_student, const FeatureMap& teacher) {
  if (kind == LossKind::cosine) {
    return cosine_embedding_loss(flatten_per_sample(aligned_student), flatten_per_sample(teacher));
  }
  return mse_loss(aligned_student.tensor(), teacher.tensor());
}

}  // namespace kdmot
