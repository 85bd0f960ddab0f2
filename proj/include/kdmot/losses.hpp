#pragma once

#include <string_view>

#include "kdmot/feature_align.hpp"
#include "kdmot/tensor.hpp"

namespace kdmot {

enum class LossKind { cosine, mse };

std::string_view to_string(LossKind kind);
LossKind parse_loss_kind(std::string_view text);

/// Blend weight between task and distillation loss, 0 <= value <= 1.
class Alpha {
 public:
  /// Throws DomainError outside [0, 1].
  explicit Alpha(double value);
  double value() const noexcept { return value_; }

 private:
  double value_;
};

/// Mean over rows of 1 - cos(a_i, b_i) for a, b of shape [batch, d].
/// Throws DomainError naming the row when a row has zero norm.
Tensor cosine_embedding_loss(const Tensor& a, const Tensor& b);

/// (1/N) * sum (b - a)^2 over all N elements.
Tensor mse_loss(const Tensor& a, const Tensor& b);

/// (1 - alpha) * task + alpha * distill. The weight-zero branch receives no gradient.
Tensor combined_loss(const Tensor& task_loss, const Tensor& distill_loss, Alpha alpha);

/// Distillation loss between an aligned student map and the teacher map.
/// Cosine compares the per-sample flattened maps; MSE compares elementwise.
Tensor distillation_loss(LossKind kind, const FeatureMap& aligned_student, const FeatureMap& teacher);

}  // namespace kdmot
