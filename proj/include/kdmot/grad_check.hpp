#pragma once

#include <cstddef>
#include <functional>

#include "kdmot/tensor.hpp"

namespace kdmot {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped_kinks = 0;
};

using ScalarFunction = std::function<Tensor(const Tensor&)>;

/// Compares the reverse-mode gradient of f at input against central finite
/// differences with the given step. Per element the error is
/// |analytic - fd| / max(|analytic|, |fd|, 1e-8). Elements whose +/- step
/// flips any ReLU in f are skipped: the finite difference straddles a kink
/// there and is not a derivative.
GradCheckResult grad_check_detailed(const ScalarFunction& f, const Tensor& input, double step = 1e-3);

/// Maximum relative error of grad_check_detailed.
inline double grad_check(const ScalarFunction& f, const Tensor& input, double step = 1e-3) {
  return grad_check_detailed(f, input, step).max_relative_error;
}

}  // namespace kdmot
