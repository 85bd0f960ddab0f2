#include "kdmot/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "kdmot/error.hpp"

namespace kdmot {

namespace {

struct Evaluation {
  double value;
  std::vector<bool> relu_pattern;
};

Evaluation evaluate(const ScalarFunction& f, const Tensor& x) {
  detail::ReluProbe probe;
  const double value = f(x).item();
  return {value, probe.pattern()};
}

}  // namespace

GradCheckResult grad_check_detailed(const ScalarFunction& f, const Tensor& input, double step) {
  if (!(step > 0.0)) throw DomainError("grad_check: step must be positive");
  const Tensor leaf(input.shape(), input.values(), true);

  std::vector<bool> base_pattern;
  Array analytic;
  {
    detail::ReluProbe probe;
    const Tensor root = f(leaf);
    base_pattern = probe.pattern();
    analytic = backward(root).of(leaf);
  }

  GradCheckResult result;
  Array perturbed = input.values();
  for (Eigen::Index i = 0; i < perturbed.size(); ++i) {
    const double original = perturbed[i];
    perturbed[i] = original + step;
    const Evaluation plus = evaluate(f, Tensor(input.shape(), perturbed));
    perturbed[i] = original - step;
    const Evaluation minus = evaluate(f, Tensor(input.shape(), perturbed));
    perturbed[i] = original;

    if (plus.relu_pattern != base_pattern || minus.relu_pattern != base_pattern) {
      ++result.skipped_kinks;
      continue;
    }
    const double fd = (plus.value - minus.value) / (2.0 * step);
    const double a = analytic[i];
    const double denom = std::max({std::abs(a), std::abs(fd), 1e-8});
    result.max_relative_error = std::max(result.max_relative_error, std::abs(a - fd) / denom);
    ++result.checked;
  }
  return result;
}

}  // namespace kdmot
