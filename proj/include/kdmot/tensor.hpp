#pragma once

// Dense row-major tensors of doubles with a define-by-run gradient tape.
//
// A Tensor is an immutable handle: its values, shape and the operation that
// produced it never change after construction. Training steps build new leaf
// tensors instead of mutating old ones. Gradients live in a Gradients object
// returned by backward(), not inside the tensors.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

namespace kdmot {

using Shape = std::vector<std::size_t>;
using Array = Eigen::ArrayXd;

inline constexpr std::size_t kMaxRank = 4;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Reverse-mode rule of one operation: receives d(root)/d(output) and adds
/// d(root)/d(input_k) into grad_inputs[k]. Entries are null for inputs that
/// do not require a gradient.
using BackwardFn = std::function<void(const Array& grad_output, std::span<Array* const> grad_inputs)>;

namespace detail {
struct Node;
}

class Tensor {
 public:
  Tensor() = default;

  /// Leaf tensor. Throws ShapeError when the value count does not match the shape.
  Tensor(Shape shape, Array values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  /// Result of an operation. The backward rule is recorded only when some
  /// input requires a gradient; otherwise the result is a plain constant.
  static Tensor from_op(Shape shape, Array values, std::vector<Tensor> inputs, BackwardFn backward);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;
  const Array& values() const;

  /// Value of a single-element tensor.
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  bool is_leaf() const;

  /// Same values, cut from the tape.
  Tensor detach() const;

  /// New leaf with this tensor's shape and requires_grad flag.
  Tensor with_values(Array values) const;

  const void* id() const noexcept { return node_.get(); }

 private:
  explicit Tensor(std::shared_ptr<const detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<const detail::Node> node_;

  friend class GradTape;
};

/// d(root)/d(tensor) for every tensor reached by a backward pass.
class Gradients {
 public:
  /// Gradient with the tensor's element count; zeros when the tensor was not reached.
  Array of(const Tensor& t) const;
  bool contains(const Tensor& t) const { return grads_.contains(t.id()); }

 private:
  std::unordered_map<const void*, Array> grads_;
  friend class GradTape;
};

/// Operations reachable from a scalar root, in reverse topological order.
class GradTape {
 public:
  /// Throws ShapeError when root is not a single-element tensor.
  explicit GradTape(const Tensor& root);

  std::size_t size() const noexcept { return order_.size(); }

  /// Replays the recorded operations from root back to the leaves.
  /// Gradients of tensors used more than once accumulate additively.
  Gradients backward() const;

 private:
  Tensor root_;
  std::vector<const detail::Node*> order_;
};

inline Gradients backward(const Tensor& root) { return GradTape(root).backward(); }

// Elementwise arithmetic on equal shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

/// ca * a + cb * b. A coefficient that is exactly zero cuts its branch from
/// the backward pass entirely.
Tensor linear_combination(const Tensor& a, double ca, const Tensor& b, double cb);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(double factor, const Tensor& a) { return scale(a, factor); }

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

Tensor relu(const Tensor& input);

/// Cross-correlation of input [B,C,H,W] with kernel [Cout,C,kH,kW] plus a
/// per-channel bias [Cout].
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, std::size_t stride = 1,
              std::size_t padding = 0);

/// Training-mode batch normalisation: statistics over B, H, W per channel,
/// biased variance.
Tensor batch_norm2d(const Tensor& input, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

/// Bilinear resampling of the last two axes with half-pixel centres and
/// edge clamping.
Tensor bilinear_resize(const Tensor& input, std::size_t out_h, std::size_t out_w);

/// Same row-major values under a new shape.
Tensor view(const Tensor& input, Shape new_shape);

/// output axis k is input axis order[k]; values are physically reordered.
Tensor permute(const Tensor& input, const std::vector<std::size_t>& order);

/// Contiguous sub-range [start, start + length) along one axis.
Tensor slice(const Tensor& input, std::size_t axis, std::size_t start, std::size_t length);

namespace detail {

/// Records ReLU activation patterns while installed; used by grad_check to
/// detect finite-difference steps that cross a kink.
class ReluProbe {
 public:
  ReluProbe();
  ~ReluProbe();
  ReluProbe(const ReluProbe&) = delete;
  ReluProbe& operator=(const ReluProbe&) = delete;

  void record(const Array& pre_activation);
  void clear() { pattern_.clear(); }
  const std::vector<bool>& pattern() const { return pattern_; }

  static ReluProbe* active();

 private:
  std::vector<bool> pattern_;
  ReluProbe* previous_;
};

}  // namespace detail

}  // namespace kdmot
