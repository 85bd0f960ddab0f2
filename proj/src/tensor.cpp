#include "kdmot/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "kdmot/error.hpp"

namespace kdmot {

namespace detail {

struct Node {
  Shape shape;
  Array values;
  bool requires_grad = false;
  std::vector<Tensor> inputs;
  BackwardFn backward;
};

namespace {
thread_local ReluProbe* g_active_probe = nullptr;
}

ReluProbe::ReluProbe() : previous_(g_active_probe) { g_active_probe = this; }
ReluProbe::~ReluProbe() { g_active_probe = previous_; }
ReluProbe* ReluProbe::active() { return g_active_probe; }

void ReluProbe::record(const Array& pre_activation) {
  for (Eigen::Index i = 0; i < pre_activation.size(); ++i) pattern_.push_back(pre_activation[i] > 0.0);
}

}  // namespace detail

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void validate_shape(const Shape& shape) {
  if (shape.empty() || shape.size() > kMaxRank) {
    throw ShapeError(fmt::format("rank must be in [1, {}], got shape {}", kMaxRank, shape_string(shape)));
  }
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == 0) throw ShapeError(fmt::format("extent of dimension {} is zero in {}", i, shape_string(shape)));
  }
}

std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
  return strides;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(fmt::format("{}: shape mismatch {} vs {}", op, shape_string(a.shape()), shape_string(b.shape())));
  }
}

void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* what) {
  if (t.rank() != rank) {
    throw ShapeError(fmt::format("{}: {} must have rank {}, got {}", op, what, rank, shape_string(t.shape())));
  }
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) { return fmt::format("({})", fmt::join(shape, ", ")); }

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor(Shape shape, Array values, bool requires_grad) {
  validate_shape(shape);
  if (static_cast<std::size_t>(values.size()) != shape_numel(shape)) {
    throw ShapeError(fmt::format("shape {} holds {} values, got {}", shape_string(shape), shape_numel(shape),
                                 values.size()));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  node->requires_grad = requires_grad;
  node_ = std::move(node);
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = static_cast<Eigen::Index>(shape_numel(shape));
  return Tensor(std::move(shape), Array::Constant(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return full({1}, value, requires_grad); }

Tensor Tensor::from_op(Shape shape, Array values, std::vector<Tensor> inputs, BackwardFn backward) {
  Tensor out(std::move(shape), std::move(values), false);
  const bool tracked = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  if (tracked) {
    auto node = std::const_pointer_cast<detail::Node>(out.node_);
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
  }
  return out;
}

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) throw ShapeError(fmt::format("axis {} out of range for {}", axis, shape_string(shape())));
  return node_->shape[axis];
}

std::size_t Tensor::numel() const { return static_cast<std::size_t>(node_->values.size()); }

const Array& Tensor::values() const { return node_->values; }

double Tensor::item() const {
  if (numel() != 1) throw ShapeError(fmt::format("item() on non-scalar tensor {}", shape_string(shape())));
  return node_->values[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != rank()) throw ShapeError("at(): index rank mismatch");
  const auto strides = strides_of(shape());
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= shape()[axis]) throw ShapeError(fmt::format("at(): index {} out of range on axis {}", i, axis));
    flat += i * strides[axis++];
  }
  return node_->values[static_cast<Eigen::Index>(flat)];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

bool Tensor::is_leaf() const { return !node_->backward; }

Tensor Tensor::detach() const { return Tensor(shape(), values(), false); }

Tensor Tensor::with_values(Array values) const { return Tensor(shape(), std::move(values), requires_grad()); }

// ---------------------------------------------------------------------------
// Tape

Array Gradients::of(const Tensor& t) const {
  if (auto it = grads_.find(t.id()); it != grads_.end()) return it->second;
  return Array::Zero(static_cast<Eigen::Index>(t.numel()));
}

GradTape::GradTape(const Tensor& root) : root_(root) {
  if (!root.defined() || root.numel() != 1) {
    throw ShapeError(fmt::format("backward needs a scalar root, got {}",
                                 root.defined() ? shape_string(root.shape()) : std::string("undefined")));
  }
  if (!root.requires_grad()) return;

  // Iterative post-order DFS; reversing it yields a valid reverse-mode order.
  std::vector<const detail::Node*> post;
  std::unordered_set<const detail::Node*> seen;
  std::vector<std::pair<const detail::Node*, std::size_t>> stack{{root.node_.get(), 0}};
  seen.insert(root.node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      const detail::Node* child = node->inputs[next++].node_.get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      post.push_back(node);
      stack.pop_back();
    }
  }
  order_.assign(post.rbegin(), post.rend());
}

Gradients GradTape::backward() const {
  Gradients out;
  if (order_.empty()) return out;
  out.grads_[root_.id()] = Array::Ones(1);
  for (const detail::Node* node : order_) {
    if (!node->backward) continue;
    auto it = out.grads_.find(node);
    if (it == out.grads_.end()) continue;
    const Array grad_output = it->second;
    std::vector<Array*> grad_inputs;
    grad_inputs.reserve(node->inputs.size());
    for (const Tensor& input : node->inputs) {
      if (!input.requires_grad()) {
        grad_inputs.push_back(nullptr);
        continue;
      }
      auto [slot, inserted] = out.grads_.try_emplace(input.id());
      if (inserted) slot->second = Array::Zero(static_cast<Eigen::Index>(input.numel()));
      grad_inputs.push_back(&slot->second);
    }
    node->backward(grad_output, grad_inputs);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  return Tensor::from_op(a.shape(), a.values() + b.values(), {a, b}, [](const Array& g, std::span<Array* const> in) {
    if (in[0]) *in[0] += g;
    if (in[1]) *in[1] += g;
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  return Tensor::from_op(a.shape(), a.values() - b.values(), {a, b}, [](const Array& g, std::span<Array* const> in) {
    if (in[0]) *in[0] += g;
    if (in[1]) *in[1] -= g;
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Array av = a.values();
  Array bv = b.values();
  Array out = av * bv;
  return Tensor::from_op(a.shape(), std::move(out), {a, b},
                         [av = std::move(av), bv = std::move(bv)](const Array& g, std::span<Array* const> in) {
                           if (in[0]) *in[0] += g * bv;
                           if (in[1]) *in[1] += g * av;
                         });
}

Tensor scale(const Tensor& a, double factor) {
  return Tensor::from_op(a.shape(), a.values() * factor, {a}, [factor](const Array& g, std::span<Array* const> in) {
    if (in[0]) *in[0] += g * factor;
  });
}

Tensor linear_combination(const Tensor& a, double ca, const Tensor& b, double cb) {
  require_same_shape(a, b, "linear_combination");
  Array out = ca * a.values() + cb * b.values();
  return Tensor::from_op(a.shape(), std::move(out), {a, b}, [ca, cb](const Array& g, std::span<Array* const> in) {
    if (in[0] && ca != 0.0) *in[0] += ca * g;
    if (in[1] && cb != 0.0) *in[1] += cb * g;
  });
}

Tensor sum(const Tensor& a) {
  return Tensor::from_op({1}, Array::Constant(1, a.values().sum()), {a}, [](const Array& g, std::span<Array* const> in) {
    if (in[0]) *in[0] += g[0];
  });
}

Tensor mean(const Tensor& a) {
  const double n = static_cast<double>(a.numel());
  return Tensor::from_op({1}, Array::Constant(1, a.values().sum() / n), {a},
                         [n](const Array& g, std::span<Array* const> in) {
                           if (in[0]) *in[0] += g[0] / n;
                         });
}

Tensor relu(const Tensor& input) {
  const Array& x = input.values();
  if (auto* probe = detail::ReluProbe::active()) probe->record(x);
  Array mask = (x > 0.0).cast<double>();
  Array out = x * mask;
  return Tensor::from_op(input.shape(), std::move(out), {input},
                         [mask = std::move(mask)](const Array& g, std::span<Array* const> in) {
                           if (in[0]) *in[0] += g * mask;
                         });
}

// ---------------------------------------------------------------------------
// Convolution

namespace {

struct ConvGeometry {
  std::size_t batch, channels, height, width;
  std::size_t out_channels, kernel_h, kernel_w;
  std::size_t stride, padding;
  std::size_t out_h, out_w;

  Eigen::Index patch_size() const { return static_cast<Eigen::Index>(channels * kernel_h * kernel_w); }
  Eigen::Index out_pixels() const { return static_cast<Eigen::Index>(out_h * out_w); }
};

// Columns are output pixels, rows are (channel, ky, kx) taps.
Eigen::MatrixXd im2col(const double* image, const ConvGeometry& g) {
  Eigen::MatrixXd cols = Eigen::MatrixXd::Zero(g.patch_size(), g.out_pixels());
  for (std::size_t c = 0; c < g.channels; ++c) {
    const double* plane = image + c * g.height * g.width;
    for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
        const auto row = static_cast<Eigen::Index>((c * g.kernel_h + ky) * g.kernel_w + kx);
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.padding);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.padding);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width)) continue;
            cols(row, static_cast<Eigen::Index>(oy * g.out_w + ox)) = plane[iy * static_cast<std::ptrdiff_t>(g.width) + ix];
          }
        }
      }
    }
  }
  return cols;
}

void col2im_accumulate(const Eigen::MatrixXd& cols, const ConvGeometry& g, double* image) {
  for (std::size_t c = 0; c < g.channels; ++c) {
    double* plane = image + c * g.height * g.width;
    for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
        const auto row = static_cast<Eigen::Index>((c * g.kernel_h + ky) * g.kernel_w + kx);
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.padding);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.padding);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width)) continue;
            plane[iy * static_cast<std::ptrdiff_t>(g.width) + ix] += cols(row, static_cast<Eigen::Index>(oy * g.out_w + ox));
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, std::size_t stride, std::size_t padding) {
  require_rank(input, 4, "conv2d", "input");
  require_rank(kernel, 4, "conv2d", "kernel");
  require_rank(bias, 1, "conv2d", "bias");
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  ConvGeometry g{input.dim(0), input.dim(1), input.dim(2), input.dim(3), kernel.dim(0), kernel.dim(2), kernel.dim(3),
                 stride,       padding,      0,            0};
  if (kernel.dim(1) != g.channels) {
    throw ShapeError(fmt::format("conv2d: input channels (dim 1) {} != kernel input channels (dim 1) {}", g.channels,
                                 kernel.dim(1)));
  }
  if (bias.dim(0) != g.out_channels) {
    throw ShapeError(fmt::format("conv2d: bias length (dim 0) {} != kernel output channels (dim 0) {}", bias.dim(0),
                                 g.out_channels));
  }
  if (g.height + 2 * padding < g.kernel_h) {
    throw ShapeError(fmt::format("conv2d: padded height (dim 2) {} < kernel height {}", g.height + 2 * padding,
                                 g.kernel_h));
  }
  if (g.width + 2 * padding < g.kernel_w) {
    throw ShapeError(fmt::format("conv2d: padded width (dim 3) {} < kernel width {}", g.width + 2 * padding,
                                 g.kernel_w));
  }
  g.out_h = (g.height + 2 * padding - g.kernel_h) / stride + 1;
  g.out_w = (g.width + 2 * padding - g.kernel_w) / stride + 1;

  Array in_values = input.values();
  Array k_values = kernel.values();
  const Eigen::Map<const RowMatrix> k(k_values.data(), static_cast<Eigen::Index>(g.out_channels), g.patch_size());
  const Eigen::Map<const Eigen::VectorXd> b(bias.values().data(), static_cast<Eigen::Index>(g.out_channels));

  const std::size_t in_plane = g.channels * g.height * g.width;
  const std::size_t out_plane = g.out_channels * g.out_h * g.out_w;
  Array out(static_cast<Eigen::Index>(g.batch * out_plane));
  for (std::size_t n = 0; n < g.batch; ++n) {
    const Eigen::MatrixXd cols = im2col(in_values.data() + n * in_plane, g);
    Eigen::Map<RowMatrix> y(out.data() + n * out_plane, static_cast<Eigen::Index>(g.out_channels), g.out_pixels());
    y.noalias() = k * cols;
    y.colwise() += b;
  }

  Shape out_shape{g.batch, g.out_channels, g.out_h, g.out_w};
  return Tensor::from_op(
      std::move(out_shape), std::move(out), {input, kernel, bias},
      [g, in_values = std::move(in_values), k_values = std::move(k_values), in_plane, out_plane](
          const Array& grad, std::span<Array* const> in) {
        const Eigen::Map<const RowMatrix> k(k_values.data(), static_cast<Eigen::Index>(g.out_channels),
                                            g.patch_size());
        for (std::size_t n = 0; n < g.batch; ++n) {
          const Eigen::Map<const RowMatrix> dy(grad.data() + n * out_plane,
                                               static_cast<Eigen::Index>(g.out_channels), g.out_pixels());
          if (in[1]) {
            const Eigen::MatrixXd cols = im2col(in_values.data() + n * in_plane, g);
            Eigen::Map<RowMatrix> dk(in[1]->data(), static_cast<Eigen::Index>(g.out_channels), g.patch_size());
            dk.noalias() += dy * cols.transpose();
          }
          if (in[2]) in[2]->matrix() += dy.rowwise().sum();
          if (in[0]) {
            const Eigen::MatrixXd dcols = k.transpose() * dy;
            col2im_accumulate(dcols, g, in[0]->data() + n * in_plane);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Batch norm

Tensor batch_norm2d(const Tensor& input, const Tensor& gamma, const Tensor& beta, double eps) {
  require_rank(input, 4, "batch_norm2d", "input");
  require_rank(gamma, 1, "batch_norm2d", "gamma");
  require_rank(beta, 1, "batch_norm2d", "beta");
  if (!(eps > 0.0)) throw DomainError("batch_norm2d: eps must be positive");
  const std::size_t batch = input.dim(0), channels = input.dim(1), plane = input.dim(2) * input.dim(3);
  if (gamma.dim(0) != channels || beta.dim(0) != channels) {
    throw ShapeError(fmt::format("batch_norm2d: input has {} channels but gamma/beta have {}/{}", channels,
                                 gamma.dim(0), beta.dim(0)));
  }
  const double count = static_cast<double>(batch * plane);
  const Array& x = input.values();
  const Array& gm = gamma.values();
  const Array& bt = beta.values();

  auto offset = [&](std::size_t n, std::size_t c) { return static_cast<Eigen::Index>((n * channels + c) * plane); };
  const auto plane_len = static_cast<Eigen::Index>(plane);

  Array xhat(x.size());
  Array inv_std(static_cast<Eigen::Index>(channels));
  Array out(x.size());
  for (std::size_t c = 0; c < channels; ++c) {
    double mu = 0.0;
    for (std::size_t n = 0; n < batch; ++n) mu += x.segment(offset(n, c), plane_len).sum();
    mu /= count;
    double var = 0.0;
    for (std::size_t n = 0; n < batch; ++n) var += (x.segment(offset(n, c), plane_len) - mu).square().sum();
    var /= count;
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<Eigen::Index>(c)] = is;
    for (std::size_t n = 0; n < batch; ++n) {
      xhat.segment(offset(n, c), plane_len) = (x.segment(offset(n, c), plane_len) - mu) * is;
      out.segment(offset(n, c), plane_len) =
          gm[static_cast<Eigen::Index>(c)] * xhat.segment(offset(n, c), plane_len) + bt[static_cast<Eigen::Index>(c)];
    }
  }

  Array gamma_values = gm;
  return Tensor::from_op(
      input.shape(), std::move(out), {input, gamma, beta},
      [batch, channels, plane, count, xhat = std::move(xhat), inv_std = std::move(inv_std),
       gamma_values = std::move(gamma_values)](const Array& grad, std::span<Array* const> in) {
        const auto plane_len = static_cast<Eigen::Index>(plane);
        auto offset = [&](std::size_t n, std::size_t c) {
          return static_cast<Eigen::Index>((n * channels + c) * plane);
        };
        for (std::size_t c = 0; c < channels; ++c) {
          const auto ci = static_cast<Eigen::Index>(c);
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (std::size_t n = 0; n < batch; ++n) {
            sum_dy += grad.segment(offset(n, c), plane_len).sum();
            sum_dy_xhat += (grad.segment(offset(n, c), plane_len) * xhat.segment(offset(n, c), plane_len)).sum();
          }
          if (in[1]) (*in[1])[ci] += sum_dy_xhat;
          if (in[2]) (*in[2])[ci] += sum_dy;
          if (in[0]) {
            const double k = gamma_values[ci] * inv_std[ci] / count;
            for (std::size_t n = 0; n < batch; ++n) {
              in[0]->segment(offset(n, c), plane_len) +=
                  k * (count * grad.segment(offset(n, c), plane_len) - sum_dy -
                       xhat.segment(offset(n, c), plane_len) * sum_dy_xhat);
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Resize

namespace {

struct AxisSamples {
  std::vector<std::size_t> lo, hi;
  std::vector<double> frac;
};

AxisSamples half_pixel_samples(std::size_t in, std::size_t out) {
  AxisSamples s;
  s.lo.resize(out);
  s.hi.resize(out);
  s.frac.resize(out);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  const double last = static_cast<double>(in - 1);
  for (std::size_t d = 0; d < out; ++d) {
    const double src = std::clamp((static_cast<double>(d) + 0.5) * ratio - 0.5, 0.0, last);
    const auto lo = static_cast<std::size_t>(std::floor(src));
    s.lo[d] = lo;
    s.hi[d] = std::min(lo + 1, in - 1);
    s.frac[d] = src - static_cast<double>(lo);
  }
  return s;
}

}  // namespace

Tensor bilinear_resize(const Tensor& input, std::size_t out_h, std::size_t out_w) {
  require_rank(input, 4, "bilinear_resize", "input");
  if (out_h == 0 || out_w == 0) throw ShapeError("bilinear_resize: output size must be positive");
  const std::size_t planes = input.dim(0) * input.dim(1);
  const std::size_t in_h = input.dim(2), in_w = input.dim(3);
  AxisSamples ys = half_pixel_samples(in_h, out_h);
  AxisSamples xs = half_pixel_samples(in_w, out_w);

  const Array& x = input.values();
  Array out(static_cast<Eigen::Index>(planes * out_h * out_w));
  for (std::size_t p = 0; p < planes; ++p) {
    const double* src = x.data() + p * in_h * in_w;
    double* dst = out.data() + p * out_h * out_w;
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const double wy = ys.frac[oy];
      const double* r0 = src + ys.lo[oy] * in_w;
      const double* r1 = src + ys.hi[oy] * in_w;
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const double wx = xs.frac[ox];
        const std::size_t x0 = xs.lo[ox], x1 = xs.hi[ox];
        const double top = (1.0 - wx) * r0[x0] + wx * r0[x1];
        const double bottom = (1.0 - wx) * r1[x0] + wx * r1[x1];
        dst[oy * out_w + ox] = (1.0 - wy) * top + wy * bottom;
      }
    }
  }

  Shape out_shape{input.dim(0), input.dim(1), out_h, out_w};
  return Tensor::from_op(std::move(out_shape), std::move(out), {input},
                         [planes, in_h, in_w, out_h, out_w, ys = std::move(ys), xs = std::move(xs)](
                             const Array& grad, std::span<Array* const> in) {
                           if (!in[0]) return;
                           for (std::size_t p = 0; p < planes; ++p) {
                             const double* g = grad.data() + p * out_h * out_w;
                             double* dst = in[0]->data() + p * in_h * in_w;
                             for (std::size_t oy = 0; oy < out_h; ++oy) {
                               const double wy = ys.frac[oy];
                               double* r0 = dst + ys.lo[oy] * in_w;
                               double* r1 = dst + ys.hi[oy] * in_w;
                               for (std::size_t ox = 0; ox < out_w; ++ox) {
                                 const double wx = xs.frac[ox];
                                 const double v = g[oy * out_w + ox];
                                 r0[xs.lo[ox]] += (1.0 - wy) * (1.0 - wx) * v;
                                 r0[xs.hi[ox]] += (1.0 - wy) * wx * v;
                                 r1[xs.lo[ox]] += wy * (1.0 - wx) * v;
                                 r1[xs.hi[ox]] += wy * wx * v;
                               }
                             }
                           }
                         });
}

// ---------------------------------------------------------------------------
// Layout

Tensor view(const Tensor& input, Shape new_shape) {
  validate_shape(new_shape);
  if (shape_numel(new_shape) != input.numel()) {
    throw ShapeError(fmt::format("view: cannot view {} ({} elements) as {} ({} elements)", shape_string(input.shape()),
                                 input.numel(), shape_string(new_shape), shape_numel(new_shape)));
  }
  return Tensor::from_op(std::move(new_shape), input.values(), {input},
                         [](const Array& g, std::span<Array* const> in) {
                           if (in[0]) *in[0] += g;
                         });
}

Tensor permute(const Tensor& input, const std::vector<std::size_t>& order) {
  const std::size_t rank = input.rank();
  std::vector<bool> used(rank, false);
  bool valid = order.size() == rank;
  for (std::size_t axis : order) {
    if (!valid || axis >= rank || used[axis]) {
      valid = false;
      break;
    }
    used[axis] = true;
  }
  if (!valid) {
    throw ShapeError(fmt::format("permute: ({}) is not a permutation of the {} axes of {}", fmt::join(order, ", "),
                                 rank, shape_string(input.shape())));
  }

  Shape out_shape(rank);
  for (std::size_t k = 0; k < rank; ++k) out_shape[k] = input.shape()[order[k]];
  const auto in_strides = strides_of(input.shape());

  // source[i] = input offset of output element i
  std::vector<std::size_t> source(input.numel());
  std::vector<std::size_t> index(rank, 0);
  for (std::size_t i = 0; i < source.size(); ++i) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < rank; ++k) offset += index[k] * in_strides[order[k]];
    source[i] = offset;
    for (std::size_t k = rank; k-- > 0;) {
      if (++index[k] < out_shape[k]) break;
      index[k] = 0;
    }
  }

  const Array& x = input.values();
  Array out(x.size());
  for (std::size_t i = 0; i < source.size(); ++i) out[static_cast<Eigen::Index>(i)] = x[static_cast<Eigen::Index>(source[i])];

  return Tensor::from_op(std::move(out_shape), std::move(out), {input},
                         [source = std::move(source)](const Array& g, std::span<Array* const> in) {
                           if (!in[0]) return;
                           for (std::size_t i = 0; i < source.size(); ++i) {
                             (*in[0])[static_cast<Eigen::Index>(source[i])] += g[static_cast<Eigen::Index>(i)];
                           }
                         });
}

Tensor slice(const Tensor& input, std::size_t axis, std::size_t start, std::size_t length) {
  if (axis >= input.rank()) throw ShapeError(fmt::format("slice: axis {} out of range", axis));
  if (length == 0 || start + length > input.dim(axis)) {
    throw ShapeError(fmt::format("slice: range [{}, {}) outside dimension {} of extent {}", start, start + length,
                                 axis, input.dim(axis)));
  }
  const Shape& shape = input.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t k = 0; k < axis; ++k) outer *= shape[k];
  for (std::size_t k = axis + 1; k < shape.size(); ++k) inner *= shape[k];
  const std::size_t extent = shape[axis];

  Array out(static_cast<Eigen::Index>(outer * length * inner));
  const auto block = static_cast<Eigen::Index>(length * inner);
  for (std::size_t o = 0; o < outer; ++o) {
    out.segment(static_cast<Eigen::Index>(o) * block, block) =
        input.values().segment(static_cast<Eigen::Index>((o * extent + start) * inner), block);
  }
  Shape out_shape = shape;
  out_shape[axis] = length;
  return Tensor::from_op(std::move(out_shape), std::move(out), {input},
                         [outer, extent, start, inner, block](const Array& g, std::span<Array* const> in) {
                           if (!in[0]) return;
                           for (std::size_t o = 0; o < outer; ++o) {
                             in[0]->segment(static_cast<Eigen::Index>((o * extent + start) * inner), block) +=
                                 g.segment(static_cast<Eigen::Index>(o) * block, block);
                           }
                         });
}

}  // namespace kdmot
