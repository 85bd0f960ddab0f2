#include "kdmot/models.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "kdmot/error.hpp"
#include "kdmot/losses.hpp"
#include "kdmot/random.hpp"

namespace kdmot {

std::string_view to_string(SizePreset preset) {
  switch (preset) {
    case SizePreset::small: return "small";
    case SizePreset::base: return "base";
    case SizePreset::large: return "large";
    case SizePreset::custom: return "custom";
  }
  return "custom";
}

SizePreset parse_size_preset(std::string_view text) {
  if (text == "small") return SizePreset::small;
  if (text == "base") return SizePreset::base;
  if (text == "large") return SizePreset::large;
  if (text == "custom") return SizePreset::custom;
  throw DomainError(fmt::format("unknown teacher size '{}' (expected small, base, large or custom)", text));
}

std::size_t preset_hidden_dim(SizePreset preset) {
  switch (preset) {
    case SizePreset::small: return 384;
    case SizePreset::base: return 768;
    case SizePreset::large: return 1024;
    case SizePreset::custom: break;
  }
  throw DomainError("custom teacher size has no preset hidden dimension");
}

TeacherConfig TeacherConfig::from_preset(SizePreset size, std::size_t patch, std::uint64_t seed) {
  return {size, preset_hidden_dim(size), patch, seed};
}

// ---------------------------------------------------------------------------
// Teacher

namespace {

constexpr std::uint64_t kLiftStream = 1;
constexpr std::uint64_t kClsStream = 2;
constexpr std::uint64_t kPositionStreamBase = 1000;
constexpr double kOffsetScale = 0.1;

Eigen::VectorXd random_vector(std::uint64_t seed, std::size_t n, double bound) {
  Rng rng(seed);
  return rng.uniform_array(static_cast<Eigen::Index>(n), -bound, bound).matrix();
}

}  // namespace

Teacher::Teacher(TeacherConfig config) : config_(config) {
  if (config_.hidden_dim == 0) throw DomainError("teacher hidden_dim must be positive");
  if (config_.patch == 0) throw DomainError("teacher patch size must be positive");
  lift_ = random_vector(derive_seed(config_.seed, kLiftStream), config_.hidden_dim, 1.0);
  const Eigen::VectorXd cls = random_vector(derive_seed(config_.seed, kClsStream), 2 * config_.hidden_dim, 1.0);
  cls_lift_ = cls.head(static_cast<Eigen::Index>(config_.hidden_dim));
  cls_offset_ = kOffsetScale * cls.tail(static_cast<Eigen::Index>(config_.hidden_dim));
}

Eigen::VectorXd Teacher::position_offset(std::size_t position) const {
  return random_vector(derive_seed(config_.seed, kPositionStreamBase + position), config_.hidden_dim, kOffsetScale);
}

PatchEmbedding Teacher::forward(const SyntheticFrame& frame) const {
  const auto height = static_cast<std::size_t>(frame.pixels.rows());
  const auto width = static_cast<std::size_t>(frame.pixels.cols());
  const std::size_t p = config_.patch;
  if (height == 0 || width == 0 || height % p != 0 || width % p != 0) {
    throw ShapeError(fmt::format("teacher: frame {}x{} is not divisible by patch size {}", height, width, p));
  }
  const std::size_t rows = height / p, cols = width / p, hidden = config_.hidden_dim;
  const std::size_t tokens = rows * cols + 1;

  using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  RowMatrix embedding(static_cast<Eigen::Index>(tokens), static_cast<Eigen::Index>(hidden));
  embedding.row(0) = (frame.pixels.mean() * cls_lift_ + cls_offset_).transpose();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const double pooled = frame.pixels
                                .block(static_cast<Eigen::Index>(r * p), static_cast<Eigen::Index>(c * p),
                                       static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p))
                                .mean();
      const std::size_t position = r * cols + c;
      embedding.row(static_cast<Eigen::Index>(1 + position)) = (pooled * lift_ + position_offset(position)).transpose();
    }
  }

  PatchEmbedding out;
  out.tokens = Tensor({1, tokens, hidden}, Eigen::Map<const Array>(embedding.data(), embedding.size()));
  out.has_cls = true;
  out.image_h = height;
  out.image_w = width;
  out.patch_h = out.patch_w = p;
  return out;
}

// ---------------------------------------------------------------------------
// Student

std::vector<Tensor*> StudentParams::trainable() { return {&conv1_kernel, &conv1_bias, &conv2_kernel, &conv2_bias}; }

std::vector<Tensor> StudentParams::tensors() const { return {conv1_kernel, conv1_bias, conv2_kernel, conv2_bias}; }

StudentParams make_student(const StudentConfig& config, std::uint64_t seed) {
  if (config.hidden_channels == 0 || config.out_channels == 0) throw DomainError("student channel counts must be positive");
  Rng rng(seed);
  const auto kaiming = [&](std::size_t out, std::size_t in) {
    const double bound = std::sqrt(6.0 / static_cast<double>(in * 9));
    return Tensor({out, in, 3, 3}, rng.uniform_array(static_cast<Eigen::Index>(out * in * 9), -bound, bound), true);
  };
  StudentParams params;
  params.conv1_kernel = kaiming(config.hidden_channels, 1);
  params.conv1_bias = Tensor::zeros({config.hidden_channels}, true);
  params.conv2_kernel = kaiming(config.out_channels, config.hidden_channels);
  params.conv2_bias = Tensor::zeros({config.out_channels}, true);
  return params;
}

std::size_t student_output_extent(std::size_t input_extent) {
  const auto once = [](std::size_t n) { return (n + 2 - 3) / 2 + 1; };
  return once(once(input_extent));
}

Tensor frame_to_tensor(const SyntheticFrame& frame) {
  using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const RowMatrix row_major = frame.pixels;
  return Tensor({1, 1, static_cast<std::size_t>(frame.pixels.rows()), static_cast<std::size_t>(frame.pixels.cols())},
                Eigen::Map<const Array>(row_major.data(), row_major.size()));
}

FeatureMap student_forward(const SyntheticFrame& frame, const StudentParams& params) {
  const Tensor x = frame_to_tensor(frame);
  const Tensor hidden = relu(conv2d(x, params.conv1_kernel, params.conv1_bias, 2, 1));
  return FeatureMap(conv2d(hidden, params.conv2_kernel, params.conv2_bias, 2, 1));
}

// ---------------------------------------------------------------------------
// Proxy task

Tensor render_center_heatmap(std::span<const BBox> boxes, int image_width, int image_height, std::size_t grid_h,
                             std::size_t grid_w, double sigma) {
  if (image_width <= 0 || image_height <= 0) throw DomainError("heatmap: image dimensions must be positive");
  if (grid_h == 0 || grid_w == 0) throw ShapeError("heatmap: grid size must be positive");
  Array heat = Array::Zero(static_cast<Eigen::Index>(grid_h * grid_w));
  const double sx = static_cast<double>(grid_w) / image_width;
  const double sy = static_cast<double>(grid_h) / image_height;
  for (const BBox& box : boxes) {
    const double cx = box.center_x() * sx;
    const double cy = box.center_y() * sy;
    for (std::size_t y = 0; y < grid_h; ++y) {
      for (std::size_t x = 0; x < grid_w; ++x) {
        const double dx = static_cast<double>(x) + 0.5 - cx;
        const double dy = static_cast<double>(y) + 0.5 - cy;
        const double v = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
        auto& cell = heat[static_cast<Eigen::Index>(y * grid_w + x)];
        cell = std::max(cell, v);
      }
    }
  }
  return Tensor({1, 1, grid_h, grid_w}, std::move(heat));
}

Tensor proxy_task_loss(const FeatureMap& map, const Tensor& heatmap) {
  if (heatmap.rank() != 4 || heatmap.dim(1) != 1 || heatmap.dim(0) != map.batch()) {
    throw ShapeError(fmt::format("proxy task loss: heatmap {} incompatible with feature map {}",
                                 shape_string(heatmap.shape()), shape_string(map.tensor().shape())));
  }
  const Tensor first = slice(map.tensor(), 1, 0, 1);
  return mse_loss(bilinear_resize(first, heatmap.dim(2), heatmap.dim(3)), heatmap);
}

}  // namespace kdmot
