#pragma once

// Desk-scale stand-ins: a frozen teacher that turns frames into patch
// embeddings, a small trainable student conv stack, and a heatmap proxy for
// the tracker's task loss.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "kdmot/feature_align.hpp"
#include "kdmot/mot_data.hpp"
#include "kdmot/tensor.hpp"

namespace kdmot {

enum class SizePreset { small, base, large, custom };

std::string_view to_string(SizePreset preset);
SizePreset parse_size_preset(std::string_view text);

/// Hidden width of a preset: small 384, base 768, large 1024.
std::size_t preset_hidden_dim(SizePreset preset);

struct TeacherConfig {
  SizePreset size = SizePreset::base;
  std::size_t hidden_dim = 768;
  std::size_t patch = 14;
  std::uint64_t seed = 0;

  static TeacherConfig from_preset(SizePreset size, std::size_t patch = 14, std::uint64_t seed = 0);
};

/// Frozen random-projection featuriser. Each patch is mean-pooled, lifted to
/// hidden_dim by a fixed random vector and offset by a fixed per-position
/// vector. Token 0 is a CLS token computed from the whole frame. Holds no
/// trainable state; its outputs never carry a gradient tape.
class Teacher {
 public:
  explicit Teacher(TeacherConfig config);

  const TeacherConfig& config() const { return config_; }

  /// Throws ShapeError when the frame size is not a multiple of the patch size.
  PatchEmbedding forward(const SyntheticFrame& frame) const;

 private:
  Eigen::VectorXd position_offset(std::size_t position) const;

  TeacherConfig config_;
  Eigen::VectorXd lift_;
  Eigen::VectorXd cls_lift_;
  Eigen::VectorXd cls_offset_;
};

inline PatchEmbedding teacher_forward(const SyntheticFrame& frame, const TeacherConfig& config) {
  return Teacher(config).forward(frame);
}

struct StudentConfig {
  std::size_t hidden_channels = 8;
  std::size_t out_channels = 16;
};

/// Two 3x3 stride-2 convolutions with a ReLU between them: output stride 4.
struct StudentParams {
  Tensor conv1_kernel, conv1_bias;
  Tensor conv2_kernel, conv2_bias;

  std::size_t out_channels() const { return conv2_kernel.dim(0); }
  std::vector<Tensor*> trainable();
  std::vector<Tensor> tensors() const;
};

StudentParams make_student(const StudentConfig& config, std::uint64_t seed);

/// Spatial size of the student output for an input extent.
std::size_t student_output_extent(std::size_t input_extent);

Tensor frame_to_tensor(const SyntheticFrame& frame);

FeatureMap student_forward(const SyntheticFrame& frame, const StudentParams& params);

inline constexpr double kHeatmapSigma = 1.5;  // grid cells

/// [1, 1, grid_h, grid_w] map with a Gaussian bump (peak 1) at each box
/// centre, combined by maximum.
Tensor render_center_heatmap(std::span<const BBox> boxes, int image_width, int image_height, std::size_t grid_h,
                             std::size_t grid_w, double sigma = kHeatmapSigma);

/// MSE between the map's first channel, resized to the heatmap, and the heatmap.
Tensor proxy_task_loss(const FeatureMap& map, const Tensor& heatmap);

}  // namespace kdmot
