#pragma once

// Teacher patch embeddings -> spatial feature maps, and the two adapter heads
// that project a student feature map onto the teacher's (channels, height,
// width). Alignment always runs student -> teacher.

#include <cstddef>
#include <cstdint>
#include <string_view>
#include <vector>

#include "kdmot/tensor.hpp"

namespace kdmot {

/// Tensor [batch, channels, height, width].
class FeatureMap {
 public:
  FeatureMap() = default;
  /// Throws ShapeError unless the tensor has rank 4.
  explicit FeatureMap(Tensor tensor);

  const Tensor& tensor() const { return tensor_; }
  std::size_t batch() const { return tensor_.dim(0); }
  std::size_t channels() const { return tensor_.dim(1); }
  std::size_t height() const { return tensor_.dim(2); }
  std::size_t width() const { return tensor_.dim(3); }

 private:
  Tensor tensor_;
};

/// Transformer output [batch, tokens, hidden] plus the image geometry that
/// produced it.
struct PatchEmbedding {
  Tensor tokens;
  bool has_cls = false;
  std::size_t image_h = 0;
  std::size_t image_w = 0;
  std::size_t patch_h = 1;
  std::size_t patch_w = 1;

  std::size_t patches_h() const { return image_h / patch_h; }
  std::size_t patches_w() const { return image_w / patch_w; }

  /// Throws ShapeError when image/patch sizes do not divide or the token count
  /// disagrees with the patch grid.
  void validate() const;
};

struct TargetShape {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  friend bool operator==(const TargetShape&, const TargetShape&) = default;
};

enum class HeadKind { single, multi };

std::string_view to_string(HeadKind kind);
HeadKind parse_head_kind(std::string_view text);

struct ConvStage {
  Tensor kernel;
  Tensor bias;
  Tensor gamma;  // empty for stages without batch norm
  Tensor beta;
  std::size_t stride = 1;
  std::size_t padding = 0;

  bool normalised() const { return gamma.defined(); }
};

struct HeadParams {
  HeadKind kind = HeadKind::single;
  std::vector<ConvStage> stages;

  /// single: one conv stage without norm; multi: two conv-BN stages.
  void validate() const;
  std::size_t out_channels() const { return stages.back().kernel.dim(0); }

  /// Handles to every trainable tensor, for in-place replacement by an optimiser.
  std::vector<Tensor*> trainable();
  std::vector<Tensor> tensors() const;
};

struct MultiHeadOptions {
  std::size_t kernel_size = 3;
  std::size_t padding = 1;
  std::size_t hidden_channels = 0;  // 0: same as the target channel count
};

inline constexpr double kHeadBatchNormEps = 1e-5;

/// Kaiming-uniform (fan-in) kernels, zero biases, gamma = 1, beta = 0.
/// The single head uses a 1x1 convolution.
HeadParams make_head(HeadKind kind, std::size_t student_channels, std::size_t target_channels, std::uint64_t seed,
                     const MultiHeadOptions& options = {});

FeatureMap patch_to_spatial(const PatchEmbedding& embedding);

/// Inverse of patch_to_spatial for embeddings without a CLS token.
PatchEmbedding spatial_to_patch(const FeatureMap& map, std::size_t patch_h = 1, std::size_t patch_w = 1);

/// conv (1x1) to the target channels, then bilinear resize to the target size.
FeatureMap single_layer_head(const FeatureMap& student, const HeadParams& params, const TargetShape& target);

/// [conv -> batch norm -> relu] x 2, then bilinear resize to the target size.
FeatureMap multi_layer_head(const FeatureMap& student, const HeadParams& params, const TargetShape& target);

/// Dispatches on params.kind.
FeatureMap align_to_teacher(const FeatureMap& student, const HeadParams& params, const TargetShape& target);

/// [batch, channels * height * width], row-major per sample.
Tensor flatten_per_sample(const FeatureMap& map);

}  // namespace kdmot
