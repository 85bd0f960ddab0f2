#include "kdmot/feature_align.hpp"

#include <cmath>

#include <fmt/format.h>

#include "kdmot/error.hpp"
#include "kdmot/random.hpp"

namespace kdmot {

FeatureMap::FeatureMap(Tensor tensor) : tensor_(std::move(tensor)) {
  if (!tensor_.defined() || tensor_.rank() != 4) {
    throw ShapeError("feature map must be a rank-4 tensor [batch, channels, height, width]");
  }
}

void PatchEmbedding::validate() const {
  if (!tokens.defined() || tokens.rank() != 3) throw ShapeError("patch embedding must be [batch, tokens, hidden]");
  if (patch_h == 0 || patch_w == 0 || image_h == 0 || image_w == 0) {
    throw ShapeError("patch embedding: image and patch sizes must be positive");
  }
  if (image_h % patch_h != 0) {
    throw ShapeError(fmt::format("image height {} is not divisible by patch height {}", image_h, patch_h));
  }
  if (image_w % patch_w != 0) {
    throw ShapeError(fmt::format("image width {} is not divisible by patch width {}", image_w, patch_w));
  }
  const std::size_t expected = patches_h() * patches_w() + (has_cls ? 1 : 0);
  if (tokens.dim(1) != expected) {
    throw ShapeError(fmt::format("patch embedding has {} tokens, expected {} ({}x{} patches{})", tokens.dim(1), expected,
                                 patches_h(), patches_w(), has_cls ? " + CLS" : ""));
  }
}

std::string_view to_string(HeadKind kind) { return kind == HeadKind::single ? "single" : "multi"; }

HeadKind parse_head_kind(std::string_view text) {
  if (text == "single" || text == "false") return HeadKind::single;
  if (text == "multi" || text == "true") return HeadKind::multi;
  throw DomainError(fmt::format("unknown head kind '{}' (expected single or multi)", text));
}

void HeadParams::validate() const {
  const std::size_t expected = kind == HeadKind::single ? 1 : 2;
  if (stages.size() != expected) {
    throw ShapeError(fmt::format("{} head needs {} conv stage(s), has {}", to_string(kind), expected, stages.size()));
  }
  for (const ConvStage& stage : stages) {
    if (stage.normalised() != (kind == HeadKind::multi)) {
      throw ShapeError(fmt::format("{} head stage has unexpected batch-norm configuration", to_string(kind)));
    }
  }
}

std::vector<Tensor*> HeadParams::trainable() {
  std::vector<Tensor*> out;
  for (ConvStage& stage : stages) {
    out.push_back(&stage.kernel);
    out.push_back(&stage.bias);
    if (stage.normalised()) {
      out.push_back(&stage.gamma);
      out.push_back(&stage.beta);
    }
  }
  return out;
}

std::vector<Tensor> HeadParams::tensors() const {
  std::vector<Tensor> out;
  for (const ConvStage& stage : stages) {
    out.push_back(stage.kernel);
    out.push_back(stage.bias);
    if (stage.normalised()) {
      out.push_back(stage.gamma);
      out.push_back(stage.beta);
    }
  }
  return out;
}

namespace {

ConvStage make_stage(Rng& rng, std::size_t in, std::size_t out, std::size_t kernel, std::size_t padding, bool norm) {
  const double fan_in = static_cast<double>(in * kernel * kernel);
  const double bound = std::sqrt(6.0 / fan_in);
  ConvStage stage;
  stage.kernel = Tensor({out, in, kernel, kernel}, rng.uniform_array(static_cast<Eigen::Index>(out * in * kernel * kernel), -bound, bound), true);
  stage.bias = Tensor::zeros({out}, true);
  if (norm) {
    stage.gamma = Tensor::full({out}, 1.0, true);
    stage.beta = Tensor::zeros({out}, true);
  }
  stage.stride = 1;
  stage.padding = padding;
  return stage;
}

void check_target(const TargetShape& target) {
  if (target.channels == 0 || target.height == 0 || target.width == 0) {
    throw ShapeError("target shape extents must be positive");
  }
}

}  // namespace

HeadParams make_head(HeadKind kind, std::size_t student_channels, std::size_t target_channels, std::uint64_t seed,
                     const MultiHeadOptions& options) {
  Rng rng(seed);
  HeadParams params;
  params.kind = kind;
  if (kind == HeadKind::single) {
    params.stages.push_back(make_stage(rng, student_channels, target_channels, 1, 0, false));
  } else {
    const std::size_t hidden = options.hidden_channels == 0 ? target_channels : options.hidden_channels;
    params.stages.push_back(make_stage(rng, student_channels, hidden, options.kernel_size, options.padding, true));
    params.stages.push_back(make_stage(rng, hidden, target_channels, options.kernel_size, options.padding, true));
  }
  return params;
}

FeatureMap patch_to_spatial(const PatchEmbedding& embedding) {
  embedding.validate();
  const Tensor& tokens = embedding.tokens;
  const std::size_t batch = tokens.dim(0), hidden = tokens.dim(2);
  const std::size_t nph = embedding.patches_h(), npw = embedding.patches_w();
  const Tensor patches = embedding.has_cls ? slice(tokens, 1, 1, nph * npw) : tokens;
  return FeatureMap(permute(view(patches, {batch, nph, npw, hidden}), {0, 3, 1, 2}));
}

PatchEmbedding spatial_to_patch(const FeatureMap& map, std::size_t patch_h, std::size_t patch_w) {
  const Tensor sequence = permute(map.tensor(), {0, 2, 3, 1});
  PatchEmbedding out;
  out.tokens = view(sequence, {map.batch(), map.height() * map.width(), map.channels()});
  out.has_cls = false;
  out.patch_h = patch_h;
  out.patch_w = patch_w;
  out.image_h = map.height() * patch_h;
  out.image_w = map.width() * patch_w;
  return out;
}

FeatureMap single_layer_head(const FeatureMap& student, const HeadParams& params, const TargetShape& target) {
  if (params.kind != HeadKind::single) throw ShapeError("single_layer_head called with multi-layer parameters");
  params.validate();
  check_target(target);
  if (params.out_channels() != target.channels) {
    throw ShapeError(fmt::format("head emits {} channels but the teacher target has {}", params.out_channels(),
                                 target.channels));
  }
  const ConvStage& conv = params.stages.front();
  const Tensor projected = conv2d(student.tensor(), conv.kernel, conv.bias, conv.stride, conv.padding);
  return FeatureMap(bilinear_resize(projected, target.height, target.width));
}

FeatureMap multi_layer_head(const FeatureMap& student, const HeadParams& params, const TargetShape& target) {
  if (params.kind != HeadKind::multi) throw ShapeError("multi_layer_head called with single-layer parameters");
  params.validate();
  check_target(target);
  if (params.out_channels() != target.channels) {
    throw ShapeError(fmt::format("head emits {} channels but the teacher target has {}", params.out_channels(),
                                 target.channels));
  }
  Tensor x = student.tensor();
  for (const ConvStage& stage : params.stages) {
    x = conv2d(x, stage.kernel, stage.bias, stage.stride, stage.padding);
    x = relu(batch_norm2d(x, stage.gamma, stage.beta, kHeadBatchNormEps));
  }
  return FeatureMap(bilinear_resize(x, target.height, target.width));
}

FeatureMap align_to_teacher(const FeatureMap& student, const HeadParams& params, const TargetShape& target) {
  return params.kind == HeadKind::single ? single_layer_head(student, params, target)
                                         : multi_layer_head(student, params, target);
}

Tensor flatten_per_sample(const FeatureMap& map) {
  return view(map.tensor(), {map.batch(), map.channels() * map.height() * map.width()});
}

}  // namespace kdmot
