#pragma once

#include <memory>
#include <string>
#include <vector>

#include "vtn/model_config.hpp"
#include "vtn/nn.hpp"
#include "vtn/tensor.hpp"

namespace vtn {

// A batch of frames laid out [(B*T), C, H, W]; produced by stack_frames so
// row b*T + t is clip b's frame t.
template <class S>
struct FrameBatch {
  Tensor<S> frames;
  int64_t clips = 0;
  int64_t frames_per_clip = 0;
};

template <class S>
FrameBatch<S> stack_frames(const Tensor<S>& clips) {
  if (clips.dims() != 5)
    throw std::invalid_argument("stack_frames: expects [B, C, T, H, W] input");
  const int64_t B = clips.dim(0), C = clips.dim(1), T = clips.dim(2), H = clips.dim(3),
                W = clips.dim(4);
  auto map = stack_frames_map(B, C, T, H, W);
  FrameBatch<S> batch;
  batch.frames = gather(clips, map, {B * T, C, H, W});
  batch.clips = B;
  batch.frames_per_clip = T;
  return batch;
}

template <class S>
Tensor<S> unstack_frames(const FrameBatch<S>& batch, int64_t C, int64_t H, int64_t W) {
  const int64_t B = batch.clips, T = batch.frames_per_clip;
  auto map = unstack_frames_map(B, C, T, H, W);
  return gather(batch.frames, map, {B, C, T, H, W});
}

// Non-overlapping patch embedding -> two-layer GELU MLP -> mean over patches.
// Purely per-frame: no cross-example statistics anywhere.
template <class S>
struct LinearPatchBackbone {
  int64_t patch_size = 0;
  int64_t d = 0;
  Dense<S> embed;
  Dense<S> mlp_in;
  Dense<S> mlp_out;

  void init(const BackboneConfig& cfg, int64_t channels, Rng& rng) {
    patch_size = cfg.patch_size;
    d = cfg.d_backbone;
    embed.init_fan_in(channels * patch_size * patch_size, d, rng, 16.0);
    mlp_in.init_fan_in(d, d, rng);
    mlp_out.init_fan_in(d, d, rng, 2.2);  // features land near unit rms
  }

  Tensor<S> forward(const Tensor<S>& frames) const {
    const int64_t B = frames.dim(0), C = frames.dim(1), H = frames.dim(2),
                  W = frames.dim(3);
    if (H % patch_size != 0 || W % patch_size != 0)
      throw std::invalid_argument("patch backbone: frame dims not divisible by patch size");
    int64_t ph = 0, pw = 0;
    auto map = im2col_map(B, C, H, W, patch_size, patch_size, patch_size, 0, &ph, &pw);
    const int64_t patches = ph * pw;
    auto cols = gather(frames, map, {B * patches, C * patch_size * patch_size});
    auto h = embed.forward(cols);
    h = mlp_out.forward(gelu(mlp_in.forward(h)));
    return group_mean_rows(h, patches);  // [B x d]
  }

  void visit_params(const std::string& prefix, const ParamVisitor<S>& visit) {
    embed.visit_params(prefix + ".embed", visit);
    mlp_in.visit_params(prefix + ".mlp_in", visit);
    mlp_out.visit_params(prefix + ".mlp_out", visit);
  }
};

inline int64_t norm_groups_for(int64_t channels) {
  for (int64_t g : {4, 2})
    if (channels % g == 0) return g;
  return 1;
}

// Two stride-2 3x3 convolutions (im2col + matmul) with group normalization,
// global average pooling, and a linear projection to d_backbone. Group norm
// keeps per-frame outputs independent of batch composition.
template <class S>
struct TinyConvBackbone {
  int64_t c1 = 0, c2 = 0, d = 0;
  Dense<S> conv1;
  Tensor<S> gn1_gamma, gn1_beta;
  Dense<S> conv2;
  Tensor<S> gn2_gamma, gn2_beta;
  Dense<S> fc;

  void init(const BackboneConfig& cfg, int64_t channels, Rng& rng) {
    c1 = cfg.conv1_channels;
    c2 = cfg.conv2_channels;
    d = cfg.d_backbone;
    conv1.init_fan_in(channels * 9, c1, rng);
    gn1_gamma = Tensor<S>::full({c1}, S(1)).set_requires_grad(true);
    gn1_beta = Tensor<S>::zeros({c1});
    gn1_beta.set_requires_grad(true);
    conv2.init_fan_in(c1 * 9, c2, rng);
    gn2_gamma = Tensor<S>::full({c2}, S(1)).set_requires_grad(true);
    gn2_beta = Tensor<S>::zeros({c2});
    gn2_beta.set_requires_grad(true);
    fc.init_fan_in(c2, d, rng);
  }

  Tensor<S> forward(const Tensor<S>& frames) const {
    const int64_t B = frames.dim(0), C = frames.dim(1), H = frames.dim(2),
                  W = frames.dim(3);
    int64_t oh = 0, ow = 0;
    auto map1 = im2col_map(B, C, H, W, 3, 3, 2, 1, &oh, &ow);
    auto x = gather(frames, map1, {B * oh * ow, C * 9});
    x = conv1.forward(x);
    x = gather(x, rows_to_nchw_map(B, c1, oh, ow), {B, c1, oh, ow});
    x = gelu(group_norm(x, norm_groups_for(c1), gn1_gamma, gn1_beta, S(1e-5)));

    int64_t oh2 = 0, ow2 = 0;
    auto map2 = im2col_map(B, c1, oh, ow, 3, 3, 2, 1, &oh2, &ow2);
    x = gather(x, map2, {B * oh2 * ow2, c1 * 9});
    x = conv2.forward(x);
    x = gather(x, rows_to_nchw_map(B, c2, oh2, ow2), {B, c2, oh2, ow2});
    x = gelu(group_norm(x, norm_groups_for(c2), gn2_gamma, gn2_beta, S(1e-5)));

    // Global average pool, then project.
    x = mean_axis(reshape(x, {B * c2, oh2 * ow2}), 1);
    x = reshape(x, {B, c2});
    return fc.forward(x);
  }

  void visit_params(const std::string& prefix, const ParamVisitor<S>& visit) {
    conv1.visit_params(prefix + ".conv1", visit);
    visit(prefix + ".gn1.gamma", gn1_gamma);
    visit(prefix + ".gn1.beta", gn1_beta);
    conv2.visit_params(prefix + ".conv2", visit);
    visit(prefix + ".gn2.gamma", gn2_gamma);
    visit(prefix + ".gn2.beta", gn2_beta);
    fc.visit_params(prefix + ".fc", visit);
  }
};

// Per-frame 2D feature extractor f(x): one d_backbone vector per frame.
template <class S>
struct SpatialBackbone {
  BackboneKind kind = BackboneKind::LinearPatch;
  LinearPatchBackbone<S> patch;
  TinyConvBackbone<S> conv;

  void init(const BackboneConfig& cfg, int64_t channels, Rng& rng) {
    kind = cfg.kind;
    if (kind == BackboneKind::LinearPatch)
      patch.init(cfg, channels, rng);
    else
      conv.init(cfg, channels, rng);
  }

  // mode is accepted for interface symmetry; both backbones are
  // deterministic per frame in either mode.
  Tensor<S> extract_features(const FrameBatch<S>& batch, Mode mode) const {
    (void)mode;
    return kind == BackboneKind::LinearPatch ? patch.forward(batch.frames)
                                             : conv.forward(batch.frames);
  }

  Tensor<S> extract_features_frames(const Tensor<S>& frames, Mode mode) const {
    (void)mode;
    return kind == BackboneKind::LinearPatch ? patch.forward(frames)
                                             : conv.forward(frames);
  }

  void visit_params(const std::string& prefix, const ParamVisitor<S>& visit) {
    if (kind == BackboneKind::LinearPatch)
      patch.visit_params(prefix, visit);
    else
      conv.visit_params(prefix, visit);
  }

  void set_frozen(bool frozen) {
    visit_params("backbone", [frozen](const std::string&, Tensor<S>& p) {
      p.set_requires_grad(!frozen);
    });
  }
};

}  // namespace vtn
