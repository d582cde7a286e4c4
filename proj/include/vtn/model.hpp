#pragma once

#include <string>
#include <vector>

#include "vtn/backbone.hpp"
#include "vtn/encoder.hpp"
#include "vtn/head.hpp"
#include "vtn/model_config.hpp"
#include "vtn/nn.hpp"

namespace vtn {

// Backbone -> temporal encoder -> classification head. One instance owns all
// parameters; forward passes with shared frozen weights are safe to run in
// parallel, training is single-writer.
template <class S>
struct VtnModel {
  ModelConfig cfg;
  SpatialBackbone<S> backbone;
  TemporalEncoder<S> encoder;
  ClassifierHead<S> head;
  bool backbone_frozen = false;

  void init(const ModelConfig& config, Rng& rng) {
    config.validate();
    cfg = config;
    backbone.init(cfg.backbone, cfg.frame_channels, rng);
    encoder.init(cfg.encoder, rng);
    head.init(cfg.head, rng);
    backbone_frozen = false;
  }

  void set_backbone_frozen(bool frozen) {
    backbone_frozen = frozen;
    backbone.set_frozen(frozen);
  }

  // Encoder + head over precomputed per-frame features [n x d].
  Tensor<S> forward_features(const Tensor<S>& features,
                             const std::vector<int64_t>& frame_positions, Mode mode,
                             Rng& rng, AttentionRecord* record = nullptr,
                             bool record_full = false) const {
    auto seq = encoder.build_sequence(features, frame_positions);
    auto [cls_state, rec] = encoder.forward(seq, mode, rng, record_full);
    if (record) *record = std::move(rec);
    return head.forward(cls_state, mode, rng);
  }

  // One clip: frames [N x C x H x W] -> logits [1 x classes].
  Tensor<S> forward_clip(const Tensor<S>& frames,
                         const std::vector<int64_t>& frame_positions, Mode mode,
                         Rng& rng, AttentionRecord* record = nullptr,
                         bool record_full = false) const {
    FrameBatch<S> batch{frames, 1, frames.dim(0)};
    auto features = backbone.extract_features(batch, mode);
    return forward_features(features, frame_positions, mode, rng, record, record_full);
  }

  // A batch of clips [B x C x T x H x W]: all frames go through the backbone
  // as one stacked frame batch, then each clip runs the encoder separately.
  Tensor<S> forward_batch(const Tensor<S>& clips,
                          const std::vector<std::vector<int64_t>>& frame_positions,
                          Mode mode, Rng& rng) const {
    const int64_t B = clips.dim(0), T = clips.dim(2);
    if (static_cast<int64_t>(frame_positions.size()) != B)
      throw std::invalid_argument("forward_batch: positions per clip required");
    auto batch = stack_frames(clips);
    auto features = backbone.extract_features(batch, mode);
    std::vector<Tensor<S>> logits;
    logits.reserve(B);
    for (int64_t b = 0; b < B; ++b) {
      auto clip_features = slice_rows(features, b * T, T);
      logits.push_back(forward_features(clip_features, frame_positions[b], mode, rng));
    }
    return concat_rows(logits);
  }

  void visit_params(const ParamVisitor<S>& visit) {
    backbone.visit_params("backbone", visit);
    encoder.visit_params("encoder", visit);
    head.visit_params("head", visit);
  }

  int64_t num_params() {
    int64_t total = 0;
    visit_params([&](const std::string&, Tensor<S>& p) { total += p.numel(); });
    return total;
  }

  void zero_grad() {
    visit_params([](const std::string&, Tensor<S>& p) { p.zero_grad(); });
  }
};

}  // namespace vtn
