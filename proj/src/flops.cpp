#include "vtn/flops.hpp"

#include <algorithm>

namespace vtn {

uint64_t linear_count(uint64_t m, uint64_t k, uint64_t n) { return 2 * m * k * n; }

uint64_t attention_allowed_sum(int64_t n_frames, int64_t window) {
  const int64_t n_t = n_frames + 1;
  const int64_t half = window / 2;
  uint64_t total = static_cast<uint64_t>(n_t);  // global cls row
  for (int64_t i = 1; i < n_t; ++i) {
    const int64_t lo = std::max<int64_t>(1, i - half);
    const int64_t hi = std::min<int64_t>(n_t - 1, i + half);
    total += static_cast<uint64_t>(hi - lo + 1) + 1;  // window plus the cls column
  }
  return total;
}

uint64_t attention_term_count(int64_t n_frames, int64_t window, int64_t d, bool dense) {
  const uint64_t n_t = static_cast<uint64_t>(n_frames) + 1;
  const uint64_t allowed =
      dense ? n_t * n_t : attention_allowed_sum(n_frames, window);
  // q.k scores and weight.v mixing, 2*allowed*d multiply-adds each
  return 2 * (2 * allowed * static_cast<uint64_t>(d));
}

uint64_t backbone_frame_count(const ModelConfig& cfg) {
  const uint64_t C = cfg.frame_channels;
  const uint64_t fs = cfg.frame_size;
  const uint64_t d = cfg.backbone.d_backbone;
  if (cfg.backbone.kind == BackboneKind::LinearPatch) {
    const uint64_t ps = cfg.backbone.patch_size;
    const uint64_t patches = (fs / ps) * (fs / ps);
    return linear_count(patches, C * ps * ps, d) + 2 * linear_count(patches, d, d);
  }
  const uint64_t c1 = cfg.backbone.conv1_channels;
  const uint64_t c2 = cfg.backbone.conv2_channels;
  const uint64_t o1 = (fs + 2 - 3) / 2 + 1;
  const uint64_t o2 = (o1 + 2 - 3) / 2 + 1;
  return linear_count(o1 * o1, C * 9, c1) + linear_count(o2 * o2, c1 * 9, c2) +
         linear_count(1, c2, d);
}

uint64_t encoder_sequence_count(const EncoderConfig& cfg, int64_t n_frames) {
  const uint64_t n_t = static_cast<uint64_t>(n_frames) + 1;
  const uint64_t d = cfg.hidden_size;
  const bool learned = cfg.attention_mode == AttentionMode::Learned;
  // q/k/v/o projections in learned mode; v/o only when attention is uniform
  const uint64_t projections = (learned ? 4 : 2) * linear_count(n_t, d, d);
  uint64_t attention = attention_term_count(n_frames, cfg.window, d, false);
  if (!learned) attention /= 2;  // no scores, value mixing only
  const uint64_t ffn =
      linear_count(n_t, d, cfg.ffn_size) + linear_count(n_t, cfg.ffn_size, d);
  return static_cast<uint64_t>(cfg.num_layers) * (projections + attention + ffn);
}

uint64_t head_count(const HeadConfig& cfg) {
  return linear_count(1, cfg.input_size, cfg.mlp_size) +
         linear_count(1, cfg.mlp_size, cfg.num_classes);
}

FlopsReport count_flops(const ModelConfig& cfg, const InferenceProtocol& proto) {
  FlopsReport report;
  report.backbone_per_frame = backbone_frame_count(cfg);
  report.head_per_sequence = head_count(cfg.head);
  switch (proto.kind) {
    case InferenceProtocol::Kind::FullVideo:
      report.protocol = "full_video";
      report.frames_per_view = proto.full_frames;
      report.num_views = 1;
      break;
    case InferenceProtocol::Kind::Chunked:
      report.protocol = "chunked";
      report.frames_per_view = proto.full_frames;
      report.num_views = 1;
      break;
    case InferenceProtocol::Kind::MultiView:
      report.protocol = "multi_view";
      report.frames_per_view = proto.frames_per_view;
      report.num_views = static_cast<uint64_t>(proto.num_clips) * proto.num_crops;
      break;
    case InferenceProtocol::Kind::PrecomputedFeatures:
      report.protocol = "precomputed_features";
      report.frames_per_view = proto.full_frames;
      report.backbone_per_frame = 0;  // features arrive ready-made
      report.num_views = 1;
      break;
  }
  report.encoder_per_sequence = encoder_sequence_count(cfg.encoder, report.frames_per_view);
  report.per_view = report.backbone_per_frame * report.frames_per_view +
                    report.encoder_per_sequence + report.head_per_sequence;
  report.grand_total = report.num_views * report.per_view;
  return report;
}

std::string FlopsReport::describe() const {
  std::string out;
  out += "# multiply-add counts, matrix products only (2*m*k*n per matmul);\n";
  out += "# elementwise ops (softmax, gelu, norms) excluded\n";
  out += "protocol:             " + protocol + "\n";
  out += "backbone per frame:   " + std::to_string(backbone_per_frame) + "\n";
  out += "frames per view:      " + std::to_string(frames_per_view) + "\n";
  out += "encoder per sequence: " + std::to_string(encoder_per_sequence) + "\n";
  out += "head per sequence:    " + std::to_string(head_per_sequence) + "\n";
  out += "per view:             " + std::to_string(per_view) + "\n";
  out += "views:                " + std::to_string(num_views) + "\n";
  out += "grand total:          " + std::to_string(grand_total) + "\n";
  return out;
}

std::string FlopsReport::csv_header() {
  return "protocol,backbone_per_frame,frames_per_view,encoder_per_sequence,"
         "head_per_sequence,per_view,views,grand_total\n";
}

std::string FlopsReport::csv_row() const {
  return protocol + "," + std::to_string(backbone_per_frame) + "," +
         std::to_string(frames_per_view) + "," + std::to_string(encoder_per_sequence) +
         "," + std::to_string(head_per_sequence) + "," + std::to_string(per_view) + "," +
         std::to_string(num_views) + "," + std::to_string(grand_total) + "\n";
}

std::vector<AttnScalingRow> attention_scaling_table(const std::vector<int64_t>& n_list,
                                                    int64_t window, int64_t d) {
  std::vector<AttnScalingRow> rows;
  rows.reserve(n_list.size());
  for (int64_t n : n_list) {
    AttnScalingRow row;
    row.n = n;
    row.windowed = attention_term_count(n, window, d, false);
    row.dense = attention_term_count(n, window, d, true);
    rows.push_back(row);
  }
  return rows;
}

}  // namespace vtn
