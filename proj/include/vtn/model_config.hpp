#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace vtn {

enum class BackboneKind { LinearPatch, TinyConv };
enum class PeMode { Learned, FixedSinusoidal, None };
enum class AttentionMode { Learned, UniformFixed };

struct BackboneConfig {
  BackboneKind kind = BackboneKind::LinearPatch;
  int64_t patch_size = 8;    // LinearPatch
  int64_t conv1_channels = 8;   // TinyConv
  int64_t conv2_channels = 16;  // TinyConv
  int64_t d_backbone = 32;
};

struct EncoderConfig {
  int64_t num_layers = 1;
  int64_t num_heads = 2;
  int64_t hidden_size = 32;  // == d_backbone
  int64_t ffn_size = 128;
  int64_t window = 32;  // total span: window/2 to each side
  double attention_dropout = 0.1;
  PeMode pe_mode = PeMode::Learned;
  AttentionMode attention_mode = AttentionMode::Learned;
  int64_t max_position = 1024;

  void validate() const {
    if (num_layers < 0) throw std::invalid_argument("encoder: num_layers must be >= 0");
    if (num_heads < 1) throw std::invalid_argument("encoder: num_heads must be >= 1");
    if (hidden_size % num_heads != 0)
      throw std::invalid_argument("encoder: hidden_size must be divisible by num_heads");
    if (window < 2 || window % 2 != 0)
      throw std::invalid_argument("encoder: window must be even and >= 2");
    if (attention_dropout < 0.0 || attention_dropout >= 1.0)
      throw std::invalid_argument("encoder: attention_dropout must be in [0, 1)");
    if (max_position < 1) throw std::invalid_argument("encoder: max_position must be >= 1");
    if (ffn_size < 1) throw std::invalid_argument("encoder: ffn_size must be >= 1");
  }
};

struct HeadConfig {
  int64_t input_size = 32;  // == hidden_size
  int64_t mlp_size = 32;    // defaults to input_size
  int64_t num_classes = 2;
  double dropout = 0.1;

  void validate() const {
    if (num_classes < 2) throw std::invalid_argument("head: num_classes must be >= 2");
    if (input_size < 1 || mlp_size < 1)
      throw std::invalid_argument("head: dimensions must be positive");
    if (dropout < 0.0 || dropout >= 1.0)
      throw std::invalid_argument("head: dropout must be in [0, 1)");
  }
};

// Full architectural record: the backbone feeds the encoder which feeds the
// head, so the shared dimensions must line up.
struct ModelConfig {
  BackboneConfig backbone;
  EncoderConfig encoder;
  HeadConfig head;
  int64_t frame_channels = 1;
  int64_t frame_size = 32;  // model input is frame_size x frame_size after cropping

  void validate() const {
    encoder.validate();
    head.validate();
    if (backbone.d_backbone != encoder.hidden_size)
      throw std::invalid_argument("config: d_backbone must equal encoder hidden size");
    if (head.input_size != encoder.hidden_size)
      throw std::invalid_argument("config: head input must equal encoder hidden size");
    if (frame_channels < 1 || frame_size < 1)
      throw std::invalid_argument("config: frame dimensions must be positive");
    if (backbone.kind == BackboneKind::LinearPatch) {
      if (backbone.patch_size < 1 || frame_size % backbone.patch_size != 0)
        throw std::invalid_argument(
            "config: frame size must be divisible by patch_size for the patch backbone");
    } else {
      if (backbone.conv1_channels < 1 || backbone.conv2_channels < 1)
        throw std::invalid_argument("config: conv channel widths must be positive");
      if (frame_size < 4)
        throw std::invalid_argument("config: conv backbone needs frames of at least 4x4");
    }
  }
};

inline std::string to_string(BackboneKind k) {
  return k == BackboneKind::LinearPatch ? "linear_patch" : "tiny_conv";
}
inline std::string to_string(PeMode m) {
  switch (m) {
    case PeMode::Learned: return "learned";
    case PeMode::FixedSinusoidal: return "sinusoidal";
    default: return "none";
  }
}
inline std::string to_string(AttentionMode m) {
  return m == AttentionMode::Learned ? "learned" : "uniform";
}

inline BackboneKind backbone_kind_from_string(const std::string& s) {
  if (s == "linear_patch") return BackboneKind::LinearPatch;
  if (s == "tiny_conv") return BackboneKind::TinyConv;
  throw std::invalid_argument("unknown backbone kind: " + s);
}
inline PeMode pe_mode_from_string(const std::string& s) {
  if (s == "learned") return PeMode::Learned;
  if (s == "sinusoidal") return PeMode::FixedSinusoidal;
  if (s == "none") return PeMode::None;
  throw std::invalid_argument("unknown pe mode: " + s);
}
inline AttentionMode attention_mode_from_string(const std::string& s) {
  if (s == "learned") return AttentionMode::Learned;
  if (s == "uniform") return AttentionMode::UniformFixed;
  throw std::invalid_argument("unknown attention mode: " + s);
}

}  // namespace vtn
