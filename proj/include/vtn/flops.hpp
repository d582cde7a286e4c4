#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vtn/inference.hpp"
#include "vtn/model_config.hpp"

namespace vtn {

// Analytic multiply-add accounting (2*m*k*n per matrix product). Elementwise
// work (softmax, GELU, normalization, positional adds) is excluded; it is
// noise at this granularity. All counts are exact integers, no timing.
struct FlopsReport {
  std::string protocol;
  uint64_t backbone_per_frame = 0;
  uint64_t frames_per_view = 0;
  uint64_t encoder_per_sequence = 0;
  uint64_t head_per_sequence = 0;
  uint64_t per_view = 0;
  uint64_t num_views = 1;
  uint64_t grand_total = 0;  // num_views * per_view, exactly

  std::string describe() const;
  std::string csv_row() const;
  static std::string csv_header();
};

uint64_t linear_count(uint64_t m, uint64_t k, uint64_t n);

// Sum over all n+1 token rows of the allowed-set size: the global cls row
// sees everything; frame rows see their truncated window plus cls.
uint64_t attention_allowed_sum(int64_t n_frames, int64_t window);

// Score + value multiply-adds of one windowed attention layer (all heads
// together): 2 * (2 * sum_allowed * d). `dense` replaces the allowed sum
// with (n+1)^2 for the quadratic baseline.
uint64_t attention_term_count(int64_t n_frames, int64_t window, int64_t d, bool dense);

uint64_t backbone_frame_count(const ModelConfig& cfg);
uint64_t encoder_sequence_count(const EncoderConfig& cfg, int64_t n_frames);
uint64_t head_count(const HeadConfig& cfg);

FlopsReport count_flops(const ModelConfig& cfg, const InferenceProtocol& proto);

struct AttnScalingRow {
  int64_t n = 0;
  uint64_t windowed = 0;
  uint64_t dense = 0;
};

std::vector<AttnScalingRow> attention_scaling_table(const std::vector<int64_t>& n_list,
                                                    int64_t window, int64_t d);

}  // namespace vtn
