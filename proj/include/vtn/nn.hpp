#pragma once

#include <functional>
#include <memory>
#include <string>

#include "vtn/rng.hpp"
#include "vtn/tensor.hpp"

namespace vtn {

enum class Mode { Train, Eval };

template <class S>
using ParamVisitor = std::function<void(const std::string&, Tensor<S>&)>;

// y = x * W + b with W stored [in x out].
template <class S>
struct Dense {
  Tensor<S> weight;
  Tensor<S> bias;

  void init_normal(int64_t in, int64_t out, Rng& rng, double stddev) {
    weight = Tensor<S>::randn({in, out}, rng, stddev).set_requires_grad(true);
    bias = Tensor<S>::randn({out}, rng, stddev).set_requires_grad(true);
  }

  // Fan-in scaled init, zero bias; used by the from-scratch backbones. The
  // gain compensates input dynamic range (raw pixels sit well below unit
  // rms, so the first layer gets gain > 1 to keep activations near unit
  // scale while an all-zero input still maps to zero).
  void init_fan_in(int64_t in, int64_t out, Rng& rng, double gain = 1.0) {
    weight = Tensor<S>::randn({in, out}, rng, gain / std::sqrt(static_cast<double>(in)))
                 .set_requires_grad(true);
    bias = Tensor<S>::zeros({out});
    bias.set_requires_grad(true);
  }

  Tensor<S> forward(const Tensor<S>& x) const {
    return add_bias(matmul(x, weight), bias);
  }

  void visit_params(const std::string& prefix, const ParamVisitor<S>& visit) {
    visit(prefix + ".weight", weight);
    visit(prefix + ".bias", bias);
  }
};

// Gather map for [B, C, T, H, W] -> [(B*T), C, H, W]; row b*T+t of the output
// batch holds clip b's frame t.
inline std::shared_ptr<std::vector<int64_t>> stack_frames_map(int64_t B, int64_t C,
                                                              int64_t T, int64_t H,
                                                              int64_t W) {
  auto map = std::make_shared<std::vector<int64_t>>(B * C * T * H * W);
  const int64_t hw = H * W;
  int64_t dst = 0;
  for (int64_t b = 0; b < B; ++b)
    for (int64_t t = 0; t < T; ++t)
      for (int64_t c = 0; c < C; ++c)
        for (int64_t p = 0; p < hw; ++p)
          (*map)[dst++] = ((b * C + c) * T + t) * hw + p;
  return map;
}

inline std::shared_ptr<std::vector<int64_t>> unstack_frames_map(int64_t B, int64_t C,
                                                                int64_t T, int64_t H,
                                                                int64_t W) {
  auto map = std::make_shared<std::vector<int64_t>>(B * C * T * H * W);
  const int64_t hw = H * W;
  int64_t dst = 0;
  for (int64_t b = 0; b < B; ++b)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t t = 0; t < T; ++t)
        for (int64_t p = 0; p < hw; ++p)
          (*map)[dst++] = ((b * T + t) * C + c) * hw + p;
  return map;
}

// Unfolds [B, C, H, W] into [(B*OH*OW), C*kh*kw] patch rows; -1 entries are
// zero padding. Convolution is then a plain matmul against [C*kh*kw, out_c].
inline std::shared_ptr<std::vector<int64_t>> im2col_map(int64_t B, int64_t C, int64_t H,
                                                        int64_t W, int64_t kh, int64_t kw,
                                                        int64_t stride, int64_t pad,
                                                        int64_t* out_h, int64_t* out_w) {
  const int64_t oh = (H + 2 * pad - kh) / stride + 1;
  const int64_t ow = (W + 2 * pad - kw) / stride + 1;
  if (oh < 1 || ow < 1) throw std::invalid_argument("im2col: kernel larger than input");
  *out_h = oh;
  *out_w = ow;
  auto map = std::make_shared<std::vector<int64_t>>(B * oh * ow * C * kh * kw);
  int64_t dst = 0;
  for (int64_t b = 0; b < B; ++b)
    for (int64_t oy = 0; oy < oh; ++oy)
      for (int64_t ox = 0; ox < ow; ++ox)
        for (int64_t c = 0; c < C; ++c)
          for (int64_t ky = 0; ky < kh; ++ky)
            for (int64_t kx = 0; kx < kw; ++kx) {
              const int64_t y = oy * stride + ky - pad;
              const int64_t x = ox * stride + kx - pad;
              (*map)[dst++] = (y < 0 || y >= H || x < 0 || x >= W)
                                  ? -1
                                  : ((b * C + c) * H + y) * W + x;
            }
  return map;
}

// [(B*OH*OW) x C] rows back to [B, C, OH, OW].
inline std::shared_ptr<std::vector<int64_t>> rows_to_nchw_map(int64_t B, int64_t C,
                                                              int64_t OH, int64_t OW) {
  auto map = std::make_shared<std::vector<int64_t>>(B * C * OH * OW);
  int64_t dst = 0;
  for (int64_t b = 0; b < B; ++b)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t oy = 0; oy < OH; ++oy)
        for (int64_t ox = 0; ox < OW; ++ox)
          (*map)[dst++] = ((b * OH + oy) * OW + ox) * C + c;
  return map;
}

}  // namespace vtn
