#pragma once

#include <cmath>
#include <iostream>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "vtn/model_config.hpp"
#include "vtn/nn.hpp"
#include "vtn/tensor.hpp"

namespace vtn {

// Token sequence entering the encoder: row 0 is the cls token, rows 1..n are
// frame features. frame_positions are indices in the source video, not
// clip-local slots.
template <class S>
struct TokenSequence {
  Tensor<S> embeddings;  // [(n+1) x d]
  std::vector<int64_t> frame_positions;
  int64_t n = 0;
};

// Per layer/head cls-token attention rows, for export and inspection.
// full_maps is populated on request for small sequences.
struct AttentionRecord {
  int64_t layers = 0;
  int64_t heads = 0;
  int64_t tokens = 0;  // n + 1
  std::vector<int64_t> frame_positions;
  std::vector<std::vector<double>> cls_rows;   // [layer*heads + head][tokens]
  std::vector<std::vector<double>> full_maps;  // optional, [..][tokens*tokens]

  const std::vector<double>& cls_row(int64_t layer, int64_t head) const {
    return cls_rows[layer * heads + head];
  }
};

// Allowed-attention mask over n_t tokens: token `global_index` attends to and
// is attended by everyone; frame token i reaches frame tokens within
// window/2 on each side. Boundary rows simply truncate.
inline std::shared_ptr<std::vector<uint8_t>> window_attention_mask(int64_t n_t,
                                                                   int64_t window,
                                                                   int64_t global_index = 0) {
  if (window < 2 || window % 2 != 0)
    throw std::invalid_argument("window_attention_mask: window must be even and >= 2");
  if (global_index != 0)
    throw std::invalid_argument("window_attention_mask: global token must be token 0");
  auto mask = std::make_shared<std::vector<uint8_t>>(n_t * n_t, 0);
  const int64_t half = window / 2;
  for (int64_t j = 0; j < n_t; ++j) (*mask)[j] = 1;  // global row
  for (int64_t i = 1; i < n_t; ++i) {
    (*mask)[i * n_t] = 1;  // every token attends back to the global token
    const int64_t lo = std::max<int64_t>(1, i - half);
    const int64_t hi = std::min<int64_t>(n_t - 1, i + half);
    for (int64_t j = lo; j <= hi; ++j) (*mask)[i * n_t + j] = 1;
  }
  return mask;
}

// One attention head over a windowed mask. Returns (output, weights); the
// weights are the softmax rows before dropout, with exact zeros outside the
// allowed set. In UniformFixed mode the weights are the constant
// 1/|allowed set| and carry no gradient; q and k are ignored.
template <class S>
std::pair<Tensor<S>, Tensor<S>> sliding_window_attention(
    const Tensor<S>& q, const Tensor<S>& k, const Tensor<S>& v, int64_t window,
    int64_t global_index, AttentionMode mode, double dropout_p, bool training,
    Rng& rng) {
  const int64_t n_t = v.rows(), d_head = v.cols();
  if (n_t < 2)
    throw std::invalid_argument("sliding_window_attention: need at least one frame token");
  auto mask = window_attention_mask(n_t, window, global_index);

  Tensor<S> weights;
  if (mode == AttentionMode::Learned) {
    if (q.rows() != n_t || q.cols() != d_head || k.rows() != n_t || k.cols() != d_head)
      throw std::invalid_argument("sliding_window_attention: q/k/v shapes disagree");
    auto scores =
        scale(matmul(q, transpose(k)), static_cast<S>(1.0 / std::sqrt(double(d_head))));
    weights = masked_softmax_rows(scores, mask);
  } else {
    weights = Tensor<S>::zeros({n_t, n_t});
    for (int64_t i = 0; i < n_t; ++i) {
      int64_t count = 0;
      for (int64_t j = 0; j < n_t; ++j) count += (*mask)[i * n_t + j];
      const S u = S(1) / static_cast<S>(count);
      for (int64_t j = 0; j < n_t; ++j)
        if ((*mask)[i * n_t + j]) weights.at(i, j) = u;
    }
  }

  Tensor<S> mixed = weights;
  if (mode == AttentionMode::Learned && training && dropout_p > 0.0)
    mixed = dropout(weights, dropout_p, training, rng);
  return {matmul(mixed, v), weights};
}

// Fixed 1D sinusoidal embedding of a temporal position: interleaved
// sin/cos pairs sharing a geometric frequency ladder. Position 0 maps to
// sin components 0 and cos components 1.
template <class S>
std::vector<S> sinusoidal_embedding(int64_t position, int64_t d) {
  std::vector<S> out(d);
  for (int64_t i = 0; i < d; i += 2) {
    const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(d));
    const double angle = static_cast<double>(position) * freq;
    out[i] = static_cast<S>(std::sin(angle));
    if (i + 1 < d) out[i + 1] = static_cast<S>(std::cos(angle));
  }
  return out;
}

template <class S>
struct EncoderLayer {
  AttentionMode attention_mode = AttentionMode::Learned;
  int64_t heads = 1;
  Dense<S> q_proj, k_proj, v_proj, o_proj;  // q/k absent in UniformFixed mode
  Tensor<S> ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;
  Dense<S> ffn_in, ffn_out;

  // Fan-in init rather than a small fixed stddev: trained from scratch with
  // plain SGD, attention-selection gradients scale with the product of the
  // q/k and output projection magnitudes, and 0.02-scale projections leave
  // them orders of magnitude below anything lr=1e-3 can move in desk-scale
  // epoch budgets.
  void init(const EncoderConfig& cfg, Rng& rng) {
    attention_mode = cfg.attention_mode;
    heads = cfg.num_heads;
    const int64_t d = cfg.hidden_size;
    if (attention_mode == AttentionMode::Learned) {
      q_proj.init_fan_in(d, d, rng);
      k_proj.init_fan_in(d, d, rng);
    }
    v_proj.init_fan_in(d, d, rng);
    o_proj.init_fan_in(d, d, rng);
    ln1_gamma = Tensor<S>::full({d}, S(1)).set_requires_grad(true);
    ln1_beta = Tensor<S>::zeros({d});
    ln1_beta.set_requires_grad(true);
    ffn_in.init_fan_in(d, cfg.ffn_size, rng);
    ffn_out.init_fan_in(cfg.ffn_size, d, rng);
    ln2_gamma = Tensor<S>::full({d}, S(1)).set_requires_grad(true);
    ln2_beta = Tensor<S>::zeros({d});
    ln2_beta.set_requires_grad(true);
  }

  // Post-norm block: windowed multi-head attention -> residual -> layer norm
  // -> GELU FFN -> residual -> layer norm. Returns per-head cls rows via
  // `record`.
  Tensor<S> forward(const Tensor<S>& x, int64_t window, double attn_dropout, Mode mode,
                    Rng& rng, std::vector<Tensor<S>>* head_weights) const {
    const int64_t d = x.cols();
    const int64_t dh = d / heads;
    const bool training = mode == Mode::Train;

    Tensor<S> q, k;
    if (attention_mode == AttentionMode::Learned) {
      q = q_proj.forward(x);
      k = k_proj.forward(x);
    }
    Tensor<S> v = v_proj.forward(x);

    std::vector<Tensor<S>> head_outputs;
    head_outputs.reserve(heads);
    for (int64_t h = 0; h < heads; ++h) {
      Tensor<S> qh, kh;
      if (attention_mode == AttentionMode::Learned) {
        qh = slice_cols(q, h * dh, dh);
        kh = slice_cols(k, h * dh, dh);
      }
      auto vh = slice_cols(v, h * dh, dh);
      auto [out_h, weights_h] = sliding_window_attention(qh, kh, vh, window, 0,
                                                         attention_mode, attn_dropout,
                                                         training, rng);
      head_outputs.push_back(out_h);
      if (head_weights) head_weights->push_back(weights_h);
    }
    auto attn = o_proj.forward(concat_cols(head_outputs));
    auto x1 = layer_norm(add(x, attn), ln1_gamma, ln1_beta, S(1e-5));
    auto ffn = ffn_out.forward(gelu(ffn_in.forward(x1)));
    return layer_norm(add(x1, ffn), ln2_gamma, ln2_beta, S(1e-5));
  }

  void visit_params(const std::string& prefix, const ParamVisitor<S>& visit) {
    if (attention_mode == AttentionMode::Learned) {
      q_proj.visit_params(prefix + ".attn.q", visit);
      k_proj.visit_params(prefix + ".attn.k", visit);
    }
    v_proj.visit_params(prefix + ".attn.v", visit);
    o_proj.visit_params(prefix + ".attn.o", visit);
    visit(prefix + ".ln1.gamma", ln1_gamma);
    visit(prefix + ".ln1.beta", ln1_beta);
    ffn_in.visit_params(prefix + ".ffn.in", visit);
    ffn_out.visit_params(prefix + ".ffn.out", visit);
    visit(prefix + ".ln2.gamma", ln2_gamma);
    visit(prefix + ".ln2.beta", ln2_beta);
  }
};

// Temporal encoder over per-frame feature vectors: prepend the learned cls
// token, add positional information, run windowed attention layers, and
// return the final cls state.
template <class S>
struct TemporalEncoder {
  EncoderConfig cfg;
  Tensor<S> cls_token;  // [1 x d]
  Tensor<S> cls_pos;    // [d], the learned position marker for the cls token
  Tensor<S> pe_table;   // [max_position x d], Learned pe mode only
  std::vector<EncoderLayer<S>> layers;

  // The cls token starts at unit scale like an ordinary token embedding, so
  // the cls query is visible next to the frame features from step one. The
  // learned position table starts from the sinusoidal values (then trains
  // freely): unit-scale positional signal with a smooth temporal structure
  // instead of 16 arbitrary codes whose ordering would have to be memorized.
  void init(const EncoderConfig& config, Rng& rng) {
    config.validate();
    cfg = config;
    cls_token = Tensor<S>::randn({1, cfg.hidden_size}, rng, 1.0).set_requires_grad(true);
    cls_pos = Tensor<S>::randn({cfg.hidden_size}, rng, 0.02).set_requires_grad(true);
    if (cfg.pe_mode == PeMode::Learned) {
      pe_table = Tensor<S>::zeros({cfg.max_position, cfg.hidden_size});
      for (int64_t p = 0; p < cfg.max_position; ++p) {
        auto row = sinusoidal_embedding<S>(p, cfg.hidden_size);
        std::copy(row.begin(), row.end(),
                  pe_table.data().begin() + p * cfg.hidden_size);
      }
      pe_table.set_requires_grad(true);
    }
    layers.resize(cfg.num_layers);
    for (auto& layer : layers) layer.init(cfg, rng);
  }

  TokenSequence<S> build_sequence(const Tensor<S>& features,
                                  const std::vector<int64_t>& frame_positions) const {
    const int64_t n = features.rows(), d = features.cols();
    if (n < 1) throw std::invalid_argument("build_sequence: empty sequence");
    if (d != cfg.hidden_size)
      throw std::invalid_argument("build_sequence: feature width != hidden size");
    if (static_cast<int64_t>(frame_positions.size()) != n)
      throw std::invalid_argument("build_sequence: one position per frame required");
    for (int64_t p : frame_positions)
      if (p < 0) throw std::invalid_argument("build_sequence: negative frame position");

    Tensor<S> frames = features;
    if (cfg.pe_mode == PeMode::Learned) {
      auto clamped = std::make_shared<std::vector<int64_t>>(frame_positions);
      bool overflow = false;
      for (int64_t& p : *clamped)
        if (p >= cfg.max_position) {
          p = cfg.max_position - 1;
          overflow = true;
        }
      if (overflow)
        std::cerr << "warning: frame position beyond the learned embedding table, "
                     "clamped to "
                  << cfg.max_position - 1 << "\n";
      frames = add(features, embedding_lookup(pe_table, clamped));
    } else if (cfg.pe_mode == PeMode::FixedSinusoidal) {
      Tensor<S> sin_table = Tensor<S>::zeros({n, d});
      for (int64_t i = 0; i < n; ++i) {
        auto e = sinusoidal_embedding<S>(frame_positions[i], d);
        std::copy(e.begin(), e.end(), sin_table.data().begin() + i * d);
      }
      frames = add(features, sin_table);
    }

    auto cls = add_bias(cls_token, cls_pos);
    TokenSequence<S> seq;
    seq.embeddings = concat_rows<S>({cls, frames});
    seq.frame_positions = frame_positions;
    seq.n = n;
    return seq;
  }

  // Runs the layer stack; returns the final cls state [1 x d] and the
  // per-layer/head cls attention rows. Set record_full to also keep whole
  // weight maps (small sequences only).
  std::pair<Tensor<S>, AttentionRecord> forward(const TokenSequence<S>& seq, Mode mode,
                                                Rng& rng, bool record_full = false) const {
    AttentionRecord record;
    record.layers = cfg.num_layers;
    record.heads = cfg.num_heads;
    record.tokens = seq.n + 1;
    record.frame_positions = seq.frame_positions;

    Tensor<S> x = seq.embeddings;
    for (const auto& layer : layers) {
      std::vector<Tensor<S>> head_weights;
      x = layer.forward(x, cfg.window, cfg.attention_dropout, mode, rng, &head_weights);
      for (const auto& w : head_weights) {
        const int64_t n_t = w.rows();
        std::vector<double> row(n_t);
        for (int64_t j = 0; j < n_t; ++j) row[j] = static_cast<double>(w.at(0, j));
        record.cls_rows.push_back(std::move(row));
        if (record_full) {
          std::vector<double> full(n_t * n_t);
          for (int64_t i = 0; i < n_t * n_t; ++i)
            full[i] = static_cast<double>(w.data()[i]);
          record.full_maps.push_back(std::move(full));
        }
      }
    }
    return {slice_rows(x, 0, 1), std::move(record)};
  }

  void visit_params(const std::string& prefix, const ParamVisitor<S>& visit) {
    visit(prefix + ".cls_token", cls_token);
    visit(prefix + ".cls_pos", cls_pos);
    if (cfg.pe_mode == PeMode::Learned) visit(prefix + ".pe_table", pe_table);
    for (size_t i = 0; i < layers.size(); ++i)
      layers[i].visit_params(prefix + ".layer" + std::to_string(i), visit);
  }
};

}  // namespace vtn
