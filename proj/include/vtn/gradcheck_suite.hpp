#pragma once

#include <string>
#include <vector>

#include "vtn/backbone.hpp"
#include "vtn/gradcheck.hpp"
#include "vtn/head.hpp"
#include "vtn/model.hpp"

namespace vtn {

struct GradCheckRow {
  std::string module;
  double max_rel_err = 0.0;
};

// Central-difference checks over every differentiable module, in 64-bit with
// small shapes. Each entry perturbs the module inputs and all parameters.
inline std::vector<GradCheckRow> gradcheck_suite(double step = 1e-6) {
  std::vector<GradCheckRow> rows;
  auto random_nd = [](std::vector<int64_t> shape, Rng& rng) {
    auto t = Tensor<double>::zeros(std::move(shape));
    for (double& v : t.data()) v = rng.uniform(-1.0, 1.0);
    return t;
  };

  {
    Rng rng(101);
    BackboneConfig bc;
    bc.kind = BackboneKind::LinearPatch;
    bc.patch_size = 4;
    bc.d_backbone = 8;
    SpatialBackbone<double> bb;
    bb.init(bc, 1, rng);
    auto frames = random_nd({2, 1, 8, 8}, rng);
    std::vector<Tensor<double>> leaves{frames};
    bb.visit_params("b", [&](const std::string&, Tensor<double>& p) { leaves.push_back(p); });
    auto r = gradcheck(
        [&] {
          FrameBatch<double> fb{frames, 2, 1};
          auto f = bb.extract_features(fb, Mode::Train);
          return sum(mul(f, f));
        },
        leaves, step);
    rows.push_back({"backbone.linear_patch", r.max_rel_err});
  }
  {
    Rng rng(102);
    BackboneConfig bc;
    bc.kind = BackboneKind::TinyConv;
    bc.conv1_channels = 4;
    bc.conv2_channels = 6;
    bc.d_backbone = 8;
    SpatialBackbone<double> bb;
    bb.init(bc, 1, rng);
    auto frames = random_nd({2, 1, 8, 8}, rng);
    std::vector<Tensor<double>> leaves{frames};
    bb.visit_params("b", [&](const std::string&, Tensor<double>& p) { leaves.push_back(p); });
    auto r = gradcheck(
        [&] {
          FrameBatch<double> fb{frames, 2, 1};
          auto f = bb.extract_features(fb, Mode::Train);
          return sum(mul(f, f));
        },
        leaves, step);
    rows.push_back({"backbone.tiny_conv", r.max_rel_err});
  }
  {
    Rng rng(103);
    EncoderConfig ec;
    ec.num_layers = 1;
    ec.num_heads = 2;
    ec.hidden_size = 8;
    ec.ffn_size = 16;
    ec.window = 4;  // truncated windows on a 6-token sequence
    ec.attention_dropout = 0.2;
    ec.pe_mode = PeMode::Learned;
    ec.max_position = 16;
    TemporalEncoder<double> enc;
    enc.init(ec, rng);
    auto features = random_nd({5, 8}, rng);
    std::vector<Tensor<double>> leaves{features};
    enc.visit_params("e", [&](const std::string&, Tensor<double>& p) { leaves.push_back(p); });
    auto r = gradcheck(
        [&] {
          Rng drop_rng(7);
          auto seq = enc.build_sequence(features, {0, 3, 5, 9, 11});
          auto [cls, rec] = enc.forward(seq, Mode::Train, drop_rng);
          return sum(mul(cls, cls));
        },
        leaves, step);
    rows.push_back({"encoder.layer", r.max_rel_err});
  }
  {
    Rng rng(104);
    EncoderConfig ec;
    ec.num_layers = 1;
    ec.num_heads = 2;
    ec.hidden_size = 8;
    ec.ffn_size = 16;
    ec.window = 4;
    ec.attention_mode = AttentionMode::UniformFixed;
    TemporalEncoder<double> enc;
    enc.init(ec, rng);
    auto features = random_nd({5, 8}, rng);
    std::vector<Tensor<double>> leaves{features};
    enc.visit_params("e", [&](const std::string&, Tensor<double>& p) { leaves.push_back(p); });
    auto r = gradcheck(
        [&] {
          Rng unused(0);
          auto seq = enc.build_sequence(features, {0, 1, 2, 3, 4});
          auto [cls, rec] = enc.forward(seq, Mode::Train, unused);
          return sum(mul(cls, cls));
        },
        leaves, step);
    rows.push_back({"encoder.uniform_attention", r.max_rel_err});
  }
  {
    Rng rng(105);
    HeadConfig hc;
    hc.input_size = 8;
    hc.mlp_size = 8;
    hc.num_classes = 3;
    hc.dropout = 0.2;
    ClassifierHead<double> head;
    head.init(hc, rng);
    auto cls_state = random_nd({1, 8}, rng);
    std::vector<Tensor<double>> leaves{cls_state};
    head.visit_params("h", [&](const std::string&, Tensor<double>& p) { leaves.push_back(p); });
    auto r = gradcheck(
        [&] {
          Rng drop_rng(9);
          auto logits = head.forward(cls_state, Mode::Train, drop_rng);
          return sum(mul(logits, logits));
        },
        leaves, step);
    rows.push_back({"head", r.max_rel_err});
  }
  {
    Rng rng(106);
    auto logits = random_nd({4, 3}, rng);
    auto labels = std::make_shared<std::vector<int>>(std::vector<int>{2, 0, 1, 1});
    auto r = gradcheck([&] { return cross_entropy_mean(logits, labels); }, {logits}, step);
    rows.push_back({"loss.cross_entropy", r.max_rel_err});
  }
  return rows;
}

}  // namespace vtn
