#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "vtn/backbone.hpp"
#include "vtn/gradcheck.hpp"
#include "vtn/model.hpp"

using vtn::BackboneConfig;
using vtn::BackboneKind;
using vtn::Mode;
using vtn::Rng;
using vtn::Tensor;

namespace {

Tensor<double> random_nd(std::vector<int64_t> shape, Rng& rng) {
  auto t = Tensor<double>::zeros(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(-1.0, 1.0);
  return t;
}

BackboneConfig patch_cfg() {
  BackboneConfig cfg;
  cfg.kind = BackboneKind::LinearPatch;
  cfg.patch_size = 4;
  cfg.d_backbone = 8;
  return cfg;
}

BackboneConfig conv_cfg() {
  BackboneConfig cfg;
  cfg.kind = BackboneKind::TinyConv;
  cfg.conv1_channels = 4;
  cfg.conv2_channels = 6;
  cfg.d_backbone = 8;
  return cfg;
}

}  // namespace

TEST_CASE("stack_frames row order and round trip") {
  Rng rng(1);
  const int64_t B = 2, C = 3, T = 3, H = 2, W = 2;
  auto clips = random_nd({B, C, T, H, W}, rng);

  auto batch = vtn::stack_frames(clips);
  REQUIRE(batch.frames.shape() == std::vector<int64_t>({B * T, C, H, W}));

  // output[(b*T + t)] == clips[b, :, t]
  for (int64_t b = 0; b < B; ++b)
    for (int64_t t = 0; t < T; ++t)
      for (int64_t c = 0; c < C; ++c)
        for (int64_t p = 0; p < H * W; ++p) {
          double got = batch.frames.data()[((b * T + t) * C + c) * H * W + p];
          double want = clips.data()[((b * C + c) * T + t) * H * W + p];
          CHECK(got == want);
        }

  auto restored = vtn::unstack_frames(batch, C, H, W);
  CHECK(restored.data() == clips.data());  // bit-equal

  // B=1, T=1: identity up to the axis removal
  auto single = random_nd({1, C, 1, H, W}, rng);
  auto sb = vtn::stack_frames(single);
  CHECK(sb.frames.data() == single.data());

  CHECK_THROWS_AS(vtn::stack_frames(random_nd({2, 3, 4}, rng)), std::invalid_argument);
}

TEST_CASE("duplicate frames produce identical feature rows") {
  Rng rng(2);
  for (auto cfg : {patch_cfg(), conv_cfg()}) {
    vtn::SpatialBackbone<double> bb;
    Rng init_rng(5);
    bb.init(cfg, 1, init_rng);

    auto frame = random_nd({1, 1, 8, 8}, rng);
    auto batch_frames = Tensor<double>::zeros({3, 1, 8, 8});
    // rows 0 and 2 are the same frame
    std::copy(frame.data().begin(), frame.data().end(), batch_frames.data().begin());
    for (int64_t i = 0; i < 64; ++i)
      batch_frames.data()[64 + i] = rng.uniform(-1.0, 1.0);
    std::copy(frame.data().begin(), frame.data().end(),
              batch_frames.data().begin() + 2 * 64);

    vtn::FrameBatch<double> fb{batch_frames, 3, 1};
    auto feats = bb.extract_features(fb, Mode::Eval);
    REQUIRE(feats.shape() == std::vector<int64_t>({3, 8}));
    for (int64_t j = 0; j < 8; ++j) CHECK(feats.at(0, j) == feats.at(2, j));
  }
}

TEST_CASE("batch composition independence") {
  Rng rng(3);
  for (auto cfg : {patch_cfg(), conv_cfg()}) {
    vtn::SpatialBackbone<double> bb;
    Rng init_rng(6);
    bb.init(cfg, 1, init_rng);

    auto group = random_nd({5, 1, 8, 8}, rng);
    vtn::FrameBatch<double> all{group, 5, 1};
    auto feats_all = bb.extract_features(all, Mode::Eval);

    for (int64_t f = 0; f < 5; ++f) {
      auto alone = Tensor<double>::zeros({1, 1, 8, 8});
      std::copy(group.data().begin() + f * 64, group.data().begin() + (f + 1) * 64,
                alone.data().begin());
      vtn::FrameBatch<double> one{alone, 1, 1};
      auto feats_one = bb.extract_features(one, Mode::Eval);
      for (int64_t j = 0; j < 8; ++j)
        CHECK(std::abs(feats_all.at(f, j) - feats_one.at(0, j)) < 1e-6);
    }
  }
}

TEST_CASE("stacked extraction equals per-clip extraction") {
  Rng rng(4);
  vtn::SpatialBackbone<double> bb;
  Rng init_rng(7);
  bb.init(patch_cfg(), 1, init_rng);

  const int64_t B = 2, T = 4;
  auto clips = random_nd({B, 1, T, 8, 8}, rng);
  auto stacked = vtn::stack_frames(clips);
  auto feats = bb.extract_features(stacked, Mode::Eval);

  for (int64_t b = 0; b < B; ++b)
    for (int64_t t = 0; t < T; ++t) {
      auto frame = Tensor<double>::zeros({1, 1, 8, 8});
      for (int64_t p = 0; p < 64; ++p)
        frame.data()[p] = clips.data()[((b * 1 + 0) * T + t) * 64 + p];
      vtn::FrameBatch<double> one{frame, 1, 1};
      auto f1 = bb.extract_features(one, Mode::Eval);
      for (int64_t j = 0; j < 8; ++j)
        CHECK(std::abs(feats.at(b * T + t, j) - f1.at(0, j)) < 1e-6);
    }
}

TEST_CASE("zero frame with zero-initialized bias maps to zero features") {
  vtn::SpatialBackbone<double> bb;
  Rng init_rng(8);
  bb.init(patch_cfg(), 1, init_rng);  // fan-in init leaves biases at zero

  auto zero = Tensor<double>::zeros({1, 1, 8, 8});
  vtn::FrameBatch<double> fb{zero, 1, 1};
  auto feats = bb.extract_features(fb, Mode::Eval);
  for (double v : feats.data()) CHECK(v == 0.0);
}

TEST_CASE("backbone gradchecks") {
  Rng rng(9);
  for (auto cfg : {patch_cfg(), conv_cfg()}) {
    vtn::SpatialBackbone<double> bb;
    Rng init_rng(10);
    bb.init(cfg, 1, init_rng);

    auto frames = random_nd({2, 1, 8, 8}, rng);
    auto target = random_nd({2, 8}, rng);
    std::vector<Tensor<double>> leaves{frames};
    bb.visit_params("backbone",
                    [&](const std::string&, Tensor<double>& p) { leaves.push_back(p); });

    auto result = vtn::gradcheck(
        [&] {
          vtn::FrameBatch<double> fb{frames, 2, 1};
          auto f = bb.extract_features(fb, Mode::Train);
          return vtn::sum(vtn::mul(f, f));
        },
        leaves);
    CHECK(result.max_rel_err <= 1e-4);
    (void)target;
  }
}

TEST_CASE("frozen backbone parameters receive no gradient") {
  vtn::SpatialBackbone<double> bb;
  Rng init_rng(11);
  bb.init(patch_cfg(), 1, init_rng);
  bb.set_frozen(true);

  Rng rng(12);
  auto frames = random_nd({1, 1, 8, 8}, rng);
  {
    vtn::Tape<double> tape;
    vtn::FrameBatch<double> fb{frames, 1, 1};
    auto f = bb.extract_features(fb, Mode::Train);
    // with every input non-differentiable nothing should be recorded at all
    CHECK(tape.size() == 0);
    CHECK_FALSE(f.requires_grad());
  }
  bb.visit_params("backbone", [](const std::string&, Tensor<double>& p) {
    CHECK(p.grad().empty());
  });

  bb.set_frozen(false);
  bb.visit_params("backbone", [](const std::string&, Tensor<double>& p) {
    CHECK(p.requires_grad());
  });
}
