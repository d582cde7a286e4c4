#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <sstream>

#include "vtn/attention_export.hpp"
#include "vtn/checkpoint.hpp"
#include "vtn/flops.hpp"
#include "vtn/runconfig.hpp"

using vtn::InferenceProtocol;
using vtn::Rng;
using vtn::RunConfig;
using vtn::Tensor;

namespace {

vtn::ModelConfig tiny_cfg() {
  vtn::ModelConfig cfg;
  cfg.backbone.patch_size = 4;
  cfg.backbone.d_backbone = 16;
  cfg.encoder.num_layers = 1;
  cfg.encoder.num_heads = 2;
  cfg.encoder.hidden_size = 16;
  cfg.encoder.ffn_size = 32;
  cfg.encoder.window = 8;
  cfg.head.input_size = 16;
  cfg.head.mlp_size = 16;
  cfg.head.num_classes = 2;
  cfg.frame_size = 16;
  return cfg;
}

// Re-stamp a tensor file's version field and fix up the trailing crc so the
// version check (not the checksum) is what fires.
std::vector<unsigned char> with_version(std::vector<unsigned char> bytes, uint32_t v) {
  std::memcpy(bytes.data() + 8, &v, 4);
  const uint32_t crc = vtn::crc32(bytes.data() + 8, bytes.size() - 12);
  std::memcpy(bytes.data() + bytes.size() - 4, &crc, 4);
  return bytes;
}

}  // namespace

TEST_CASE("linear layer multiply-add count") {
  CHECK(vtn::linear_count(8, 16, 4) == 1024);  // 2 * 8 * 16 * 4
}

TEST_CASE("grand total is exactly views times per-view") {
  RunConfig rc;  // desk defaults
  const auto cfg = rc.model_config();

  InferenceProtocol full;
  full.kind = InferenceProtocol::Kind::FullVideo;
  auto full_report = vtn::count_flops(cfg, full);
  CHECK(full_report.num_views == 1);
  CHECK(full_report.grand_total == full_report.per_view);

  InferenceProtocol views;
  views.kind = InferenceProtocol::Kind::MultiView;
  auto mv_report = vtn::count_flops(cfg, views);
  CHECK(mv_report.num_views == 30);
  CHECK(mv_report.grand_total == 30 * mv_report.per_view);

  // whole-video single pass costs less than the 30-view grid
  CHECK(full_report.grand_total < mv_report.grand_total);

  // precomputed features drop the backbone term
  InferenceProtocol pre;
  pre.kind = InferenceProtocol::Kind::PrecomputedFeatures;
  auto pre_report = vtn::count_flops(cfg, pre);
  CHECK(pre_report.backbone_per_frame == 0);
  CHECK(pre_report.grand_total < full_report.grand_total);

  // chunked matches full-video cost (same math, different schedule)
  InferenceProtocol chunked;
  chunked.kind = InferenceProtocol::Kind::Chunked;
  CHECK(vtn::count_flops(cfg, chunked).grand_total == full_report.grand_total);
}

TEST_CASE("windowed attention cost scales linearly, dense quadratically") {
  const int64_t w = 8, d = 64;
  for (int64_t n : {64L, 128L, 256L}) {
    const double ratio_w =
        static_cast<double>(vtn::attention_term_count(2 * n, w, d, false)) /
        static_cast<double>(vtn::attention_term_count(n, w, d, false));
    const double ratio_d =
        static_cast<double>(vtn::attention_term_count(2 * n, w, d, true)) /
        static_cast<double>(vtn::attention_term_count(n, w, d, true));
    CHECK(ratio_w <= 2.2);
    CHECK(ratio_d >= 3.5);
  }

  // whole encoder-layer count stays near-linear too (n >= 4w)
  vtn::EncoderConfig ec;
  ec.num_layers = 1;
  ec.num_heads = 2;
  ec.hidden_size = 32;
  ec.ffn_size = 64;
  ec.window = 8;
  for (int64_t n : {32L, 64L, 128L}) {
    const double ratio = static_cast<double>(vtn::encoder_sequence_count(ec, 2 * n)) /
                         static_cast<double>(vtn::encoder_sequence_count(ec, n));
    CHECK(ratio <= 2.2);
  }

  auto table = vtn::attention_scaling_table({16, 32, 64}, 8, 32);
  REQUIRE(table.size() == 3);
  for (const auto& row : table) CHECK(row.dense > row.windowed);
}

TEST_CASE("allowed-set accounting matches the mask") {
  for (int64_t n : {3L, 8L, 40L}) {
    for (int64_t w : {2L, 8L, 64L}) {
      auto mask = vtn::window_attention_mask(n + 1, w);
      uint64_t ones = 0;
      for (uint8_t m : *mask) ones += m;
      CHECK(vtn::attention_allowed_sum(n, w) == ones);
    }
  }
}

TEST_CASE("uniform attention drops the q/k projections and score term") {
  vtn::EncoderConfig learned;
  learned.hidden_size = 32;
  learned.ffn_size = 64;
  learned.window = 8;
  auto uniform = learned;
  uniform.attention_mode = vtn::AttentionMode::UniformFixed;
  CHECK(vtn::encoder_sequence_count(uniform, 64) <
        vtn::encoder_sequence_count(learned, 64));
}

TEST_CASE("checkpoint round trip is byte-identical") {
  vtn::VtnModel<float> model;
  Rng rng(11);
  model.init(tiny_cfg(), rng);

  const std::string path = "/tmp/vtn_test_ckpt.bin";
  vtn::save_checkpoint(model, path);
  auto loaded = vtn::load_checkpoint<float>(path);

  // parameters bit-equal
  std::vector<std::pair<std::string, std::vector<float>>> before, after;
  model.visit_params([&](const std::string& n, Tensor<float>& p) {
    before.push_back({n, p.data()});
  });
  loaded.visit_params([&](const std::string& n, Tensor<float>& p) {
    after.push_back({n, p.data()});
  });
  CHECK(before == after);

  // save -> load -> save reproduces the file exactly
  const std::string path2 = "/tmp/vtn_test_ckpt2.bin";
  vtn::save_checkpoint(loaded, path2);
  CHECK(vtn::read_text_file(path) == vtn::read_text_file(path2));

  std::filesystem::remove(path);
  std::filesystem::remove(path2);
}

TEST_CASE("checkpoint failure modes are distinct") {
  vtn::VtnModel<float> model;
  Rng rng(12);
  model.init(tiny_cfg(), rng);

  vtn::TensorFile file;
  file.config_text = vtn::snapshot_from_model_config(model.cfg);
  model.visit_params([&](const std::string& n, Tensor<float>& p) {
    file.records.push_back(vtn::to_record(n, p));
  });
  auto bytes = vtn::encode_tensor_file(file);

  // truncation breaks the checksum, never yields a partial model
  auto truncated = bytes;
  truncated.resize(truncated.size() / 2);
  CHECK_THROWS_AS(vtn::decode_tensor_file(truncated), vtn::ChecksumError);

  // a flipped payload byte breaks the checksum
  auto corrupt = bytes;
  corrupt[bytes.size() / 2] ^= 0x40;
  CHECK_THROWS_AS(vtn::decode_tensor_file(corrupt), vtn::ChecksumError);

  // a future version with a valid checksum is a version error
  CHECK_THROWS_AS(vtn::decode_tensor_file(with_version(bytes, 999)),
                  vtn::VersionMismatchError);

  // bad magic
  auto garbled = bytes;
  garbled[0] = 'X';
  CHECK_THROWS_AS(vtn::decode_tensor_file(garbled), vtn::FileFormatError);

  // loading into a mismatched architecture names the offending tensor
  auto other_cfg = tiny_cfg();
  other_cfg.backbone.d_backbone = 8;
  other_cfg.encoder.hidden_size = 8;
  other_cfg.encoder.ffn_size = 16;
  other_cfg.head.input_size = 8;
  other_cfg.head.mlp_size = 8;
  vtn::VtnModel<float> other;
  Rng rng2(13);
  other.init(other_cfg, rng2);
  try {
    vtn::load_records_into(other, vtn::decode_tensor_file(bytes));
    FAIL("expected dimension mismatch");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("dimension mismatch") != std::string::npos);
    CHECK(std::string(e.what()).find("backbone.embed.weight") != std::string::npos);
  }

  // an extra record is an unknown-tensor error
  auto extra = file;
  extra.records.push_back(vtn::to_record("mystery", Tensor<float>::zeros({2})));
  vtn::VtnModel<float> fresh;
  Rng rng3(14);
  fresh.init(tiny_cfg(), rng3);
  try {
    vtn::load_records_into(fresh, extra);
    FAIL("expected unknown tensor");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("mystery") != std::string::npos);
  }
}

TEST_CASE("attention export schema") {
  // two layers, two heads over a 4-frame sequence
  vtn::EncoderConfig ec;
  ec.num_layers = 2;
  ec.num_heads = 2;
  ec.hidden_size = 8;
  ec.ffn_size = 16;
  ec.window = 4;
  vtn::TemporalEncoder<float> enc;
  Rng rng(3);
  enc.init(ec, rng);
  auto features = Tensor<float>::randn({4, 8}, rng, 1.0);
  auto seq = enc.build_sequence(features, {3, 7, 9, 12});
  Rng unused(0);
  auto [cls, record] = enc.forward(seq, vtn::Mode::Eval, unused);

  auto csv = vtn::attention_record_csv(record);
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  CHECK(line == "layer,head,token_index,frame_position,weight");

  int64_t rows = 0;
  std::map<std::string, double> sums;
  bool saw_cls_self = false;
  while (std::getline(in, line)) {
    ++rows;
    std::istringstream row(line);
    std::string layer, head, token, frame, weight;
    std::getline(row, layer, ',');
    std::getline(row, head, ',');
    std::getline(row, token, ',');
    std::getline(row, frame, ',');
    std::getline(row, weight, ',');
    sums[layer + "/" + head] += std::stod(weight);
    if (token == "0") {
      CHECK(frame == "-1");  // cls self weight carries no frame position
      saw_cls_self = true;
    } else {
      // frame positions are the original-video indices
      int64_t t = std::stoll(token);
      CHECK(frame == std::to_string(std::vector<int64_t>{3, 7, 9, 12}[t - 1]));
    }
  }
  CHECK(rows == 2 * 2 * 5);  // layers x heads x (n + 1)
  CHECK(saw_cls_self);
  for (const auto& [key, total] : sums) CHECK(std::abs(total - 1.0) < 1e-5);

  vtn::AttentionRecord empty;
  CHECK_THROWS_AS(vtn::export_attention(empty, "/tmp/nope.csv"), std::invalid_argument);
}

TEST_CASE("run config parses, rejects unknown keys, serializes canonically") {
  RunConfig defaults;
  CHECK(defaults.get_int("model.d_backbone") == 32);
  CHECK(defaults.get_double("train.lr") == 0.3);
  CHECK(defaults.get("eval.protocol") == "full");
  CHECK_FALSE(defaults.get_bool("train.frozen_backbone"));

  // reordered keys normalize to the same canonical text
  auto a = RunConfig::parse("train.lr=0.01\nmodel.layers=3\n");
  auto b = RunConfig::parse("model.layers=3\n# comment\n\ntrain.lr=0.01\n");
  CHECK(a.serialize() == b.serialize());
  CHECK(a.get_int("model.layers") == 3);

  // parse(serialize(x)) == x
  auto c = RunConfig::parse(a.serialize());
  CHECK(c.serialize() == a.serialize());

  CHECK_THROWS_AS(RunConfig::parse("nonsense.key=1\n"), std::invalid_argument);
  CHECK_THROWS_AS(RunConfig::parse("train.lr\n"), std::invalid_argument);
  CHECK_THROWS_AS(RunConfig::parse("train.epochs=ten\n"), std::invalid_argument);
  CHECK_THROWS_AS(defaults.get("no.such.key"), std::invalid_argument);

  RunConfig overridden;
  overridden.apply_override("model.heads=4");
  CHECK(overridden.get_int("model.heads") == 4);
  CHECK_THROWS_AS(overridden.apply_override("model.heads"), std::invalid_argument);

  // model config snapshot round trip
  auto cfg = overridden.model_config();
  auto text = vtn::snapshot_from_model_config(cfg);
  auto back = RunConfig::model_config_from_snapshot(text);
  CHECK(back.encoder.num_heads == 4);
  CHECK(back.backbone.d_backbone == cfg.backbone.d_backbone);
}
