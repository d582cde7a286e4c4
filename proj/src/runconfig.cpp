#include "vtn/runconfig.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace vtn {

namespace {

enum class KeyKind { Int, Double, Bool, Str };

struct KeySpec {
  const char* key;
  KeyKind kind;
  const char* default_value;
};

// Every knob in the system. Defaults are the desk-scale configuration.
const KeySpec kSchema[] = {
    {"model.backbone", KeyKind::Str, "linear_patch"},
    {"model.patch_size", KeyKind::Int, "8"},
    {"model.conv1_channels", KeyKind::Int, "8"},
    {"model.conv2_channels", KeyKind::Int, "16"},
    {"model.d_backbone", KeyKind::Int, "32"},
    {"model.layers", KeyKind::Int, "1"},
    {"model.heads", KeyKind::Int, "2"},
    {"model.window", KeyKind::Int, "32"},
    {"model.ffn_size", KeyKind::Int, "128"},
    {"model.attention_dropout", KeyKind::Double, "0.1"},
    {"model.pe_mode", KeyKind::Str, "learned"},
    {"model.attention_mode", KeyKind::Str, "learned"},
    {"model.max_position", KeyKind::Int, "1024"},
    {"model.head_mlp_size", KeyKind::Int, "0"},  // 0 = match d_backbone
    {"model.head_dropout", KeyKind::Double, "0.1"},
    {"model.num_classes", KeyKind::Int, "2"},
    {"model.frame_channels", KeyKind::Int, "1"},
    {"model.frame_size", KeyKind::Int, "32"},  // crop size = model input

    {"data.task", KeyKind::Str, "order_sensitive"},
    {"data.num_train", KeyKind::Int, "500"},
    {"data.num_val", KeyKind::Int, "200"},
    {"data.frames_per_video", KeyKind::Int, "16"},
    {"data.frame_size", KeyKind::Int, "32"},
    {"data.noise", KeyKind::Double, "0.02"},
    {"data.fps", KeyKind::Double, "8"},
    {"data.seed", KeyKind::Int, "7"},

    // desk-scale default: from-scratch training with plain SGD needs a far
    // larger step size than fine-tuning a pretrained backbone does
    {"train.lr", KeyKind::Double, "0.3"},
    {"train.schedule", KeyKind::Str, "cosine"},
    {"train.step_size", KeyKind::Int, "10"},
    {"train.step_gamma", KeyKind::Double, "0.1"},
    {"train.momentum", KeyKind::Double, "0"},
    {"train.weight_decay", KeyKind::Double, "0"},
    {"train.batch_size", KeyKind::Int, "8"},
    {"train.epochs", KeyKind::Int, "30"},
    {"train.seed", KeyKind::Int, "2"},
    {"train.frozen_backbone", KeyKind::Bool, "false"},
    {"train.footprint_seconds", KeyKind::Double, "2.56"},
    {"train.frames_per_clip", KeyKind::Int, "16"},
    {"train.scale_min", KeyKind::Int, "36"},
    {"train.scale_max", KeyKind::Int, "45"},
    {"train.hflip_prob", KeyKind::Double, "0.5"},

    {"eval.protocol", KeyKind::Str, "full"},
    {"eval.full_frames", KeyKind::Int, "250"},
    {"eval.clips", KeyKind::Int, "10"},
    {"eval.crops", KeyKind::Int, "3"},
    {"eval.chunk_size", KeyKind::Int, "64"},
    {"eval.resize", KeyKind::Int, "36"},
    {"eval.shuffle", KeyKind::Bool, "false"},
};

const KeySpec* find_spec(const std::string& key) {
  for (const auto& spec : kSchema)
    if (key == spec.key) return &spec;
  return nullptr;
}

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

void validate_value(const KeySpec& spec, const std::string& value) {
  try {
    size_t used = 0;
    switch (spec.kind) {
      case KeyKind::Int:
        (void)std::stoll(value, &used);
        if (used != value.size()) throw std::invalid_argument("trailing");
        break;
      case KeyKind::Double:
        (void)std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument("trailing");
        break;
      case KeyKind::Bool:
        if (value != "true" && value != "false")
          throw std::invalid_argument("expected true/false");
        break;
      case KeyKind::Str:
        if (value.empty()) throw std::invalid_argument("empty");
        break;
    }
  } catch (const std::exception&) {
    throw std::invalid_argument("config: bad value for " + std::string(spec.key) + ": '" +
                                value + "'");
  }
}

}  // namespace

RunConfig::RunConfig() {
  for (const auto& spec : kSchema) values_[spec.key] = spec.default_value;
}

const std::vector<std::string>& RunConfig::known_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& spec : kSchema) k.push_back(spec.key);
    return k;
  }();
  return keys;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const KeySpec* spec = find_spec(key);
  if (!spec) throw std::invalid_argument("config: unknown key '" + key + "'");
  const std::string v = trim(value);
  validate_value(*spec, v);
  values_[key] = v;
}

void RunConfig::apply_override(const std::string& kv) {
  const size_t eq = kv.find('=');
  if (eq == std::string::npos)
    throw std::invalid_argument("config: override must be key=value, got '" + kv + "'");
  set(trim(kv.substr(0, eq)), kv.substr(eq + 1));
}

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const size_t eq = stripped.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: line " + std::to_string(lineno) +
                                  " is not key=value");
    cfg.set(trim(stripped.substr(0, eq)), stripped.substr(eq + 1));
  }
  return cfg;
}

RunConfig RunConfig::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end())
    throw std::invalid_argument("config: unknown key '" + key + "'");
  return it->second;
}

int64_t RunConfig::get_int(const std::string& key) const { return std::stoll(get(key)); }
double RunConfig::get_double(const std::string& key) const { return std::stod(get(key)); }
bool RunConfig::get_bool(const std::string& key) const { return get(key) == "true"; }

std::string RunConfig::serialize() const {
  std::string out;
  for (const auto& [key, value] : values_) {  // std::map keeps keys sorted
    out += key;
    out += '=';
    out += value;
    out += '\n';
  }
  return out;
}

ModelConfig RunConfig::model_config() const {
  ModelConfig cfg;
  cfg.backbone.kind = backbone_kind_from_string(get("model.backbone"));
  cfg.backbone.patch_size = get_int("model.patch_size");
  cfg.backbone.conv1_channels = get_int("model.conv1_channels");
  cfg.backbone.conv2_channels = get_int("model.conv2_channels");
  cfg.backbone.d_backbone = get_int("model.d_backbone");
  cfg.encoder.num_layers = get_int("model.layers");
  cfg.encoder.num_heads = get_int("model.heads");
  cfg.encoder.hidden_size = cfg.backbone.d_backbone;
  cfg.encoder.ffn_size = get_int("model.ffn_size");
  cfg.encoder.window = get_int("model.window");
  cfg.encoder.attention_dropout = get_double("model.attention_dropout");
  cfg.encoder.pe_mode = pe_mode_from_string(get("model.pe_mode"));
  cfg.encoder.attention_mode = attention_mode_from_string(get("model.attention_mode"));
  cfg.encoder.max_position = get_int("model.max_position");
  cfg.head.input_size = cfg.backbone.d_backbone;
  const int64_t mlp = get_int("model.head_mlp_size");
  cfg.head.mlp_size = mlp > 0 ? mlp : cfg.backbone.d_backbone;
  cfg.head.num_classes = get_int("model.num_classes");
  cfg.head.dropout = get_double("model.head_dropout");
  cfg.frame_channels = get_int("model.frame_channels");
  cfg.frame_size = get_int("model.frame_size");
  cfg.validate();
  return cfg;
}

std::string RunConfig::model_snapshot() const {
  std::string out;
  for (const auto& [key, value] : values_)
    if (key.rfind("model.", 0) == 0) out += key + "=" + value + "\n";
  return out;
}

ModelConfig RunConfig::model_config_from_snapshot(const std::string& text) {
  return parse(text).model_config();
}

}  // namespace vtn
