#pragma once

#include <map>
#include <set>
#include <string>

#include "vtn/csv.hpp"
#include "vtn/model.hpp"
#include "vtn/runconfig.hpp"
#include "vtn/tensor_io.hpp"

namespace vtn {

inline std::string snapshot_from_model_config(const ModelConfig& cfg) {
  RunConfig rc;
  rc.set("model.backbone", to_string(cfg.backbone.kind));
  rc.set("model.patch_size", std::to_string(cfg.backbone.patch_size));
  rc.set("model.conv1_channels", std::to_string(cfg.backbone.conv1_channels));
  rc.set("model.conv2_channels", std::to_string(cfg.backbone.conv2_channels));
  rc.set("model.d_backbone", std::to_string(cfg.backbone.d_backbone));
  rc.set("model.layers", std::to_string(cfg.encoder.num_layers));
  rc.set("model.heads", std::to_string(cfg.encoder.num_heads));
  rc.set("model.window", std::to_string(cfg.encoder.window));
  rc.set("model.ffn_size", std::to_string(cfg.encoder.ffn_size));
  rc.set("model.attention_dropout", format_double(cfg.encoder.attention_dropout));
  rc.set("model.pe_mode", to_string(cfg.encoder.pe_mode));
  rc.set("model.attention_mode", to_string(cfg.encoder.attention_mode));
  rc.set("model.max_position", std::to_string(cfg.encoder.max_position));
  rc.set("model.head_mlp_size", std::to_string(cfg.head.mlp_size));
  rc.set("model.head_dropout", format_double(cfg.head.dropout));
  rc.set("model.num_classes", std::to_string(cfg.head.num_classes));
  rc.set("model.frame_channels", std::to_string(cfg.frame_channels));
  rc.set("model.frame_size", std::to_string(cfg.frame_size));
  return rc.model_snapshot();
}

template <class S>
void load_records_into(VtnModel<S>& model, const TensorFile& file) {
  std::map<std::string, const TensorRecord*> by_name;
  for (const auto& rec : file.records) {
    if (!by_name.emplace(rec.name, &rec).second)
      throw std::invalid_argument("checkpoint: duplicate tensor '" + rec.name + "'");
  }
  std::set<std::string> used;
  model.visit_params([&](const std::string& name, Tensor<S>& p) {
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw std::invalid_argument("checkpoint: missing tensor '" + name + "'");
    if (it->second->shape != p.shape())
      throw std::invalid_argument("checkpoint: dimension mismatch for tensor '" + name +
                                  "'");
    p.data() = from_record<S>(*it->second).data();
    used.insert(name);
  });
  for (const auto& [name, rec] : by_name)
    if (!used.count(name))
      throw std::invalid_argument("checkpoint: unknown tensor name '" + name + "'");
}

template <class S>
void save_checkpoint(VtnModel<S>& model, const std::string& path) {
  TensorFile file;
  file.config_text = snapshot_from_model_config(model.cfg);
  model.visit_params([&](const std::string& name, Tensor<S>& p) {
    file.records.push_back(to_record(name, p));
  });
  write_tensor_file(path, file);
}

template <class S>
VtnModel<S> load_checkpoint(const std::string& path) {
  const TensorFile file = read_tensor_file(path);
  const ModelConfig cfg = RunConfig::model_config_from_snapshot(file.config_text);
  VtnModel<S> model;
  Rng init_rng(0);  // values are overwritten from the records below
  model.init(cfg, init_rng);
  load_records_into(model, file);
  return model;
}

}  // namespace vtn
