#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "vtn/model_config.hpp"

namespace vtn {

// Flat key=value configuration covering every module's knobs. Unknown keys
// are errors; serialize() is canonical (sorted keys, every key present), so
// parse/serialize round-trips normalize key order.
class RunConfig {
 public:
  RunConfig();  // all defaults

  static RunConfig parse(const std::string& text);
  static RunConfig load_file(const std::string& path);

  void set(const std::string& key, const std::string& value);
  void apply_override(const std::string& key_equals_value);

  const std::string& get(const std::string& key) const;
  int64_t get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;

  std::string serialize() const;

  ModelConfig model_config() const;
  // Canonical text of just the model.* keys; embedded in checkpoints.
  std::string model_snapshot() const;
  static ModelConfig model_config_from_snapshot(const std::string& text);

  static const std::vector<std::string>& known_keys();

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace vtn
