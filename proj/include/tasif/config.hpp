// Flat key=value run configuration with layered overrides:
// defaults < config file < TASIF_* environment < explicit sets (CLI flags).
#pragma once

#include <string>
#include <vector>

#include "tasif/adam.hpp"
#include "tasif/data.hpp"
#include "tasif/losses.hpp"
#include "tasif/model.hpp"

namespace tasif {

struct ConfigEntry {
  std::string key;
  std::string value;  // default
  std::string help;
};

class RunConfig {
 public:
  RunConfig();  // all keys at their recorded defaults

  // every known key with its default and description, in canonical order
  static const std::vector<ConfigEntry>& schema();

  void set(const std::string& key, const std::string& value);  // unknown key -> error
  const std::string& get(const std::string& key) const;

  void apply_file(const std::string& path);        // "key = value" lines, # comments
  void apply_env();                                // TASIF_<UPPER_KEY>
  void apply_override(const std::string& kv);      // "key=value"

  i64 get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  u64 get_seed(const std::string& key) const;
  std::vector<i64> get_int_list(const std::string& key) const;       // comma separated
  std::vector<double> get_double_list(const std::string& key) const;
  std::vector<std::string> get_list(const std::string& key) const;

  // full document, parseable by apply_file, one "key = value" line per key
  std::string resolved() const;

  ModelConfig model_config() const;
  AdamConfig adam_config() const;
  LossConfig loss_config() const;
  ColumnSchema column_schema() const;

 private:
  size_t index_of(const std::string& key) const;
  std::vector<std::string> values_;  // parallel to schema()
};

}  // namespace tasif
