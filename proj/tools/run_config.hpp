#pragma once

#include "mlmspt/data_io.hpp"
#include "mlmspt/model.hpp"
#include "mlmspt/training.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace mlmspt::cli {

enum class KeyGroup { common, model, train, synth, gradcheck };

struct KeySpec {
  const char* key;
  const char* default_value;  // empty: no default
  KeyGroup group;
  const char* help;
};

const std::vector<KeySpec>& key_table();
std::string flag_name(const std::string& key);  // embed_dim -> --embed-dim

/// Merged key=value configuration: built-in defaults, then a config file,
/// then command-line flags. Unknown keys are rejected.
class RunConfig {
 public:
  RunConfig();

  void load_file(const std::filesystem::path& path);
  void set(const std::string& key, const std::string& value);
  /// Replaces the value of a key that was not given explicitly.
  void set_default(const std::string& key, const std::string& value);

  bool explicitly_set(const std::string& key) const { return explicit_.count(key) != 0; }
  bool has(const std::string& key) const;
  const std::string& get(const std::string& key) const;

  std::uint64_t get_u64(const std::string& key) const;
  std::size_t get_size(const std::string& key) const;
  int get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;

  /// Every key with its effective value, one key=value line each.
  std::string echo() const;

  Task task() const;
  bool use_f64() const;

  /// Model settings; keys that are unset and derived from data stay at the
  /// values of `data_defaults`.
  ModelConfig model_config(const ModelConfig& data_defaults) const;
  TrainConfig train_config() const;
  SynthConfig synth_config() const;

  /// Throws ConfigError when a model key given explicitly disagrees with `cfg`.
  void check_against(const ModelConfig& cfg) const;

 private:
  std::map<std::string, std::string> values_;
  std::map<std::string, bool> explicit_;
};

}  // namespace mlmspt::cli
