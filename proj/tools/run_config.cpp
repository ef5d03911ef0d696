#include "run_config.hpp"

#include "mlmspt/errors.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

namespace mlmspt::cli {

const std::vector<KeySpec>& key_table() {
  static const std::vector<KeySpec> table{
      {"seed", "0", KeyGroup::common, "random seed"},
      {"deterministic", "1", KeyGroup::common, "fixed-order gradient reduction"},
      {"precision", "f32", KeyGroup::common, "f32 or f64"},
      {"out", "", KeyGroup::common, "output directory"},
      {"task", "cls", KeyGroup::common, "cls or seg"},
      {"manifest", "", KeyGroup::model, "dataset manifest"},
      {"checkpoint", "", KeyGroup::model, "checkpoint file"},
      {"ablation", "full", KeyGroup::model, "baseline, ppt, ppt+mlt, ppt+mst or full"},
      {"n_points", "", KeyGroup::model, "points per cloud (default: from data)"},
      {"input_dim", "", KeyGroup::model, "channels per point (default: from data)"},
      {"num_classes", "", KeyGroup::model, "output labels (default: from data)"},
      {"embed_dim", "64", KeyGroup::model, "embedding width D"},
      {"psa_proj_dim", "16", KeyGroup::model, "PSA query/key width D'"},
      {"levels", "4", KeyGroup::model, "PSA layers per branch"},
      {"scales", "3", KeyGroup::model, "pyramid scales"},
      {"heads", "4", KeyGroup::model, "attention heads"},
      {"head_hidden", "256", KeyGroup::model, "task head hidden width"},
      {"psa_scale", "input_dim", KeyGroup::model, "PSA logit scale: input_dim or proj_dim"},
      {"psa_ffn", "0", KeyGroup::model, "pointwise FFN after each PSA layer"},
      {"epochs", "", KeyGroup::train, "training epochs (default 250 cls, 180 seg)"},
      {"batch_size", "", KeyGroup::train, "mini-batch size (default 32 cls, 8 seg)"},
      {"lr", "0.0003", KeyGroup::train, "initial learning rate"},
      {"lr_step", "20", KeyGroup::train, "epochs per learning-rate decay step"},
      {"lr_gamma", "0.7", KeyGroup::train, "learning-rate decay factor"},
      {"augment", "1", KeyGroup::train, "apply training augmentation"},
      {"dropout_prob", "0.1", KeyGroup::train, "per-point dropout probability"},
      {"scale_lo", "0.8", KeyGroup::train, "minimum random scale"},
      {"scale_hi", "1.25", KeyGroup::train, "maximum random scale"},
      {"shift", "0.1", KeyGroup::train, "maximum per-axis shift"},
      {"classes", "sphere,cube,torus,cylinder", KeyGroup::synth, "shape families"},
      {"per_class", "8", KeyGroup::synth, "clouds per family"},
      {"points", "256", KeyGroup::synth, "points per cloud"},
      {"noise", "0.01", KeyGroup::synth, "positional noise stddev"},
      {"corrupt", "", KeyGroup::gradcheck, "break the backward rule of one block"},
  };
  return table;
}

std::string flag_name(const std::string& key) {
  std::string f = "--" + key;
  std::replace(f.begin(), f.end(), '_', '-');
  return f;
}

namespace {

const KeySpec* find_key(const std::string& key) {
  for (const auto& k : key_table())
    if (key == k.key) return &k;
  return nullptr;
}

template <typename V>
V parse_number(const std::string& key, const std::string& text) {
  V v{};
  auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || p != text.data() + text.size())
    throw ConfigError("invalid value '" + text + "' for " + key);
  return v;
}

}  // namespace

RunConfig::RunConfig() {
  for (const auto& k : key_table()) values_[k.key] = k.default_value;
}

void RunConfig::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path.string());
  std::string line;
  for (int lineno = 1; std::getline(in, line); ++lineno) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line.erase(0, line.find_first_not_of(" \t\r"));
    line.erase(line.find_last_not_of(" \t\r") + 1);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": expected key=value");
    std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    key.erase(key.find_last_not_of(" \t") + 1);
    value.erase(0, value.find_first_not_of(" \t"));
    if (!find_key(key)) throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
    set(key, value);
  }
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (!find_key(key)) throw ConfigError("unknown configuration key '" + key + "'");
  values_[key] = value;
  explicit_[key] = true;
}

void RunConfig::set_default(const std::string& key, const std::string& value) {
  if (!find_key(key)) throw ConfigError("unknown configuration key '" + key + "'");
  if (!explicitly_set(key)) values_[key] = value;
}

bool RunConfig::has(const std::string& key) const {
  return !get(key).empty();
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown configuration key '" + key + "'");
  return it->second;
}

std::uint64_t RunConfig::get_u64(const std::string& key) const {
  return parse_number<std::uint64_t>(key, get(key));
}

std::size_t RunConfig::get_size(const std::string& key) const {
  return parse_number<std::size_t>(key, get(key));
}

int RunConfig::get_int(const std::string& key) const {
  return parse_number<int>(key, get(key));
}

double RunConfig::get_double(const std::string& key) const {
  return parse_number<double>(key, get(key));
}

bool RunConfig::get_bool(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw ConfigError("invalid boolean '" + v + "' for " + key);
}

std::string RunConfig::echo() const {
  std::ostringstream os;
  for (const auto& k : key_table()) os << k.key << '=' << get(k.key) << '\n';
  return os.str();
}

Task RunConfig::task() const {
  return parse_task(get("task"));
}

bool RunConfig::use_f64() const {
  const std::string& p = get("precision");
  if (p == "f32") return false;
  if (p == "f64") return true;
  throw ConfigError("precision must be f32 or f64, got '" + p + "'");
}

ModelConfig RunConfig::model_config(const ModelConfig& data_defaults) const {
  ModelConfig cfg = data_defaults;
  cfg.task = task();
  if (has("n_points")) cfg.n_points = get_size("n_points");
  if (has("input_dim")) cfg.input_dim = get_size("input_dim");
  if (has("num_classes")) cfg.num_classes = get_size("num_classes");
  cfg.embed_dim = get_size("embed_dim");
  cfg.psa_proj_dim = get_size("psa_proj_dim");
  cfg.levels = get_size("levels");
  cfg.scales = get_size("scales");
  cfg.heads = get_size("heads");
  cfg.head_hidden = get_size("head_hidden");
  const std::string& scale = get("psa_scale");
  if (scale == "input_dim") cfg.psa_scale = PsaScale::input_dim;
  else if (scale == "proj_dim") cfg.psa_scale = PsaScale::proj_dim;
  else throw ConfigError("psa_scale must be input_dim or proj_dim");
  cfg.psa_ffn = get_bool("psa_ffn");
  cfg.set_ablation(parse_ablation(get("ablation")));
  cfg.validate();
  return cfg;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig cfg = TrainConfig::defaults_for(task());
  if (has("epochs")) cfg.epochs = get_int("epochs");
  if (has("batch_size")) cfg.batch_size = get_size("batch_size");
  cfg.base_lr = get_double("lr");
  cfg.lr_step_size = get_int("lr_step");
  cfg.lr_gamma = get_double("lr_gamma");
  cfg.seed = get_u64("seed");
  cfg.augment = get_bool("augment");
  cfg.augmentation.dropout_prob = get_double("dropout_prob");
  cfg.augmentation.scale_lo = get_double("scale_lo");
  cfg.augmentation.scale_hi = get_double("scale_hi");
  cfg.augmentation.shift = get_double("shift");
  cfg.deterministic = get_bool("deterministic");
  cfg.validate();
  return cfg;
}

SynthConfig RunConfig::synth_config() const {
  SynthConfig cfg;
  cfg.families.clear();
  std::istringstream is(get("classes"));
  std::string name;
  while (std::getline(is, name, ','))
    if (!name.empty()) cfg.families.push_back(parse_shape_family(name));
  cfg.samples_per_class = get_size("per_class");
  cfg.points_per_cloud = get_size("points");
  cfg.noise_stddev = get_double("noise");
  cfg.seed = get_u64("seed");
  cfg.task = task();
  cfg.validate();
  return cfg;
}

void RunConfig::check_against(const ModelConfig& cfg) const {
  auto expect = [&](const char* key, const std::string& actual) {
    if (explicitly_set(key) && get(key) != actual)
      throw ConfigError("checkpoint has " + std::string(key) + " = " + actual + " but the configuration requests " + get(key));
  };
  expect("n_points", std::to_string(cfg.n_points));
  expect("input_dim", std::to_string(cfg.input_dim));
  expect("num_classes", std::to_string(cfg.num_classes));
  expect("embed_dim", std::to_string(cfg.embed_dim));
  expect("psa_proj_dim", std::to_string(cfg.psa_proj_dim));
  expect("levels", std::to_string(cfg.levels));
  expect("scales", std::to_string(cfg.scales));
  expect("heads", std::to_string(cfg.heads));
  expect("head_hidden", std::to_string(cfg.head_hidden));
  expect("ablation", to_string(cfg.ablation()));
  expect("task", to_string(cfg.task));
}

}  // namespace mlmspt::cli
