#include "cli.hpp"

#include "run_config.hpp"

#include "mlmspt/checkpoint.hpp"
#include "mlmspt/errors.hpp"
#include "mlmspt/gradcheck.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>

namespace mlmspt::cli {

namespace {

namespace fs = std::filesystem;

bool is_boolean_key(const std::string& key) {
  return key == "deterministic" || key == "augment" || key == "psa_ffn";
}

struct Bindings {
  std::map<std::string, std::string> text;
  std::map<std::string, bool> flags;
  std::map<std::string, CLI::Option*> options;
  std::string config_path;
};

void bind_keys(CLI::App& sub, Bindings& b, std::initializer_list<KeyGroup> groups) {
  sub.add_option("--config", b.config_path, "key=value configuration file; flags override it");
  for (const auto& k : key_table()) {
    if (std::find(groups.begin(), groups.end(), k.group) == groups.end()) continue;
    const std::string key = k.key;
    const std::string flag = flag_name(key);
    std::string help = k.help;
    if (*k.default_value) help += " [" + std::string(k.default_value) + "]";
    if (is_boolean_key(key)) {
      const std::string spec = flag + ",!--no-" + flag.substr(2);
      b.options[key] = sub.add_flag(spec, b.flags[key], help);
    } else {
      b.options[key] = sub.add_option(flag, b.text[key], help);
    }
  }
}

RunConfig resolve(const Bindings& b) {
  RunConfig rc;
  if (!b.config_path.empty()) rc.load_file(b.config_path);
  for (const auto& [key, opt] : b.options) {
    if (opt->count() == 0) continue;
    if (is_boolean_key(key)) rc.set(key, b.flags.at(key) ? "1" : "0");
    else rc.set(key, b.text.at(key));
  }
  return rc;
}

const std::string& require(const RunConfig& rc, const std::string& key) {
  if (!rc.has(key)) throw ConfigError("missing required option " + flag_name(key));
  return rc.get(key);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  f << text;
  if (!f) throw IoError("cannot write " + path.string());
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

// Adopts the dataset's task unless one was requested; a request that
// disagrees with the data is a configuration error.
void adopt_task(RunConfig& rc, const Dataset& d) {
  if (rc.explicitly_set("task") && rc.task() != d.task)
    throw ConfigError("dataset task is " + to_string(d.task) + " but the configuration requests " + rc.get("task"));
  rc.set_default("task", to_string(d.task));
}

ModelConfig data_defaults(const Dataset& d) {
  ModelConfig m;
  m.n_points = d.points_per_cloud();
  m.input_dim = d.channels();
  m.num_classes = d.num_outputs();
  m.task = d.task;
  return m;
}

int cmd_synth(RunConfig& rc, std::ostream& out) {
  const std::string& dir = require(rc, "out");
  const SynthConfig cfg = rc.synth_config();
  const fs::path manifest = generate_synthetic(cfg, dir);
  out << "wrote " << cfg.families.size() * cfg.samples_per_class << " clouds ("
      << to_string(cfg.task) << ", " << cfg.points_per_cloud << " points)\n";
  out << "manifest: " << manifest.string() << '\n';
  return kOk;
}

template <typename T>
int cmd_train(RunConfig& rc, std::ostream& out, std::ostream& err) {
  const fs::path dir = require(rc, "out");
  const Dataset data = load_dataset(require(rc, "manifest"));
  adopt_task(rc, data);
  rc.set_default("epochs", std::to_string(TrainConfig::defaults_for(rc.task()).epochs));
  rc.set_default("batch_size", std::to_string(TrainConfig::defaults_for(rc.task()).batch_size));
  const ModelConfig mcfg = rc.model_config(data_defaults(data));
  rc.set_default("n_points", std::to_string(mcfg.n_points));
  rc.set_default("input_dim", std::to_string(mcfg.input_dim));
  rc.set_default("num_classes", std::to_string(mcfg.num_classes));
  const TrainConfig tcfg = rc.train_config();

  make_dir(dir);
  write_text(dir / "config.echo", rc.echo());
  out << rc.echo();

  Model<T> model(mcfg, tcfg.seed);
  out << "parameters: " << model.params().numel() << '\n';
  MetricReport report;
  try {
    report = train(model, data, tcfg, [&](int epoch, double loss) {
      char line[96];
      std::snprintf(line, sizeof(line), "epoch %d/%d loss %.6f lr %.6g\n", epoch + 1, tcfg.epochs, loss,
                    step_lr(epoch, tcfg.base_lr, tcfg.lr_step_size, tcfg.lr_gamma));
      out << line << std::flush;
      return true;
    });
  } catch (const DivergenceError& e) {
    err << "error: " << e.what() << '\n';
    return kDivergence;
  }
  save_checkpoint(model.params(), mcfg, dir / "checkpoint.bin");
  write_text(dir / "metrics.txt", report.to_table(data.categories));
  write_text(dir / "metrics.kv", report.to_kv());
  out << report.to_table(data.categories);
  return kOk;
}

template <typename T>
Model<T> open_checkpoint(RunConfig& rc) {
  Model<T> model = load_checkpoint<T>(require(rc, "checkpoint"));
  rc.check_against(model.config());
  return model;
}

void check_dataset(const ModelConfig& cfg, const Dataset& data) {
  if (data.task != cfg.task)
    throw ConfigError("checkpoint is a " + to_string(cfg.task) + " model but the dataset task is " + to_string(data.task));
  if (data.points_per_cloud() != cfg.n_points)
    throw ConfigError("checkpoint expects " + std::to_string(cfg.n_points) + " points per cloud, dataset has " +
                      std::to_string(data.points_per_cloud()));
  if (data.channels() != cfg.input_dim)
    throw ConfigError("checkpoint expects " + std::to_string(cfg.input_dim) + " channels, dataset has " +
                      std::to_string(data.channels()));
  if (data.num_outputs() > cfg.num_classes)
    throw ConfigError("dataset uses " + std::to_string(data.num_outputs()) + " labels, checkpoint predicts " +
                      std::to_string(cfg.num_classes));
}

template <typename T>
int cmd_eval(RunConfig& rc, std::ostream& out) {
  Model<T> model = open_checkpoint<T>(rc);
  const Dataset data = load_dataset(require(rc, "manifest"));
  check_dataset(model.config(), data);
  const MetricReport report = evaluate(model, data);
  out << report.to_table(data.categories);
  if (rc.has("out")) {
    const fs::path dir = rc.get("out");
    make_dir(dir);
    write_text(dir / "metrics.txt", report.to_table(data.categories));
    write_text(dir / "metrics.kv", report.to_kv());
  }
  return kOk;
}

template <typename T>
int cmd_predict(RunConfig& rc, std::ostream& out) {
  Model<T> model = open_checkpoint<T>(rc);
  const fs::path dir = require(rc, "out");
  const Dataset data = load_dataset(require(rc, "manifest"));
  check_dataset(model.config(), data);
  make_dir(dir);

  DatasetManifest m;
  m.task = data.task;
  m.categories = data.categories;
  std::string csv = data.task == Task::classification ? "source,class,name\n" : "";
  for (std::size_t i = 0; i < data.clouds.size(); ++i) {
    const PointCloud& cloud = data.clouds[i];
    ManifestEntry e{fs::absolute(data.sources[i]), {}, 0};
    if (data.task == Task::classification) {
      e.label = model.predict_class(cloud);
      const std::string name = static_cast<std::size_t>(e.label) < data.categories.size()
                                   ? data.categories[static_cast<std::size_t>(e.label)].name
                                   : std::to_string(e.label);
      csv += data.sources[i].string() + "," + std::to_string(e.label) + "," + name + "\n";
    } else {
      e.label = *cloud.shape_label;
      const auto& parts = data.categories[static_cast<std::size_t>(e.label)].parts;
      char name[32];
      std::snprintf(name, sizeof(name), "pred_%05zu.plb", i);
      e.labels = fs::absolute(dir / name);
      write_labels(e.labels, model.predict_parts(cloud, parts));
    }
    m.entries.push_back(std::move(e));
  }
  if (!csv.empty()) write_text(dir / "predictions.csv", csv);
  write_manifest(dir / "manifest.txt", m);
  out << "wrote predictions for " << data.clouds.size() << " clouds to " << dir.string() << '\n';
  return kOk;
}

int cmd_gradcheck(RunConfig& rc, std::ostream& out) {
  const auto results = run_gradcheck_suite(rc.get_u64("seed"), rc.get("corrupt"));
  bool ok = true;
  for (const auto& r : results) {
    char line[160];
    std::snprintf(line, sizeof(line), "%-20s worst_rel_error %.3e tol %.0e entries %5zu %s\n", r.block.c_str(),
                  r.worst_rel_error, r.tolerance, r.checked, r.passed ? "PASS" : "FAIL");
    out << line;
    ok = ok && r.passed;
  }
  return ok ? kOk : kDivergence;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-level multi-scale point transformer", "mlmspt"};
  app.require_subcommand(1);
  Bindings synth_b, train_b, eval_b, predict_b, grad_b;
  using G = KeyGroup;
  auto* synth = app.add_subcommand("synth", "generate a synthetic point-cloud dataset");
  bind_keys(*synth, synth_b, {G::common, G::synth});
  auto* trainc = app.add_subcommand("train", "train a model on a manifest");
  bind_keys(*trainc, train_b, {G::common, G::model, G::train});
  auto* evalc = app.add_subcommand("eval", "evaluate a checkpoint on a manifest");
  bind_keys(*evalc, eval_b, {G::common, G::model});
  auto* predict = app.add_subcommand("predict", "write predictions of a checkpoint");
  bind_keys(*predict, predict_b, {G::common, G::model});
  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every backward rule");
  bind_keys(*grad, grad_b, {G::common});
  grad->add_option("--corrupt", grad_b.text["corrupt"])->group("");
  grad_b.options["corrupt"] = grad->get_option("--corrupt");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    CLI::App* target = &app;
    for (auto* s : {synth, trainc, evalc, predict, grad})
      if (s->parsed()) target = s;
    out << target->help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    err << "run 'mlmspt --help' for usage\n";
    return kUsage;
  }

  try {
    if (synth->parsed()) {
      RunConfig rc = resolve(synth_b);
      return cmd_synth(rc, out);
    }
    if (grad->parsed()) {
      RunConfig rc = resolve(grad_b);
      return cmd_gradcheck(rc, out);
    }
    if (trainc->parsed()) {
      RunConfig rc = resolve(train_b);
      return rc.use_f64() ? cmd_train<double>(rc, out, err) : cmd_train<float>(rc, out, err);
    }
    if (evalc->parsed()) {
      RunConfig rc = resolve(eval_b);
      return rc.use_f64() ? cmd_eval<double>(rc, out) : cmd_eval<float>(rc, out);
    }
    RunConfig rc = resolve(predict_b);
    return rc.use_f64() ? cmd_predict<double>(rc, out) : cmd_predict<float>(rc, out);
  } catch (const DivergenceError& e) {
    err << "error: " << e.what() << '\n';
    return kDivergence;
  } catch (const NumericError& e) {
    err << "error: " << e.what() << '\n';
    return kDivergence;
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return kIo;
  } catch (const ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kIo;
  } catch (const CheckpointError& e) {
    err << "error: " << e.what() << '\n';
    return kIo;
  } catch (const std::exception& e) {
    // ConfigError, DimensionError, ContractError
    err << "error: " << e.what() << '\n';
    return kUsage;
  }
}

}  // namespace mlmspt::cli
