#include "mlmspt/model.hpp"

#include "mlmspt/errors.hpp"
#include "mlmspt/ops.hpp"
#include "mlmspt/rng.hpp"

#include <charconv>
#include <functional>
#include <sstream>

namespace mlmspt {

std::string to_string(Task task) {
  return task == Task::classification ? "cls" : "seg";
}

std::string to_string(Ablation ablation) {
  switch (ablation) {
    case Ablation::baseline: return "baseline";
    case Ablation::ppt: return "ppt";
    case Ablation::ppt_mlt: return "ppt+mlt";
    case Ablation::ppt_mst: return "ppt+mst";
    case Ablation::full: return "full";
  }
  return "full";
}

Task parse_task(std::string_view text) {
  if (text == "cls" || text == "classification") return Task::classification;
  if (text == "seg" || text == "segmentation") return Task::segmentation;
  throw ConfigError("unknown task '" + std::string(text) + "' (expected cls or seg)");
}

Ablation parse_ablation(std::string_view text) {
  for (auto a : {Ablation::baseline, Ablation::ppt, Ablation::ppt_mlt, Ablation::ppt_mst, Ablation::full})
    if (text == to_string(a) || (a != Ablation::baseline && a != Ablation::full && text == "baseline+" + to_string(a))) return a;
  throw ConfigError("unknown ablation '" + std::string(text) +
                    "' (expected baseline, ppt, ppt+mlt, ppt+mst or full)");
}

Ablation ModelConfig::ablation() const {
  if (!use_ppt) return Ablation::baseline;
  if (use_mlt && use_mst) return Ablation::full;
  if (use_mlt) return Ablation::ppt_mlt;
  if (use_mst) return Ablation::ppt_mst;
  return Ablation::ppt;
}

void ModelConfig::set_ablation(Ablation a) {
  use_ppt = a != Ablation::baseline;
  use_mlt = a == Ablation::ppt_mlt || a == Ablation::full;
  use_mst = a == Ablation::ppt_mst || a == Ablation::full;
}

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string(name) + " must be positive");
  };
  positive(n_points, "n_points");
  positive(input_dim, "input_dim");
  positive(embed_dim, "embed_dim");
  positive(psa_proj_dim, "psa_proj_dim");
  positive(levels, "levels");
  positive(scales, "scales");
  positive(heads, "heads");
  positive(head_hidden, "head_hidden");
  positive(num_classes, "num_classes");
  if (input_dim < 3) throw ConfigError("input_dim must be at least 3 (xyz)");
  if (n_points % 4 != 0)
    throw ConfigError("n_points = " + std::to_string(n_points) + " must be divisible by 4");
  if (scales > 16) throw ConfigError("scales must not exceed 16");
  const std::size_t divisor = std::size_t{1} << (scales - 1);
  if (n_points % divisor != 0)
    throw ConfigError("n_points must be divisible by " + std::to_string(divisor) + " for " +
                      std::to_string(scales) + " scales");
  if (scales > 1 && n_points / divisor < 3)
    throw ConfigError("the coarsest scale needs at least 3 points for interpolation");
  if (!use_ppt && (use_mlt || use_mst))
    throw ConfigError("use_mlt and use_mst require use_ppt");
  if (use_mlt && level_width() % heads != 0)
    throw ConfigError("heads = " + std::to_string(heads) + " must divide the level width " +
                      std::to_string(level_width()));
  if (use_mst && fused_width() % heads != 0)
    throw ConfigError("heads = " + std::to_string(heads) + " must divide the fused width " +
                      std::to_string(fused_width()));
  if (task == Task::classification && head_hidden < 2)
    throw ConfigError("head_hidden must be at least 2 for the classification head");
}

std::string ModelConfig::to_text() const {
  std::ostringstream os;
  os << "n_points=" << n_points << '\n'
     << "input_dim=" << input_dim << '\n'
     << "embed_dim=" << embed_dim << '\n'
     << "psa_proj_dim=" << psa_proj_dim << '\n'
     << "levels=" << levels << '\n'
     << "scales=" << scales << '\n'
     << "heads=" << heads << '\n'
     << "head_hidden=" << head_hidden << '\n'
     << "num_classes=" << num_classes << '\n'
     << "use_ppt=" << use_ppt << '\n'
     << "use_mlt=" << use_mlt << '\n'
     << "use_mst=" << use_mst << '\n'
     << "psa_scale=" << (psa_scale == PsaScale::input_dim ? "input_dim" : "proj_dim") << '\n'
     << "psa_ffn=" << psa_ffn << '\n'
     << "task=" << to_string(task) << '\n';
  return os.str();
}

namespace {

std::size_t parse_size(std::string_view key, std::string_view v) {
  std::size_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw ConfigError("model config: " + std::string(key) + " expects an unsigned integer, got '" +
                      std::string(v) + "'");
  return out;
}

bool parse_flag(std::string_view key, std::string_view v) {
  if (v == "1" || v == "true") return true;
  if (v == "0" || v == "false") return false;
  throw ConfigError("model config: " + std::string(key) + " expects 0 or 1, got '" + std::string(v) + "'");
}

}  // namespace

ModelConfig ModelConfig::from_text(std::string_view text) {
  ModelConfig cfg;
  std::istringstream is{std::string(text)};
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("model config: malformed line '" + line + "'");
    const std::string key = line.substr(0, eq);
    const std::string v = line.substr(eq + 1);
    if (key == "n_points") cfg.n_points = parse_size(key, v);
    else if (key == "input_dim") cfg.input_dim = parse_size(key, v);
    else if (key == "embed_dim") cfg.embed_dim = parse_size(key, v);
    else if (key == "psa_proj_dim") cfg.psa_proj_dim = parse_size(key, v);
    else if (key == "levels") cfg.levels = parse_size(key, v);
    else if (key == "scales") cfg.scales = parse_size(key, v);
    else if (key == "heads") cfg.heads = parse_size(key, v);
    else if (key == "head_hidden") cfg.head_hidden = parse_size(key, v);
    else if (key == "num_classes") cfg.num_classes = parse_size(key, v);
    else if (key == "use_ppt") cfg.use_ppt = parse_flag(key, v);
    else if (key == "use_mlt") cfg.use_mlt = parse_flag(key, v);
    else if (key == "use_mst") cfg.use_mst = parse_flag(key, v);
    else if (key == "psa_ffn") cfg.psa_ffn = parse_flag(key, v);
    else if (key == "psa_scale") {
      if (v == "input_dim") cfg.psa_scale = PsaScale::input_dim;
      else if (v == "proj_dim") cfg.psa_scale = PsaScale::proj_dim;
      else throw ConfigError("model config: psa_scale expects input_dim or proj_dim");
    } else if (key == "task") cfg.task = parse_task(v);
    else throw ConfigError("model config: unknown key '" + key + "'");
  }
  return cfg;
}

namespace {

std::string scale_prefix(std::size_t scale) {
  return "scale" + std::to_string(scale + 1);
}

std::string head_prefix(const std::string& owner, std::size_t head) {
  return owner + "/head" + std::to_string(head + 1);
}

void add_ffn_shapes(std::map<std::string, Shape>& out, const std::string& prefix, std::size_t in,
                    std::size_t hidden, std::size_t outw) {
  out[prefix + "/W1"] = {in, hidden};
  out[prefix + "/b1"] = {hidden};
  out[prefix + "/W2"] = {hidden, outw};
  out[prefix + "/b2"] = {outw};
}

}  // namespace

std::map<std::string, Shape> parameter_shapes(const ModelConfig& cfg) {
  cfg.validate();
  std::map<std::string, Shape> out;
  const std::size_t d = cfg.embed_dim, dp = cfg.psa_proj_dim;
  const std::size_t branches = cfg.use_ppt ? cfg.scales : 1;
  for (std::size_t s = 0; s < branches; ++s) {
    const std::string sp = scale_prefix(s);
    add_ffn_shapes(out, sp + "/embed", cfg.input_dim, d, d);
    if (!cfg.use_ppt) continue;
    for (std::size_t l = 0; l < cfg.levels; ++l) {
      const std::string lp = sp + "/psa" + std::to_string(l + 1);
      out[lp + "/W_q"] = {d, dp};
      out[lp + "/W_k"] = {d, dp};
      out[lp + "/W_v"] = {d, d};
      if (cfg.psa_ffn) add_ffn_shapes(out, lp + "/ffn", d, d, d);
    }
    if (cfg.use_mlt) {
      const std::size_t w = cfg.level_width(), dh = w / cfg.heads;
      for (std::size_t m = 0; m < cfg.heads; ++m) {
        const std::string hp = head_prefix(sp + "/mlt", m);
        out[hp + "/W_Q"] = {w, dh};
        out[hp + "/W_K"] = {w, dh};
        out[hp + "/W_V"] = {w, dh};
      }
    }
  }
  if (cfg.use_mst) {
    const std::size_t w = cfg.fused_width(), dh = w / cfg.heads;
    for (std::size_t m = 0; m < cfg.heads; ++m) {
      const std::string hp = head_prefix("mst", m);
      out[hp + "/W_Q"] = {w, dh};
      out[hp + "/W_K"] = {w, dh};
      out[hp + "/W_V"] = {w, dh};
    }
  }
  const std::size_t hin = cfg.head_input_width(), h = cfg.head_hidden, k = cfg.num_classes;
  if (cfg.task == Task::classification) {
    out["cls/W_point"] = {hin, h};
    out["cls/b_point"] = {h};
    add_ffn_shapes(out, "cls", h, h / 2, k);
  } else {
    add_ffn_shapes(out, "seg", 2 * hin, h, k);
  }
  return out;
}

template <typename T>
ParameterStore<T> init_parameters(const ModelConfig& cfg, std::uint64_t seed) {
  ParameterStore<T> params;
  Rng rng(seed);
  for (const auto& [name, shape] : parameter_shapes(cfg)) {
    Tensor<T>& t = params.add(name, shape);
    if (shape.size() == 2) xavier_uniform(t, rng);
  }
  return params;
}

template <typename T>
void check_parameters(const ModelConfig& cfg, const ParameterStore<T>& params) {
  const auto expected = parameter_shapes(cfg);
  for (const auto& [name, shape] : expected) {
    if (!params.contains(name)) throw CheckpointError("missing parameter " + name);
    const Shape& got = params.at(name).shape;
    if (got != shape)
      throw CheckpointError("parameter " + name + " has shape " + shape_string(got) +
                            ", configuration expects " + shape_string(shape));
  }
  for (const auto& [name, _] : params)
    if (!expected.count(name)) throw CheckpointError("unexpected parameter " + name);
}

namespace {

template <typename T>
void expect_width(const Var<T>& v, std::size_t width, const char* stage) {
  if (static_cast<std::size_t>(v.cols()) != width)
    throw DimensionError(std::string(stage) + " produced width " + std::to_string(v.cols()) +
                         ", expected " + std::to_string(width));
}

template <typename T>
Var<T> pointwise_ffn(Tape<T>& tape, ParameterStore<T>& params, const std::string& prefix, Var<T> x) {
  Var<T> h = relu(add_row(matmul(x, tape.param(params.at(prefix + "/W1"))),
                          tape.param(params.at(prefix + "/b1"))));
  return add_row(matmul(h, tape.param(params.at(prefix + "/W2"))), tape.param(params.at(prefix + "/b2")));
}

template <typename T>
std::vector<HeadWeights<T>> head_weights(Tape<T>& tape, ParameterStore<T>& params,
                                         const std::string& owner, std::size_t heads) {
  std::vector<HeadWeights<T>> out;
  for (std::size_t m = 0; m < heads; ++m) {
    const std::string hp = head_prefix(owner, m);
    out.push_back({tape.param(params.at(hp + "/W_Q")), tape.param(params.at(hp + "/W_K")),
                   tape.param(params.at(hp + "/W_V"))});
  }
  return out;
}

}  // namespace

template <typename T>
Var<T> embed(Tape<T>& tape, ParameterStore<T>& params, const std::string& prefix, Var<T> input) {
  const auto& w1 = params.at(prefix + "/W1").value;
  if (input.cols() != w1.rows())
    throw ConfigError("embedding expects " + std::to_string(w1.rows()) + " input channels, got " +
                      std::to_string(input.cols()));
  return pointwise_ffn(tape, params, prefix, input);
}

template <typename T>
Var<T> ppt_branch(Tape<T>& tape, ParameterStore<T>& params, const ModelConfig& cfg,
                  std::size_t scale, Var<T> input, AttentionTrace<T>* trace) {
  const std::string sp = scale_prefix(scale);
  Var<T> f = embed(tape, params, sp + "/embed", input);
  expect_width(f, cfg.embed_dim, "embedding");
  std::vector<Var<T>> levels{f};
  for (std::size_t l = 0; l < cfg.levels; ++l) {
    const std::string lp = sp + "/psa" + std::to_string(l + 1);
    PsaWeights<T> w{tape.param(params.at(lp + "/W_q")), tape.param(params.at(lp + "/W_k")),
                    tape.param(params.at(lp + "/W_v"))};
    f = psa_forward(f, w, cfg.psa_scale, trace);
    if (cfg.psa_ffn) f = add(f, pointwise_ffn(tape, params, lp + "/ffn", f));
    levels.push_back(f);
  }
  Var<T> out = concat_cols<T>(levels);
  expect_width(out, cfg.level_width(), "level concatenation");
  return out;
}

template <typename T>
std::vector<Var<T>> ppt_forward(Tape<T>& tape, ParameterStore<T>& params, const ModelConfig& cfg,
                                const PyramidState& pyramid, const Matrix<double>& features,
                                AttentionTrace<T>* trace) {
  if (pyramid.scales() != cfg.scales)
    throw DimensionError("pyramid has " + std::to_string(pyramid.scales()) + " scales, config expects " +
                         std::to_string(cfg.scales));
  std::vector<Var<T>> out;
  for (std::size_t s = 0; s < cfg.scales; ++s) {
    Var<T> input = tape.constant(gather_rows(features, pyramid.indices[s]).template cast<T>());
    out.push_back(ppt_branch(tape, params, cfg, s, input, trace));
  }
  return out;
}

template <typename T>
Var<T> mlt_forward(Tape<T>& tape, ParameterStore<T>& params, const ModelConfig& cfg,
                   std::size_t scale, Var<T> f, AttentionTrace<T>* trace) {
  expect_width(f, cfg.level_width(), "multi-level input");
  auto heads = head_weights(tape, params, scale_prefix(scale) + "/mlt", cfg.heads);
  return multihead_forward<T>(f, heads, trace);
}

template <typename T>
Var<T> upsample_concat(std::span<const Var<T>> maps, const PyramidState& pyramid) {
  if (maps.size() != pyramid.scales())
    throw DimensionError("upsampling needs one feature map per pyramid scale");
  std::vector<Var<T>> lifted;
  for (std::size_t s = 0; s < maps.size(); ++s) {
    if (static_cast<std::size_t>(maps[s].rows()) != pyramid.indices[s].size())
      throw DimensionError("scale " + std::to_string(s + 1) + " map has " + std::to_string(maps[s].rows()) +
                           " rows, pyramid has " + std::to_string(pyramid.indices[s].size()) + " points");
    lifted.push_back(s == 0 ? maps[s] : interpolate_up<T>(pyramid.positions[s], maps[s], pyramid.positions[0]));
  }
  return lifted.size() == 1 ? lifted.front() : concat_cols<T>(lifted);
}

template <typename T>
Var<T> mst_forward(Tape<T>& tape, ParameterStore<T>& params, const ModelConfig& cfg,
                   std::span<const Var<T>> maps, const PyramidState& pyramid, AttentionTrace<T>* trace) {
  Var<T> fused = upsample_concat(maps, pyramid);
  expect_width(fused, cfg.fused_width(), "scale concatenation");
  auto heads = head_weights(tape, params, "mst", cfg.heads);
  return multihead_forward<T>(fused, heads, trace);
}

template <typename T>
Var<T> classify(Tape<T>& tape, ParameterStore<T>& params, const ModelConfig& cfg, Var<T> f) {
  expect_width(f, cfg.head_input_width(), "classification head input");
  Var<T> point = add_row(matmul(f, tape.param(params.at("cls/W_point"))), tape.param(params.at("cls/b_point")));
  return pointwise_ffn(tape, params, "cls", max_rows(point));
}

template <typename T>
Var<T> segment(Tape<T>& tape, ParameterStore<T>& params, const ModelConfig& cfg, Var<T> f) {
  expect_width(f, cfg.head_input_width(), "segmentation head input");
  Var<T> global = max_rows(f);
  // Broadcast the pooled row to every point with a ones-column product.
  Var<T> ones = tape.constant(Matrix<T>::Ones(f.rows(), 1));
  Var<T> tiled = matmul(ones, global);
  std::vector<Var<T>> parts{f, tiled};
  return pointwise_ffn(tape, params, "seg", concat_cols<T>(parts));
}

template <typename T>
Var<T> forward_full(Tape<T>& tape, ParameterStore<T>& params, const ModelConfig& cfg,
                    const PointCloud& cloud, ForwardTrace<T>* trace) {
  if (cloud.size() != cfg.n_points)
    throw ContractError("cloud has " + std::to_string(cloud.size()) + " points, model expects " +
                        std::to_string(cfg.n_points));
  if (cloud.channels() != cfg.input_dim)
    throw ConfigError("cloud has " + std::to_string(cloud.channels()) + " channels, model expects " +
                      std::to_string(cfg.input_dim));
  const Matrix<double> features = cloud.features();
  AttentionTrace<T>* att = trace ? &trace->attention : nullptr;

  Var<T> head_in;
  if (!cfg.use_ppt) {
    head_in = embed(tape, params, "scale1/embed", tape.constant(features.template cast<T>()));
  } else {
    const PyramidState pyramid = build_pyramid(cloud.positions, cfg.scales);
    std::vector<Var<T>> maps = ppt_forward(tape, params, cfg, pyramid, features, att);
    if (trace) for (const auto& m : maps) trace->ppt.push_back(m.value());
    if (cfg.use_mlt) {
      for (std::size_t s = 0; s < maps.size(); ++s) maps[s] = mlt_forward(tape, params, cfg, s, maps[s], att);
      if (trace) for (const auto& m : maps) trace->mlt.push_back(m.value());
    }
    Var<T> fused = upsample_concat<T>(maps, pyramid);
    expect_width(fused, cfg.fused_width(), "scale concatenation");
    if (trace) trace->fused = fused.value();
    head_in = fused;
    if (cfg.use_mst) {
      auto heads = head_weights(tape, params, "mst", cfg.heads);
      head_in = multihead_forward<T>(fused, heads, att);
      if (trace) trace->mst = head_in.value();
    }
  }
  if (trace) trace->head_input = head_in.value();
  return cfg.task == Task::classification ? classify(tape, params, cfg, head_in)
                                          : segment(tape, params, cfg, head_in);
}

template <typename T>
int argmax(const Eigen::Ref<const Eigen::Matrix<T, 1, Eigen::Dynamic>>& row) {
  int best = 0;
  for (Eigen::Index i = 1; i < row.size(); ++i)
    if (row(i) > row(best)) best = static_cast<int>(i);
  return best;
}

template <typename T>
Model<T>::Model(ModelConfig cfg, std::uint64_t seed)
    : cfg_(std::move(cfg)), params_(init_parameters<T>(cfg_, seed)) {}

template <typename T>
Model<T>::Model(ModelConfig cfg, ParameterStore<T> params) : cfg_(std::move(cfg)), params_(std::move(params)) {
  check_parameters(cfg_, params_);
}

template <typename T>
Var<T> Model<T>::forward(Tape<T>& tape, const PointCloud& cloud, ForwardTrace<T>* trace) {
  return forward_full(tape, params_, cfg_, cloud, trace);
}

template <typename T>
Matrix<T> Model<T>::logits(const PointCloud& cloud) {
  Tape<T> tape;
  return forward(tape, cloud).value();
}

template <typename T>
int Model<T>::predict_class(const PointCloud& cloud) {
  if (cfg_.task != Task::classification) throw ContractError("predict_class on a segmentation model");
  Matrix<T> out = logits(cloud);
  return argmax<T>(out.row(0));
}

template <typename T>
std::vector<int> Model<T>::predict_parts(const PointCloud& cloud, std::span<const int> parts) {
  if (cfg_.task != Task::segmentation) throw ContractError("predict_parts on a classification model");
  Matrix<T> out = logits(cloud);
  std::vector<int> labels(static_cast<std::size_t>(out.rows()));
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    if (parts.empty()) {
      labels[static_cast<std::size_t>(r)] = argmax<T>(out.row(r));
      continue;
    }
    int best = -1;
    for (int p : parts) {
      if (p < 0 || p >= out.cols())
        throw ContractError("part label " + std::to_string(p) + " outside the model's label range");
      if (best < 0 || out(r, p) > out(r, best) || (out(r, p) == out(r, best) && p < best)) best = p;
    }
    labels[static_cast<std::size_t>(r)] = best;
  }
  return labels;
}

#define MLMSPT_INSTANTIATE_MODEL(T)                                                                        \
  template ParameterStore<T> init_parameters<T>(const ModelConfig&, std::uint64_t);                        \
  template void check_parameters<T>(const ModelConfig&, const ParameterStore<T>&);                         \
  template Var<T> embed<T>(Tape<T>&, ParameterStore<T>&, const std::string&, Var<T>);                      \
  template Var<T> ppt_branch<T>(Tape<T>&, ParameterStore<T>&, const ModelConfig&, std::size_t, Var<T>,    \
                                AttentionTrace<T>*);                                                       \
  template std::vector<Var<T>> ppt_forward<T>(Tape<T>&, ParameterStore<T>&, const ModelConfig&,            \
                                              const PyramidState&, const Matrix<double>&,                  \
                                              AttentionTrace<T>*);                                         \
  template Var<T> mlt_forward<T>(Tape<T>&, ParameterStore<T>&, const ModelConfig&, std::size_t, Var<T>,   \
                                 AttentionTrace<T>*);                                                      \
  template Var<T> upsample_concat<T>(std::span<const Var<T>>, const PyramidState&);                        \
  template Var<T> mst_forward<T>(Tape<T>&, ParameterStore<T>&, const ModelConfig&,                         \
                                 std::span<const Var<T>>, const PyramidState&, AttentionTrace<T>*);        \
  template Var<T> classify<T>(Tape<T>&, ParameterStore<T>&, const ModelConfig&, Var<T>);                   \
  template Var<T> segment<T>(Tape<T>&, ParameterStore<T>&, const ModelConfig&, Var<T>);                    \
  template Var<T> forward_full<T>(Tape<T>&, ParameterStore<T>&, const ModelConfig&, const PointCloud&,     \
                                  ForwardTrace<T>*);                                                       \
  template int argmax<T>(const Eigen::Ref<const Eigen::Matrix<T, 1, Eigen::Dynamic>>&);                   \
  template class Model<T>;

MLMSPT_INSTANTIATE_MODEL(float)
MLMSPT_INSTANTIATE_MODEL(double)

}  // namespace mlmspt
