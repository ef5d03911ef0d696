#include "mlmspt/gradcheck.hpp"

#include "mlmspt/attention.hpp"
#include "mlmspt/errors.hpp"
#include "mlmspt/model.hpp"
#include "mlmspt/ops.hpp"
#include "mlmspt/pointcloud.hpp"

#include <algorithm>
#include <cmath>

namespace mlmspt {

namespace {

Matrix<double> random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double scale = 1.0) {
  Matrix<double> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-scale, scale);
  return m;
}

double projected_loss(ParameterStore<double>& store, const GradcheckBuilder& build, const Matrix<double>& proj) {
  Tape<double> tape;
  Var<double> out = build(tape, store);
  return out.value().cwiseProduct(proj).sum();
}

}  // namespace

GradcheckResult check_gradients(const std::string& block, ParameterStore<double>& store,
                                const GradcheckBuilder& build, const GradcheckOptions& options, Rng& rng) {
  GradcheckResult result{block, 0.0, options.tolerance, 0, true};
  store.zero_grad();

  Matrix<double> proj;
  {
    Tape<double> tape;
    Var<double> out = build(tape, store);
    proj = random_matrix(out.rows(), out.cols(), rng);
    tape.backward(sum(mul(out, tape.constant(proj))));
  }

  std::vector<std::pair<Tensor<double>*, Eigen::Index>> entries;
  for (auto& [name, t] : store) {
    const bool selected =
        options.prefixes.empty() ||
        std::any_of(options.prefixes.begin(), options.prefixes.end(),
                    [&](const std::string& p) { return name.rfind(p, 0) == 0; });
    if (!selected || !t.requires_grad) continue;
    for (Eigen::Index i = 0; i < t.value.size(); ++i) entries.emplace_back(&t, i);
  }
  if (options.sample && options.sample < entries.size()) {
    for (std::size_t i = 0; i < options.sample; ++i)
      std::swap(entries[i], entries[i + rng.below(entries.size() - i)]);
    entries.resize(options.sample);
  }

  for (auto [t, i] : entries) {
    const double analytic = t->has_grad() ? t->grad.data()[i] : 0.0;
    double& x = t->value.data()[i];
    const double saved = x;
    x = saved + options.step;
    const double up = projected_loss(store, build, proj);
    x = saved - options.step;
    const double down = projected_loss(store, build, proj);
    x = saved;
    const double numeric = (up - down) / (2.0 * options.step);
    const double denom = std::max({std::abs(analytic), std::abs(numeric), options.floor});
    result.worst_rel_error = std::max(result.worst_rel_error, std::abs(analytic - numeric) / denom);
    ++result.checked;
  }
  result.passed = result.worst_rel_error <= options.tolerance;
  store.zero_grad();
  return result;
}

Var<double> faulty_identity(Var<double> x) {
  const auto ix = x.id();
  return x.tape().record(x.value(), {ix}, [ix](Tape<double>& t, std::size_t self) {
    t.grad_slot(ix) += 1.5 * t.grad(self);
  });
}

std::vector<std::string> gradcheck_block_names() {
  return {"matmul", "softmax", "primitives", "embed", "psa", "multihead",
          "interpolation", "classification_head", "segmentation_head", "loss", "end_to_end"};
}

namespace {

Tensor<double>& add_random(ParameterStore<double>& s, const std::string& name, Eigen::Index r, Eigen::Index c, Rng& rng,
                           double scale = 1.0) {
  return s.add(name, Tensor<double>({static_cast<std::size_t>(r), static_cast<std::size_t>(c)}, random_matrix(r, c, rng, scale)));
}

ModelConfig small_config(Task task) {
  ModelConfig cfg;
  cfg.n_points = 16;
  cfg.embed_dim = 4;
  cfg.psa_proj_dim = 2;
  cfg.heads = 2;
  cfg.head_hidden = 8;
  cfg.num_classes = 3;
  cfg.task = task;
  return cfg;
}

// Random parameters plus non-zero biases so every path carries signal.
ParameterStore<double> randomized_parameters(const ModelConfig& cfg, Rng& rng) {
  ParameterStore<double> p = init_parameters<double>(cfg, rng.next_u64());
  for (auto& [name, t] : p)
    if (t.shape.size() == 1) t.value = random_matrix(1, t.value.cols(), rng, 0.3);
  return p;
}

}  // namespace

std::vector<GradcheckResult> run_gradcheck_suite(std::uint64_t seed, const std::string& corrupt_block) {
  if (!corrupt_block.empty()) {
    auto names = gradcheck_block_names();
    if (std::find(names.begin(), names.end(), corrupt_block) == names.end())
      throw ConfigError("unknown gradcheck block '" + corrupt_block + "'");
  }
  Rng rng(seed);
  std::vector<GradcheckResult> results;
  auto finish = [&](const std::string& block, Var<double> v) {
    return block == corrupt_block ? faulty_identity(v) : v;
  };
  GradcheckOptions opts;

  {
    ParameterStore<double> s;
    add_random(s, "A", 3, 4, rng);
    add_random(s, "B", 4, 2, rng);
    results.push_back(check_gradients("matmul", s, [&](Tape<double>& t, ParameterStore<double>& p) {
      return finish("matmul", matmul(t.param(p.at("A")), t.param(p.at("B"))));
    }, opts, rng));
  }
  {
    ParameterStore<double> s;
    add_random(s, "X", 5, 4, rng, 2.0);
    results.push_back(check_gradients("softmax", s, [&](Tape<double>& t, ParameterStore<double>& p) {
      return finish("softmax", softmax_rows(t.param(p.at("X"))));
    }, opts, rng));
  }
  {
    ParameterStore<double> s;
    add_random(s, "A", 6, 4, rng);
    add_random(s, "B", 6, 4, rng);
    add_random(s, "r", 1, 4, rng);
    results.push_back(check_gradients("primitives", s, [&](Tape<double>& t, ParameterStore<double>& p) {
      Var<double> a = t.param(p.at("A")), b = t.param(p.at("B"));
      Var<double> h = relu(add_row(mul(a, b), t.param(p.at("r"))));
      std::vector<Var<double>> parts{h, scale(a, 0.5), slice_cols(b, 1, 2)};
      Var<double> cat = concat_cols<double>(parts);
      std::vector<Var<double>> tail{max_rows(cat), add(mean(a), sum(b))};
      return finish("primitives", concat_cols<double>(tail));
    }, opts, rng));
  }
  {
    ParameterStore<double> s;
    add_random(s, "input", 6, 3, rng);
    add_random(s, "e/W1", 3, 8, rng);
    add_random(s, "e/b1", 1, 8, rng, 0.3);
    add_random(s, "e/W2", 8, 8, rng);
    add_random(s, "e/b2", 1, 8, rng, 0.3);
    results.push_back(check_gradients("embed", s, [&](Tape<double>& t, ParameterStore<double>& p) {
      return finish("embed", embed(t, p, "e", t.param(p.at("input"))));
    }, opts, rng));
  }
  {
    ParameterStore<double> s;
    add_random(s, "F", 6, 8, rng);
    add_random(s, "W_q", 8, 4, rng);
    add_random(s, "W_k", 8, 4, rng);
    add_random(s, "W_v", 8, 8, rng);
    results.push_back(check_gradients("psa", s, [&](Tape<double>& t, ParameterStore<double>& p) {
      PsaWeights<double> w{t.param(p.at("W_q")), t.param(p.at("W_k")), t.param(p.at("W_v"))};
      return finish("psa", psa_forward(t.param(p.at("F")), w));
    }, opts, rng));
  }
  {
    ParameterStore<double> s;
    add_random(s, "F", 6, 8, rng);
    for (int m = 0; m < 2; ++m)
      for (const char* w : {"W_Q", "W_K", "W_V"}) add_random(s, "h" + std::to_string(m) + "/" + w, 8, 4, rng);
    results.push_back(check_gradients("multihead", s, [&](Tape<double>& t, ParameterStore<double>& p) {
      std::vector<HeadWeights<double>> heads;
      for (int m = 0; m < 2; ++m) {
        const std::string h = "h" + std::to_string(m) + "/";
        heads.push_back({t.param(p.at(h + "W_Q")), t.param(p.at(h + "W_K")), t.param(p.at(h + "W_V"))});
      }
      return finish("multihead", multihead_forward<double>(t.param(p.at("F")), heads));
    }, opts, rng));
  }
  {
    ParameterStore<double> s;
    add_random(s, "src_feat", 5, 4, rng);
    const Matrix<double> src_pos = random_matrix(5, 3, rng);
    const Matrix<double> query_pos = random_matrix(8, 3, rng);
    results.push_back(check_gradients("interpolation", s, [&](Tape<double>& t, ParameterStore<double>& p) {
      return finish("interpolation", interpolate_up<double>(src_pos, t.param(p.at("src_feat")), query_pos));
    }, opts, rng));
  }
  for (Task task : {Task::classification, Task::segmentation}) {
    const std::string block = task == Task::classification ? "classification_head" : "segmentation_head";
    ModelConfig cfg = small_config(task);
    cfg.n_points = 8;
    cfg.embed_dim = 2;
    cfg.levels = 1;
    cfg.scales = 2;  // head input width 2 * (1 + 1) * 2 = 8
    cfg.heads = 1;
    ParameterStore<double> s = randomized_parameters(cfg, rng);
    add_random(s, "input", 8, static_cast<Eigen::Index>(cfg.head_input_width()), rng);
    GradcheckOptions o = opts;
    o.prefixes = {"input", task == Task::classification ? "cls/" : "seg/"};
    results.push_back(check_gradients(block, s, [&, cfg, block](Tape<double>& t, ParameterStore<double>& p) {
      Var<double> f = t.param(p.at("input"));
      return finish(block, task == Task::classification ? classify(t, p, cfg, f) : segment(t, p, cfg, f));
    }, o, rng));
  }
  {
    ParameterStore<double> s;
    add_random(s, "logits", 6, 4, rng, 2.0);
    std::vector<int> targets(6);
    for (auto& v : targets) v = static_cast<int>(rng.below(4));
    results.push_back(check_gradients("loss", s, [&](Tape<double>& t, ParameterStore<double>& p) {
      return finish("loss", cross_entropy(t.param(p.at("logits")), std::span<const int>(targets)));
    }, opts, rng));
  }
  {
    const ModelConfig cfg = small_config(Task::classification);
    ParameterStore<double> s = randomized_parameters(cfg, rng);
    PointCloud cloud;
    cloud.positions = random_matrix(16, 3, rng);
    cloud.attributes.resize(16, 0);
    const int label = 1;
    GradcheckOptions o = opts;
    o.tolerance = 1e-3;
    o.sample = 20;
    results.push_back(check_gradients("end_to_end", s, [&](Tape<double>& t, ParameterStore<double>& p) {
      Var<double> logits = forward_full(t, p, cfg, cloud);
      return finish("end_to_end", cross_entropy(logits, std::span<const int>(&label, 1)));
    }, o, rng));
  }
  return results;
}

}  // namespace mlmspt
