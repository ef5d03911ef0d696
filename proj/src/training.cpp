#include "mlmspt/training.hpp"

#include "mlmspt/errors.hpp"
#include "mlmspt/ops.hpp"
#include "mlmspt/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <limits>
#include <memory>
#include <numeric>
#include <sstream>
#include <thread>

namespace mlmspt {

TrainConfig TrainConfig::defaults_for(Task task) {
  TrainConfig cfg;
  if (task == Task::segmentation) {
    cfg.batch_size = 8;
    cfg.epochs = 180;
  }
  return cfg;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(base_lr >= 0.0) || !std::isfinite(base_lr)) throw ConfigError("learning rate must be >= 0");
  if (lr_step_size < 1) throw ConfigError("lr_step must be >= 1");
  if (!(lr_gamma > 0.0 && lr_gamma <= 1.0)) throw ConfigError("lr_gamma must lie in (0, 1]");
  augmentation.validate();
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace

std::string MetricReport::to_table(const std::vector<Category>& categories) const {
  std::ostringstream os;
  char line[128];
  std::snprintf(line, sizeof(line), "%-24s %12s\n", "metric", "value");
  os << line;
  std::snprintf(line, sizeof(line), "%-24s %12.6f\n", "overall_accuracy", overall_accuracy);
  os << line;
  std::snprintf(line, sizeof(line), "%-24s %12.6f\n", "instance_miou", instance_miou);
  os << line;
  for (std::size_t i = 0; i < per_class_iou.size(); ++i) {
    const std::string name = i < categories.size() ? categories[i].name : std::to_string(i);
    std::snprintf(line, sizeof(line), "%-24s %12.6f\n", ("iou[" + name + "]").c_str(), per_class_iou[i]);
    os << line;
  }
  if (!loss_curve.empty()) {
    std::snprintf(line, sizeof(line), "%-24s %12zu\n", "epochs", loss_curve.size());
    os << line;
    std::snprintf(line, sizeof(line), "%-24s %12.6f\n", "initial_loss", loss_curve.front());
    os << line;
    std::snprintf(line, sizeof(line), "%-24s %12.6f\n", "final_loss", loss_curve.back());
    os << line;
  }
  return os.str();
}

std::string MetricReport::to_kv() const {
  std::ostringstream os;
  os << "overall_accuracy=" << fmt(overall_accuracy) << '\n';
  os << "instance_miou=" << fmt(instance_miou) << '\n';
  for (std::size_t i = 0; i < per_class_iou.size(); ++i) os << "class_iou." << i << '=' << fmt(per_class_iou[i]) << '\n';
  os << "epochs=" << loss_curve.size() << '\n';
  for (std::size_t i = 0; i < loss_curve.size(); ++i) os << "loss." << i << '=' << fmt(loss_curve[i]) << '\n';
  return os.str();
}

std::size_t resolve_threads(std::size_t requested) {
  std::size_t n = requested;
  if (n == 0) {
    if (const char* env = std::getenv("MLMSPT_THREADS")) n = static_cast<std::size_t>(std::strtoull(env, nullptr, 10));
  }
  if (n == 0) n = std::max(1u, std::thread::hardware_concurrency());
  return n;
}

template <typename T>
Var<T> sample_loss(Tape<T>& tape, Model<T>& model, const PointCloud& cloud) {
  Var<T> logits = model.forward(tape, cloud);
  if (model.config().task == Task::classification) {
    if (!cloud.shape_label) throw ContractError("classification sample has no shape label");
    const int target = *cloud.shape_label;
    return cross_entropy(logits, std::span<const int>(&target, 1));
  }
  if (cloud.point_labels.size() != cloud.size()) throw ContractError("segmentation sample has no point labels");
  return cross_entropy(logits, std::span<const int>(cloud.point_labels));
}

namespace {

void check_compatible(const ModelConfig& mc, const Dataset& data) {
  if (data.clouds.empty()) throw ContractError("dataset is empty");
  if (mc.task != data.task) throw ConfigError("model task " + to_string(mc.task) + " differs from dataset task " + to_string(data.task));
  if (data.points_per_cloud() != mc.n_points)
    throw ConfigError("dataset clouds have " + std::to_string(data.points_per_cloud()) + " points, model expects n_points = " +
                      std::to_string(mc.n_points));
  if (data.channels() != mc.input_dim)
    throw ConfigError("dataset clouds have " + std::to_string(data.channels()) + " channels, model expects input_dim = " +
                      std::to_string(mc.input_dim));
  if (data.num_outputs() != mc.num_classes)
    throw ConfigError("dataset has " + std::to_string(data.num_outputs()) + " output labels, model expects num_classes = " +
                      std::to_string(mc.num_classes));
}

}  // namespace

template <typename T>
MetricReport train(Model<T>& model, const Dataset& data, const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  check_compatible(model.config(), data);
  OptimizerState<T> state;
  state.base_lr = cfg.base_lr;
  state.lr_step_size = cfg.lr_step_size;
  state.lr_gamma = cfg.lr_gamma;
  const std::size_t threads = resolve_threads(cfg.threads);
  const std::size_t n = data.clouds.size();

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  MetricReport report;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = step_lr(epoch, cfg.base_lr, cfg.lr_step_size, cfg.lr_gamma);
    Rng shuffle_rng(mix_seed(cfg.seed, 0x5348554646ULL, static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.below(i)]);

    double epoch_loss = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size, ++batch_index) {
      const std::size_t count = std::min(cfg.batch_size, n - start);
      const T inv = T(1) / static_cast<T>(count);
      model.params().zero_grad();
      std::vector<double> losses(count);

      for (std::size_t chunk = 0; chunk < count; chunk += threads) {
        const std::size_t width = std::min(threads, count - chunk);
        std::vector<std::unique_ptr<Tape<T>>> tapes(width);
        std::vector<std::exception_ptr> errors(width);
        auto work = [&](std::size_t w) {
          try {
            const std::size_t idx = order[start + chunk + w];
            PointCloud cloud = cfg.augment
                                   ? augment(data.clouds[idx], mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch) + 1, idx),
                                             cfg.augmentation)
                                   : data.clouds[idx];
            tapes[w] = std::make_unique<Tape<T>>(Tape<T>::ParamGrads::deferred);
            Var<T> loss = sample_loss(*tapes[w], model, cloud);
            losses[chunk + w] = static_cast<double>(loss.value()(0, 0));
            if (std::isfinite(losses[chunk + w])) tapes[w]->backward(scale(loss, inv));
          } catch (const NumericError&) {
            losses[chunk + w] = std::numeric_limits<double>::quiet_NaN();
          } catch (...) {
            errors[w] = std::current_exception();
          }
        };
        if (width == 1) {
          work(0);
        } else {
          std::vector<std::thread> pool;
          for (std::size_t w = 0; w < width; ++w) pool.emplace_back(work, w);
          for (auto& t : pool) t.join();
        }
        for (auto& e : errors)
          if (e) std::rethrow_exception(e);
        for (std::size_t w = 0; w < width; ++w) {
          if (!std::isfinite(losses[chunk + w]))
            throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                      std::to_string(batch_index) + " (sample " +
                                      std::to_string(order[start + chunk + w]) + ")",
                                  epoch, batch_index);
          tapes[w]->flush_param_grads();
        }
      }
      for (double l : losses) epoch_loss += l;
      adam_step(model.params(), state, lr);
    }
    model.params().zero_grad();
    report.loss_curve.push_back(epoch_loss / static_cast<double>(n));
    if (on_epoch && !on_epoch(epoch, report.loss_curve.back())) break;
  }

  MetricReport eval = evaluate(model, data);
  eval.loss_curve = std::move(report.loss_curve);
  return eval;
}

double overall_accuracy(std::span<const int> predicted, std::span<const int> target) {
  if (predicted.size() != target.size()) throw ContractError("prediction and target counts differ");
  if (target.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < target.size(); ++i) correct += predicted[i] == target[i];
  return static_cast<double>(correct) / static_cast<double>(target.size());
}

template <typename T>
double evaluate_classification(Model<T>& model, const Dataset& data) {
  std::vector<int> pred, gt;
  for (const auto& c : data.clouds) {
    if (!c.shape_label) throw ContractError("evaluation sample has no shape label");
    pred.push_back(model.predict_class(c));
    gt.push_back(*c.shape_label);
  }
  return overall_accuracy(pred, gt);
}

IouScores iou_scores(std::span<const int> predicted, std::span<const int> target, std::span<const int> parts) {
  if (predicted.size() != target.size()) throw ContractError("prediction and target counts differ");
  if (parts.empty()) throw ContractError("part set is empty");
  auto slot = [&](int label) -> std::size_t {
    auto it = std::find(parts.begin(), parts.end(), label);
    if (it == parts.end()) throw ContractError("label " + std::to_string(label) + " is not in the category's part set");
    return static_cast<std::size_t>(it - parts.begin());
  };
  std::vector<std::size_t> inter(parts.size(), 0), uni(parts.size(), 0);
  for (std::size_t i = 0; i < target.size(); ++i) {
    const std::size_t p = slot(predicted[i]);
    const std::size_t g = slot(target[i]);
    if (p == g) {
      ++inter[p];
      ++uni[p];
    } else {
      ++uni[p];
      ++uni[g];
    }
  }
  IouScores out;
  for (std::size_t k = 0; k < parts.size(); ++k)
    out.per_part.push_back(uni[k] == 0 ? 1.0 : static_cast<double>(inter[k]) / static_cast<double>(uni[k]));
  out.shape_iou = std::accumulate(out.per_part.begin(), out.per_part.end(), 0.0) / static_cast<double>(parts.size());
  return out;
}

template <typename T>
SegmentationScores evaluate_segmentation(Model<T>& model, const Dataset& data) {
  SegmentationScores out;
  std::vector<double> cat_sum(data.categories.size(), 0.0);
  std::vector<std::size_t> cat_count(data.categories.size(), 0);
  double total = 0.0;
  std::size_t points = 0, correct = 0;
  for (const auto& c : data.clouds) {
    if (!c.shape_label) throw ContractError("segmentation sample has no category");
    const auto cat = static_cast<std::size_t>(*c.shape_label);
    const auto& parts = data.categories.at(cat).parts;
    const std::vector<int> pred = model.predict_parts(c, parts);
    const double iou = iou_scores(pred, c.point_labels, parts).shape_iou;
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == c.point_labels[i];
    points += pred.size();
    total += iou;
    cat_sum[cat] += iou;
    ++cat_count[cat];
  }
  out.point_accuracy = points ? static_cast<double>(correct) / static_cast<double>(points) : 0.0;
  out.instance_miou = data.clouds.empty() ? 0.0 : total / static_cast<double>(data.clouds.size());
  for (std::size_t k = 0; k < cat_sum.size(); ++k)
    out.per_category.push_back(cat_count[k] ? cat_sum[k] / static_cast<double>(cat_count[k]) : 0.0);
  return out;
}

template <typename T>
MetricReport evaluate(Model<T>& model, const Dataset& data) {
  MetricReport r;
  if (data.task == Task::classification) {
    r.overall_accuracy = evaluate_classification(model, data);
  } else {
    SegmentationScores s = evaluate_segmentation(model, data);
    r.instance_miou = s.instance_miou;
    r.per_class_iou = std::move(s.per_category);
    r.overall_accuracy = s.point_accuracy;
  }
  return r;
}

#define MLMSPT_INSTANTIATE_TRAINING(T)                                                                   \
  template Var<T> sample_loss<T>(Tape<T>&, Model<T>&, const PointCloud&);                                \
  template MetricReport train<T>(Model<T>&, const Dataset&, const TrainConfig&, const EpochCallback&);   \
  template double evaluate_classification<T>(Model<T>&, const Dataset&);                                 \
  template SegmentationScores evaluate_segmentation<T>(Model<T>&, const Dataset&);                       \
  template MetricReport evaluate<T>(Model<T>&, const Dataset&);

MLMSPT_INSTANTIATE_TRAINING(float)
MLMSPT_INSTANTIATE_TRAINING(double)

}  // namespace mlmspt
