#pragma once

#include "mlmspt/data_io.hpp"
#include "mlmspt/model.hpp"
#include "mlmspt/optim.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace mlmspt {

struct TrainConfig {
  int epochs = 250;
  std::size_t batch_size = 32;
  double base_lr = 3e-4;
  int lr_step_size = 20;
  double lr_gamma = 0.7;
  std::uint64_t seed = 0;
  bool augment = true;
  AugmentConfig augmentation;
  bool deterministic = true;
  std::size_t threads = 0;  // 0 = MLMSPT_THREADS or hardware concurrency

  /// Classification defaults (batch 32) or segmentation defaults (batch 8).
  static TrainConfig defaults_for(Task task);
  void validate() const;
};

struct MetricReport {
  double overall_accuracy = 0.0;
  std::vector<double> per_class_iou;
  double instance_miou = 0.0;
  std::vector<double> loss_curve;  // mean training loss per epoch

  std::string to_table(const std::vector<Category>& categories = {}) const;
  std::string to_kv() const;
};

/// Called after each epoch with the zero-based epoch index and its mean
/// loss. Returning false ends training early.
using EpochCallback = std::function<bool(int epoch, double mean_loss)>;

/// Thread count after applying MLMSPT_THREADS (0 or unset = hardware).
std::size_t resolve_threads(std::size_t requested);

/// Mean cross-entropy of one forward pass against the cloud's labels.
template <typename T>
Var<T> sample_loss(Tape<T>& tape, Model<T>& model, const PointCloud& cloud);

/// Mini-batch Adam training with per-epoch step decay. Per-sample gradients
/// are reduced in sample order, so results do not depend on the thread count.
/// Throws DivergenceError on a non-finite loss.
template <typename T>
MetricReport train(Model<T>& model, const Dataset& data, const TrainConfig& cfg,
                   const EpochCallback& on_epoch = {});

/// Fraction of predictions equal to the targets.
double overall_accuracy(std::span<const int> predicted, std::span<const int> target);

template <typename T>
double evaluate_classification(Model<T>& model, const Dataset& data);

struct IouScores {
  std::vector<double> per_part;  // in the order of `parts`
  double shape_iou = 0.0;        // mean over parts
};

/// Part IoU of one shape. A part absent from both prediction and ground
/// truth scores 1. Throws ContractError on a label outside `parts`.
IouScores iou_scores(std::span<const int> predicted, std::span<const int> target, std::span<const int> parts);

struct SegmentationScores {
  double instance_miou = 0.0;          // mean shape IoU over all shapes
  std::vector<double> per_category;    // mean shape IoU within each category
  double point_accuracy = 0.0;
};

template <typename T>
SegmentationScores evaluate_segmentation(Model<T>& model, const Dataset& data);

/// Accuracy or mIoU on `data`, filled into a report (loss curve left empty).
template <typename T>
MetricReport evaluate(Model<T>& model, const Dataset& data);

}  // namespace mlmspt
