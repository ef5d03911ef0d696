#pragma once

#include "mlmspt/attention.hpp"
#include "mlmspt/parameters.hpp"
#include "mlmspt/pointcloud.hpp"

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mlmspt {

enum class Task { classification, segmentation };

/// Rows of the component ablation: which stages run between embedding and head.
enum class Ablation { baseline, ppt, ppt_mlt, ppt_mst, full };

std::string to_string(Task task);
std::string to_string(Ablation ablation);
Task parse_task(std::string_view text);          // "cls" | "seg"
Ablation parse_ablation(std::string_view text);  // "baseline" | "ppt" | "ppt+mlt" | "ppt+mst" | "full"; "baseline+ppt" etc. also accepted

struct ModelConfig {
  std::size_t n_points = 1024;
  std::size_t input_dim = 3;
  std::size_t embed_dim = 64;     // D
  std::size_t psa_proj_dim = 16;  // D'
  std::size_t levels = 4;         // PSA layers per branch
  std::size_t scales = 3;
  std::size_t heads = 4;
  std::size_t head_hidden = 256;
  std::size_t num_classes = 40;   // shape classes, or part labels for segmentation
  bool use_ppt = true;
  bool use_mlt = true;
  bool use_mst = true;
  PsaScale psa_scale = PsaScale::input_dim;
  bool psa_ffn = false;  // optional pointwise FFN after every PSA layer
  Task task = Task::classification;

  /// D'' = (levels + 1) * D, the width of a level-concatenated branch.
  std::size_t level_width() const { return (levels + 1) * embed_dim; }
  /// scales * D'', the width after cross-scale concatenation.
  std::size_t fused_width() const { return scales * level_width(); }
  /// Width of the per-point features entering the task head.
  std::size_t head_input_width() const { return use_ppt ? fused_width() : embed_dim; }
  std::size_t points_at_scale(std::size_t scale) const { return n_points >> scale; }

  Ablation ablation() const;
  void set_ablation(Ablation a);

  /// Throws ConfigError naming the first violated constraint.
  void validate() const;

  /// Flat key=value lines, one per field, in a fixed order.
  std::string to_text() const;
  static ModelConfig from_text(std::string_view text);

  bool operator==(const ModelConfig&) const = default;
};

/// Every parameter the forward pass reads for `cfg`, with its shape. Rank-1
/// shapes are biases.
std::map<std::string, Shape> parameter_shapes(const ModelConfig& cfg);

/// Glorot-uniform weights, zero biases, drawn in parameter-name order.
template <typename T>
ParameterStore<T> init_parameters(const ModelConfig& cfg, std::uint64_t seed);

/// Throws CheckpointError naming the first parameter whose presence or shape
/// disagrees with parameter_shapes(cfg).
template <typename T>
void check_parameters(const ModelConfig& cfg, const ParameterStore<T>& params);

template <typename T>
struct ForwardTrace {
  std::vector<Matrix<T>> ppt;  // per scale, N_i x D''
  std::vector<Matrix<T>> mlt;  // per scale, N_i x D''
  Matrix<T> fused;             // N x scales*D'' before MST
  Matrix<T> mst;               // N x scales*D'' after MST
  Matrix<T> head_input;
  AttentionTrace<T> attention;
};

// Stage functions. All read parameters through `params` by name and record
// on `tape`.

/// Pointwise two-layer map C -> D -> D with ReLU between.
template <typename T>
Var<T> embed(Tape<T>& tape, ParameterStore<T>& params, const std::string& prefix, Var<T> input);

/// One PPT branch: embed, `levels` chained PSA layers, then
/// concat(F0, F1, ..., F_levels). `scale` is zero-based.
template <typename T>
Var<T> ppt_branch(Tape<T>& tape, ParameterStore<T>& params, const ModelConfig& cfg,
                  std::size_t scale, Var<T> input, AttentionTrace<T>* trace = nullptr);

template <typename T>
std::vector<Var<T>> ppt_forward(Tape<T>& tape, ParameterStore<T>& params, const ModelConfig& cfg,
                                const PyramidState& pyramid, const Matrix<double>& features,
                                AttentionTrace<T>* trace = nullptr);

template <typename T>
Var<T> mlt_forward(Tape<T>& tape, ParameterStore<T>& params, const ModelConfig& cfg,
                   std::size_t scale, Var<T> f, AttentionTrace<T>* trace = nullptr);

/// Lifts every scale to the full-resolution points and concatenates them.
/// Scale 0 passes through unchanged.
template <typename T>
Var<T> upsample_concat(std::span<const Var<T>> maps, const PyramidState& pyramid);

template <typename T>
Var<T> mst_forward(Tape<T>& tape, ParameterStore<T>& params, const ModelConfig& cfg,
                   std::span<const Var<T>> maps, const PyramidState& pyramid,
                   AttentionTrace<T>* trace = nullptr);

/// Shared per-point linear map, global max-pool, then H -> H/2 -> K. Returns 1 x K.
template <typename T>
Var<T> classify(Tape<T>& tape, ParameterStore<T>& params, const ModelConfig& cfg, Var<T> f);

/// Per-point [feature | global max] through a shared FFN. Returns N x K.
template <typename T>
Var<T> segment(Tape<T>& tape, ParameterStore<T>& params, const ModelConfig& cfg, Var<T> f);

template <typename T>
Var<T> forward_full(Tape<T>& tape, ParameterStore<T>& params, const ModelConfig& cfg,
                    const PointCloud& cloud, ForwardTrace<T>* trace = nullptr);

/// Index of the largest entry; ties resolve to the smaller index.
template <typename T>
int argmax(const Eigen::Ref<const Eigen::Matrix<T, 1, Eigen::Dynamic>>& row);

/// Configuration plus parameters.
template <typename T>
class Model {
 public:
  Model(ModelConfig cfg, std::uint64_t seed);
  Model(ModelConfig cfg, ParameterStore<T> params);

  const ModelConfig& config() const { return cfg_; }
  ParameterStore<T>& params() { return params_; }
  const ParameterStore<T>& params() const { return params_; }

  Var<T> forward(Tape<T>& tape, const PointCloud& cloud, ForwardTrace<T>* trace = nullptr);

  /// Gradient-free logits: 1 x K for classification, N x K for segmentation.
  Matrix<T> logits(const PointCloud& cloud);
  int predict_class(const PointCloud& cloud);
  /// Per-point argmax restricted to `parts` (all labels when empty).
  std::vector<int> predict_parts(const PointCloud& cloud, std::span<const int> parts = {});

 private:
  ModelConfig cfg_;
  ParameterStore<T> params_;
};

extern template class Model<float>;
extern template class Model<double>;

}  // namespace mlmspt
