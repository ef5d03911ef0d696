#pragma once

#include "mlmspt/tensor.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace mlmspt {

/// One shape: N x 3 positions, optional extra per-point channels, optional
/// per-point part labels and an optional shape label.
struct PointCloud {
  Matrix<double> positions;   // N x 3
  Matrix<double> attributes;  // N x (C - 3), may have zero columns
  std::vector<int> point_labels;
  std::optional<int> shape_label;

  std::size_t size() const { return static_cast<std::size_t>(positions.rows()); }
  std::size_t channels() const { return static_cast<std::size_t>(3 + attributes.cols()); }

  /// [positions | attributes], N x C.
  Matrix<double> features() const;

  /// Throws ContractError when N == 0, positions are non-finite, attribute or
  /// label lengths disagree with N, or a point label falls outside
  /// [0, num_point_labels) when that bound is given.
  void validate(std::optional<int> num_point_labels = std::nullopt) const;
};

enum class StartRule {
  centroid_farthest,  // point farthest from the centroid
  first_index,        // index 0
};

/// Greedy max-min farthest point sampling over the rows of `points` (M x 3).
/// Ties between equally distant candidates go to the lexicographically
/// smallest coordinate, then to the smallest index.
std::vector<std::size_t> farthest_point_sample(const Matrix<double>& points, std::size_t k,
                                               StartRule start = StartRule::centroid_farthest);

/// Exact k nearest sources per query, ascending distance, ties by smaller index.
IndexMatrix knn(const Matrix<double>& queries, const Matrix<double>& sources, std::size_t k);

/// Neighbour indices and normalised inverse-square-distance weights used to
/// lift features from `src_pos` onto `query_pos`.
struct InterpolationPlan {
  IndexMatrix index;       // Q x 3
  Matrix<double> weights;  // Q x 3, rows sum to 1
};

inline constexpr double kInterpolationEpsilon = 1e-8;

InterpolationPlan interpolation_plan(const Matrix<double>& src_pos, const Matrix<double>& query_pos);

/// Q x D features interpolated from the three nearest sources. Differentiable
/// with respect to `src_feat`; positions are constants.
template <typename T>
Var<T> interpolate_up(Var<T> src_feat, const InterpolationPlan& plan);

template <typename T>
Var<T> interpolate_up(const Matrix<double>& src_pos, Var<T> src_feat, const Matrix<double>& query_pos);

/// Sampled point sets for every pyramid scale. Scale 0 is the full cloud in
/// its original order; scale s > 0 is FPS over scale s - 1 and holds half as
/// many points. Indices always refer to rows of the original cloud.
struct PyramidState {
  std::vector<std::vector<std::size_t>> indices;
  std::vector<Matrix<double>> positions;

  std::size_t scales() const { return indices.size(); }
};

PyramidState build_pyramid(const Matrix<double>& positions, std::size_t scales);

/// Rows of `m` picked by `rows`, in order.
Matrix<double> gather_rows(const Matrix<double>& m, const std::vector<std::size_t>& rows);

struct AugmentConfig {
  double dropout_prob = 0.1;
  double scale_lo = 0.8;
  double scale_hi = 1.25;
  double shift = 0.1;  // per-axis shift drawn from [-shift, shift]

  void validate() const;
};

/// Random point dropout (dropped points duplicate the first survivor so N is
/// preserved), then a uniform global scale, then a per-axis shift. Fully
/// determined by `seed`.
PointCloud augment(const PointCloud& cloud, std::uint64_t seed, const AugmentConfig& cfg);

}  // namespace mlmspt
