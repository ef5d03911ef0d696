#include "mlmspt/pointcloud.hpp"

#include "mlmspt/errors.hpp"
#include "mlmspt/ops.hpp"
#include "mlmspt/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mlmspt {

Matrix<double> PointCloud::features() const {
  Matrix<double> out(positions.rows(), static_cast<Eigen::Index>(channels()));
  out.leftCols(3) = positions;
  if (attributes.cols() > 0) out.rightCols(attributes.cols()) = attributes;
  return out;
}

void PointCloud::validate(std::optional<int> num_point_labels) const {
  if (positions.rows() == 0) throw ContractError("point cloud must contain at least one point");
  if (positions.cols() != 3)
    throw DimensionError("positions must be N x 3, got " +
                         shape_string(positions.rows(), positions.cols()));
  if (!positions.allFinite()) throw ContractError("point cloud positions must be finite");
  if (attributes.size() != 0 && attributes.rows() != positions.rows())
    throw DimensionError("attribute rows disagree with point count");
  if (!point_labels.empty()) {
    if (point_labels.size() != size())
      throw ContractError("point label count " + std::to_string(point_labels.size()) +
                          " differs from point count " + std::to_string(size()));
    if (num_point_labels) {
      for (int l : point_labels)
        if (l < 0 || l >= *num_point_labels)
          throw ContractError("point label " + std::to_string(l) + " outside [0, " +
                              std::to_string(*num_point_labels) + ")");
    }
  }
}

namespace {

double squared_distance(const Matrix<double>& a, Eigen::Index i, const Matrix<double>& b,
                        Eigen::Index j) {
  const double dx = a(i, 0) - b(j, 0);
  const double dy = a(i, 1) - b(j, 1);
  const double dz = a(i, 2) - b(j, 2);
  return dx * dx + dy * dy + dz * dz;
}

// Preferred candidate between i and j when both sit at the same distance.
bool tie_prefers(const Matrix<double>& p, Eigen::Index i, Eigen::Index j) {
  for (int c = 0; c < 3; ++c) {
    if (p(i, c) < p(j, c)) return true;
    if (p(i, c) > p(j, c)) return false;
  }
  return i < j;
}

void require_xyz(const Matrix<double>& m, const char* what) {
  if (m.cols() != 3)
    throw DimensionError(std::string(what) + " must have 3 columns, got " +
                         shape_string(m.rows(), m.cols()));
}

}  // namespace

std::vector<std::size_t> farthest_point_sample(const Matrix<double>& points, std::size_t k,
                                               StartRule start) {
  require_xyz(points, "farthest_point_sample points");
  const auto m = static_cast<std::size_t>(points.rows());
  if (k < 1 || k > m)
    throw ContractError("farthest_point_sample: k = " + std::to_string(k) + " must lie in [1, " +
                        std::to_string(m) + "]");

  Eigen::Index first = 0;
  if (start == StartRule::centroid_farthest) {
    Matrix<double> centroid = points.colwise().mean();
    double best = -1.0;
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
      const double d = squared_distance(points, i, centroid, 0);
      if (d > best || (d == best && tie_prefers(points, i, first))) {
        best = d;
        first = i;
      }
    }
  }

  std::vector<std::size_t> picked{static_cast<std::size_t>(first)};
  std::vector<double> min_dist(m);
  std::vector<char> taken(m, 0);
  taken[static_cast<std::size_t>(first)] = 1;
  for (std::size_t i = 0; i < m; ++i)
    min_dist[i] = squared_distance(points, static_cast<Eigen::Index>(i), points, first);

  while (picked.size() < k) {
    Eigen::Index best = -1;
    for (std::size_t i = 0; i < m; ++i) {
      if (taken[i]) continue;
      const auto ii = static_cast<Eigen::Index>(i);
      if (best < 0 || min_dist[i] > min_dist[static_cast<std::size_t>(best)] ||
          (min_dist[i] == min_dist[static_cast<std::size_t>(best)] && tie_prefers(points, ii, best)))
        best = ii;
    }
    picked.push_back(static_cast<std::size_t>(best));
    taken[static_cast<std::size_t>(best)] = 1;
    for (std::size_t i = 0; i < m; ++i)
      min_dist[i] = std::min(min_dist[i], squared_distance(points, static_cast<Eigen::Index>(i), points, best));
  }
  return picked;
}

IndexMatrix knn(const Matrix<double>& queries, const Matrix<double>& sources, std::size_t k) {
  require_xyz(queries, "knn queries");
  require_xyz(sources, "knn sources");
  const auto s = static_cast<std::size_t>(sources.rows());
  if (k < 1 || k > s)
    throw ContractError("knn: k = " + std::to_string(k) + " must lie in [1, " + std::to_string(s) + "]");
  IndexMatrix out(queries.rows(), static_cast<Eigen::Index>(k));
  std::vector<std::pair<double, Eigen::Index>> cand(s);
  for (Eigen::Index q = 0; q < queries.rows(); ++q) {
    for (std::size_t j = 0; j < s; ++j) {
      const auto jj = static_cast<Eigen::Index>(j);
      cand[j] = {squared_distance(queries, q, sources, jj), jj};
    }
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end());
    for (std::size_t j = 0; j < k; ++j) out(q, static_cast<Eigen::Index>(j)) = cand[j].second;
  }
  return out;
}

InterpolationPlan interpolation_plan(const Matrix<double>& src_pos, const Matrix<double>& query_pos) {
  if (src_pos.rows() < 3)
    throw ContractError("interpolate_up needs at least 3 source points, got " +
                        std::to_string(src_pos.rows()));
  InterpolationPlan plan;
  plan.index = knn(query_pos, src_pos, 3);
  plan.weights.resize(query_pos.rows(), 3);
  for (Eigen::Index q = 0; q < query_pos.rows(); ++q) {
    for (Eigen::Index j = 0; j < 3; ++j) {
      const double d2 = squared_distance(query_pos, q, src_pos, plan.index(q, j));
      plan.weights(q, j) = 1.0 / (d2 + kInterpolationEpsilon);
    }
    plan.weights.row(q) /= plan.weights.row(q).sum();
  }
  return plan;
}

template <typename T>
Var<T> interpolate_up(Var<T> src_feat, const InterpolationPlan& plan) {
  if (plan.index.size() != 0 && plan.index.maxCoeff() >= src_feat.rows())
    throw DimensionError("interpolate_up: plan refers to more source rows than the " +
                         std::to_string(src_feat.rows()) + " features supplied");
  return weighted_gather<T>(src_feat, plan.index, plan.weights.template cast<T>());
}

template <typename T>
Var<T> interpolate_up(const Matrix<double>& src_pos, Var<T> src_feat, const Matrix<double>& query_pos) {
  if (src_pos.rows() != src_feat.rows())
    throw DimensionError("interpolate_up: " + std::to_string(src_pos.rows()) +
                         " source positions but " + std::to_string(src_feat.rows()) +
                         " feature rows");
  return interpolate_up<T>(src_feat, interpolation_plan(src_pos, query_pos));
}

Matrix<double> gather_rows(const Matrix<double>& m, const std::vector<std::size_t>& rows) {
  Matrix<double> out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(rows[i]));
  return out;
}

PyramidState build_pyramid(const Matrix<double>& positions, std::size_t scales) {
  require_xyz(positions, "pyramid positions");
  if (scales < 1) throw ConfigError("pyramid needs at least one scale");
  const auto n = static_cast<std::size_t>(positions.rows());
  const std::size_t divisor = std::size_t{1} << (scales - 1);
  if (n == 0 || n % divisor != 0)
    throw ConfigError("point count " + std::to_string(n) + " must be divisible by " +
                      std::to_string(divisor) + " for " + std::to_string(scales) + " pyramid scales");
  PyramidState state;
  std::vector<std::size_t> identity(n);
  std::iota(identity.begin(), identity.end(), std::size_t{0});
  state.indices.push_back(std::move(identity));
  state.positions.push_back(positions);
  for (std::size_t s = 1; s < scales; ++s) {
    const auto& parent_idx = state.indices.back();
    const auto local = farthest_point_sample(state.positions.back(), parent_idx.size() / 2);
    std::vector<std::size_t> idx;
    idx.reserve(local.size());
    for (auto l : local) idx.push_back(parent_idx[l]);
    state.positions.push_back(gather_rows(positions, idx));
    state.indices.push_back(std::move(idx));
  }
  return state;
}

void AugmentConfig::validate() const {
  if (!(scale_lo <= scale_hi)) throw ConfigError("augment: scale_lo must not exceed scale_hi");
  if (!(dropout_prob >= 0.0 && dropout_prob < 1.0))
    throw ConfigError("augment: dropout_prob must lie in [0, 1)");
  if (!(shift >= 0.0)) throw ConfigError("augment: shift must be >= 0");
}

PointCloud augment(const PointCloud& cloud, std::uint64_t seed, const AugmentConfig& cfg) {
  cfg.validate();
  Rng rng(seed);
  PointCloud out = cloud;
  const auto n = static_cast<Eigen::Index>(cloud.size());

  std::vector<char> dropped(static_cast<std::size_t>(n), 0);
  Eigen::Index survivor = -1;
  for (Eigen::Index i = 0; i < n; ++i) {
    dropped[static_cast<std::size_t>(i)] = rng.uniform() < cfg.dropout_prob;
    if (!dropped[static_cast<std::size_t>(i)] && survivor < 0) survivor = i;
  }
  if (survivor >= 0) {
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!dropped[static_cast<std::size_t>(i)]) continue;
      out.positions.row(i) = cloud.positions.row(survivor);
      if (cloud.attributes.cols() > 0) out.attributes.row(i) = cloud.attributes.row(survivor);
      if (!cloud.point_labels.empty())
        out.point_labels[static_cast<std::size_t>(i)] = cloud.point_labels[static_cast<std::size_t>(survivor)];
    }
  }

  const double s = rng.uniform(cfg.scale_lo, cfg.scale_hi);
  double shift[3];
  for (double& v : shift) v = rng.uniform(-cfg.shift, cfg.shift);
  for (Eigen::Index i = 0; i < n; ++i)
    for (int c = 0; c < 3; ++c) out.positions(i, c) = out.positions(i, c) * s + shift[c];
  return out;
}

template Var<float> interpolate_up<float>(Var<float>, const InterpolationPlan&);
template Var<double> interpolate_up<double>(Var<double>, const InterpolationPlan&);
template Var<float> interpolate_up<float>(const Matrix<double>&, Var<float>, const Matrix<double>&);
template Var<double> interpolate_up<double>(const Matrix<double>&, Var<double>, const Matrix<double>&);

}  // namespace mlmspt
