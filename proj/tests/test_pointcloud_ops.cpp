#include "doctest.h"

#include "oracles.hpp"
#include "test_util.hpp"

#include "mlmspt/errors.hpp"
#include "mlmspt/pointcloud.hpp"

#include <algorithm>
#include <numeric>
#include <set>

using namespace mlmspt;
using testutil::random_matrix;

namespace {

Matrix<double> line_points(std::initializer_list<double> xs) {
  Matrix<double> p = Matrix<double>::Zero(static_cast<Eigen::Index>(xs.size()), 3);
  Eigen::Index i = 0;
  for (double x : xs) p(i++, 0) = x;
  return p;
}

PointCloud random_cloud(Rng& rng, Eigen::Index n) {
  PointCloud c;
  c.positions = random_matrix(rng, n, 3);
  c.attributes.resize(n, 0);
  return c;
}

}  // namespace

TEST_CASE("fps examples") {
  Rng rng(1);
  const Matrix<double> p = random_matrix(rng, 9, 3);
  SUBCASE("k = M selects everything") {
    auto idx = farthest_point_sample(p, 9);
    std::sort(idx.begin(), idx.end());
    std::vector<std::size_t> all(9);
    std::iota(all.begin(), all.end(), std::size_t{0});
    CHECK(idx == all);
  }
  SUBCASE("collinear greedy order") {
    const auto idx = farthest_point_sample(line_points({0, 1, 2, 10}), 3, StartRule::first_index);
    CHECK(idx == std::vector<std::size_t>{0, 3, 2});
  }
  SUBCASE("k = 1 is the start point") {
    CHECK(farthest_point_sample(p, 1, StartRule::first_index) == std::vector<std::size_t>{0});
    const auto c = farthest_point_sample(p, 1);
    CHECK(c == std::vector<std::size_t>{oracle::fps(p, 1, true)[0]});
  }
  SUBCASE("k > M") {
    CHECK_THROWS_AS(farthest_point_sample(p, 10), ContractError);
  }
}

TEST_CASE("fps matches brute-force greedy oracle") {
  Rng rng(2);
  for (int trial = 0; trial < 40; ++trial) {
    const auto m = static_cast<Eigen::Index>(8 + rng.below(57));
    const std::size_t k = 1 + rng.below(8);
    const Matrix<double> p = random_matrix(rng, m, 3);
    CHECK(farthest_point_sample(p, k) == oracle::fps(p, k, true));
    CHECK(farthest_point_sample(p, k, StartRule::first_index) == oracle::fps(p, k, false));
  }
}

TEST_CASE("fps tie-break on a grid") {
  // Integer lattice: many exact distance ties.
  Matrix<double> p(27, 3);
  for (int i = 0; i < 27; ++i) {
    p(i, 0) = i % 3;
    p(i, 1) = (i / 3) % 3;
    p(i, 2) = i / 9;
  }
  CHECK(farthest_point_sample(p, 8) == oracle::fps(p, 8, true));
  CHECK(farthest_point_sample(p, 8, StartRule::first_index) == oracle::fps(p, 8, false));
}

TEST_CASE("fps selection is permutation invariant as a point set") {
  Rng rng(3);
  const Matrix<double> p = random_matrix(rng, 32, 3);
  std::vector<std::size_t> perm(32);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
  const Matrix<double> q = gather_rows(p, perm);
  std::set<std::vector<double>> a, b;
  for (auto i : farthest_point_sample(p, 8)) a.insert({p(i, 0), p(i, 1), p(i, 2)});
  for (auto i : farthest_point_sample(q, 8)) b.insert({q(i, 0), q(i, 1), q(i, 2)});
  CHECK(a == b);
}

TEST_CASE("knn examples") {
  Rng rng(4);
  const Matrix<double> p = random_matrix(rng, 7, 3);
  SUBCASE("self neighbour") {
    const auto idx = knn(p, p, 1);
    for (Eigen::Index i = 0; i < 7; ++i) CHECK(idx(i, 0) == i);
  }
  SUBCASE("1-D distances") {
    const auto idx = knn(line_points({4.9}), line_points({0, 5, 6}), 2);
    CHECK(idx(0, 0) == 1);
    CHECK(idx(0, 1) == 2);
  }
  SUBCASE("coincident sources tie by index") {
    const auto idx = knn(line_points({1}), Matrix<double>(Matrix<double>::Ones(5, 3)), 4);
    for (Eigen::Index j = 0; j < 4; ++j) CHECK(idx(0, j) == j);
  }
  SUBCASE("k > S") {
    CHECK_THROWS_AS(knn(p, p, 8), ContractError);
  }
}

TEST_CASE("interpolation examples") {
  Tape<double> tape;
  SUBCASE("coincident query returns the source feature") {
    Matrix<double> src = line_points({0, 1, 3});
    Matrix<double> feat(3, 2);
    feat << 1, 2, 3, 4, 5, 6;
    auto out = interpolate_up<double>(src, tape.constant(feat), line_points({1}));
    CHECK(std::abs(out.value()(0, 0) - 3) <= 1e-4 * 3);
    CHECK(std::abs(out.value()(0, 1) - 4) <= 1e-4 * 4);
  }
  SUBCASE("equidistant neighbours average") {
    Matrix<double> src(3, 3);
    src << 1, 0, 0, 0, 1, 0, 0, 0, 1;
    Matrix<double> feat(3, 1);
    feat << 3, 6, 12;
    auto out = interpolate_up<double>(src, tape.constant(feat), Matrix<double>(Matrix<double>::Zero(1, 3)));
    CHECK(out.value()(0, 0) == doctest::Approx(7.0).epsilon(1e-12));
  }
  SUBCASE("distances 1 and 2 give 0.6") {
    Matrix<double> feat(3, 1);
    feat << 0, 3, 100;
    auto out = interpolate_up<double>(line_points({1, 2, 1e6}), tape.constant(feat), line_points({0}));
    CHECK(out.value()(0, 0) == doctest::Approx(0.6).epsilon(1e-6));
  }
  SUBCASE("fewer than 3 sources") {
    CHECK_THROWS_AS(interpolation_plan(line_points({0, 1}), line_points({0})), ContractError);
  }
}

TEST_CASE("interpolation weights and convex hull") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix<double> src = random_matrix(rng, 6, 3), q = random_matrix(rng, 10, 3);
    const Matrix<double> feat = random_matrix(rng, 6, 4);
    const auto plan = interpolation_plan(src, q);
    for (Eigen::Index i = 0; i < q.rows(); ++i) CHECK(std::abs(plan.weights.row(i).sum() - 1.0) <= 1e-6);
    Tape<double> tape;
    const Matrix<double> out = interpolate_up<double>(tape.constant(feat), plan).value();
    CHECK(testutil::max_abs_diff(Eigen::MatrixXd(out), oracle::interpolate(src, feat, q)) <= 1e-12);
    for (Eigen::Index i = 0; i < q.rows(); ++i)
      for (Eigen::Index c = 0; c < 4; ++c) {
        double lo = INFINITY, hi = -INFINITY;
        for (int j = 0; j < 3; ++j) {
          lo = std::min(lo, feat(plan.index(i, j), c));
          hi = std::max(hi, feat(plan.index(i, j), c));
        }
        CHECK(out(i, c) >= lo - 1e-6);
        CHECK(out(i, c) <= hi + 1e-6);
      }
  }
}

TEST_CASE("pyramid is chained fps") {
  Rng rng(6);
  const Matrix<double> p = random_matrix(rng, 32, 3);
  const auto pyr = build_pyramid(p, 3);
  REQUIRE(pyr.scales() == 3);
  CHECK(pyr.indices[0].size() == 32);
  CHECK(pyr.indices[1].size() == 16);
  CHECK(pyr.indices[2].size() == 8);
  for (std::size_t i = 0; i < 32; ++i) CHECK(pyr.indices[0][i] == i);
  CHECK(pyr.indices[1] == oracle::fps(p, 16, true));
  std::vector<std::size_t> expect;
  for (auto l : oracle::fps(gather_rows(p, pyr.indices[1]), 8, true)) expect.push_back(pyr.indices[1][l]);
  CHECK(pyr.indices[2] == expect);
  for (std::size_t s = 0; s < 3; ++s) {
    CHECK(std::set<std::size_t>(pyr.indices[s].begin(), pyr.indices[s].end()).size() == pyr.indices[s].size());
    CHECK(pyr.positions[s] == gather_rows(p, pyr.indices[s]));
  }
  CHECK_THROWS_AS(build_pyramid(random_matrix(rng, 30, 3), 3), ConfigError);
}

TEST_CASE("augment examples") {
  Rng rng(7);
  const PointCloud c = random_cloud(rng, 50);
  SUBCASE("identity settings") {
    const auto out = augment(c, 1, AugmentConfig{0.0, 1.0, 1.0, 0.0});
    CHECK(out.positions == c.positions);
  }
  SUBCASE("fixed scale 2") {
    const auto out = augment(c, 2, AugmentConfig{0.0, 2.0, 2.0, 0.0});
    CHECK(out.positions == Matrix<double>(2.0 * c.positions));
  }
  SUBCASE("scale draws are uniform in range") {
    PointCloud one;
    one.positions = Matrix<double>::Ones(1, 3);
    one.attributes.resize(1, 0);
    const AugmentConfig cfg{0.0, 0.8, 1.25, 0.0};
    double lo = INFINITY, hi = -INFINITY, total = 0.0;
    for (std::uint64_t s = 0; s < 10000; ++s) {
      const double v = augment(one, s, cfg).positions(0, 0);
      lo = std::min(lo, v);
      hi = std::max(hi, v);
      total += v;
    }
    CHECK(lo >= 0.8);
    CHECK(hi <= 1.25);
    CHECK(std::abs(total / 10000 - 1.025) <= 0.01);
  }
  SUBCASE("same seed is bit-identical, dropout keeps N") {
    PointCloud labelled = c;
    labelled.point_labels.assign(50, 0);
    for (int i = 0; i < 50; ++i) labelled.point_labels[static_cast<std::size_t>(i)] = i % 3;
    const AugmentConfig cfg{0.3, 0.8, 1.25, 0.1};
    const auto a = augment(labelled, 99, cfg), b = augment(labelled, 99, cfg);
    CHECK(a.positions == b.positions);
    CHECK(a.point_labels == b.point_labels);
    CHECK(a.size() == 50);
    CHECK(a.point_labels.size() == 50);
    CHECK(a.positions.cwiseAbs().maxCoeff() <= 1.25 + 0.1 + 1e-12);
    CHECK_FALSE(augment(labelled, 100, cfg).positions == a.positions);
  }
  SUBCASE("invalid config") {
    CHECK_THROWS_AS(augment(c, 1, AugmentConfig{1.0, 1.0, 1.0, 0.0}), ConfigError);
    CHECK_THROWS_AS(augment(c, 1, AugmentConfig{0.0, 2.0, 1.0, 0.0}), ConfigError);
  }
}

TEST_CASE("point cloud validation") {
  PointCloud c;
  CHECK_THROWS_AS(c.validate(), ContractError);
  c.positions = Matrix<double>::Zero(3, 3);
  c.point_labels = {0, 1, 2};
  CHECK_NOTHROW(c.validate(3));
  CHECK_THROWS_AS(c.validate(2), ContractError);
  c.point_labels = {0};
  CHECK_THROWS_AS(c.validate(), ContractError);
  c.point_labels.clear();
  c.positions(1, 1) = std::nan("");
  CHECK_THROWS_AS(c.validate(), ContractError);
}
