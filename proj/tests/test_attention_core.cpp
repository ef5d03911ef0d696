#include "doctest.h"

#include "oracles.hpp"
#include "test_util.hpp"

#include "mlmspt/attention.hpp"
#include "mlmspt/errors.hpp"
#include "mlmspt/ops.hpp"

#include <numeric>

using namespace mlmspt;
using testutil::max_abs_diff;
using testutil::random_matrix;

namespace {

struct PsaInstance {
  Matrix<double> f, wq, wk, wv;
};

PsaInstance random_psa(Rng& rng, Eigen::Index n, Eigen::Index d, Eigen::Index dp) {
  return {random_matrix(rng, n, d), random_matrix(rng, d, dp), random_matrix(rng, d, dp), random_matrix(rng, d, d)};
}

Matrix<double> run_psa(const PsaInstance& in, PsaScale s = PsaScale::input_dim, AttentionTrace<double>* trace = nullptr) {
  Tape<double> tape;
  PsaWeights<double> w{tape.constant(in.wq), tape.constant(in.wk), tape.constant(in.wv)};
  return psa_forward(tape.constant(in.f), w, s, trace).value();
}

struct MhInstance {
  Matrix<double> f;
  std::vector<std::array<Matrix<double>, 3>> heads;
};

MhInstance random_mh(Rng& rng, Eigen::Index n, Eigen::Index din, Eigen::Index m) {
  MhInstance in{random_matrix(rng, n, din), {}};
  for (Eigen::Index h = 0; h < m; ++h)
    in.heads.push_back({random_matrix(rng, din, din / m), random_matrix(rng, din, din / m), random_matrix(rng, din, din / m)});
  return in;
}

Matrix<double> run_mh(const MhInstance& in, AttentionTrace<double>* trace = nullptr) {
  Tape<double> tape;
  std::vector<HeadWeights<double>> hw;
  for (const auto& h : in.heads) hw.push_back({tape.constant(h[0]), tape.constant(h[1]), tape.constant(h[2])});
  return multihead_forward<double>(tape.constant(in.f), hw, trace).value();
}

std::vector<oracle::Head> oracle_heads(const MhInstance& in) {
  std::vector<oracle::Head> out;
  for (const auto& h : in.heads) out.push_back({h[0], h[1], h[2]});
  return out;
}

Matrix<double> permute_rows(const Matrix<double>& m, const std::vector<std::size_t>& perm) {
  Matrix<double> out(m.rows(), m.cols());
  for (std::size_t i = 0; i < perm.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(perm[i]));
  return out;
}

std::vector<std::size_t> random_perm(Rng& rng, std::size_t n) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[rng.below(i)]);
  return p;
}

}  // namespace

TEST_CASE("psa examples") {
  Rng rng(1);
  SUBCASE("zero queries give uniform attention") {
    PsaInstance in = random_psa(rng, 5, 4, 2);
    in.wq.setZero();
    AttentionTrace<double> trace;
    const Matrix<double> out = run_psa(in, PsaScale::input_dim, &trace);
    CHECK((trace.maps[0].array() - 0.2).abs().maxCoeff() <= 1e-15);
    const Eigen::MatrixXd v = oracle::matmul(in.f, in.wv);
    const Eigen::RowVectorXd mean = v.colwise().mean();
    for (Eigen::Index i = 0; i < 5; ++i)
      CHECK((out.row(i) - (mean + in.f.row(i))).cwiseAbs().maxCoeff() <= 1e-12);
  }
  SUBCASE("single point") {
    const PsaInstance in = random_psa(rng, 1, 4, 2);
    const Eigen::MatrixXd expect = oracle::matmul(in.f, in.wv) + Eigen::MatrixXd(in.f);
    CHECK(max_abs_diff(Eigen::MatrixXd(run_psa(in)), expect) <= 1e-12);
  }
  SUBCASE("random N=5 D=4 D'=2 matches loop oracle") {
    const PsaInstance in = random_psa(rng, 5, 4, 2);
    CHECK(max_abs_diff(Eigen::MatrixXd(run_psa(in)), oracle::psa(in.f, in.wq, in.wk, in.wv, 4.0)) <= 1e-10);
    CHECK(max_abs_diff(Eigen::MatrixXd(run_psa(in, PsaScale::proj_dim)), oracle::psa(in.f, in.wq, in.wk, in.wv, 2.0)) <=
          1e-10);
  }
  SUBCASE("shape errors") {
    PsaInstance in = random_psa(rng, 5, 4, 2);
    in.wv = random_matrix(rng, 4, 3);
    CHECK_THROWS_AS(run_psa(in), DimensionError);
  }
}

TEST_CASE("multihead examples") {
  Rng rng(2);
  SUBCASE("one head equals psa with the same denominator") {
    MhInstance in = random_mh(rng, 6, 4, 1);
    PsaInstance p{in.f, in.heads[0][0], in.heads[0][1], in.heads[0][2]};
    CHECK(max_abs_diff(Eigen::MatrixXd(run_mh(in)), Eigen::MatrixXd(run_psa(p))) <= 1e-14);
  }
  SUBCASE("zero queries give per-head column means") {
    MhInstance in = random_mh(rng, 5, 6, 3);
    for (auto& h : in.heads) h[0].setZero();
    const Matrix<double> out = run_mh(in);
    CHECK(out.rows() == 5);
    CHECK(out.cols() == 6);
    for (std::size_t m = 0; m < 3; ++m) {
      const Eigen::RowVectorXd mean = oracle::matmul(in.f, in.heads[m][2]).colwise().mean();
      for (Eigen::Index i = 0; i < 5; ++i)
        CHECK((out.row(i).segment(static_cast<Eigen::Index>(2 * m), 2) - mean -
               in.f.row(i).segment(static_cast<Eigen::Index>(2 * m), 2))
                  .cwiseAbs()
                  .maxCoeff() <= 1e-12);
    }
  }
  SUBCASE("random N=4 Din=8 M=2 matches per-head oracle") {
    const MhInstance in = random_mh(rng, 4, 8, 2);
    CHECK(max_abs_diff(Eigen::MatrixXd(run_mh(in)), oracle::multihead(in.f, oracle_heads(in))) <= 1e-10);
  }
  SUBCASE("heads must divide the width") {
    Tape<double> tape;
    std::vector<HeadWeights<double>> hw(3, {tape.constant(Matrix<double>::Zero(8, 2)), tape.constant(Matrix<double>::Zero(8, 2)),
                                           tape.constant(Matrix<double>::Zero(8, 2))});
    CHECK_THROWS_AS(multihead_forward<double>(tape.constant(Matrix<double>::Zero(4, 8)), hw), ConfigError);
  }
}

TEST_CASE("oracle equivalence over random instances") {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const auto n = static_cast<Eigen::Index>(1 + rng.below(8));
    const auto d = static_cast<Eigen::Index>(1 + rng.below(8));
    const auto dp = static_cast<Eigen::Index>(1 + rng.below(8));
    const PsaInstance p = random_psa(rng, n, d, dp);
    CHECK(max_abs_diff(Eigen::MatrixXd(run_psa(p)), oracle::psa(p.f, p.wq, p.wk, p.wv, static_cast<double>(d))) <= 1e-10);
    const auto m = static_cast<Eigen::Index>(1 + rng.below(4));
    const MhInstance h = random_mh(rng, n, m * static_cast<Eigen::Index>(1 + rng.below(3)), m);
    CHECK(max_abs_diff(Eigen::MatrixXd(run_mh(h)), oracle::multihead(h.f, oracle_heads(h))) <= 1e-10);
  }
}

TEST_CASE("attention maps are row-stochastic and outputs equivariant") {
  Rng rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    PsaInstance p = random_psa(rng, 7, 6, 3);
    p.f.rowwise() += random_matrix(rng, 1, 6, -5, 5).row(0);  // constant shift per row keeps rows stochastic
    AttentionTrace<double> trace;
    const Matrix<double> out = run_psa(p, PsaScale::input_dim, &trace);
    for (const auto& a : trace.maps)
      for (Eigen::Index i = 0; i < a.rows(); ++i) CHECK(std::abs(a.row(i).sum() - 1.0) <= 1e-6);
    const auto perm = random_perm(rng, 7);
    PsaInstance q = p;
    q.f = permute_rows(p.f, perm);
    CHECK((run_psa(q) - permute_rows(out, perm)).cwiseAbs().maxCoeff() <= 1e-6);

    MhInstance h = random_mh(rng, 7, 6, 3);
    AttentionTrace<double> mtrace;
    const Matrix<double> mout = run_mh(h, &mtrace);
    CHECK(mtrace.maps.size() == 3);
    for (const auto& a : mtrace.maps)
      for (Eigen::Index i = 0; i < a.rows(); ++i) CHECK(std::abs(a.row(i).sum() - 1.0) <= 1e-6);
    MhInstance hp = h;
    hp.f = permute_rows(h.f, perm);
    CHECK((run_mh(hp) - permute_rows(mout, perm)).cwiseAbs().maxCoeff() <= 1e-6);
  }
}

TEST_CASE("float and double paths agree") {
  Rng rng(5);
  const PsaInstance p = random_psa(rng, 6, 4, 2);
  Tape<float> tape;
  PsaWeights<float> w{tape.constant(p.wq.cast<float>()), tape.constant(p.wk.cast<float>()), tape.constant(p.wv.cast<float>())};
  const Matrix<float> out = psa_forward(tape.constant(p.f.cast<float>()), w).value();
  CHECK((out.cast<double>() - run_psa(p)).cwiseAbs().maxCoeff() <= 1e-5);
}
