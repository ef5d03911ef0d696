#include "doctest.h"

#include "oracles.hpp"
#include "test_util.hpp"

#include "mlmspt/errors.hpp"
#include "mlmspt/gradcheck.hpp"
#include "mlmspt/ops.hpp"
#include "mlmspt/optim.hpp"
#include "mlmspt/parameters.hpp"

#include <cmath>
#include <limits>

using namespace mlmspt;
using testutil::random_matrix;

namespace {

Matrix<double> mat(std::initializer_list<std::initializer_list<double>> rows) {
  Matrix<double> m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& r : rows) {
    Eigen::Index j = 0;
    for (double v : r) m(i, j++) = v;
    ++i;
  }
  return m;
}

}  // namespace

TEST_CASE("matmul identity and scalar") {
  Tape<double> tape;
  Rng rng(1);
  const Matrix<double> b = random_matrix(rng, 2, 3);
  auto out = matmul(tape.constant(Matrix<double>::Identity(2, 2)), tape.constant(b));
  CHECK(out.value() == b);
  auto six = matmul(tape.constant(mat({{2}})), tape.constant(mat({{3}})));
  CHECK(six.value()(0, 0) == 6.0);
}

TEST_CASE("matmul agrees with triple-loop oracle") {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const auto r = static_cast<Eigen::Index>(1 + rng.below(16));
    const auto k = static_cast<Eigen::Index>(1 + rng.below(16));
    const auto c = static_cast<Eigen::Index>(1 + rng.below(16));
    const Matrix<double> a = random_matrix(rng, r, k), b = random_matrix(rng, k, c);
    Tape<double> tape;
    auto out = matmul(tape.constant(a), tape.constant(b));
    CHECK(testutil::max_abs_diff(Eigen::MatrixXd(out.value()), oracle::matmul(a, b)) <= 1e-12);
  }
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Tape<double> tape;
  auto a = tape.constant(Matrix<double>::Zero(2, 3));
  auto b = tape.constant(Matrix<double>::Zero(2, 3));
  try {
    matmul(a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("2x3") != std::string::npos);
  }
}

TEST_CASE("softmax examples") {
  SUBCASE("zeros are uniform") {
    const auto y = softmax_rows(Matrix<double>(Matrix<double>::Zero(1, 4)));
    for (int j = 0; j < 4; ++j) CHECK(y(0, j) == doctest::Approx(0.25).epsilon(1e-15));
  }
  SUBCASE("[0, ln 3] gives [0.25, 0.75]") {
    const auto y = softmax_rows(mat({{0.0, std::log(3.0)}}));
    CHECK(std::abs(y(0, 0) - 0.25) < 1e-15);
    CHECK(std::abs(y(0, 1) - 0.75) < 1e-15);
  }
  SUBCASE("saturation") {
    const auto y = softmax_rows(mat({{0.0, 50.0, 0.0, 0.0}}));
    CHECK(y(0, 1) >= 1.0 - 1e-9);
  }
  SUBCASE("NaN input") {
    CHECK_THROWS_AS(softmax_rows(mat({{0.0, std::nan("")}})), NumericError);
  }
}

TEST_CASE("softmax rows are stochastic") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto y = softmax_rows(random_matrix(rng, 1 + static_cast<Eigen::Index>(rng.below(8)),
                                              1 + static_cast<Eigen::Index>(rng.below(8)), -20, 20));
    for (Eigen::Index i = 0; i < y.rows(); ++i) CHECK(std::abs(y.row(i).sum() - 1.0) <= 1e-6);
    CHECK(y.minCoeff() >= 0.0);
    CHECK(y.maxCoeff() <= 1.0);
  }
}

TEST_CASE("backward examples") {
  SUBCASE("x squared at 3") {
    Tensor<double> x({1}, mat({{3.0}}));
    Tape<double> tape;
    auto v = tape.param(x);
    tape.backward(sum(mul(v, v)));
    CHECK(x.grad(0, 0) == 6.0);
  }
  SUBCASE("sum of softmax is constant") {
    Rng rng(4);
    Tensor<double> x({3, 5}, random_matrix(rng, 3, 5));
    Tape<double> tape;
    tape.backward(sum(softmax_rows(tape.param(x))));
    CHECK(x.grad.cwiseAbs().maxCoeff() <= 1e-15);
  }
  SUBCASE("sum(A B) against central differences") {
    Rng rng(5);
    Tensor<double> a({3, 4}, random_matrix(rng, 3, 4)), b({4, 2}, random_matrix(rng, 4, 2));
    Tape<double> tape;
    tape.backward(sum(matmul(tape.param(a), tape.param(b))));
    auto f = [&]() { return oracle::matmul(a.value, b.value).sum(); };
    const double h = 1e-5;
    for (Tensor<double>* t : {&a, &b}) {
      for (Eigen::Index i = 0; i < t->value.size(); ++i) {
        double& w = t->value.data()[i];
        const double keep = w;
        w = keep + h;
        const double up = f();
        w = keep - h;
        const double down = f();
        w = keep;
        const double numeric = (up - down) / (2 * h);
        const double analytic = t->grad.data()[i];
        CHECK(std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-12}) <= 1e-6);
      }
    }
  }
  SUBCASE("non-scalar loss") {
    Tape<double> tape;
    auto v = tape.constant(Matrix<double>::Zero(2, 2));
    CHECK_THROWS_AS(tape.backward(v), ContractError);
  }
}

TEST_CASE("gradients accumulate across backward calls and deferred flush") {
  Tensor<double> x({1}, mat({{2.0}}));
  {
    Tape<double> tape;
    auto v = tape.param(x);
    tape.backward(sum(mul(v, v)));
  }
  {
    Tape<double> tape;
    auto v = tape.param(x);
    tape.backward(sum(mul(v, v)));
  }
  CHECK(x.grad(0, 0) == 8.0);
  x.zero_grad();
  Tape<double> deferred(Tape<double>::ParamGrads::deferred);
  auto v = deferred.param(x);
  deferred.backward(sum(scale(v, 3.0)));
  CHECK_FALSE(x.has_grad());
  deferred.flush_param_grads();
  CHECK(x.grad(0, 0) == 3.0);
}

TEST_CASE("primitive ops pass finite-difference checks") {
  Rng rng(6);
  ParameterStore<double> store;
  store.add("a", Tensor<double>({4, 3}, random_matrix(rng, 4, 3)));
  store.add("b", Tensor<double>({4, 3}, random_matrix(rng, 4, 3)));
  store.add("row", Tensor<double>({3}, random_matrix(rng, 1, 3)));
  store.add("c", Tensor<double>({3, 2}, random_matrix(rng, 3, 2)));
  GradcheckOptions opt;
  auto run = [&](const char* name, const GradcheckBuilder& build) {
    Rng local(7);
    const auto r = check_gradients(name, store, build, opt, local);
    INFO(name << " worst " << r.worst_rel_error);
    CHECK(r.passed);
  };
  run("matmul_bt", [](Tape<double>& t, ParameterStore<double>& s) {
    return matmul_bt(t.param(s.at("a")), t.param(s.at("b")));
  });
  run("add_row", [](Tape<double>& t, ParameterStore<double>& s) {
    return add_row(t.param(s.at("a")), t.param(s.at("row")));
  });
  run("mul", [](Tape<double>& t, ParameterStore<double>& s) { return mul(t.param(s.at("a")), t.param(s.at("b"))); });
  run("relu", [](Tape<double>& t, ParameterStore<double>& s) { return relu(t.param(s.at("a"))); });
  run("concat_slice", [](Tape<double>& t, ParameterStore<double>& s) {
    std::vector<Var<double>> parts{t.param(s.at("a")), t.param(s.at("b"))};
    return slice_cols(concat_cols<double>(parts), 1, 4);
  });
  run("mean", [](Tape<double>& t, ParameterStore<double>& s) { return mean(t.param(s.at("a"))); });
  run("max_rows", [](Tape<double>& t, ParameterStore<double>& s) { return max_rows(t.param(s.at("a"))); });
  run("weighted_gather", [](Tape<double>& t, ParameterStore<double>& s) {
    IndexMatrix idx(2, 3);
    idx << 0, 1, 3, 2, 2, 0;
    Matrix<double> w(2, 3);
    w << 0.2, 0.3, 0.5, 0.6, 0.1, 0.3;
    return weighted_gather(t.param(s.at("a")), idx, w);
  });
  run("softmax", [](Tape<double>& t, ParameterStore<double>& s) {
    return softmax_rows(matmul(t.param(s.at("a")), t.param(s.at("c"))));
  });
}

TEST_CASE("faulty backward rule is caught") {
  Rng rng(8);
  ParameterStore<double> store;
  store.add("x", Tensor<double>({3, 3}, random_matrix(rng, 3, 3)));
  const auto r = check_gradients(
      "faulty", store, [](Tape<double>& t, ParameterStore<double>& s) { return faulty_identity(t.param(s.at("x"))); },
      GradcheckOptions{}, rng);
  CHECK_FALSE(r.passed);
  CHECK(r.worst_rel_error == doctest::Approx(1.0 / 3.0).epsilon(1e-6));
}

TEST_CASE("cross entropy examples") {
  Tape<double> tape;
  const int zero = 0;
  SUBCASE("uniform logits") {
    auto l = cross_entropy(tape.constant(Matrix<double>::Zero(1, 4)), std::span<const int>(&zero, 1));
    CHECK(std::abs(l.value()(0, 0) - std::log(4.0)) < 1e-15);
  }
  SUBCASE("saturated correct class") {
    auto l = cross_entropy(tape.constant(mat({{50.0, 0.0, 0.0}})), std::span<const int>(&zero, 1));
    CHECK(l.value()(0, 0) <= 1e-9);
    CHECK(l.value()(0, 0) >= 0.0);
  }
  SUBCASE("[1, 0] target 0") {
    auto l = cross_entropy(tape.constant(mat({{1.0, 0.0}})), std::span<const int>(&zero, 1));
    CHECK(std::abs(l.value()(0, 0) - std::log1p(std::exp(-1.0))) < 1e-15);
    CHECK(l.value()(0, 0) == doctest::Approx(0.31326).epsilon(1e-5));
  }
  SUBCASE("out of range target") {
    const int bad = 2;
    CHECK_THROWS_AS(cross_entropy(tape.constant(mat({{1.0, 0.0}})), std::span<const int>(&bad, 1)), ContractError);
  }
}

TEST_CASE("cross entropy gradient is softmax minus one-hot") {
  Rng rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor<double> logits({6}, random_matrix(rng, 1, 6, -3, 3));
    const int target = static_cast<int>(rng.below(6));
    Tape<double> tape;
    tape.backward(cross_entropy(tape.param(logits), std::span<const int>(&target, 1)));
    Eigen::MatrixXd expected = oracle::softmax_rows(logits.value);
    expected(0, target) -= 1.0;
    CHECK(testutil::max_abs_diff(Eigen::MatrixXd(logits.grad), expected) <= 1e-10);
  }
}

TEST_CASE("adam examples") {
  const double lr = 0.01;
  SUBCASE("zero gradient leaves parameters unchanged") {
    ParameterStore<double> p;
    Rng rng(10);
    auto& t = p.add("w", Tensor<double>({2, 2}, random_matrix(rng, 2, 2)));
    const Matrix<double> before = t.value;
    t.grad = Matrix<double>::Zero(2, 2);
    OptimizerState<double> st;
    for (int i = 0; i < 3; ++i) adam_step(p, st, lr);
    CHECK(t.value == before);
  }
  SUBCASE("first and second step magnitude is lr") {
    for (double g : {1e-3, 0.5, -2.0}) {
      ParameterStore<double> p;
      auto& t = p.add("w", Shape{1});
      OptimizerState<double> st;
      for (int step = 0; step < 2; ++step) {
        const double before = t.value(0, 0);
        t.grad = Matrix<double>::Constant(1, 1, g);
        adam_step(p, st, lr);
        const double delta = t.value(0, 0) - before;
        // Bias-corrected moments equal g and g^2 for a constant gradient.
        const double closed_form = -lr * g / (std::abs(g) + 1e-8);
        CHECK(std::abs(delta - closed_form) <= 1e-15);
        CHECK(std::abs(std::abs(delta) - lr) <= 1e-6);
        CHECK((delta < 0) == (g > 0));
      }
    }
  }
  SUBCASE("missing gradient") {
    ParameterStore<double> p;
    p.add("w", Shape{2});
    OptimizerState<double> st;
    CHECK_THROWS_AS(adam_step(p, st, lr), ContractError);
  }
}

TEST_CASE("step_lr examples") {
  CHECK(step_lr(0, 3e-4, 20, 0.7) == 3e-4);
  CHECK(std::abs(step_lr(40, 0.0003, 20, 0.5) - 0.000075) < 1e-18);
  for (int e = 0; e < 100; ++e) CHECK(step_lr(e, 3e-4, 7, 1.0) == 3e-4);
  double prev = step_lr(0, 1e-3, 3, 0.9);
  for (int e = 1; e < 100; ++e) {
    const double cur = step_lr(e, 1e-3, 3, 0.9);
    CHECK(cur <= prev);
    prev = cur;
  }
  CHECK_THROWS_AS(step_lr(0, 1e-3, 0, 0.9), ContractError);
}

TEST_CASE("rng is reproducible and in range") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng c(1);
  for (int i = 0; i < 1000; ++i) {
    const double u = c.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(c.below(7) < 7);
  }
  CHECK(mix_seed(1, 2, 3) != mix_seed(1, 3, 2));
}

TEST_CASE("xavier init range and precision conversion") {
  Rng rng(11);
  Tensor<float> t({20, 30});
  xavier_uniform(t, rng);
  const double a = std::sqrt(6.0 / 50.0);
  CHECK(t.value.cwiseAbs().maxCoeff() <= a);
  CHECK(t.value.cwiseAbs().maxCoeff() > 0.5 * a);
  ParameterStore<float> pf;
  pf.add("t", t);
  const auto pd = convert_parameters<double>(pf);
  CHECK(pd.at("t").value.cast<float>() == t.value);
  CHECK_THROWS_AS(pf.add("t", Shape{1}), ContractError);
}
