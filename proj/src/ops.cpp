#include "mlmspt/ops.hpp"

#include "mlmspt/errors.hpp"

#include <cmath>
#include <string>

namespace mlmspt {

namespace {

template <typename T>
void same_tape(Var<T> a, Var<T> b, const char* op) {
  if (&a.tape() != &b.tape()) throw ContractError(std::string(op) + ": operands live on different tapes");
}

template <typename T>
std::string dims(const Var<T>& v) {
  return shape_string(v.rows(), v.cols());
}

}  // namespace

template <typename T>
Matrix<T> softmax_rows(const Matrix<T>& x) {
  if (x.hasNaN()) throw NumericError("softmax_rows: NaN in input");
  Matrix<T> y(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const T m = x.row(r).maxCoeff();
    y.row(r) = (x.row(r).array() - m).exp();
    y.row(r) /= y.row(r).sum();
  }
  return y;
}

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  same_tape(a, b, "matmul");
  if (a.cols() != b.rows())
    throw DimensionError("matmul: inner extents disagree for " + dims(a) + " * " + dims(b));
  Matrix<T> out;
  out.noalias() = a.value() * b.value();
  const auto ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {ia, ib}, [ia, ib](Tape<T>& t, std::size_t self) {
    const Matrix<T>& g = t.grad(self);
    if (t.requires_grad(ia)) t.grad_slot(ia).noalias() += g * t.value(ib).transpose();
    if (t.requires_grad(ib)) t.grad_slot(ib).noalias() += t.value(ia).transpose() * g;
  });
}

template <typename T>
Var<T> matmul_bt(Var<T> a, Var<T> b) {
  same_tape(a, b, "matmul_bt");
  if (a.cols() != b.cols())
    throw DimensionError("matmul_bt: inner extents disagree for " + dims(a) + " * transpose(" +
                         dims(b) + ")");
  Matrix<T> out;
  out.noalias() = a.value() * b.value().transpose();
  const auto ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {ia, ib}, [ia, ib](Tape<T>& t, std::size_t self) {
    const Matrix<T>& g = t.grad(self);
    if (t.requires_grad(ia)) t.grad_slot(ia).noalias() += g * t.value(ib);
    if (t.requires_grad(ib)) t.grad_slot(ib).noalias() += g.transpose() * t.value(ia);
  });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  same_tape(a, b, "add");
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError("add: shapes differ, " + dims(a) + " vs " + dims(b));
  Matrix<T> out = a.value() + b.value();
  const auto ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {ia, ib}, [ia, ib](Tape<T>& t, std::size_t self) {
    const Matrix<T>& g = t.grad(self);
    if (t.requires_grad(ia)) t.grad_slot(ia) += g;
    if (t.requires_grad(ib)) t.grad_slot(ib) += g;
  });
}

template <typename T>
Var<T> add_row(Var<T> a, Var<T> row) {
  same_tape(a, row, "add_row");
  if (row.rows() != 1 || row.cols() != a.cols())
    throw DimensionError("add_row: cannot broadcast " + dims(row) + " over " + dims(a));
  Matrix<T> out = a.value().rowwise() + row.value().row(0);
  const auto ia = a.id(), ir = row.id();
  return a.tape().record(std::move(out), {ia, ir}, [ia, ir](Tape<T>& t, std::size_t self) {
    const Matrix<T>& g = t.grad(self);
    if (t.requires_grad(ia)) t.grad_slot(ia) += g;
    if (t.requires_grad(ir)) t.grad_slot(ir) += g.colwise().sum();
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  same_tape(a, b, "mul");
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError("mul: shapes differ, " + dims(a) + " vs " + dims(b));
  Matrix<T> out = a.value().cwiseProduct(b.value());
  const auto ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {ia, ib}, [ia, ib](Tape<T>& t, std::size_t self) {
    const Matrix<T>& g = t.grad(self);
    if (t.requires_grad(ia)) t.grad_slot(ia) += g.cwiseProduct(t.value(ib));
    if (t.requires_grad(ib)) t.grad_slot(ib) += g.cwiseProduct(t.value(ia));
  });
}

template <typename T>
Var<T> scale(Var<T> a, T factor) {
  Matrix<T> out = a.value() * factor;
  const auto ia = a.id();
  return a.tape().record(std::move(out), {ia}, [ia, factor](Tape<T>& t, std::size_t self) {
    t.grad_slot(ia) += t.grad(self) * factor;
  });
}

template <typename T>
Var<T> relu(Var<T> a) {
  Matrix<T> out = a.value().cwiseMax(T(0));
  const auto ia = a.id();
  return a.tape().record(std::move(out), {ia}, [ia](Tape<T>& t, std::size_t self) {
    const Matrix<T>& x = t.value(ia);
    t.grad_slot(ia) += (x.array() > T(0)).select(t.grad(self), T(0));
  });
}

template <typename T>
Var<T> softmax_rows(Var<T> a) {
  Matrix<T> out = softmax_rows<T>(a.value());
  const auto ia = a.id();
  return a.tape().record(std::move(out), {ia}, [ia](Tape<T>& t, std::size_t self) {
    const Matrix<T>& y = t.value(self);
    const Matrix<T>& g = t.grad(self);
    // dX = Y .* (dY - rowsum(dY .* Y))
    Eigen::Matrix<T, Eigen::Dynamic, 1> dots = g.cwiseProduct(y).rowwise().sum();
    t.grad_slot(ia).array() += y.array() * (g.colwise() - dots).array();
  });
}

template <typename T>
Var<T> concat_cols(std::span<const Var<T>> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no operands");
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  std::vector<std::size_t> ids;
  std::vector<Eigen::Index> offsets;
  for (const auto& p : parts) {
    same_tape(parts.front(), p, "concat_cols");
    if (p.rows() != rows)
      throw DimensionError("concat_cols: row counts differ, " + dims(parts.front()) + " vs " +
                           dims(p));
    ids.push_back(p.id());
    offsets.push_back(cols);
    cols += p.cols();
  }
  Matrix<T> out(rows, cols);
  for (std::size_t i = 0; i < parts.size(); ++i)
    out.middleCols(offsets[i], parts[i].cols()) = parts[i].value();
  auto parents = ids;
  return parts.front().tape().record(
      std::move(out), std::move(parents),
      [ids, offsets](Tape<T>& t, std::size_t self) {
        const Matrix<T>& g = t.grad(self);
        for (std::size_t i = 0; i < ids.size(); ++i) {
          if (!t.requires_grad(ids[i])) continue;
          Matrix<T>& slot = t.grad_slot(ids[i]);
          slot += g.middleCols(offsets[i], slot.cols());
        }
      });
}

template <typename T>
Var<T> slice_cols(Var<T> a, Eigen::Index begin, Eigen::Index count) {
  if (begin < 0 || count < 0 || begin + count > a.cols())
    throw DimensionError("slice_cols: columns [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") out of range for " + dims(a));
  Matrix<T> out = a.value().middleCols(begin, count);
  const auto ia = a.id();
  return a.tape().record(std::move(out), {ia}, [ia, begin, count](Tape<T>& t, std::size_t self) {
    t.grad_slot(ia).middleCols(begin, count) += t.grad(self);
  });
}

template <typename T>
Var<T> sum(Var<T> a) {
  Matrix<T> out(1, 1);
  out(0, 0) = a.value().sum();
  const auto ia = a.id();
  return a.tape().record(std::move(out), {ia}, [ia](Tape<T>& t, std::size_t self) {
    t.grad_slot(ia).array() += t.grad(self)(0, 0);
  });
}

template <typename T>
Var<T> mean(Var<T> a) {
  if (a.value().size() == 0) throw ContractError("mean of an empty tensor");
  const T inv = T(1) / static_cast<T>(a.value().size());
  Matrix<T> out(1, 1);
  out(0, 0) = a.value().sum() * inv;
  const auto ia = a.id();
  return a.tape().record(std::move(out), {ia}, [ia, inv](Tape<T>& t, std::size_t self) {
    t.grad_slot(ia).array() += t.grad(self)(0, 0) * inv;
  });
}

template <typename T>
Var<T> max_rows(Var<T> a) {
  const Matrix<T>& x = a.value();
  if (x.rows() == 0) throw ContractError("max_rows of a matrix with no rows");
  Matrix<T> out(1, x.cols());
  std::vector<Eigen::Index> arg(static_cast<std::size_t>(x.cols()), 0);
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    T best = x(0, c);
    for (Eigen::Index r = 1; r < x.rows(); ++r) {
      if (x(r, c) > best) {
        best = x(r, c);
        arg[static_cast<std::size_t>(c)] = r;
      }
    }
    out(0, c) = best;
  }
  const auto ia = a.id();
  return a.tape().record(std::move(out), {ia}, [ia, arg](Tape<T>& t, std::size_t self) {
    const Matrix<T>& g = t.grad(self);
    Matrix<T>& slot = t.grad_slot(ia);
    for (std::size_t c = 0; c < arg.size(); ++c) {
      const auto col = static_cast<Eigen::Index>(c);
      slot(arg[c], col) += g(0, col);
    }
  });
}

template <typename T>
Var<T> weighted_gather(Var<T> src, const IndexMatrix& index, const Matrix<T>& weights) {
  if (index.rows() != weights.rows() || index.cols() != weights.cols())
    throw DimensionError("weighted_gather: index " + shape_string(index.rows(), index.cols()) +
                         " and weights " + shape_string(weights.rows(), weights.cols()) +
                         " disagree");
  const Matrix<T>& s = src.value();
  Matrix<T> out = Matrix<T>::Zero(index.rows(), s.cols());
  for (Eigen::Index q = 0; q < index.rows(); ++q) {
    for (Eigen::Index j = 0; j < index.cols(); ++j) {
      const Eigen::Index r = index(q, j);
      if (r < 0 || r >= s.rows())
        throw ContractError("weighted_gather: index " + std::to_string(r) + " out of range");
      out.row(q) += weights(q, j) * s.row(r);
    }
  }
  const auto is = src.id();
  return src.tape().record(std::move(out), {is},
                           [is, index, weights](Tape<T>& t, std::size_t self) {
                             const Matrix<T>& g = t.grad(self);
                             Matrix<T>& slot = t.grad_slot(is);
                             for (Eigen::Index q = 0; q < index.rows(); ++q)
                               for (Eigen::Index j = 0; j < index.cols(); ++j)
                                 slot.row(index(q, j)) += weights(q, j) * g.row(q);
                           });
}

template <typename T>
Var<T> cross_entropy(Var<T> logits, std::span<const int> targets) {
  const Matrix<T>& x = logits.value();
  if (static_cast<std::size_t>(x.rows()) != targets.size())
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) +
                         " targets for logits " + dims(logits));
  if (x.rows() == 0) throw ContractError("cross_entropy: no rows");
  for (int t : targets)
    if (t < 0 || t >= x.cols())
      throw ContractError("cross_entropy: target " + std::to_string(t) + " outside [0, " +
                          std::to_string(x.cols()) + ")");
  Matrix<T> probs = softmax_rows<T>(x);
  T total = 0;
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const T m = x.row(r).maxCoeff();
    const T lse = m + std::log((x.row(r).array() - m).exp().sum());
    total += lse - x(r, targets[static_cast<std::size_t>(r)]);
  }
  const T inv = T(1) / static_cast<T>(x.rows());
  Matrix<T> out(1, 1);
  out(0, 0) = total * inv;
  std::vector<int> tg(targets.begin(), targets.end());
  const auto il = logits.id();
  return logits.tape().record(
      std::move(out), {il}, [il, tg = std::move(tg), probs = std::move(probs), inv](Tape<T>& t, std::size_t self) {
        const T g = t.grad(self)(0, 0) * inv;
        Matrix<T>& slot = t.grad_slot(il);
        slot += probs * g;
        for (std::size_t r = 0; r < tg.size(); ++r) slot(static_cast<Eigen::Index>(r), tg[r]) -= g;
      });
}

#define MLMSPT_INSTANTIATE_OPS(T)                                                          \
  template Matrix<T> softmax_rows<T>(const Matrix<T>&);                                    \
  template Var<T> matmul<T>(Var<T>, Var<T>);                                               \
  template Var<T> matmul_bt<T>(Var<T>, Var<T>);                                            \
  template Var<T> add<T>(Var<T>, Var<T>);                                                  \
  template Var<T> add_row<T>(Var<T>, Var<T>);                                              \
  template Var<T> mul<T>(Var<T>, Var<T>);                                                  \
  template Var<T> scale<T>(Var<T>, T);                                                     \
  template Var<T> relu<T>(Var<T>);                                                         \
  template Var<T> softmax_rows<T>(Var<T>);                                                 \
  template Var<T> concat_cols<T>(std::span<const Var<T>>);                                 \
  template Var<T> slice_cols<T>(Var<T>, Eigen::Index, Eigen::Index);                       \
  template Var<T> sum<T>(Var<T>);                                                          \
  template Var<T> mean<T>(Var<T>);                                                         \
  template Var<T> max_rows<T>(Var<T>);                                                     \
  template Var<T> weighted_gather<T>(Var<T>, const IndexMatrix&, const Matrix<T>&);        \
  template Var<T> cross_entropy<T>(Var<T>, std::span<const int>);

MLMSPT_INSTANTIATE_OPS(float)
MLMSPT_INSTANTIATE_OPS(double)

}  // namespace mlmspt
