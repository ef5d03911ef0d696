#pragma once

#include "mlmspt/tensor.hpp"

#include <span>
#include <vector>

namespace mlmspt {

// Plain (non-recording) row softmax with max subtraction. Throws NumericError
// on NaN input.
template <typename T>
Matrix<T> softmax_rows(const Matrix<T>& x);

// Differentiable operations. Every op records itself on the tape of its
// first operand; all operands must live on the same tape.

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b);

/// a * b^T without materialising the transpose.
template <typename T>
Var<T> matmul_bt(Var<T> a, Var<T> b);

template <typename T>
Var<T> add(Var<T> a, Var<T> b);

/// Adds a 1xC row to every row of an RxC matrix.
template <typename T>
Var<T> add_row(Var<T> a, Var<T> row);

/// Elementwise product.
template <typename T>
Var<T> mul(Var<T> a, Var<T> b);

template <typename T>
Var<T> scale(Var<T> a, T factor);

template <typename T>
Var<T> relu(Var<T> a);

template <typename T>
Var<T> softmax_rows(Var<T> a);

template <typename T>
Var<T> concat_cols(std::span<const Var<T>> parts);

template <typename T>
Var<T> slice_cols(Var<T> a, Eigen::Index begin, Eigen::Index count);

/// Sum of all entries, 1x1.
template <typename T>
Var<T> sum(Var<T> a);

/// Mean of all entries, 1x1.
template <typename T>
Var<T> mean(Var<T> a);

/// Column-wise maximum over rows, 1xC. Ties route the gradient to the first
/// maximal row.
template <typename T>
Var<T> max_rows(Var<T> a);

/// out(q, :) = sum_j weights(q, j) * src(index(q, j), :). Weights and indices
/// are constants; the gradient flows into src only.
template <typename T>
Var<T> weighted_gather(Var<T> src, const IndexMatrix& index, const Matrix<T>& weights);

/// Mean softmax cross-entropy over the rows of `logits` (RxK) with one target
/// class per row. Throws ContractError on an out-of-range target.
template <typename T>
Var<T> cross_entropy(Var<T> logits, std::span<const int> targets);

}  // namespace mlmspt
