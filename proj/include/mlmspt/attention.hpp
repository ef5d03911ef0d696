#pragma once

#include "mlmspt/tensor.hpp"

#include <span>
#include <vector>

namespace mlmspt {

/// Which width divides the single-head attention logits.
enum class PsaScale {
  input_dim,  // sqrt(D): the published formula
  proj_dim,   // sqrt(D'): the conventional choice
};

template <typename T>
struct PsaWeights {
  Var<T> w_q;  // D x D'
  Var<T> w_k;  // D x D'
  Var<T> w_v;  // D x D
};

template <typename T>
struct HeadWeights {
  Var<T> w_q;  // Din x Din/M
  Var<T> w_k;
  Var<T> w_v;
};

/// Collects the row-stochastic attention maps produced during a forward pass.
template <typename T>
struct AttentionTrace {
  std::vector<Matrix<T>> maps;
};

/// Point self-attention with residual:
///   softmax((F Wq)(F Wk)^T / sqrt(scale)) (F Wv) + F
template <typename T>
Var<T> psa_forward(Var<T> f, const PsaWeights<T>& w, PsaScale scale = PsaScale::input_dim,
                   AttentionTrace<T>* trace = nullptr);

/// Multi-head self-attention with residual and no output projection. Head m
/// computes softmax(Q_m K_m^T / sqrt(Din/M)) V_m; heads are concatenated in
/// order and added to F. Throws ConfigError when M does not divide Din.
template <typename T>
Var<T> multihead_forward(Var<T> f, std::span<const HeadWeights<T>> heads,
                         AttentionTrace<T>* trace = nullptr);

}  // namespace mlmspt
