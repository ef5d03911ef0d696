#include "mlmspt/attention.hpp"

#include "mlmspt/errors.hpp"
#include "mlmspt/ops.hpp"

#include <cmath>
#include <string>

namespace mlmspt {

namespace {

template <typename T>
void expect_shape(const Var<T>& v, Eigen::Index rows, Eigen::Index cols, const char* name) {
  if (v.rows() != rows || v.cols() != cols)
    throw DimensionError(std::string(name) + " must be " + shape_string(rows, cols) + ", got " +
                         shape_string(v.rows(), v.cols()));
}

template <typename T>
Var<T> attend(Var<T> q, Var<T> k, Var<T> v, double denom, AttentionTrace<T>* trace) {
  Var<T> logits = scale(matmul_bt(q, k), static_cast<T>(1.0 / std::sqrt(denom)));
  Var<T> weights = softmax_rows(logits);
  if (trace) trace->maps.push_back(weights.value());
  return matmul(weights, v);
}

}  // namespace

template <typename T>
Var<T> psa_forward(Var<T> f, const PsaWeights<T>& w, PsaScale scale_rule, AttentionTrace<T>* trace) {
  const Eigen::Index d = f.cols();
  const Eigen::Index d_proj = w.w_q.cols();
  expect_shape(w.w_q, d, d_proj, "W_q");
  expect_shape(w.w_k, d, d_proj, "W_k");
  expect_shape(w.w_v, d, d, "W_v");
  const double denom = static_cast<double>(scale_rule == PsaScale::input_dim ? d : d_proj);
  Var<T> out = attend(matmul(f, w.w_q), matmul(f, w.w_k), matmul(f, w.w_v), denom, trace);
  return add(out, f);
}

template <typename T>
Var<T> multihead_forward(Var<T> f, std::span<const HeadWeights<T>> heads, AttentionTrace<T>* trace) {
  const Eigen::Index din = f.cols();
  const auto m = static_cast<Eigen::Index>(heads.size());
  if (m == 0 || din % m != 0)
    throw ConfigError("multi-head attention: " + std::to_string(m) + " heads do not divide width " +
                      std::to_string(din));
  const Eigen::Index dh = din / m;
  std::vector<Var<T>> outs;
  outs.reserve(heads.size());
  for (const auto& h : heads) {
    expect_shape(h.w_q, din, dh, "W_Q");
    expect_shape(h.w_k, din, dh, "W_K");
    expect_shape(h.w_v, din, dh, "W_V");
    outs.push_back(attend(matmul(f, h.w_q), matmul(f, h.w_k), matmul(f, h.w_v),
                          static_cast<double>(dh), trace));
  }
  Var<T> cat = outs.size() == 1 ? outs.front() : concat_cols<T>(outs);
  return add(cat, f);
}

template Var<float> psa_forward<float>(Var<float>, const PsaWeights<float>&, PsaScale, AttentionTrace<float>*);
template Var<double> psa_forward<double>(Var<double>, const PsaWeights<double>&, PsaScale, AttentionTrace<double>*);
template Var<float> multihead_forward<float>(Var<float>, std::span<const HeadWeights<float>>, AttentionTrace<float>*);
template Var<double> multihead_forward<double>(Var<double>, std::span<const HeadWeights<double>>, AttentionTrace<double>*);

}  // namespace mlmspt
