#include "mlmspt/tensor.hpp"

#include "mlmspt/errors.hpp"

#include <numeric>
#include <sstream>

namespace mlmspt {

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::string shape_string(Eigen::Index rows, Eigen::Index cols) {
  return shape_string(Shape{static_cast<std::size_t>(rows), static_cast<std::size_t>(cols)});
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

namespace {

std::pair<Eigen::Index, Eigen::Index> matrix_extents(const Shape& shape) {
  if (shape.size() == 1) return {1, static_cast<Eigen::Index>(shape[0])};
  if (shape.size() == 2)
    return {static_cast<Eigen::Index>(shape[0]), static_cast<Eigen::Index>(shape[1])};
  throw DimensionError("tensors must have rank 1 or 2, got shape " + shape_string(shape));
}

}  // namespace

template <typename T>
Tensor<T>::Tensor(Shape s) : shape(std::move(s)) {
  auto [r, c] = matrix_extents(shape);
  value = Matrix<T>::Zero(r, c);
}

template <typename T>
Tensor<T>::Tensor(Shape s, Matrix<T> v) : shape(std::move(s)), value(std::move(v)) {
  auto [r, c] = matrix_extents(shape);
  if (value.rows() != r || value.cols() != c)
    throw DimensionError("tensor data " + shape_string(value.rows(), value.cols()) +
                         " does not match declared shape " + shape_string(shape));
}

template <typename T>
void Tensor<T>::zero_grad() {
  grad.resize(0, 0);
}

template <typename T>
Var<T> Tape<T>::constant(Matrix<T> value) {
  Node node;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Tape<T>::param(Tensor<T>& tensor) {
  if (auto it = param_nodes_.find(&tensor); it != param_nodes_.end())
    return Var<T>(this, it->second);
  Node node;
  node.param = &tensor;
  node.requires_grad = tensor.requires_grad;
  nodes_.push_back(std::move(node));
  param_nodes_.emplace(&tensor, nodes_.size() - 1);
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Tape<T>::record(Matrix<T> value, std::vector<std::size_t> parents, Backward backward) {
  Node node;
  node.value = std::move(value);
  for (auto p : parents) {
    if (p >= nodes_.size()) throw ContractError("tape node refers to an unknown parent");
    node.requires_grad = node.requires_grad || nodes_[p].requires_grad;
  }
  node.parents = std::move(parents);
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
const Matrix<T>& Tape<T>::value(std::size_t id) const {
  const Node& n = nodes_.at(id);
  return n.param ? n.param->value : n.value;
}

template <typename T>
const Matrix<T>& Tape<T>::grad(std::size_t id) const {
  return nodes_.at(id).grad;
}

template <typename T>
Matrix<T>& Tape<T>::grad_slot(std::size_t id) {
  Node& n = nodes_.at(id);
  if (n.grad.size() == 0) {
    const Matrix<T>& v = value(id);
    n.grad = Matrix<T>::Zero(v.rows(), v.cols());
  }
  return n.grad;
}

template <typename T>
void Tape<T>::backward(Var<T> loss) {
  if (&loss.tape() != this) throw ContractError("backward called with a node from another tape");
  const Matrix<T>& lv = value(loss.id());
  if (lv.rows() != 1 || lv.cols() != 1)
    throw ContractError("backward requires a scalar loss, got shape " +
                        shape_string(lv.rows(), lv.cols()));
  for (auto& n : nodes_) n.grad.resize(0, 0);
  if (!nodes_[loss.id()].requires_grad) return;

  grad_slot(loss.id())(0, 0) = T(1);
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.size() == 0 || !n.backward) continue;
    n.backward(*this, i);
  }
  if (mode_ == ParamGrads::immediate) flush_param_grads();
}

template <typename T>
void Tape<T>::flush_param_grads() {
  for (auto& n : nodes_) {
    if (!n.param || n.grad.size() == 0) continue;
    if (n.param->grad.size() == 0)
      n.param->grad = n.grad;
    else
      n.param->grad += n.grad;
    n.grad.resize(0, 0);
  }
}

template struct Tensor<float>;
template struct Tensor<double>;
template class Tape<float>;
template class Tape<double>;

}  // namespace mlmspt
