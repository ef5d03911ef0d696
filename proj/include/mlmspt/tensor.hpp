#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <deque>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

namespace mlmspt {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using IndexMatrix = Eigen::Matrix<Eigen::Index, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::string shape_string(Eigen::Index rows, Eigen::Index cols);
std::size_t shape_numel(const Shape& shape);

/// Dense tensor of rank 1 or 2. Rank-1 tensors are stored as a single row so
/// every kernel can treat them as matrices.
template <typename T>
struct Tensor {
  Shape shape;
  Matrix<T> value;
  Matrix<T> grad;  // empty until a backward pass reaches this tensor
  bool requires_grad = true;

  Tensor() = default;
  explicit Tensor(Shape s);
  Tensor(Shape s, Matrix<T> v);

  std::size_t numel() const { return static_cast<std::size_t>(value.size()); }
  bool has_grad() const { return grad.size() != 0; }
  void zero_grad();
};

template <typename T>
class Tape;

/// Handle to a node recorded on a Tape.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Matrix<T>& value() const;
  const Matrix<T>& grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  bool requires_grad() const;

  std::size_t id() const { return id_; }
  Tape<T>& tape() const { return *tape_; }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode autodiff tape. Nodes are appended in evaluation order, so a
/// reverse sweep visits every node after all of its consumers.
///
/// Parameters enter through param(); their tape-local gradients are added into
/// Tensor::grad either at the end of backward() (immediate mode) or when
/// flush_param_grads() is called (deferred mode, used to reduce per-sample
/// gradients in a fixed order).
template <typename T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t self)>;
  enum class ParamGrads { immediate, deferred };

  explicit Tape(ParamGrads mode = ParamGrads::immediate) : mode_(mode) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Matrix<T> value);
  Var<T> param(Tensor<T>& tensor);
  Var<T> record(Matrix<T> value, std::vector<std::size_t> parents, Backward backward);

  const Matrix<T>& value(std::size_t id) const;
  const Matrix<T>& grad(std::size_t id) const;
  // Zero-allocates the gradient slot on first use.
  Matrix<T>& grad_slot(std::size_t id);
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  void backward(Var<T> loss);
  void flush_param_grads();

 private:
  struct Node {
    Matrix<T> value;
    Tensor<T>* param = nullptr;
    bool requires_grad = false;
    std::vector<std::size_t> parents;
    Backward backward;
    Matrix<T> grad;
  };

  ParamGrads mode_;
  std::deque<Node> nodes_;
  std::unordered_map<const Tensor<T>*, std::size_t> param_nodes_;
};

template <typename T>
const Matrix<T>& Var<T>::value() const {
  return tape_->value(id_);
}

template <typename T>
const Matrix<T>& Var<T>::grad() const {
  return tape_->grad(id_);
}

template <typename T>
bool Var<T>::requires_grad() const {
  return tape_->requires_grad(id_);
}

extern template struct Tensor<float>;
extern template struct Tensor<double>;
extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace mlmspt
