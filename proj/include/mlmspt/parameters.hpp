#pragma once

#include "mlmspt/tensor.hpp"

#include <map>
#include <string>
#include <vector>

namespace mlmspt {

class Rng;

/// Named learnable tensors, iterated in lexicographic name order.
template <typename T>
class ParameterStore {
 public:
  using Map = std::map<std::string, Tensor<T>>;

  /// Adds a zero-initialised tensor. Throws ContractError on a duplicate name.
  Tensor<T>& add(const std::string& name, Shape shape);
  Tensor<T>& add(const std::string& name, Tensor<T> tensor);

  Tensor<T>& at(const std::string& name);
  const Tensor<T>& at(const std::string& name) const;
  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }

  std::size_t size() const { return tensors_.size(); }
  bool empty() const { return tensors_.empty(); }
  std::size_t numel() const;
  std::vector<std::string> names() const;

  void zero_grad();

  typename Map::iterator begin() { return tensors_.begin(); }
  typename Map::iterator end() { return tensors_.end(); }
  typename Map::const_iterator begin() const { return tensors_.begin(); }
  typename Map::const_iterator end() const { return tensors_.end(); }

 private:
  Map tensors_;
};

/// Glorot-uniform fill: U(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
template <typename T>
void xavier_uniform(Tensor<T>& tensor, Rng& rng);

/// Copies values between precisions; names and shapes must match.
template <typename To, typename From>
ParameterStore<To> convert_parameters(const ParameterStore<From>& from);

extern template class ParameterStore<float>;
extern template class ParameterStore<double>;

}  // namespace mlmspt
