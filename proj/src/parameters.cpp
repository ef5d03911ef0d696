#include "mlmspt/parameters.hpp"

#include "mlmspt/errors.hpp"
#include "mlmspt/rng.hpp"

#include <cmath>

namespace mlmspt {

template <typename T>
Tensor<T>& ParameterStore<T>::add(const std::string& name, Shape shape) {
  return add(name, Tensor<T>(std::move(shape)));
}

template <typename T>
Tensor<T>& ParameterStore<T>::add(const std::string& name, Tensor<T> tensor) {
  auto [it, inserted] = tensors_.emplace(name, std::move(tensor));
  if (!inserted) throw ContractError("duplicate parameter name: " + name);
  return it->second;
}

template <typename T>
Tensor<T>& ParameterStore<T>::at(const std::string& name) {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw ContractError("unknown parameter: " + name);
  return it->second;
}

template <typename T>
const Tensor<T>& ParameterStore<T>::at(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw ContractError("unknown parameter: " + name);
  return it->second;
}

template <typename T>
std::size_t ParameterStore<T>::numel() const {
  std::size_t n = 0;
  for (const auto& [_, t] : tensors_) n += t.numel();
  return n;
}

template <typename T>
std::vector<std::string> ParameterStore<T>::names() const {
  std::vector<std::string> out;
  out.reserve(tensors_.size());
  for (const auto& [name, _] : tensors_) out.push_back(name);
  return out;
}

template <typename T>
void ParameterStore<T>::zero_grad() {
  for (auto& [_, t] : tensors_) t.zero_grad();
}

template <typename T>
void xavier_uniform(Tensor<T>& tensor, Rng& rng) {
  const double fan_in = static_cast<double>(tensor.value.rows());
  const double fan_out = static_cast<double>(tensor.value.cols());
  const double a = std::sqrt(6.0 / (fan_in + fan_out));
  for (Eigen::Index i = 0; i < tensor.value.size(); ++i)
    tensor.value.data()[i] = static_cast<T>(rng.uniform(-a, a));
}

template <typename To, typename From>
ParameterStore<To> convert_parameters(const ParameterStore<From>& from) {
  ParameterStore<To> out;
  for (const auto& [name, t] : from) {
    Tensor<To> copy(t.shape, t.value.template cast<To>());
    copy.requires_grad = t.requires_grad;
    out.add(name, std::move(copy));
  }
  return out;
}

template class ParameterStore<float>;
template class ParameterStore<double>;
template void xavier_uniform<float>(Tensor<float>&, Rng&);
template void xavier_uniform<double>(Tensor<double>&, Rng&);
template ParameterStore<float> convert_parameters<float, double>(const ParameterStore<double>&);
template ParameterStore<double> convert_parameters<double, float>(const ParameterStore<float>&);
template ParameterStore<float> convert_parameters<float, float>(const ParameterStore<float>&);
template ParameterStore<double> convert_parameters<double, double>(const ParameterStore<double>&);

}  // namespace mlmspt
