#include "mlmspt/optim.hpp"

#include "mlmspt/errors.hpp"

#include <cmath>

namespace mlmspt {

template <typename T>
void adam_step(ParameterStore<T>& params, OptimizerState<T>& state, double lr) {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ContractError("adam_step: learning rate must be >= 0");
  for (const auto& [name, p] : params) {
    if (p.requires_grad && !p.has_grad())
      throw ContractError("adam_step: parameter " + name + " has no gradient");
  }
  ++state.step;
  const auto& s = state.adam;
  const double bc1 = 1.0 - std::pow(s.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(s.beta2, static_cast<double>(state.step));
  const T b1 = static_cast<T>(s.beta1), b2 = static_cast<T>(s.beta2);

  for (auto& [name, p] : params) {
    if (!p.requires_grad) continue;
    auto& m = state.first_moment[name];
    auto& v = state.second_moment[name];
    if (m.size() == 0) m = Matrix<T>::Zero(p.value.rows(), p.value.cols());
    if (v.size() == 0) v = Matrix<T>::Zero(p.value.rows(), p.value.cols());
    m = b1 * m + (T(1) - b1) * p.grad;
    v = b2 * v + (T(1) - b2) * p.grad.cwiseAbs2();
    if (lr == 0.0) continue;
    const T step = static_cast<T>(lr / bc1);
    const T root_bc2 = static_cast<T>(std::sqrt(bc2));
    const T eps = static_cast<T>(s.epsilon);
    p.value.array() -= step * m.array() / (v.array().sqrt() / root_bc2 + eps);
  }
}

double step_lr(int epoch, double base_lr, int step_size, double gamma) {
  if (step_size < 1) throw ContractError("step_lr: step_size must be >= 1");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ContractError("step_lr: gamma must lie in (0, 1]");
  if (epoch < 0) throw ContractError("step_lr: negative epoch");
  return base_lr * std::pow(gamma, epoch / step_size);
}

template void adam_step<float>(ParameterStore<float>&, OptimizerState<float>&, double);
template void adam_step<double>(ParameterStore<double>&, OptimizerState<double>&, double);

}  // namespace mlmspt
