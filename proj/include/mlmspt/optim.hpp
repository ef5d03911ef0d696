#pragma once

#include "mlmspt/parameters.hpp"

#include <cstdint>
#include <map>
#include <string>

namespace mlmspt {

struct AdamSettings {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam moments plus the step-decay schedule constants.
template <typename T>
struct OptimizerState {
  std::map<std::string, Matrix<T>> first_moment;
  std::map<std::string, Matrix<T>> second_moment;
  std::uint64_t step = 0;
  double base_lr = 3e-4;
  int lr_step_size = 20;
  double lr_gamma = 0.7;
  AdamSettings adam;
};

/// One bias-corrected Adam update. Every parameter that requires grad must
/// carry a populated gradient; gradients are left in place for the caller to
/// clear. A learning rate of zero updates the moments but leaves parameters
/// bit-identical.
template <typename T>
void adam_step(ParameterStore<T>& params, OptimizerState<T>& state, double lr);

/// base_lr * gamma^floor(epoch / step_size).
double step_lr(int epoch, double base_lr, int step_size, double gamma);

}  // namespace mlmspt
