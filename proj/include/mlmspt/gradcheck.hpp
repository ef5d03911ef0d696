#pragma once

#include "mlmspt/parameters.hpp"
#include "mlmspt/rng.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace mlmspt {

struct GradcheckResult {
  std::string block;
  double worst_rel_error = 0.0;
  double tolerance = 0.0;
  std::size_t checked = 0;
  bool passed = false;
};

struct GradcheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  /// Denominator floor for the relative error |a - n| / max(|a|, |n|, floor).
  double floor = 1e-5;
  /// Only tensors whose name starts with one of these are perturbed (all when empty).
  std::vector<std::string> prefixes;
  /// When non-zero, check this many randomly chosen entries instead of all.
  std::size_t sample = 0;
};

/// Builds the block's output on a fresh tape; must be a pure function of the store.
using GradcheckBuilder = std::function<Var<double>(Tape<double>&, ParameterStore<double>&)>;

/// Compares reverse-mode gradients of sum(out .* R), R a fixed random matrix,
/// with central finite differences over the selected entries of `store`.
GradcheckResult check_gradients(const std::string& block, ParameterStore<double>& store,
                                const GradcheckBuilder& build, const GradcheckOptions& options, Rng& rng);

/// Identity whose backward rule scales the gradient by 1.5; a negative control.
Var<double> faulty_identity(Var<double> x);

/// Every differentiable block on random 64-bit instances (N <= 8, D <= 8)
/// plus an end-to-end check over 20 sampled parameters. `corrupt_block`
/// names a block whose backward rule is deliberately broken.
std::vector<GradcheckResult> run_gradcheck_suite(std::uint64_t seed, const std::string& corrupt_block = "");

std::vector<std::string> gradcheck_block_names();

}  // namespace mlmspt
