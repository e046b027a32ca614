#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tamseg/tensor.hpp"

namespace tamseg {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  /// 0 checks every element; otherwise a seeded sample of this many per input.
  std::size_t max_elements_per_input = 0;
  std::uint64_t sample_seed = 0;
};

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  bool passed = true;
  /// "input#index" of the worst element.
  std::string worst;
};

/// |analytic - numeric| / (|analytic| + |numeric| + 1e-8)
double gradient_relative_error(double analytic, double numeric);

/// Compares reverse-mode gradients of the scalar returned by `loss_fn` with
/// central differences, perturbing the elements of `inputs` in place. Inputs
/// should be 64-bit and are marked requires_grad by this call.
GradCheckResult check_gradients(std::string name, const std::function<Tensor()>& loss_fn,
                                std::vector<Tensor> inputs, const GradCheckOptions& options = {});

/// Gradient checks for every differentiable tensor op, each on `seeds`
/// random 64-bit inputs. One result per op, holding its worst error.
std::vector<GradCheckResult> check_op_suite(std::size_t seeds, const GradCheckOptions& options = {});

}  // namespace tamseg
