#pragma once

#include "tamseg/tensor.hpp"

namespace tamseg {

struct BatchNormOptions {
  double momentum = 0.1;
  double eps = 1e-5;
};

/// Per-channel normalisation of x = [C x ...] over every non-channel element.
/// Training mode normalises with the batch statistics and blends them into
/// running_mean / running_var (unbiased variance) with `momentum`; eval mode
/// uses the running statistics. gamma, beta and the running tensors are [C].
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                  Tensor& running_var, bool training, BatchNormOptions options = {});

}  // namespace tamseg
