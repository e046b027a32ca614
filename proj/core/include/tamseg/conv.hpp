#pragma once

#include <cstddef>
#include <vector>

#include "tamseg/tensor.hpp"

namespace tamseg {

enum class Padding { kSame, kValid };

struct ConvOptions {
  std::size_t stride = 1;
  Padding padding = Padding::kSame;
};

/// Cross-correlation of a [C_in x spatial...] input with a
/// [C_out x C_in x k...] kernel, 2 or 3 spatial axes. `bias` is [C_out] or
/// undefined. "Same" padding puts (k-1)/2 zeros before each axis, so the
/// output extent is ceil(extent / stride).
Tensor conv(const Tensor& input, const Tensor& kernel, const Tensor& bias, ConvOptions options = {});

/// Non-overlapping max pooling; one window factor per spatial axis.
Tensor max_pool(const Tensor& input, const std::vector<std::size_t>& factors);

/// Nearest-neighbour upsampling; one factor per spatial axis.
Tensor upsample_nearest(const Tensor& input, const std::vector<std::size_t>& factors);

}  // namespace tamseg
