#pragma once

#include <cstdint>

#include "tamseg/gradcheck.hpp"

namespace tamseg {

// Model-level finite-difference suites, all in 64-bit. Biases and batch-norm
// affines are drawn away from zero so no ReLU sits exactly on its kink; at
// initialisation a zero bias behind an all-zero receptive field does.
//
// Key biases are excluded from the relative check: the softmax cancels them,
// so their gradient must be (and is asserted to be) below 1e-12 in magnitude.

/// Full temporal attention forward: T=2, 4x4 grid, 3 channels, 2 heads.
GradCheckResult check_tam_suite(std::uint64_t seed, const GradCheckOptions& options = {});

/// Three-level UNet (widths 2,3,4) with a TAM at E3, T=2 frames of 16x16,
/// compound loss on both frames. Seed 9 is the reference point: max-pool and
/// ReLU stay differentiable within a 1e-5 stencil there, which is not true of
/// every seed.
GradCheckResult check_end_to_end_suite(std::uint64_t seed, const GradCheckOptions& options = {});

}  // namespace tamseg
