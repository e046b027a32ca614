#pragma once

#include <vector>

#include "tamseg/tensor.hpp"

namespace tamseg {

inline constexpr double kDiceEpsilon = 1e-6;
inline constexpr double kProbabilityFloor = 1e-7;

struct LossTerms {
  /// Differentiable scalar: mean over classes of (dice_c + ce_c).
  Tensor total;
  std::vector<double> dice;
  std::vector<double> ce;

  /// Sum of the per-class CE terms, i.e. mean per-position cross-entropy.
  double ce_sum() const;
};

/// Soft Dice plus cross-entropy. truth: one-hot [classes x spatial...];
/// probabilities: same shape, clamped to [1e-7, 1 - 1e-7] before the log.
LossTerms compound_loss_terms(const Tensor& truth, const Tensor& probabilities);
Tensor compound_loss(const Tensor& truth, const Tensor& probabilities);

}  // namespace tamseg
