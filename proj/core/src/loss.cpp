#include "tamseg/loss.hpp"

#include <cmath>

#include "tamseg/ops.hpp"

namespace tamseg {

double LossTerms::ce_sum() const {
  double s = 0.0;
  for (double c : ce) s += c;
  return s;
}

namespace {

void check_one_hot(const Tensor& truth) {
  const std::size_t classes = truth.extent(0);
  const std::size_t n = truth.numel() / classes;
  const auto v = truth.to_vector();
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t ones = 0;
    for (std::size_t c = 0; c < classes; ++c) {
      const double x = v[c * n + i];
      if (x == 1.0) {
        ++ones;
      } else if (x != 0.0) {
        throw ValidationError("compound_loss: truth is not one-hot");
      }
    }
    if (ones != 1) throw ValidationError("compound_loss: truth is not one-hot");
  }
}

}  // namespace

LossTerms compound_loss_terms(const Tensor& truth, const Tensor& probabilities) {
  if (truth.shape() != probabilities.shape()) {
    throw ShapeError("compound_loss: truth " + shape_str(truth.shape()) + " vs probabilities " +
                     shape_str(probabilities.shape()));
  }
  if (truth.dim() < 2) throw ShapeError("compound_loss: need [classes x spatial...]");
  if (truth.dtype() != probabilities.dtype()) throw ShapeError("compound_loss: dtype mismatch");
  check_one_hot(truth);
  probabilities.validate_finite("compound_loss probabilities");

  const std::size_t classes = truth.extent(0);
  const double n = static_cast<double>(truth.numel() / classes);
  const Tensor p = clamp(probabilities, kProbabilityFloor, 1.0 - kProbabilityFloor);
  const Tensor logp = log(p);

  LossTerms terms;
  Tensor total;
  for (std::size_t c = 0; c < classes; ++c) {
    const Tensor t = slice(truth, 0, c, 1);
    const Tensor pc = slice(p, 0, c, 1);
    const Tensor inter = sum(mul(t, pc));
    const Tensor denom = add_scalar(add(sum(t), sum(pc)), kDiceEpsilon);
    const Tensor dice = sub(Tensor::scalar(1.0, truth.dtype()), div(scale(inter, 2.0), denom));
    const Tensor ce = scale(sum(mul(t, slice(logp, 0, c, 1))), -1.0 / n);
    terms.dice.push_back(dice.item());
    terms.ce.push_back(ce.item());
    const Tensor term = add(dice, ce);
    total = total.defined() ? add(total, term) : term;
  }
  terms.total = scale(total, 1.0 / static_cast<double>(classes));
  return terms;
}

Tensor compound_loss(const Tensor& truth, const Tensor& probabilities) {
  return compound_loss_terms(truth, probabilities).total;
}

}  // namespace tamseg
