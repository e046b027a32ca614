#include "tamseg/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace tamseg {

double gradient_relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / (std::abs(analytic) + std::abs(numeric) + 1e-8);
}

GradCheckResult check_gradients(std::string name, const std::function<Tensor()>& loss_fn,
                                std::vector<Tensor> inputs, const GradCheckOptions& options) {
  GradCheckResult result;
  result.name = std::move(name);

  std::vector<std::vector<double>> analytic;
  {
    for (auto& in : inputs) {
      in.requires_grad_(true);
      in.zero_grad();
    }
    Tape tape;
    Tensor loss = loss_fn();
    tape.backward(loss);
    for (const auto& in : inputs) {
      analytic.push_back(in.has_grad() ? in.grad().to_vector()
                                       : std::vector<double>(in.numel(), 0.0));
    }
  }

  std::mt19937_64 rng(options.sample_seed);
  NoGradScope no_grad;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor& in = inputs[k];
    std::vector<std::size_t> indices(in.numel());
    std::iota(indices.begin(), indices.end(), 0);
    if (options.max_elements_per_input > 0 && indices.size() > options.max_elements_per_input) {
      std::shuffle(indices.begin(), indices.end(), rng);
      indices.resize(options.max_elements_per_input);
      std::sort(indices.begin(), indices.end());
    }
    for (std::size_t idx : indices) {
      const double original = in.at(idx);
      in.set(idx, original + options.step);
      const double plus = loss_fn().item();
      in.set(idx, original - options.step);
      const double minus = loss_fn().item();
      in.set(idx, original);
      const double numeric = (plus - minus) / (2.0 * options.step);
      double err = gradient_relative_error(analytic[k][idx], numeric);
      if (std::isnan(err)) err = INFINITY;
      ++result.checked;
      if (result.worst.empty() || err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst = std::to_string(k) + "#" + std::to_string(idx);
      }
    }
  }
  result.passed = result.max_rel_error < options.tolerance;
  return result;
}

}  // namespace tamseg
