#include "tamseg/optim.hpp"

#include <cmath>
#include <string>

namespace tamseg {

void adam_step(std::span<Tensor> params, std::span<const Tensor> grads, AdamState& state,
               const AdamOptions& options) {
  if (params.size() != grads.size()) {
    throw ShapeError("adam_step: " + std::to_string(params.size()) + " params but " +
                     std::to_string(grads.size()) + " gradients");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].defined() && grads[i].shape() != params[i].shape()) {
      throw ShapeError("adam_step: gradient " + shape_str(grads[i].shape()) +
                       " does not match parameter " + shape_str(params[i].shape()));
    }
  }
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.push_back(Tensor::zeros(p.shape(), p.dtype()));
      state.v.push_back(Tensor::zeros(p.shape(), p.dtype()));
    }
  } else if (state.m.size() != params.size()) {
    throw ShapeError("adam_step: optimizer state tracks " + std::to_string(state.m.size()) +
                     " params, got " + std::to_string(params.size()));
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(options.beta1, t);
  const double c2 = 1.0 - std::pow(options.beta2, t);

  for (std::size_t i = 0; i < params.size(); ++i) {
    dispatch(params[i].dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto p = params[i].mutable_data<T>();
      auto m = state.m[i].mutable_data<T>();
      auto v = state.v[i].mutable_data<T>();
      std::span<const T> g;
      if (grads[i].defined()) g = grads[i].data<T>();
      for (std::size_t j = 0; j < p.size(); ++j) {
        const double gj = g.empty() ? 0.0 : static_cast<double>(g[j]);
        const double mj = options.beta1 * m[j] + (1.0 - options.beta1) * gj;
        const double vj = options.beta2 * v[j] + (1.0 - options.beta2) * gj * gj;
        m[j] = static_cast<T>(mj);
        v[j] = static_cast<T>(vj);
        const double m_hat = mj / c1;
        const double v_hat = vj / c2;
        p[j] = static_cast<T>(p[j] - options.lr * m_hat / (std::sqrt(v_hat) + options.eps));
      }
    });
  }
}

Adam::Adam(std::vector<Tensor> params, AdamOptions options)
    : params_(std::move(params)), options_(options) {}

void Adam::step() {
  std::vector<Tensor> grads;
  grads.reserve(params_.size());
  for (const auto& p : params_) grads.push_back(p.grad());
  adam_step(params_, grads, state_, options_);
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

}  // namespace tamseg
