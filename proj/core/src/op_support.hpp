#pragma once

#include <string>
#include <utility>
#include <vector>

#include "tamseg/tensor.hpp"

namespace tamseg::detail {

template <typename F>
void maybe_record(std::vector<Tensor> inputs, const Tensor& output, F&& fn) {
  if (!should_record(std::span<const Tensor>(inputs))) return;
  Tape::current()->record(std::move(inputs), output, BackwardFn(std::forward<F>(fn)));
}

inline void require_same_dtype(const Tensor& a, const Tensor& b, const char* op) {
  if (a.dtype() != b.dtype()) {
    throw ShapeError(std::string(op) + ": dtype mismatch " + std::string(dtype_name(a.dtype())) +
                     " vs " + std::string(dtype_name(b.dtype())));
  }
}

/// Accumulate-into view of t's gradient; no-op target when t does not need grad.
template <typename T>
std::span<T> grad_target(const Tensor& t) {
  if (!t.requires_grad()) return {};
  return GradAccess::buffer<T>(t);
}

}  // namespace tamseg::detail
