#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "tamseg/tensor.hpp"

namespace tamseg {

struct NamedTensor {
  std::string name;
  Tensor tensor;
  bool trainable = true;
};

/// Ordered, named view over a model's tensors. Entries share storage with the
/// owning layers, so updates through either side are visible to both.
class ParameterSet {
 public:
  /// Registers t; trainable tensors get requires_grad set.
  void add(std::string name, Tensor t, bool trainable = true);
  void append(std::string_view prefix, const ParameterSet& other);

  const std::vector<NamedTensor>& entries() const { return entries_; }
  std::vector<Tensor> trainable() const;
  /// Total number of trainable scalars.
  std::size_t trainable_count() const;
  const Tensor& get(std::string_view name) const;
  bool contains(std::string_view name) const;
  void zero_grad() const;

 private:
  std::vector<NamedTensor> entries_;
};

/// Uniform(-sqrt(6 / fan_in), +sqrt(6 / fan_in)) initialisation.
Tensor fan_in_uniform(Shape shape, std::size_t fan_in, std::mt19937_64& rng,
                      DType dtype = DType::kFloat32);

}  // namespace tamseg
