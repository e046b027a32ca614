#include "tamseg/params.hpp"

#include <algorithm>
#include <cmath>

namespace tamseg {

void ParameterSet::add(std::string name, Tensor t, bool trainable) {
  if (contains(name)) throw ValidationError("duplicate parameter name: " + name);
  if (trainable) t.requires_grad_(true);
  entries_.push_back(NamedTensor{std::move(name), std::move(t), trainable});
}

void ParameterSet::append(std::string_view prefix, const ParameterSet& other) {
  for (const auto& e : other.entries_) {
    add(std::string(prefix) + e.name, e.tensor, e.trainable);
  }
}

std::vector<Tensor> ParameterSet::trainable() const {
  std::vector<Tensor> out;
  for (const auto& e : entries_) {
    if (e.trainable) out.push_back(e.tensor);
  }
  return out;
}

std::size_t ParameterSet::trainable_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) {
    if (e.trainable) n += e.tensor.numel();
  }
  return n;
}

const Tensor& ParameterSet::get(std::string_view name) const {
  auto it = std::ranges::find(entries_, name, &NamedTensor::name);
  if (it == entries_.end()) throw ValidationError("unknown parameter: " + std::string(name));
  return it->tensor;
}

bool ParameterSet::contains(std::string_view name) const {
  return std::ranges::find(entries_, name, &NamedTensor::name) != entries_.end();
}

void ParameterSet::zero_grad() const {
  for (const auto& e : entries_) {
    Tensor t = e.tensor;
    t.zero_grad();
  }
}

Tensor fan_in_uniform(Shape shape, std::size_t fan_in, std::mt19937_64& rng, DType dtype) {
  const double bound = std::sqrt(6.0 / static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> values(shape_numel(shape));
  for (auto& v : values) v = dist(rng);
  return Tensor::from_values(std::move(shape), values, dtype);
}

}  // namespace tamseg
