#include "tamseg/tensor.hpp"

#include <cmath>
#include <sstream>
#include <variant>

namespace tamseg {

struct Tensor::Impl {
  Shape shape;
  DType dtype = DType::kFloat32;
  std::variant<std::vector<float>, std::vector<double>> storage;
  bool requires_grad = false;
  std::shared_ptr<Impl> grad;
};

namespace {

thread_local Tape* g_current_tape = nullptr;
thread_local MacCounterScope* g_mac_counter = nullptr;

}  // namespace

std::shared_ptr<Tensor::Impl> Tensor::make_impl(Shape shape, DType dtype) {
  auto impl = std::make_shared<Tensor::Impl>();
  const std::size_t n = shape_numel(shape);
  impl->shape = std::move(shape);
  impl->dtype = dtype;
  if (dtype == DType::kFloat64) {
    impl->storage = std::vector<double>(n, 0.0);
  } else {
    impl->storage = std::vector<float>(n, 0.0F);
  }
  return impl;
}

std::string_view dtype_name(DType dtype) {
  return dtype == DType::kFloat64 ? "f64" : "f32";
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor Tensor::zeros(Shape shape, DType dtype) {
  return Tensor(make_impl(std::move(shape), dtype));
}

Tensor Tensor::full(Shape shape, double value, DType dtype) {
  Tensor t = zeros(std::move(shape), dtype);
  dispatch(dtype, [&](auto tag) {
    using T = decltype(tag);
    for (auto& v : t.mutable_data<T>()) v = static_cast<T>(value);
  });
  return t;
}

Tensor Tensor::from_values(Shape shape, std::span<const double> values, DType dtype) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("from_values: shape " + shape_str(shape) + " needs " +
                     std::to_string(shape_numel(shape)) + " values, got " +
                     std::to_string(values.size()));
  }
  Tensor t = zeros(std::move(shape), dtype);
  dispatch(dtype, [&](auto tag) {
    using T = decltype(tag);
    auto out = t.mutable_data<T>();
    for (std::size_t i = 0; i < values.size(); ++i) out[i] = static_cast<T>(values[i]);
  });
  return t;
}

Tensor Tensor::from_values(Shape shape, std::initializer_list<double> values, DType dtype) {
  return from_values(std::move(shape), std::span<const double>(values.begin(), values.size()),
                     dtype);
}

Tensor Tensor::scalar(double value, DType dtype) { return full({}, value, dtype); }

Tensor::Impl& Tensor::impl() const {
  if (!impl_) throw ValidationError("operation on an undefined tensor");
  return *impl_;
}

const Shape& Tensor::shape() const { return impl().shape; }

std::size_t Tensor::extent(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

DType Tensor::dtype() const { return impl().dtype; }

template <typename T>
std::span<const T> Tensor::data() const {
  auto* v = std::get_if<std::vector<T>>(&impl().storage);
  if (!v) {
    throw ShapeError("tensor dtype is " + std::string(dtype_name(impl().dtype)) +
                     ", requested " + std::string(dtype_name(dtype_of<T>())));
  }
  return {v->data(), v->size()};
}

template <typename T>
std::span<T> Tensor::mutable_data() {
  auto* v = std::get_if<std::vector<T>>(&impl().storage);
  if (!v) {
    throw ShapeError("tensor dtype is " + std::string(dtype_name(impl().dtype)) +
                     ", requested " + std::string(dtype_name(dtype_of<T>())));
  }
  return {v->data(), v->size()};
}

template std::span<const float> Tensor::data<float>() const;
template std::span<const double> Tensor::data<double>() const;
template std::span<float> Tensor::mutable_data<float>();
template std::span<double> Tensor::mutable_data<double>();

double Tensor::at(std::size_t flat_index) const {
  return std::visit([&](const auto& v) { return static_cast<double>(v.at(flat_index)); },
                    impl().storage);
}

void Tensor::set(std::size_t flat_index, double value) {
  std::visit(
      [&](auto& v) {
        using T = typename std::decay_t<decltype(v)>::value_type;
        v.at(flat_index) = static_cast<T>(value);
      },
      impl().storage);
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return at(0);
}

std::vector<double> Tensor::to_vector() const {
  return std::visit([](const auto& v) { return std::vector<double>(v.begin(), v.end()); },
                    impl().storage);
}

bool Tensor::requires_grad() const { return impl().requires_grad; }

Tensor& Tensor::requires_grad_(bool flag) {
  impl().requires_grad = flag;
  return *this;
}

bool Tensor::has_grad() const { return impl().grad != nullptr; }

Tensor Tensor::grad() const {
  if (!impl().grad) return Tensor();
  return Tensor(impl().grad);
}

void Tensor::zero_grad() { impl().grad.reset(); }

Tensor Tensor::clone() const {
  auto copy = std::make_shared<Impl>();
  copy->shape = impl().shape;
  copy->dtype = impl().dtype;
  copy->storage = impl().storage;
  return Tensor(copy);
}

Tensor Tensor::to(DType dtype) const {
  if (dtype == this->dtype()) return clone();
  return from_values(shape(), to_vector(), dtype);
}

void Tensor::validate_finite(std::string_view what) const {
  std::visit(
      [&](const auto& v) {
        for (std::size_t i = 0; i < v.size(); ++i) {
          if (!std::isfinite(v[i])) {
            throw NumericError(std::string(what) + ": non-finite value at flat index " +
                               std::to_string(i));
          }
        }
      },
      impl().storage);
}

template <typename T>
std::span<T> GradAccess::buffer(const Tensor& t) {
  auto& impl = t.impl();
  if (!impl.grad) impl.grad = Tensor::make_impl(impl.shape, impl.dtype);
  return Tensor(impl.grad).mutable_data<T>();
}

template std::span<float> GradAccess::buffer<float>(const Tensor&);
template std::span<double> GradAccess::buffer<double>(const Tensor&);

void GradAccess::set(const Tensor& t, Tensor grad) {
  if (!grad.defined()) {
    t.impl().grad.reset();
    return;
  }
  if (grad.shape() != t.shape()) {
    throw ShapeError("gradient shape " + shape_str(grad.shape()) + " does not match tensor " +
                     shape_str(t.shape()));
  }
  t.impl().grad = grad.impl_;
}

Tape::Tape() : previous_(g_current_tape) { g_current_tape = this; }

Tape::~Tape() { g_current_tape = previous_; }

Tape* Tape::current() { return g_current_tape; }

void Tape::record(std::vector<Tensor> inputs, const Tensor& output, BackwardFn fn) {
  output.impl().requires_grad = true;
  nodes_.push_back(Node{std::move(inputs), output, std::move(fn)});
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ShapeError("backward() needs a scalar loss, got shape " +
                     (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  if (!loss.requires_grad()) {
    throw ValidationError("backward(): loss is not on the tape (requires_grad is false)");
  }
  for (auto& node : nodes_) node.output.zero_grad();

  dispatch(loss.dtype(), [&](auto tag) {
    using T = decltype(tag);
    GradAccess::buffer<T>(loss)[0] += T(1);
  });

  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (!it->output.has_grad()) continue;
    it->fn(it->output.grad());
  }
}

NoGradScope::NoGradScope() : saved_(g_current_tape) { g_current_tape = nullptr; }

NoGradScope::~NoGradScope() { g_current_tape = saved_; }

void backward(const Tensor& loss) {
  Tape* tape = Tape::current();
  if (!tape) throw ValidationError("backward(): no active tape on this thread");
  tape->backward(loss);
}

bool should_record(std::initializer_list<const Tensor*> inputs) {
  if (!g_current_tape) return false;
  for (const Tensor* t : inputs) {
    if (t && t->defined() && t->requires_grad()) return true;
  }
  return false;
}

bool should_record(std::span<const Tensor> inputs) {
  if (!g_current_tape) return false;
  for (const Tensor& t : inputs) {
    if (t.defined() && t.requires_grad()) return true;
  }
  return false;
}

MacCounterScope::MacCounterScope() : previous_(g_mac_counter) { g_mac_counter = this; }

MacCounterScope::~MacCounterScope() { g_mac_counter = previous_; }

void MacCounterScope::add(std::uint64_t macs) {
  if (g_mac_counter) g_mac_counter->count_ += macs;
}

}  // namespace tamseg
