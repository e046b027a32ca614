#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace tamseg {

enum class DType : std::uint8_t { kFloat32 = 0, kFloat64 = 1 };

std::string_view dtype_name(DType dtype);

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Raised for any shape/rank/dtype contract violation.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised for caller-side argument errors that are not about shapes.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when NaN/Inf shows up where finite values are required.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Calls f(float{}) or f(double{}) depending on dtype.
template <typename F>
decltype(auto) dispatch(DType dtype, F&& f) {
  if (dtype == DType::kFloat64) return f(double{});
  return f(float{});
}

template <typename T>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() { return DType::kFloat32; }
template <>
constexpr DType dtype_of<double>() { return DType::kFloat64; }

class Tape;

/// Row-major N-d float array. Copies share storage (handle semantics);
/// use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, DType dtype = DType::kFloat32);
  static Tensor full(Shape shape, double value, DType dtype = DType::kFloat32);
  static Tensor from_values(Shape shape, std::span<const double> values,
                            DType dtype = DType::kFloat32);
  static Tensor from_values(Shape shape, std::initializer_list<double> values,
                            DType dtype = DType::kFloat32);
  static Tensor scalar(double value, DType dtype = DType::kFloat32);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim() const { return shape().size(); }
  std::size_t extent(std::size_t axis) const;
  std::size_t numel() const;
  DType dtype() const;

  template <typename T>
  std::span<const T> data() const;
  template <typename T>
  std::span<T> mutable_data();

  double at(std::size_t flat_index) const;
  void set(std::size_t flat_index, double value);
  double item() const;
  std::vector<double> to_vector() const;

  bool requires_grad() const;
  Tensor& requires_grad_(bool flag = true);
  bool has_grad() const;
  /// Undefined tensor when no gradient has been accumulated.
  Tensor grad() const;
  void zero_grad();

  /// Deep copy without gradient state.
  Tensor clone() const;
  Tensor detach() const { return clone(); }
  Tensor to(DType dtype) const;

  /// Throws NumericError naming `what` when any element is NaN or Inf.
  void validate_finite(std::string_view what = "tensor") const;

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  struct Impl;
  explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}
  static std::shared_ptr<Impl> make_impl(Shape shape, DType dtype);
  Impl& impl() const;

  std::shared_ptr<Impl> impl_;

  friend class Tape;
  friend struct GradAccess;
};

/// Gradient buffer access used by backward closures.
struct GradAccess {
  /// Returns the gradient storage of t, allocating zeros on first use.
  template <typename T>
  static std::span<T> buffer(const Tensor& t);
  static void set(const Tensor& t, Tensor grad);
};

using BackwardFn = std::function<void(const Tensor& grad_output)>;

/// Ordered record of differentiable operations executed while the tape is
/// active on the current thread. Constructing a Tape installs it; the
/// destructor restores the previously active tape.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* current();

  void record(std::vector<Tensor> inputs, const Tensor& output, BackwardFn fn);

  /// Reverse sweep from a scalar loss. Leaf gradients accumulate across calls;
  /// intermediate gradients are reset at the start of each sweep.
  void backward(const Tensor& loss);

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  struct Node {
    std::vector<Tensor> inputs;
    Tensor output;
    BackwardFn fn;
  };
  std::vector<Node> nodes_;
  Tape* previous_;
};

/// Disables recording on this thread while alive.
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* saved_;
};

/// backward() on the currently active tape.
void backward(const Tensor& loss);

/// True when a tape is active and any of the inputs requires grad.
bool should_record(std::initializer_list<const Tensor*> inputs);
bool should_record(std::span<const Tensor> inputs);

/// Thread-local multiply-accumulate counter. Matmul and convolution add their
/// nominal MAC counts while a scope is alive.
class MacCounterScope {
 public:
  MacCounterScope();
  ~MacCounterScope();
  MacCounterScope(const MacCounterScope&) = delete;
  MacCounterScope& operator=(const MacCounterScope&) = delete;

  std::uint64_t macs() const { return count_; }

  static void add(std::uint64_t macs);

 private:
  std::uint64_t count_ = 0;
  MacCounterScope* previous_;
};

}  // namespace tamseg
