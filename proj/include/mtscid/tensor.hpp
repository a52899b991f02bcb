#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "mtscid/error.hpp"

namespace mtscid {

using Shape = std::vector<std::size_t>;

inline std::size_t NumElements(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string ShapeToString(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

/// Resolves a possibly negative axis against a rank. Throws ShapeError when
/// out of range.
inline std::size_t NormalizeAxis(int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw ShapeError("axis " + std::to_string(axis) + " invalid for rank " +
                     std::to_string(rank));
  }
  return static_cast<std::size_t>(a);
}

/// Numeric width of a tensor computation. Standard runs use 32-bit floats;
/// check mode uses 64-bit doubles for finite-difference validation.
enum class Precision { kStandard, kCheck };

template <typename T>
inline constexpr Precision kPrecisionOf =
    std::is_same_v<T, double> ? Precision::kCheck : Precision::kStandard;

template <typename T>
struct TensorData {
  Shape shape;
  std::vector<T> values;
  std::vector<T> grad;  // empty until a backward pass touches it
  bool requires_grad = false;

  void EnsureGrad() {
    if (grad.size() != values.size()) grad.assign(values.size(), T{0});
  }
};

/// Dense row-major tensor handle. Copies share storage; use Clone() for a
/// deep copy.
template <typename T>
class Tensor {
  static_assert(std::is_floating_point_v<T>);

 public:
  using value_type = T;

  Tensor() = default;

  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false)
      : impl_(std::make_shared<TensorData<T>>()) {
    if (NumElements(shape) != values.size()) {
      throw ShapeError("tensor of shape " + ShapeToString(shape) + " given " +
                       std::to_string(values.size()) + " values");
    }
    impl_->shape = std::move(shape);
    impl_->values = std::move(values);
    impl_->requires_grad = requires_grad;
  }

  static Tensor Zeros(Shape shape, bool requires_grad = false) {
    return Full(std::move(shape), T{0}, requires_grad);
  }

  static Tensor Full(Shape shape, T value, bool requires_grad = false) {
    const std::size_t n = NumElements(shape);
    return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
  }

  static Tensor Scalar(T value, bool requires_grad = false) {
    return Tensor({}, {value}, requires_grad);
  }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t numel() const { return impl_->values.size(); }
  std::size_t dim(int axis) const {
    return impl_->shape[NormalizeAxis(axis, rank())];
  }

  std::span<const T> values() const { return impl_->values; }
  /// Writable view; only parameter updates and data loading should use it.
  std::span<T> mutable_values() { return impl_->values; }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const T> grad() const { return impl_->grad; }
  std::span<T> mutable_grad() {
    impl_->EnsureGrad();
    return impl_->grad;
  }
  void ZeroGrad() { impl_->grad.assign(impl_->values.size(), T{0}); }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool on) { impl_->requires_grad = on; }

  T item() const {
    if (numel() != 1) {
      throw ShapeError("item() on tensor of shape " + ShapeToString(shape()));
    }
    return impl_->values[0];
  }

  T operator[](std::size_t i) const { return impl_->values[i]; }

  T at(std::initializer_list<std::size_t> index) const {
    if (index.size() != rank()) throw ShapeError("at(): index rank mismatch");
    std::size_t flat = 0;
    std::size_t d = 0;
    for (std::size_t i : index) {
      if (i >= impl_->shape[d]) throw ShapeError("at(): index out of range");
      flat = flat * impl_->shape[d] + i;
      ++d;
    }
    return impl_->values[flat];
  }

  /// Deep copy of values (and requires_grad flag); gradients are not copied.
  Tensor Clone() const {
    return Tensor(impl_->shape, impl_->values, impl_->requires_grad);
  }

  /// Deep copy that never requires grad.
  Tensor Detach() const { return Tensor(impl_->shape, impl_->values, false); }

  bool AllFinite() const {
    for (T v : impl_->values) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  bool SameStorage(const Tensor& other) const { return impl_ == other.impl_; }

  const std::shared_ptr<TensorData<T>>& impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorData<T>> impl)
      : impl_(std::move(impl)) {}

  template <typename U>
  friend class Tape;

  std::shared_ptr<TensorData<T>> impl_;
};

/// Converts between precisions (e.g. float parameters into a double check
/// model).
template <typename To, typename From>
Tensor<To> CastTensor(const Tensor<From>& src) {
  std::vector<To> v(src.values().begin(), src.values().end());
  return Tensor<To>(src.shape(), std::move(v), src.requires_grad());
}

}  // namespace mtscid
