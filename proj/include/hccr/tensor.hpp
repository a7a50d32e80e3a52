#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "hccr/error.hpp"

namespace hccr {

using Shape = std::vector<std::size_t>;

inline constexpr std::size_t kMaxRank = 4;

inline std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

// Dense row-major tensor. Activations are N x H x W x C, conv kernels
// R x Q x C x M. A default-constructed tensor is empty (rank 0, no data) and
// only serves as a placeholder; every tensor produced by an operation has
// rank >= 1 and positive extents.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;

  explicit BasicTensor(Shape shape, T fill = T{0}) : shape_(std::move(shape)) {
    validate_shape(shape_);
    data_.assign(shape_size(shape_), fill);
  }

  BasicTensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape(shape_);
    if (data_.size() != shape_size(shape_)) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_string(shape_));
    }
  }

  static BasicTensor zeros_like(const BasicTensor& other) { return BasicTensor(other.shape_); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  T* raw() noexcept { return data_.data(); }
  const T* raw() const noexcept { return data_.data(); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // Same data, new shape with equal element count.
  BasicTensor reshaped(Shape shape) const& {
    BasicTensor out = *this;
    out.reshape(std::move(shape));
    return out;
  }
  BasicTensor reshaped(Shape shape) && {
    reshape(std::move(shape));
    return std::move(*this);
  }
  void reshape(Shape shape) {
    validate_shape(shape);
    if (shape_size(shape) != data_.size()) {
      throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    }
    shape_ = std::move(shape);
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  template <typename U>
  BasicTensor<U> cast() const {
    return BasicTensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  static void validate_shape(const Shape& shape) {
    if (shape.empty() || shape.size() > kMaxRank) {
      throw ShapeError("tensor rank must be in [1, 4], got " + std::to_string(shape.size()));
    }
    for (std::size_t d : shape) {
      if (d == 0) throw ShapeError("tensor extents must be positive, got " + shape_string(shape));
    }
  }

  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

// Throws if any element is NaN or Inf. Compiled out of release builds.
template <typename T>
inline void debug_check_finite([[maybe_unused]] const BasicTensor<T>& t,
                               [[maybe_unused]] const char* where) {
#ifndef NDEBUG
  for (T v : t.data()) {
    if (!std::isfinite(v)) throw Error(std::string("non-finite value produced by ") + where);
  }
#endif
}

// out[i] = a[i] * b[i]. `b` may instead broadcast over leading axes: same
// rank as `a`, with a prefix of its axes equal to 1 and the rest matching
// (e.g. 1x1xC against HxWxC).
template <typename T>
BasicTensor<T> elementwise_mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.rank() != b.rank()) {
    throw ShapeError("elementwise_mul: shapes " + shape_string(a.shape()) + " and " +
                     shape_string(b.shape()) + " are incompatible");
  }
  std::size_t lead = 0;
  while (lead < b.rank() && b.dim(lead) == 1) ++lead;
  for (std::size_t i = lead; i < a.rank(); ++i) {
    if (a.dim(i) != b.dim(i)) {
      throw ShapeError("elementwise_mul: shapes " + shape_string(a.shape()) + " and " +
                       shape_string(b.shape()) + " are incompatible");
    }
  }
  BasicTensor<T> out(a.shape());
  const std::size_t inner = b.size();
  const std::size_t outer = a.size() / inner;
  const T* pa = a.raw();
  const T* pb = b.raw();
  T* po = out.raw();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) po[o * inner + i] = pa[o * inner + i] * pb[i];
  }
  debug_check_finite(out, "elementwise_mul");
  return out;
}

// Sums out `axes`; remaining axes keep their order. Summing every axis gives
// a shape-[1] tensor. Accumulation follows row-major order.
template <typename T>
BasicTensor<T> reduce_sum(const BasicTensor<T>& a, const std::vector<std::size_t>& axes) {
  std::vector<bool> reduced(a.rank(), false);
  for (std::size_t ax : axes) {
    if (ax >= a.rank()) {
      throw ShapeError("reduce_sum: axis " + std::to_string(ax) + " out of range for " +
                       shape_string(a.shape()));
    }
    if (reduced[ax]) throw ShapeError("reduce_sum: duplicate axis " + std::to_string(ax));
    reduced[ax] = true;
  }
  Shape out_shape;
  for (std::size_t i = 0; i < a.rank(); ++i) {
    if (!reduced[i]) out_shape.push_back(a.dim(i));
  }
  if (out_shape.empty()) out_shape.push_back(1);
  BasicTensor<T> out(out_shape);

  // Row-major strides of the output, indexed by input axis (0 for reduced axes).
  std::vector<std::size_t> out_stride(a.rank(), 0);
  std::size_t stride = 1;
  for (std::size_t i = a.rank(); i-- > 0;) {
    if (!reduced[i]) {
      out_stride[i] = stride;
      stride *= a.dim(i);
    }
  }
  std::vector<std::size_t> index(a.rank(), 0);
  for (std::size_t flat = 0; flat < a.size(); ++flat) {
    std::size_t o = 0;
    for (std::size_t i = 0; i < a.rank(); ++i) o += index[i] * out_stride[i];
    out[o] += a[flat];
    for (std::size_t i = a.rank(); i-- > 0;) {
      if (++index[i] < a.dim(i)) break;
      index[i] = 0;
    }
  }
  debug_check_finite(out, "reduce_sum");
  return out;
}

// out[k] = sum_c w[c, k] * x[c] for w of shape C x K.
template <typename T>
BasicTensor<T> matvec(const BasicTensor<T>& w, const BasicTensor<T>& x) {
  if (w.rank() != 2 || x.rank() != 1 || w.dim(0) != x.dim(0)) {
    throw ShapeError("matvec: weight " + shape_string(w.shape()) + " and vector " +
                     shape_string(x.shape()) + " do not agree");
  }
  const std::size_t rows = w.dim(0);
  const std::size_t cols = w.dim(1);
  BasicTensor<T> out(Shape{cols});
  for (std::size_t c = 0; c < rows; ++c) {
    const T xc = x[c];
    const T* row = w.raw() + c * cols;
    for (std::size_t k = 0; k < cols; ++k) out[k] += row[k] * xc;
  }
  debug_check_finite(out, "matvec");
  return out;
}

}  // namespace hccr
