#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "siamtrack/error.hpp"

namespace siamtrack {

struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::size_t size() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

inline std::string Shape::str() const {
  return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
         std::to_string(w) + ")";
}

// Dense NCHW array. Every tensor in the library is four-dimensional; vectors
// and scalars use unit extents.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0)) : shape_(shape), data_(shape.size(), fill) {
    if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
      throw ShapeError("negative tensor extent " + shape.str());
    }
  }
  Tensor(int n, int c, int h, int w, T fill = T(0)) : Tensor(Shape{n, c, h, w}, fill) {}

  const Shape& shape() const { return shape_; }
  int n() const { return shape_.n; }
  int c() const { return shape_.c; }
  int h() const { return shape_.h; }
  int w() const { return shape_.w; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }

  std::size_t offset(int n, int c, int h, int w) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }
  T& at(int n, int c, int h, int w) { return data_[offset(n, c, h, w)]; }
  const T& at(int n, int c, int h, int w) const { return data_[offset(n, c, h, w)]; }

  T* plane(int n, int c) { return data_.data() + offset(n, c, 0, 0); }
  const T* plane(int n, int c) const { return data_.data() + offset(n, c, 0, 0); }
  T* sample(int n) { return data_.data() + offset(n, 0, 0, 0); }
  const T* sample(int n) const { return data_.data() + offset(n, 0, 0, 0); }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
  void zero() { fill(T(0)); }

  Tensor& operator+=(const Tensor& o) {
    require_same(o, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Tensor& operator*=(T s) {
    for (auto& v : data_) v *= s;
    return *this;
  }

  void require_same(const Tensor& o, const char* op) const {
    if (!(shape_ == o.shape_)) {
      throw ShapeError(std::string(op) + ": " + shape_.str() + " vs " + o.shape_.str());
    }
  }

  // Copies sample n of this tensor into a one-sample tensor.
  Tensor slice_sample(int n) const {
    Tensor out(Shape{1, shape_.c, shape_.h, shape_.w});
    std::copy_n(sample(n), out.size(), out.data());
    return out;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) out.data()[i] = static_cast<U>(data_[i]);
    return out;
  }

  bool operator==(const Tensor& o) const { return shape_ == o.shape_ && data_ == o.data_; }

 private:
  Shape shape_{};
  std::vector<T> data_;
};

// Concatenates one-sample (or multi-sample) tensors along the batch axis.
template <typename T>
Tensor<T> stack_batch(std::span<const Tensor<T>> parts) {
  if (parts.empty()) throw ShapeError("stack_batch of nothing");
  Shape s = parts[0].shape();
  int total = 0;
  for (const auto& p : parts) {
    if (p.c() != s.c || p.h() != s.h || p.w() != s.w) {
      throw ShapeError("stack_batch shape mismatch " + s.str() + " vs " + p.shape().str());
    }
    total += p.n();
  }
  Tensor<T> out(Shape{total, s.c, s.h, s.w});
  T* dst = out.data();
  for (const auto& p : parts) dst = std::copy(p.data(), p.data() + p.size(), dst);
  return out;
}

}  // namespace siamtrack
