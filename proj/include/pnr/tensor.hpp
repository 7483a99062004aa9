#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "pnr/error.hpp"

namespace pnr {

// N x C x H x W, row-major with W fastest.
struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::size_t size() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  bool valid() const { return n > 0 && c > 0 && h > 0 && w > 0; }
  bool operator==(const Shape&) const = default;

  std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + ")";
  }
};

template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0)) : shape_(shape), data_(shape.size(), fill) {
    if (!shape.valid()) throw UsageError("tensor shape must be positive, got " + shape.str());
  }
  Tensor(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    if (!shape.valid()) throw UsageError("tensor shape must be positive, got " + shape.str());
    if (data_.size() != shape.size()) throw UsageError("tensor data size does not match " + shape.str());
  }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> span() { return data_; }
  std::span<const T> span() const { return data_; }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::size_t index(int n, int c, int y, int x) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }
  T& at(int n, int c, int y, int x) { return data_[index(n, c, y, x)]; }
  const T& at(int n, int c, int y, int x) const { return data_[index(n, c, y, x)]; }

  // One H x W plane.
  std::span<T> plane(int n, int c) { return {data_.data() + index(n, c, 0, 0), shape_.plane()}; }
  std::span<const T> plane(int n, int c) const {
    return {data_.data() + index(n, c, 0, 0), shape_.plane()};
  }
  // All C planes of one batch item.
  std::span<T> item(int n) { return {data_.data() + index(n, 0, 0, 0), shape_.plane() * shape_.c}; }
  std::span<const T> item(int n) const {
    return {data_.data() + index(n, 0, 0, 0), shape_.plane() * shape_.c};
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  template <class U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

 private:
  Shape shape_{};
  std::vector<T> data_;
};

using ImageTensor = Tensor<float>;

inline void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (!(a == b)) throw UsageError(std::string(what) + ": shape mismatch " + a.str() + " vs " + b.str());
}

template <class T>
void require_finite(const Tensor<T>& t, const char* what) {
  if (!t.all_finite()) throw NumericError(std::string(what) + ": non-finite values");
}

// Mirror index into [0, n) without repeating the edge sample (numpy "reflect"),
// folded repeatedly so any offset is valid.
inline int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

// Pairwise (cascade) summation.
template <class T>
double pairwise_sum(std::span<const T> v) {
  constexpr std::size_t kLeaf = 128;
  if (v.size() <= kLeaf) {
    double s = 0.0;
    for (T x : v) s += static_cast<double>(x);
    return s;
  }
  const std::size_t half = v.size() / 2;
  return pairwise_sum(v.first(half)) + pairwise_sum(v.subspan(half));
}

// Pull a single item out of a batch.
template <class T>
Tensor<T> batch_item(const Tensor<T>& t, int n) {
  Shape s = t.shape();
  s.n = 1;
  auto src = t.item(n);
  return Tensor<T>(s, std::vector<T>(src.begin(), src.end()));
}

// Stack equally-shaped single-item tensors along N.
template <class T>
Tensor<T> stack_batch(std::span<const Tensor<T>> items) {
  if (items.empty()) throw UsageError("stack_batch: no items");
  Shape s = items.front().shape();
  const int per = s.n;
  s.n = per * static_cast<int>(items.size());
  std::vector<T> data;
  data.reserve(s.size());
  for (const auto& it : items) {
    require_same_shape(items.front().shape(), it.shape(), "stack_batch");
    data.insert(data.end(), it.vec().begin(), it.vec().end());
  }
  return Tensor<T>(s, std::move(data));
}

}  // namespace pnr
