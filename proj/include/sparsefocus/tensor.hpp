#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "sparsefocus/errors.hpp"

namespace sf {

using Dims = std::vector<std::size_t>;

inline std::size_t dims_product(const Dims& dims) {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string dims_string(const Dims& dims) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims.size(); ++i) os << (i ? "," : "") << dims[i];
  os << ']';
  return os.str();
}

/// Dense row-major array. `T` is float for training and double for
/// finite-difference gradient checks.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Dims dims, T fill = T{0}) : dims_(std::move(dims)) {
    check_dims();
    data_.assign(dims_product(dims_), fill);
  }

  Tensor(Dims dims, std::vector<T> data) : dims_(std::move(dims)), data_(std::move(data)) {
    check_dims();
    if (data_.size() != dims_product(dims_)) {
      throw ShapeError("Tensor", "data", "expected " + std::to_string(dims_product(dims_)) +
                                             " values for " + dims_string(dims_) + ", got " +
                                             std::to_string(data_.size()));
    }
  }

  const Dims& dims() const noexcept { return dims_; }
  std::size_t rank() const noexcept { return dims_.size(); }
  std::size_t dim(std::size_t axis) const { return dims_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  T* raw() noexcept { return data_.data(); }
  const T* raw() const noexcept { return data_.data(); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // NCHW accessor for rank-4 tensors.
  T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[((n * dims_[1] + c) * dims_[2] + h) * dims_[3] + w];
  }
  const T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[((n * dims_[1] + c) * dims_[2] + h) * dims_[3] + w];
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor reshaped(Dims dims) const {
    if (dims_product(dims) != size()) {
      throw ShapeError("reshape", "size", dims_string(dims_) + " -> " + dims_string(dims));
    }
    return Tensor(std::move(dims), data_);
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(dims_, std::move(out));
  }

  bool operator==(const Tensor&) const = default;

 private:
  void check_dims() const {
    for (std::size_t i = 0; i < dims_.size(); ++i) {
      if (dims_[i] == 0) throw ShapeError("Tensor", "axis " + std::to_string(i), "zero extent");
    }
  }

  Dims dims_;
  std::vector<T> data_;
};

template <typename T>
void require_rank(const Tensor<T>& t, std::size_t rank, const char* op, const char* what) {
  if (t.rank() != rank) {
    throw ShapeError(op, what, "expected rank " + std::to_string(rank) + ", got " +
                                   dims_string(t.dims()));
  }
}

}  // namespace sf
