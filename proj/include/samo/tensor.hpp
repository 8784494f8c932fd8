// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "samo/error.hpp"
#include "samo/half.hpp"

namespace samo {

inline std::size_t numel(std::span<const std::size_t> shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

// Dense row-major N-d array over Half or float. No broadcasting anywhere:
// shapes must match exactly, which keeps the correctness surface small.
// All free functions below are pure.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape)
      : shape_(std::move(shape)), data_(numel(shape_)) {
    check_shape();
  }

  Tensor(std::vector<std::size_t> shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape();
    if (data_.size() != numel(shape_)) {
      throw DimensionError("tensor data length does not match shape");
    }
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<const T> flat() const { return data_; }
  std::span<T> flat() { return data_; }

  T operator[](std::size_t i) const { return data_[i]; }
  T& operator[](std::size_t i) { return data_[i]; }

  // 2-D accessors for the matmul-facing call sites.
  std::size_t rows() const { return shape_.at(0); }
  std::size_t cols() const { return shape_.at(1); }
  T at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  T& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }

  friend bool operator==(const Tensor& a, const Tensor& b) = default;

 private:
  void check_shape() const {
    for (std::size_t e : shape_) {
      if (e == 0) throw DimensionError("tensor extents must be positive");
    }
  }

  std::vector<std::size_t> shape_;
  std::vector<T> data_;
};

namespace detail {

inline void require_same_shape(std::span<const std::size_t> a,
                               std::span<const std::size_t> b) {
  if (a.size() != b.size() || !std::equal(a.begin(), a.end(), b.begin())) {
    throw DimensionError("operand shapes differ");
  }
}

}  // namespace detail

// M x K times K x N. Every output element accumulates the element products
// in single precision, ascending in k, and rounds once at the end. The
// Half x Half element product is exact in single precision (11-bit
// significands), so the only roundings are the adds and the final store.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
    throw DimensionError("matmul expects MxK and KxN operands");
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor<T> out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      float acc = 0.0f;
      for (std::size_t kk = 0; kk < k; ++kk) {
        acc += to_float(a.at(i, kk)) * to_float(b.at(kk, j));
      }
      out.at(i, j) = from_float<T>(acc);
    }
  }
  return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  if (a.rank() != 2) throw DimensionError("transpose expects a 2-D tensor");
  Tensor<T> out({a.cols(), a.rows()});
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) {
      out.at(j, i) = a.at(i, j);
    }
  }
  return out;
}

// single -> half is round-to-nearest-even, half -> single is exact.
template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& t) {
  std::vector<To> data(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    data[i] = from_float<To>(to_float(t[i]));
  }
  return Tensor<To>(t.shape(), std::move(data));
}

// Element-wise family. Half variants round each result to half; float
// variants are plain single-precision ops.
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a.shape(), b.shape());
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) {
    out[i] = from_float<T>(to_float(a[i]) + to_float(b[i]));
  }
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a.shape(), b.shape());
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) {
    out[i] = from_float<T>(to_float(a[i]) * to_float(b[i]));
  }
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, float s) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) {
    out[i] = from_float<T>(to_float(a[i]) * s);
  }
  return out;
}

template <typename T>
Tensor<T> sqrt_elem(const Tensor<T>& a) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) {
    out[i] = from_float<T>(std::sqrt(to_float(a[i])));
  }
  return out;
}

// compare: 1 where a > b, else 0.
template <typename T>
Tensor<T> greater(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a.shape(), b.shape());
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) {
    out[i] = from_float<T>(to_float(a[i]) > to_float(b[i]) ? 1.0f : 0.0f);
  }
  return out;
}

template <typename T>
bool bit_equal(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if constexpr (std::is_same_v<T, Half>) {
      if (a[i].bits() != b[i].bits()) return false;
    } else {
      if (std::bit_cast<std::uint32_t>(a[i]) != std::bit_cast<std::uint32_t>(b[i]))
        return false;
    }
  }
  return true;
}

}  // namespace samo
