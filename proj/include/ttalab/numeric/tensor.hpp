#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "ttalab/numeric/dual.hpp"
#include "ttalab/numeric/errors.hpp"

namespace ttalab {

// Dense rank-1 or rank-2 array stored row-major. A rank-1 tensor of length n
// behaves as a 1×n row for the row accessors.
template <class T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;

  explicit BasicTensor(std::vector<std::size_t> shape, T fill = T{})
      : shape_(std::move(shape)) {
    check_shape();
    data_.assign(count(shape_), fill);
  }

  BasicTensor(std::vector<std::size_t> shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape();
    if (count(shape_) != data_.size()) {
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape product " + std::to_string(count(shape_)));
    }
  }

  static BasicTensor matrix(std::size_t rows, std::size_t cols, T fill = T{}) {
    return BasicTensor({rows, cols}, fill);
  }
  static BasicTensor vector(std::size_t n, T fill = T{}) { return BasicTensor({n}, fill); }
  static BasicTensor vector(std::vector<T> values) {
    const std::size_t n = values.size();
    return BasicTensor({n}, std::move(values));
  }

  static BasicTensor from_rows(std::initializer_list<std::initializer_list<T>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<T> flat;
    flat.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw DimensionError("ragged rows in tensor literal");
      flat.insert(flat.end(), row.begin(), row.end());
    }
    return BasicTensor({r, c}, std::move(flat));
  }

  static BasicTensor identity(std::size_t n) {
    BasicTensor out = matrix(n, n, T{});
    for (std::size_t i = 0; i < n; ++i) out(i, i) = T{1.0};
    return out;
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t rows() const { return shape_.size() == 2 ? shape_[0] : 1; }
  std::size_t cols() const { return shape_.empty() ? 0 : shape_.back(); }

  T& operator()(std::size_t i, std::size_t j) { return data_[i * cols() + j]; }
  const T& operator()(std::size_t i, std::size_t j) const { return data_[i * cols() + j]; }
  T& operator[](std::size_t k) { return data_[k]; }
  const T& operator[](std::size_t k) const { return data_[k]; }

  std::span<T> row(std::size_t i) { return {data_.data() + i * cols(), cols()}; }
  std::span<const T> row(std::size_t i) const { return {data_.data() + i * cols(), cols()}; }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  const std::vector<T>& data() const { return data_; }

  bool operator==(const BasicTensor& other) const = default;

 private:
  static std::size_t count(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (auto s : shape) n *= s;
    return n;
  }

  void check_shape() const {
    if (shape_.empty() || shape_.size() > 2) {
      throw DimensionError("tensor rank must be 1 or 2, got " + std::to_string(shape_.size()));
    }
  }

  std::vector<std::size_t> shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<double>;

std::string shape_string(const std::vector<std::size_t>& shape);

// Plain matrix product. Throws DimensionError when inner dimensions differ.
template <class A, class B>
auto matmul(const BasicTensor<A>& a, const BasicTensor<B>& b) {
  using R = decltype(A{} * B{});
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
    throw DimensionError("matmul shape mismatch: " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  auto out = BasicTensor<R>::matrix(m, n, R{});
  for (std::size_t i = 0; i < m; ++i) {
    auto dst = out.row(i);
    for (std::size_t p = 0; p < k; ++p) {
      const A aip = a(i, p);
      const auto src = b.row(p);
      for (std::size_t j = 0; j < n; ++j) dst[j] += aip * src[j];
    }
  }
  return out;
}

template <class T>
BasicTensor<T> transpose(const BasicTensor<T>& a) {
  auto out = BasicTensor<T>::matrix(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

// Row-wise log-softmax with max subtraction.
template <class T>
BasicTensor<T> log_softmax(const BasicTensor<T>& logits) {
  using std::exp;
  using std::log;
  BasicTensor<T> out = logits;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto r = out.row(i);
    double m = value_of(r[0]);
    for (const auto& x : r) m = std::max(m, value_of(x));
    T sum{0.0};
    for (auto& x : r) {
      x = x - m;
      sum += exp(x);
    }
    const T lse = log(sum);
    for (auto& x : r) x = x - lse;
  }
  return out;
}

template <class T>
BasicTensor<T> softmax(const BasicTensor<T>& logits) {
  using std::exp;
  BasicTensor<T> out = logits;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto r = out.row(i);
    double m = value_of(r[0]);
    for (const auto& x : r) m = std::max(m, value_of(x));
    T sum{0.0};
    for (auto& x : r) {
      x = exp(x - m);
      sum += x;
    }
    for (auto& x : r) x = x / sum;
  }
  return out;
}

// log Σ_j exp(x_j) of a single row.
template <class T>
T log_sum_exp(std::span<const T> row) {
  using std::exp;
  using std::log;
  double m = value_of(row[0]);
  for (const auto& x : row) m = std::max(m, value_of(x));
  T sum{0.0};
  for (const auto& x : row) sum += exp(x - m);
  return log(sum) + m;
}

// Index of the row maximum; ties go to the lowest index.
template <class T>
std::size_t argmax(std::span<const T> row) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < row.size(); ++j)
    if (value_of(row[j]) > value_of(row[best])) best = j;
  return best;
}

template <class T>
  requires(!std::is_const_v<T>)
T log_sum_exp(std::span<T> row) {
  return log_sum_exp(std::span<const T>(row));
}

template <class T>
  requires(!std::is_const_v<T>)
std::size_t argmax(std::span<T> row) {
  return argmax(std::span<const T>(row));
}

bool all_finite(const Tensor& t);
double max_abs(const Tensor& t);
double max_abs_diff(const Tensor& a, const Tensor& b);

// Shortest decimal text that reads back to the same double.
std::string format_double(double v);

}  // namespace ttalab
