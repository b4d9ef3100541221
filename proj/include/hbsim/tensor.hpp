#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

namespace hbsim {

template <std::floating_point T>
using Vec = std::vector<T>;

// Dense row-major matrix. Elements must be finite on construction.
template <std::floating_point T>
class Matrix {
 public:
  Matrix() = default;

  Matrix(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), data_(rows * cols, T{0}) {}

  Matrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw std::invalid_argument("matrix shape " + std::to_string(rows_) + "x" +
                                  std::to_string(cols_) + " does not match " +
                                  std::to_string(data_.size()) + " elements");
    }
    for (T v : data_) {
      if (!std::isfinite(v)) throw std::invalid_argument("matrix element not finite");
    }
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<const T> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }
  std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }

  T operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }

  std::span<const T> data() const { return data_; }

  // Rows [first, first + count) as a new matrix.
  Matrix slice_rows(std::size_t first, std::size_t count) const {
    Matrix out(count, cols_);
    std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(first * cols_), count * cols_,
                out.data_.begin());
    return out;
  }

  template <std::floating_point U>
  Matrix<U> cast() const {
    Matrix<U> out(rows_, cols_);
    for (std::size_t r = 0; r < rows_; ++r) {
      auto dst = out.row(r);
      auto src = row(r);
      for (std::size_t c = 0; c < cols_; ++c) dst[c] = static_cast<U>(src[c]);
    }
    return out;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

template <std::floating_point U, std::floating_point T>
Vec<U> cast_vec(std::span<const T> v) {
  return Vec<U>(v.begin(), v.end());
}

template <std::floating_point T>
void require_finite(std::span<const T> v, const char* what) {
  for (T x : v) {
    if (!std::isfinite(x)) throw std::invalid_argument(std::string(what) + ": element not finite");
  }
}

template <typename A, typename B>
auto dot(const A& a, const B& b) {
  using R = std::common_type_t<std::remove_cvref_t<decltype(a[0])>, std::remove_cvref_t<decltype(b[0])>>;
  R acc{0};
  for (std::size_t i = 0; i < a.size(); ++i) acc += static_cast<R>(a[i]) * static_cast<R>(b[i]);
  return acc;
}

// Row vector times matrix: v (1 x rows) * m (rows x cols).
template <std::floating_point T>
Vec<T> vec_mat(std::span<const T> v, const Matrix<T>& m) {
  if (v.size() != m.rows()) throw std::invalid_argument("vec_mat: dimension mismatch");
  Vec<T> out(m.cols(), T{0});
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const T s = v[r];
    auto row = m.row(r);
    for (std::size_t c = 0; c < m.cols(); ++c) out[c] += s * row[c];
  }
  return out;
}

// Max-norm relative error of `got` against `ref`: max|got-ref| / max(max|ref|, floor).
template <std::floating_point T, std::floating_point U>
double rel_error(std::span<const T> got, std::span<const U> ref, double floor = 1e-30) {
  if (got.size() != ref.size()) throw std::invalid_argument("rel_error: length mismatch");
  double diff = 0.0;
  double scale = 0.0;
  for (std::size_t i = 0; i < got.size(); ++i) {
    diff = std::max(diff, std::abs(static_cast<double>(got[i]) - static_cast<double>(ref[i])));
    scale = std::max(scale, std::abs(static_cast<double>(ref[i])));
  }
  return diff / std::max(scale, floor);
}

}  // namespace hbsim
