#pragma once

// Random generators and independent reference computations shared by tests.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "hbsim/tensor.hpp"

namespace hbsim::testing {

inline std::vector<double> random_vec(std::mt19937_64& rng, std::size_t n, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  std::vector<double> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

template <std::floating_point T>
Matrix<T> random_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  std::vector<T> data(rows * cols);
  for (auto& x : data) x = static_cast<T>(dist(rng));
  return Matrix<T>(rows, cols, std::move(data));
}

template <std::floating_point T>
std::vector<T> random_vec_t(std::mt19937_64& rng, std::size_t n, double scale = 1.0) {
  std::vector<T> out;
  for (double x : random_vec(rng, n, scale)) out.push_back(static_cast<T>(x));
  return out;
}

// Random composition of `total` into parts of size 1..max_part.
inline std::vector<std::size_t> random_partition(std::mt19937_64& rng, std::size_t total,
                                                 std::size_t max_part) {
  std::vector<std::size_t> parts;
  std::size_t left = total;
  while (left > 0) {
    std::uniform_int_distribution<std::size_t> d(1, std::min(left, max_part));
    parts.push_back(d(rng));
    left -= parts.back();
  }
  return parts;
}

// Plain softmax over a whole logit sequence.
inline std::vector<double> brute_softmax(const std::vector<double>& x) {
  double m = x[0];
  for (double v : x) m = std::max(m, v);
  double sum = 0;
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) sum += (out[i] = std::exp(x[i] - m));
  for (double& v : out) v /= sum;
  return out;
}

}  // namespace hbsim::testing
