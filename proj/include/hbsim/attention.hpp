#pragma once

// Tiled (online-softmax) attention for a single query row, the pairwise
// partial-state reduction, and a naive reference at oracle precision.

#include <cmath>
#include <concepts>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "hbsim/tensor.hpp"

namespace hbsim {

// Running tiled-attention state. `out` is already normalized by `denom`.
// The empty state is (max = -inf, denom = 0, out = 0).
template <std::floating_point T>
struct AttnPartial {
  Vec<T> out;
  T max = -std::numeric_limits<T>::infinity();
  T denom = T{0};

  static AttnPartial empty(std::size_t dim) { return AttnPartial{Vec<T>(dim, T{0})}; }

  bool is_empty() const { return denom == T{0}; }
  std::size_t dim() const { return out.size(); }
};

template <std::floating_point T>
struct SoftmaxStep {
  T max;
  Vec<T> probs;  // e_i / l_i
  T alpha;       // rescale applied to the previous output
  T denom;
};

template <std::floating_point T>
struct KvBlock {
  Matrix<T> keys;
  Matrix<T> values;
};

namespace detail {

// exp(a - b) with exp(-inf - finite) = 0.
template <std::floating_point T>
T exp_diff(T a, T b) {
  if (a == -std::numeric_limits<T>::infinity()) return T{0};
  return std::exp(a - b);
}

}  // namespace detail

template <std::floating_point T>
SoftmaxStep<T> online_softmax_step(std::span<const T> logits, const AttnPartial<T>& prev) {
  if (logits.empty()) throw std::invalid_argument("online_softmax_step: empty block");
  T block_max = logits[0];
  for (T x : logits) block_max = std::max(block_max, x);
  const T m = std::max(prev.max, block_max);

  SoftmaxStep<T> step{m, Vec<T>(logits.size()), T{0}, T{0}};
  T sum{0};
  for (std::size_t i = 0; i < logits.size(); ++i) {
    step.probs[i] = std::exp(logits[i] - m);
    sum += step.probs[i];
  }
  const T carried = prev.denom * detail::exp_diff(prev.max, m);
  step.denom = carried + sum;
  step.alpha = carried / step.denom;
  for (T& p : step.probs) p /= step.denom;
  return step;
}

// One iteration of the tiled loop: logits = q K^T, softmax update, O <- alpha O + p V.
template <std::floating_point T>
void tiled_attention_update(std::span<const T> query, const KvBlock<T>& block,
                            AttnPartial<T>& state) {
  const std::size_t d = query.size();
  if (block.keys.cols() != d || block.values.cols() != state.dim()) {
    throw std::invalid_argument("tiled_attention: dimension mismatch");
  }
  if (block.keys.rows() != block.values.rows() || block.keys.rows() == 0) {
    throw std::invalid_argument("tiled_attention: block must hold 1..b matching key/value rows");
  }
  Vec<T> logits(block.keys.rows());
  for (std::size_t r = 0; r < logits.size(); ++r) {
    logits[r] = static_cast<T>(dot(query, block.keys.row(r)));
  }
  auto step = online_softmax_step<T>(logits, state);
  for (T& o : state.out) o *= step.alpha;
  for (std::size_t r = 0; r < logits.size(); ++r) {
    auto v = block.values.row(r);
    for (std::size_t c = 0; c < v.size(); ++c) state.out[c] += step.probs[r] * v[c];
  }
  state.max = step.max;
  state.denom = step.denom;
}

template <std::floating_point T>
AttnPartial<T> tiled_attention(std::span<const T> query, std::span<const KvBlock<T>> blocks) {
  const std::size_t value_dim = blocks.empty() ? query.size() : blocks.front().values.cols();
  auto state = AttnPartial<T>::empty(value_dim);
  for (const auto& block : blocks) tiled_attention_update(query, block, state);
  return state;
}

// Pairwise reduction of two partial states; the empty state is the identity.
template <std::floating_point T>
AttnPartial<T> combine_partials(const AttnPartial<T>& a, const AttnPartial<T>& b) {
  if (a.dim() != b.dim()) throw std::invalid_argument("combine_partials: length mismatch");
  if (a.is_empty()) return b;
  if (b.is_empty()) return a;
  const T m = std::max(a.max, b.max);
  const T ea = a.denom * detail::exp_diff(a.max, m);
  const T eb = b.denom * detail::exp_diff(b.max, m);
  const T l = ea + eb;
  const T wa = ea / l;
  const T wb = eb / l;
  AttnPartial<T> out{Vec<T>(a.dim()), m, l};
  for (std::size_t i = 0; i < out.out.size(); ++i) out.out[i] = wa * a.out[i] + wb * b.out[i];
  return out;
}

// softmax(q K^T) V with one global max-subtracted softmax, evaluated in Acc.
template <std::floating_point Acc = double, std::floating_point T>
Vec<Acc> naive_attention(std::span<const T> query, const Matrix<T>& keys, const Matrix<T>& values) {
  if (keys.cols() != query.size() || keys.rows() != values.rows()) {
    throw std::invalid_argument("naive_attention: dimension mismatch");
  }
  if (keys.rows() == 0) throw std::invalid_argument("naive_attention: no keys");
  std::vector<Acc> logits(keys.rows());
  for (std::size_t r = 0; r < keys.rows(); ++r) {
    Acc s{0};
    auto k = keys.row(r);
    for (std::size_t c = 0; c < k.size(); ++c) s += static_cast<Acc>(query[c]) * static_cast<Acc>(k[c]);
    logits[r] = s;
  }
  Acc m = logits[0];
  for (Acc x : logits) m = std::max(m, x);
  Acc total{0};
  for (Acc& x : logits) {
    x = std::exp(x - m);
    total += x;
  }
  Vec<Acc> out(values.cols(), Acc{0});
  for (std::size_t r = 0; r < values.rows(); ++r) {
    const Acc w = logits[r] / total;
    auto v = values.row(r);
    for (std::size_t c = 0; c < v.size(); ++c) out[c] += w * static_cast<Acc>(v[c]);
  }
  return out;
}

// Split `keys`/`values` into consecutive blocks of the given row counts.
template <std::floating_point T>
std::vector<KvBlock<T>> split_blocks(const Matrix<T>& keys, const Matrix<T>& values,
                                     std::span<const std::size_t> sizes) {
  std::vector<KvBlock<T>> blocks;
  std::size_t first = 0;
  for (std::size_t n : sizes) {
    if (first + n > keys.rows()) throw std::invalid_argument("split_blocks: sizes exceed rows");
    blocks.push_back({keys.slice_rows(first, n), values.slice_rows(first, n)});
    first += n;
  }
  if (first != keys.rows()) throw std::invalid_argument("split_blocks: sizes do not cover rows");
  return blocks;
}

}  // namespace hbsim
