#pragma once

// Multi-latent attention for one decoding token: the absorbed path attends
// directly over the cached latent vectors, the naive path reconstructs every
// head's full keys/values first. Both must agree.

#include <algorithm>
#include <concepts>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "hbsim/attention.hpp"
#include "hbsim/tensor.hpp"

namespace hbsim {

struct MlaShape {
  std::size_t heads = 1;
  std::size_t head_dim = 1;    // per-head query/key width (non-rotary part)
  std::size_t value_dim = 1;   // per-head value width
  std::size_t latent_dim = 1;  // c_KV width
  std::size_t rope_dim = 0;    // decoupled rotary width (q_R per head, shared k_R)
  std::size_t query_latent_dim = 1;
  std::size_t model_dim = 1;
};

template <std::floating_point T>
struct MlaWeights {
  Matrix<T> up_q;   // query_latent_dim x heads*head_dim
  Matrix<T> up_k;   // latent_dim x heads*head_dim
  Matrix<T> up_v;   // latent_dim x heads*value_dim
  Matrix<T> out;    // heads*value_dim x model_dim

  void validate(const MlaShape& s) const {
    auto check = [](const Matrix<T>& m, std::size_t r, std::size_t c, const char* name) {
      if (m.rows() != r || m.cols() != c) {
        throw std::invalid_argument(std::string("mla: weight ") + name + " has wrong shape");
      }
    };
    check(up_q, s.query_latent_dim, s.heads * s.head_dim, "up_q");
    check(up_k, s.latent_dim, s.heads * s.head_dim, "up_k");
    check(up_v, s.latent_dim, s.heads * s.value_dim, "up_v");
    check(out, s.heads * s.value_dim, s.model_dim, "out");
  }

  template <std::floating_point U>
  MlaWeights<U> cast() const {
    return {up_q.template cast<U>(), up_k.template cast<U>(), up_v.template cast<U>(),
            out.template cast<U>()};
  }
};

template <std::floating_point T>
struct LatentEntry {
  Vec<T> latent;  // c_KV
  Vec<T> rope;    // k_R, cached after rotation
};

template <std::floating_point T>
struct MlaQuery {
  Vec<T> latent;  // c_Q
  Vec<T> rope;    // q_R, heads*rope_dim
};

// Largest materialized tensor derived from the KV cache, in elements.
struct IntermediateTracker {
  std::size_t peak_elements = 0;
  std::size_t allocations = 0;

  void record(std::size_t elements) {
    peak_elements = std::max(peak_elements, elements);
    ++allocations;
  }
};

namespace detail {

inline void check_mla_inputs(const MlaShape& s, std::size_t q_latent, std::size_t q_rope,
                             std::size_t cache_size) {
  if (q_latent != s.query_latent_dim || q_rope != s.heads * s.rope_dim) {
    throw std::invalid_argument("mla: query dimension mismatch");
  }
  if (cache_size == 0) throw std::invalid_argument("mla: latent cache is empty");
}

template <std::floating_point T>
void check_entry(const MlaShape& s, const LatentEntry<T>& e) {
  if (e.latent.size() != s.latent_dim || e.rope.size() != s.rope_dim) {
    throw std::invalid_argument("mla: cache entry dimension mismatch");
  }
}

// Columns [h*width, (h+1)*width) of `v` (a concatenation of per-head slices).
template <std::floating_point T>
std::span<const T> head_slice(std::span<const T> v, std::size_t h, std::size_t width) {
  return v.subspan(h * width, width);
}

// Absorbed per-head queries: q_A[h] = (c_Q W_UQ)[h] W_UK[h]^T, concatenated with q_R[h].
template <std::floating_point T>
std::vector<Vec<T>> absorbed_queries(const MlaShape& s, const MlaQuery<T>& q,
                                     const MlaWeights<T>& w) {
  const Vec<T> q_c = vec_mat<T>(q.latent, w.up_q);
  std::vector<Vec<T>> out(s.heads, Vec<T>(s.latent_dim + s.rope_dim, T{0}));
  for (std::size_t h = 0; h < s.heads; ++h) {
    auto qh = head_slice<T>(q_c, h, s.head_dim);
    for (std::size_t j = 0; j < s.latent_dim; ++j) {
      auto wrow = w.up_k.row(j).subspan(h * s.head_dim, s.head_dim);
      out[h][j] = static_cast<T>(dot(qh, wrow));
    }
    auto qr = head_slice<T>(q.rope, h, s.rope_dim);
    std::copy(qr.begin(), qr.end(), out[h].begin() + static_cast<std::ptrdiff_t>(s.latent_dim));
  }
  return out;
}

}  // namespace detail

// Per-head logits computed with the absorbed query against the latent cache.
template <std::floating_point T>
Matrix<T> mla_absorbed_logits(const MlaShape& s, const MlaQuery<T>& q,
                              std::span<const LatentEntry<T>> cache, const MlaWeights<T>& w) {
  w.validate(s);
  detail::check_mla_inputs(s, q.latent.size(), q.rope.size(), cache.size());
  const auto qa = detail::absorbed_queries(s, q, w);
  Matrix<T> logits(s.heads, cache.size());
  for (std::size_t t = 0; t < cache.size(); ++t) {
    detail::check_entry(s, cache[t]);
    for (std::size_t h = 0; h < s.heads; ++h) {
      std::span<const T> qh = qa[h];
      logits(h, t) = static_cast<T>(dot(qh.first(s.latent_dim), std::span<const T>(cache[t].latent)) +
                                    dot(qh.subspan(s.latent_dim), std::span<const T>(cache[t].rope)));
    }
  }
  return logits;
}

// Per-head logits q_C k_C^T + q_R k_R^T with keys reconstructed per head, evaluated in Acc.
template <std::floating_point Acc = double, std::floating_point T>
Matrix<Acc> mla_naive_logits(const MlaShape& s, const MlaQuery<T>& q,
                             std::span<const LatentEntry<T>> cache, const MlaWeights<T>& w) {
  w.validate(s);
  detail::check_mla_inputs(s, q.latent.size(), q.rope.size(), cache.size());
  const auto wa = w.template cast<Acc>();
  const Vec<Acc> q_c = vec_mat<Acc>(cast_vec<Acc, T>(q.latent), wa.up_q);
  Matrix<Acc> logits(s.heads, cache.size());
  for (std::size_t t = 0; t < cache.size(); ++t) {
    detail::check_entry(s, cache[t]);
    const Vec<Acc> k_c = vec_mat<Acc>(cast_vec<Acc, T>(cache[t].latent), wa.up_k);
    for (std::size_t h = 0; h < s.heads; ++h) {
      Acc v = dot(detail::head_slice<Acc>(q_c, h, s.head_dim), detail::head_slice<Acc>(k_c, h, s.head_dim));
      v += dot(detail::head_slice<T>(q.rope, h, s.rope_dim), std::span<const T>(cache[t].rope));
      logits(h, t) = v;
    }
  }
  return logits;
}

// Absorbed path: tiled attention over latent blocks, then ((s c_KV) W_UV) W_O.
template <std::floating_point T>
Vec<T> mla_absorbed_attention(const MlaShape& s, const MlaQuery<T>& q,
                              std::span<const LatentEntry<T>> cache, const MlaWeights<T>& w,
                              std::size_t block_tokens = 64, IntermediateTracker* tracker = nullptr) {
  w.validate(s);
  detail::check_mla_inputs(s, q.latent.size(), q.rope.size(), cache.size());
  if (block_tokens == 0) throw std::invalid_argument("mla: block size must be positive");
  const auto qa = detail::absorbed_queries(s, q, w);

  std::vector<AttnPartial<T>> states(s.heads, AttnPartial<T>::empty(s.latent_dim));
  const std::size_t key_width = s.latent_dim + s.rope_dim;
  for (std::size_t first = 0; first < cache.size(); first += block_tokens) {
    const std::size_t rows = std::min(block_tokens, cache.size() - first);
    KvBlock<T> block{Matrix<T>(rows, key_width), Matrix<T>(rows, s.latent_dim)};
    if (tracker) tracker->record(rows * key_width);
    for (std::size_t r = 0; r < rows; ++r) {
      const auto& e = cache[first + r];
      detail::check_entry(s, e);
      auto krow = block.keys.row(r);
      std::copy(e.latent.begin(), e.latent.end(), krow.begin());
      std::copy(e.rope.begin(), e.rope.end(), krow.begin() + static_cast<std::ptrdiff_t>(s.latent_dim));
      std::copy(e.latent.begin(), e.latent.end(), block.values.row(r).begin());
    }
    for (std::size_t h = 0; h < s.heads; ++h) {
      tiled_attention_update<T>(qa[h], block, states[h]);
    }
  }

  Vec<T> o(s.heads * s.value_dim, T{0});
  for (std::size_t h = 0; h < s.heads; ++h) {
    for (std::size_t j = 0; j < s.latent_dim; ++j) {
      const T a = states[h].out[j];
      auto wrow = w.up_v.row(j).subspan(h * s.value_dim, s.value_dim);
      for (std::size_t c = 0; c < s.value_dim; ++c) o[h * s.value_dim + c] += a * wrow[c];
    }
  }
  return vec_mat<T>(o, w.out);
}

// Naive path: reconstruct q_C, every head's k_C / v_C, run plain attention per head.
template <std::floating_point Acc = double, std::floating_point T>
Vec<Acc> mla_naive_attention(const MlaShape& s, const MlaQuery<T>& q,
                             std::span<const LatentEntry<T>> cache, const MlaWeights<T>& w,
                             IntermediateTracker* tracker = nullptr) {
  w.validate(s);
  detail::check_mla_inputs(s, q.latent.size(), q.rope.size(), cache.size());
  const auto wa = w.template cast<Acc>();
  const std::size_t n = cache.size();
  const Vec<Acc> q_c = vec_mat<Acc>(cast_vec<Acc, T>(q.latent), wa.up_q);

  // Full per-head keys [k_C | k_R] and values for every cached token.
  const std::size_t key_width = s.head_dim + s.rope_dim;
  Matrix<Acc> keys(n, s.heads * key_width);
  Matrix<Acc> values(n, s.heads * s.value_dim);
  if (tracker) {
    tracker->record(keys.size());
    tracker->record(values.size());
  }
  for (std::size_t t = 0; t < n; ++t) {
    detail::check_entry(s, cache[t]);
    const Vec<Acc> c = cast_vec<Acc, T>(cache[t].latent);
    const Vec<Acc> k_c = vec_mat<Acc>(c, wa.up_k);
    const Vec<Acc> v_c = vec_mat<Acc>(c, wa.up_v);
    auto krow = keys.row(t);
    for (std::size_t h = 0; h < s.heads; ++h) {
      for (std::size_t j = 0; j < s.head_dim; ++j) krow[h * key_width + j] = k_c[h * s.head_dim + j];
      for (std::size_t j = 0; j < s.rope_dim; ++j) {
        krow[h * key_width + s.head_dim + j] = static_cast<Acc>(cache[t].rope[j]);
      }
    }
    std::copy(v_c.begin(), v_c.end(), values.row(t).begin());
  }

  Vec<Acc> o(s.heads * s.value_dim, Acc{0});
  for (std::size_t h = 0; h < s.heads; ++h) {
    Vec<Acc> qh(key_width);
    for (std::size_t j = 0; j < s.head_dim; ++j) qh[j] = q_c[h * s.head_dim + j];
    for (std::size_t j = 0; j < s.rope_dim; ++j) {
      qh[s.head_dim + j] = static_cast<Acc>(q.rope[h * s.rope_dim + j]);
    }
    Matrix<Acc> kh(n, key_width);
    Matrix<Acc> vh(n, s.value_dim);
    for (std::size_t t = 0; t < n; ++t) {
      auto src_k = keys.row(t).subspan(h * key_width, key_width);
      std::copy(src_k.begin(), src_k.end(), kh.row(t).begin());
      auto src_v = values.row(t).subspan(h * s.value_dim, s.value_dim);
      std::copy(src_v.begin(), src_v.end(), vh.row(t).begin());
    }
    const Vec<Acc> oh = naive_attention<Acc, Acc>(qh, kh, vh);
    std::copy(oh.begin(), oh.end(), o.begin() + static_cast<std::ptrdiff_t>(h * s.value_dim));
  }
  return vec_mat<Acc>(o, wa.out);
}

}  // namespace hbsim
