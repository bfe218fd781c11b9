#pragma once

// Forward pass with every intermediate retained, shared by the model module
// (traces) and the trainer (reverse mode).

#include <algorithm>
#include <span>
#include <vector>

#include "bip/model.hpp"

namespace bip::detail {

inline constexpr double kRmsEps = 1e-5;

template <typename T>
struct BlockCache {
  BasicMatrix<T> x_in;
  BasicMatrix<T> attn_in;  // rms(X) under prenorm, else X
  std::vector<T> attn_inv_rms;
  BasicMatrix<T> q, k, v;
  std::vector<BasicMatrix<T>> probs;  // [segment * heads + head], len×len
  BasicMatrix<T> xh;                  // masked X^H
  BasicMatrix<T> x_mid;
  BasicMatrix<T> ffn_in;  // rms(X') under prenorm, else X'
  std::vector<T> ffn_inv_rms;
  BasicMatrix<T> xu;  // masked X^U
  BasicMatrix<T> xg;  // gate pre-activation, gated only
  BasicMatrix<T> hidden;
  BasicMatrix<T> x_out;
};

template <typename T>
struct ModelCache {
  std::vector<BlockCache<T>> blocks;
  BasicMatrix<T> head_in;  // input to lm_head
  std::vector<T> head_inv_rms;
  BasicMatrix<T> logits;
};

/// Rows [r0, r0+len) and columns [c0, c0+width) of m as a new matrix.
template <typename T>
BasicMatrix<T> head_slice(const BasicMatrix<T>& m, std::size_t r0, std::size_t len, std::size_t c0,
                          std::size_t width) {
  BasicMatrix<T> out(len, width);
  for (std::size_t t = 0; t < len; ++t) {
    const T* src = m.data() + (r0 + t) * m.cols() + c0;
    std::copy(src, src + width, out.data() + t * width);
  }
  return out;
}

/// dst[r0 + t, c0 + e] += src[t, e]
template <typename T>
void head_scatter(const BasicMatrix<T>& src, BasicMatrix<T>& dst, std::size_t r0, std::size_t c0) {
  for (std::size_t t = 0; t < src.rows(); ++t) {
    T* out = dst.data() + (r0 + t) * dst.cols() + c0;
    const T* in = src.data() + t * src.cols();
    for (std::size_t e = 0; e < src.cols(); ++e) out[e] += in[e];
  }
}

template <typename T>
BasicMatrix<T> rms_normalize(const BasicMatrix<T>& x, std::vector<T>& inv_rms);

/// dX given dY for y = rms_normalize(x).
template <typename T>
BasicMatrix<T> rms_normalize_backward(const BasicMatrix<T>& y, std::span<const T> inv_rms,
                                      const BasicMatrix<T>& dy);

/// Rows of `x` are the concatenation of sequences with lengths `segments`;
/// attention never crosses a segment boundary.
template <typename T>
void block_forward_cached(const BasicMatrix<T>& x, const BasicBlockWeights<T>& w,
                          const ModelConfig& cfg, std::span<const std::size_t> segments,
                          const ChannelMask& head_mask, const ChannelMask& ffn_mask,
                          BlockCache<T>& cache);

template <typename T>
void model_forward_cached(const BasicModel<T>& m, std::span<const Token> tokens,
                          std::span<const std::size_t> segments, std::span<const BlockMask> masks,
                          ModelCache<T>& cache);

}  // namespace bip::detail
