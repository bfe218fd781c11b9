#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "bip/activation.hpp"
#include "bip/tensor.hpp"

namespace bip {

using Token = std::uint8_t;
using TokenSeq = std::vector<Token>;

/// Architecture of the stacked LM. Values describe the dense model; a pruned
/// model keeps this config and carries narrower per-block weight shapes.
struct ModelConfig {
  std::size_t d = 64;
  std::size_t n_heads = 4;
  std::size_t ffn_hidden = 128;
  std::size_t n_blocks = 2;
  std::size_t vocab = 256;
  std::size_t max_seq = 512;
  ActivationKind activation = ActivationKind::GeLU;
  bool causal = true;
  bool prenorm = false;
  bool gated = false;

  std::size_t head_dim() const { return d / n_heads; }
  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// One transformer block. Wq/Wk/Wv are d×(heads·head_dim), Wo is
/// (heads·head_dim)×d, Wu and Wg are d×F, Wd is F×d. Wg is empty unless the
/// model is gated.
template <typename T>
struct BasicBlockWeights {
  BasicMatrix<T> wq, wk, wv, wo, wu, wd, wg;

  std::size_t attn_width() const { return wq.cols(); }
  std::size_t ffn_width() const { return wu.cols(); }
  std::size_t head_count(const ModelConfig& cfg) const { return wq.cols() / cfg.head_dim(); }
  bool gated() const { return !wg.empty(); }

  void validate(const ModelConfig& cfg) const;

  template <typename U>
  BasicBlockWeights<U> cast() const {
    return {wq.template cast<U>(), wk.template cast<U>(), wv.template cast<U>(),
            wo.template cast<U>(), wu.template cast<U>(), wd.template cast<U>(),
            wg.template cast<U>()};
  }

  friend bool operator==(const BasicBlockWeights&, const BasicBlockWeights&) = default;
};

template <typename T>
struct BasicModel {
  ModelConfig config;
  BasicMatrix<T> embedding;  // vocab × d
  BasicMatrix<T> position;   // max_seq × d, learned additive
  std::vector<BasicBlockWeights<T>> blocks;
  BasicMatrix<T> lm_head;    // d × vocab

  void validate() const;

  template <typename U>
  BasicModel<U> cast() const {
    BasicModel<U> out{config, embedding.template cast<U>(), position.template cast<U>(), {},
                      lm_head.template cast<U>()};
    for (const auto& b : blocks) out.blocks.push_back(b.template cast<U>());
    return out;
  }

  friend bool operator==(const BasicModel&, const BasicModel&) = default;
};

using BlockWeights = BasicBlockWeights<float>;
using Model = BasicModel<float>;

/// Visits every parameter matrix in a fixed canonical order. Empty matrices
/// (Wg of an ungated model) are skipped.
template <typename ModelT, typename Fn>
void for_each_parameter(ModelT& m, Fn&& fn) {
  fn(std::string("embedding"), m.embedding);
  fn(std::string("position"), m.position);
  for (std::size_t l = 0; l < m.blocks.size(); ++l) {
    auto& b = m.blocks[l];
    const std::string p = "block" + std::to_string(l) + "/";
    fn(p + "wq", b.wq);
    fn(p + "wk", b.wk);
    fn(p + "wv", b.wv);
    fn(p + "wo", b.wo);
    fn(p + "wu", b.wu);
    fn(p + "wd", b.wd);
    if (!b.wg.empty()) fn(p + "wg", b.wg);
  }
  fn(std::string("lm_head"), m.lm_head);
}

/// Zero-valued model with the dense shapes of `cfg`.
template <typename T>
BasicModel<T> zero_model(const ModelConfig& cfg);

/// Gaussian init: fan-in scaled projections, residual outputs additionally
/// scaled by 1/sqrt(2L), embeddings at 0.02.
Model init_model(const ModelConfig& cfg, std::uint64_t seed);

/// Random block with N(0, stddev²) entries; used by the oracle and bound checks.
BlockWeights random_block(const ModelConfig& cfg, std::uint64_t seed, float stddev);

/// Per-unit keep flags. An empty vector means "no mask".
using ChannelMask = std::vector<std::uint8_t>;

struct BlockMask {
  ChannelMask head_channels;  // length attn_width, applied to columns of X^H
  ChannelMask ffn;            // length F, applied to columns of X^U
};

template <typename T>
struct BasicBlockTrace {
  BasicMatrix<T> x_in;          // X
  BasicMatrix<T> x_head_out;    // X^H after masking, before W^O
  BasicMatrix<T> x_mid;         // X'
  BasicMatrix<T> x_ffn_hidden;  // X^U = X'W^U after masking, before σ
  BasicMatrix<T> x_out;         // f(X)
};

using BlockTrace = BasicBlockTrace<float>;

/// One block on a single sequence x (T×d). Masks, when non-empty, zero
/// columns of X^H before W^O and columns of X^U before σ.
BlockTrace block_forward(const Matrix& x, const BlockWeights& w, const ModelConfig& cfg,
                         const ChannelMask& head_mask = {}, const ChannelMask& ffn_mask = {});

struct ForwardResult {
  Matrix logits;                   // T × vocab
  std::vector<BlockTrace> traces;  // one per block
};

/// Full LM forward on one sequence. `masks` is empty or has one entry per block.
ForwardResult model_forward(const Model& m, std::span<const Token> tokens,
                            std::span<const BlockMask> masks = {});

/// Logits only, without keeping traces.
Matrix model_logits(const Model& m, std::span<const Token> tokens,
                    std::span<const BlockMask> masks = {});

/// Expand per-head keep flags into per-channel flags over the attention width.
ChannelMask expand_head_mask(std::span<const std::uint8_t> keep_heads, std::size_t head_dim);

}  // namespace bip
