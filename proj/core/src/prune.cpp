#include "bip/prune.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace bip::prune {

SparsityTarget::SparsityTarget(double r) : r_(r) {
  if (!(r >= 0.0 && r < 1.0)) {
    throw std::invalid_argument("sparsity ratio must lie in [0, 1), got " + std::to_string(r));
  }
}

std::size_t keep_count(std::size_t n, double r) {
  // The epsilon keeps exact halves like 0.7 * 5 = 3.4999999999999996 rounding up.
  const double kept = std::floor((1.0 - r) * static_cast<double>(n) + 0.5 + 1e-9);
  return std::max<std::size_t>(1, static_cast<std::size_t>(kept));
}

namespace {

std::size_t popcount(const std::vector<std::uint8_t>& v) {
  return static_cast<std::size_t>(std::count_if(v.begin(), v.end(), [](auto x) { return x != 0; }));
}

std::vector<std::uint8_t> keep_flags(std::span<const float> scores, std::size_t k) {
  std::vector<std::uint8_t> flags(scores.size(), 0);
  for (auto i : top_k_indices(scores, k)) flags[i] = 1;
  return flags;
}

std::vector<std::size_t> kept_indices(const std::vector<std::uint8_t>& flags) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < flags.size(); ++i)
    if (flags[i]) out.push_back(i);
  return out;
}

}  // namespace

std::vector<std::size_t> top_k_indices(std::span<const float> scores, std::size_t k) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  order.resize(std::min(k, order.size()));
  std::sort(order.begin(), order.end());
  return order;
}

void PruneMask::validate(const Model& model) const {
  if (blocks.size() != model.blocks.size()) {
    throw std::invalid_argument("mask has " + std::to_string(blocks.size()) + " blocks, model has " +
                                std::to_string(model.blocks.size()));
  }
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    const auto& b = blocks[l];
    const auto& w = model.blocks[l];
    const std::string where = "block " + std::to_string(l) + ": ";
    if (b.keep_heads.size() != w.head_count(model.config) || b.keep_ffn.size() != w.ffn_width()) {
      throw std::invalid_argument(where + "mask shape does not match model widths");
    }
    const std::size_t heads = popcount(b.keep_heads), ffn = popcount(b.keep_ffn);
    if (heads == 0 || ffn == 0) throw std::invalid_argument(where + "mask keeps no head or no FFN channel");
    if (ratio) {
      if (heads != keep_count(b.keep_heads.size(), *ratio) ||
          ffn != keep_count(b.keep_ffn.size(), *ratio)) {
        throw std::invalid_argument(where + "mask popcount does not match ratio " + std::to_string(*ratio));
      }
    }
  }
}

std::vector<BlockMask> PruneMask::channel_masks(const ModelConfig& cfg) const {
  std::vector<BlockMask> out;
  out.reserve(blocks.size());
  for (const auto& b : blocks) out.push_back({expand_head_mask(b.keep_heads, cfg.head_dim()), b.keep_ffn});
  return out;
}

PruneMask full_mask(const Model& model) {
  PruneMask m;
  for (const auto& w : model.blocks) {
    m.blocks.push_back({std::vector<std::uint8_t>(w.head_count(model.config), 1),
                        std::vector<std::uint8_t>(w.ffn_width(), 1)});
  }
  return m;
}

PruneMask select_masks(const score::ImportanceScores& scores, SparsityTarget target) {
  PruneMask mask;
  mask.ratio = target.r();
  for (const auto& b : scores.blocks) {
    mask.blocks.push_back({keep_flags(b.heads, keep_count(b.heads.size(), target.r())),
                           keep_flags(b.ffn, keep_count(b.ffn.size(), target.r()))});
  }
  return mask;
}

Model apply_prune(const Model& model, const PruneMask& mask) {
  model.validate();
  mask.validate(model);
  Model out = model;
  const std::size_t hd = model.config.head_dim();
  for (std::size_t l = 0; l < model.blocks.size(); ++l) {
    const auto& src = model.blocks[l];
    auto& dst = out.blocks[l];
    std::vector<std::size_t> attn_cols;
    for (auto h : kept_indices(mask.blocks[l].keep_heads))
      for (std::size_t j = h * hd; j < (h + 1) * hd; ++j) attn_cols.push_back(j);
    const auto ffn = kept_indices(mask.blocks[l].keep_ffn);

    dst.wq = select_cols(src.wq, std::span<const std::size_t>(attn_cols));
    dst.wk = select_cols(src.wk, std::span<const std::size_t>(attn_cols));
    dst.wv = select_cols(src.wv, std::span<const std::size_t>(attn_cols));
    dst.wo = select_rows(src.wo, std::span<const std::size_t>(attn_cols));
    dst.wu = select_cols(src.wu, std::span<const std::size_t>(ffn));
    dst.wd = select_rows(src.wd, std::span<const std::size_t>(ffn));
    if (src.gated()) dst.wg = select_cols(src.wg, std::span<const std::size_t>(ffn));
  }
  out.validate();
  return out;
}

ParamCounts count_prunable(const Model& model) {
  ParamCounts c;
  const std::uint64_t d = model.config.d;
  for (const auto& w : model.blocks) {
    c.head_params += 4 * d * w.attn_width();
    c.ffn_params += (w.gated() ? 3 : 2) * d * w.ffn_width();
  }
  c.other_params = model.embedding.size() + model.position.size() + model.lm_head.size();
  return c;
}

}  // namespace bip::prune
