#include "bip/score.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "bip/parallel.hpp"
#include "bip/rng.hpp"

namespace bip::score {

std::string to_string(MethodKind kind) {
  switch (kind) {
    case MethodKind::BIP:
      return "bip";
    case MethodKind::WandaLayer:
      return "wanda";
    case MethodKind::Magnitude:
      return "magnitude";
    case MethodKind::Random:
      return "random";
    case MethodKind::NISP:
      return "nisp";
  }
  return "unknown";
}

MethodKind parse_method(std::string_view name) {
  for (auto k : all_methods())
    if (to_string(k) == name) return k;
  if (name == "llm-pruner") {
    throw std::invalid_argument("method 'llm-pruner' is a named contender but is not implemented");
  }
  throw std::invalid_argument("unknown pruning method '" + std::string(name) + "'");
}

std::vector<MethodKind> all_methods() {
  return {MethodKind::BIP, MethodKind::WandaLayer, MethodKind::Magnitude, MethodKind::Random,
          MethodKind::NISP};
}

namespace {

const calib::BlockStats& block_stats(const calib::ActivationStats& stats, std::size_t block) {
  if (block >= stats.blocks.size()) {
    throw std::out_of_range("no activation stats for block " + std::to_string(block));
  }
  return stats.blocks[block];
}

void expect_len(std::size_t got, std::size_t want, const char* what) {
  if (got != want) {
    throw std::invalid_argument(std::string(what) + ": length " + std::to_string(got) + ", expected " +
                                std::to_string(want));
  }
}

std::vector<float> elementwise_product(std::span<const float> a, std::span<const float> b) {
  std::vector<float> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  return out;
}

}  // namespace

std::vector<float> score_ffn_channels(const calib::ActivationStats& stats, const BlockWeights& w,
                                      std::size_t block) {
  const auto& bs = block_stats(stats, block);
  expect_len(bs.mean_abs_xu.size(), w.ffn_width(), "mean_abs_xu vs W^D rows");
  expect_len(w.wd.rows(), w.ffn_width(), "W^D rows vs W^U cols");
  return elementwise_product(bs.mean_abs_xu, row_l1_sums(w.wd));
}

std::vector<float> propagation_vector(const BlockWeights& w) {
  if (w.wu.cols() != w.wd.rows()) {
    throw std::invalid_argument("W^U " + w.wu.shape_string() + " and W^D " + w.wd.shape_string() +
                                " do not chain");
  }
  // |W^D|·1 is the row L1 sum of W^D.
  const std::vector<float> down = row_l1_sums(w.wd);
  std::vector<float> v = abs_matvec(w.wu, down);
  for (auto& x : v) x += 1.0f;
  return v;
}

std::vector<float> score_msa_channels(const calib::ActivationStats& stats, const BlockWeights& w,
                                      std::size_t block, const ScoreConfig& cfg,
                                      ActivationKind activation) {
  const auto& bs = block_stats(stats, block);
  expect_len(bs.mean_abs_xh.size(), w.wo.rows(), "mean_abs_xh vs W^O rows");
  const std::vector<float> v = propagation_vector(w);
  std::vector<float> s = elementwise_product(bs.mean_abs_xh, abs_matvec(w.wo, v));
  if (cfg.include_constant_c) {
    const auto c = static_cast<float>(std::max(lipschitz_constant(activation), 1.0));
    for (auto& x : s) x *= c;
  }
  return s;
}

std::vector<float> aggregate_heads(std::span<const float> msa_channels, std::size_t n_heads) {
  if (n_heads == 0 || msa_channels.size() % n_heads != 0) {
    throw std::invalid_argument("cannot split " + std::to_string(msa_channels.size()) +
                                " channels into " + std::to_string(n_heads) + " equal heads");
  }
  const std::size_t hd = msa_channels.size() / n_heads;
  std::vector<float> heads(n_heads, 0.0f);
  for (std::size_t h = 0; h < n_heads; ++h) {
    float s = 0.0f;
    for (std::size_t j = h * hd; j < (h + 1) * hd; ++j) s += msa_channels[j];
    heads[h] = s;
  }
  return heads;
}

namespace {

BlockScores finish(std::vector<float> ffn, std::vector<float> msa, std::size_t n_heads) {
  BlockScores b;
  b.heads = aggregate_heads(msa, n_heads);
  b.ffn = std::move(ffn);
  b.msa_channels = std::move(msa);
  return b;
}

BlockScores magnitude_block(const BlockWeights& w, const ModelConfig& cfg) {
  // FFN channel j: |W^U col j|₁ + |W^D row j|₁ (+ |W^G col j|₁)
  std::vector<float> ffn = col_l1_sums(w.wu);
  const auto down = row_l1_sums(w.wd);
  for (std::size_t j = 0; j < ffn.size(); ++j) ffn[j] += down[j];
  if (w.gated()) {
    const auto gate = col_l1_sums(w.wg);
    for (std::size_t j = 0; j < ffn.size(); ++j) ffn[j] += gate[j];
  }

  // MSA channel j: |W^O row j|₁ plus its head's Q/K/V column mass shared equally.
  const std::size_t hd = cfg.head_dim();
  const std::size_t heads = w.head_count(cfg);
  std::vector<float> msa = row_l1_sums(w.wo);
  const auto q = col_l1_sums(w.wq), k = col_l1_sums(w.wk), v = col_l1_sums(w.wv);
  for (std::size_t h = 0; h < heads; ++h) {
    float mass = 0.0f;
    for (std::size_t j = h * hd; j < (h + 1) * hd; ++j) mass += q[j] + k[j] + v[j];
    const float share = mass / static_cast<float>(hd);
    for (std::size_t j = h * hd; j < (h + 1) * hd; ++j) msa[j] += share;
  }
  return finish(std::move(ffn), std::move(msa), heads);
}

BlockScores wanda_block(const calib::ActivationStats& stats, const BlockWeights& w,
                        const ModelConfig& cfg, std::size_t block) {
  std::vector<float> ffn = score_ffn_channels(stats, w, block);
  const auto& bs = block_stats(stats, block);
  expect_len(bs.mean_abs_xh.size(), w.wo.rows(), "mean_abs_xh vs W^O rows");
  std::vector<float> msa = elementwise_product(bs.mean_abs_xh, row_l1_sums(w.wo));
  return finish(std::move(ffn), std::move(msa), w.head_count(cfg));
}

std::vector<BlockScores> nisp_blocks(const Model& model) {
  const auto& cfg = model.config;
  std::vector<BlockScores> out(model.blocks.size());
  std::vector<float> iota(cfg.d, 1.0f);
  for (std::size_t l = model.blocks.size(); l-- > 0;) {
    const auto& w = model.blocks[l];
    std::vector<float> ffn = abs_matvec(w.wd, iota);
    std::vector<float> mid = abs_matvec(w.wu, ffn);
    for (std::size_t k = 0; k < mid.size(); ++k) mid[k] += iota[k];
    std::vector<float> msa = abs_matvec(w.wo, mid);

    // Into the block input through the residual and the value path.
    std::vector<float> in = abs_matvec(w.wv, msa);
    for (std::size_t k = 0; k < in.size(); ++k) in[k] += mid[k];
    // Rescale to mean 1; rankings inside each block are scale-free.
    const double mean = std::accumulate(in.begin(), in.end(), 0.0) / static_cast<double>(in.size());
    if (mean > 0.0)
      for (auto& x : in) x = static_cast<float>(x / mean);
    iota = std::move(in);

    out[l] = finish(std::move(ffn), std::move(msa), w.head_count(cfg));
  }
  return out;
}

std::vector<BlockScores> random_blocks(const Model& model, std::uint64_t seed) {
  Rng rng(seed, "random-scores");
  std::vector<BlockScores> out;
  for (const auto& w : model.blocks) {
    std::vector<float> ffn(w.ffn_width()), msa(w.attn_width());
    for (auto& x : ffn) x = static_cast<float>(rng.uniform());
    for (auto& x : msa) x = static_cast<float>(rng.uniform());
    out.push_back(finish(std::move(ffn), std::move(msa), w.head_count(model.config)));
  }
  return out;
}

void check_stats_shape(const calib::ActivationStats& stats, const Model& model) {
  if (stats.blocks.size() != model.blocks.size()) {
    throw std::invalid_argument("activation stats cover " + std::to_string(stats.blocks.size()) +
                                " blocks, model has " + std::to_string(model.blocks.size()));
  }
}

}  // namespace

ImportanceScores score_baseline(const PruneMethod& method, const calib::ActivationStats* stats,
                                const Model& model) {
  ImportanceScores out;
  out.method = method.kind;
  switch (method.kind) {
    case MethodKind::Magnitude:
      for (const auto& w : model.blocks) out.blocks.push_back(magnitude_block(w, model.config));
      break;
    case MethodKind::WandaLayer:
      if (stats == nullptr) throw std::invalid_argument("wanda scoring requires activation stats");
      check_stats_shape(*stats, model);
      for (std::size_t l = 0; l < model.blocks.size(); ++l)
        out.blocks.push_back(wanda_block(*stats, model.blocks[l], model.config, l));
      break;
    case MethodKind::NISP:
      out.blocks = nisp_blocks(model);
      break;
    case MethodKind::Random:
      out.blocks = random_blocks(model, method.seed);
      break;
    case MethodKind::BIP:
      throw std::invalid_argument("bip is not a baseline; use compute_scores");
  }
  return out;
}

ImportanceScores compute_scores(const ScoreConfig& cfg, const calib::ActivationStats* stats,
                                const Model& model, std::size_t threads) {
  if (cfg.method.kind != MethodKind::BIP) return score_baseline(cfg.method, stats, model);
  if (stats == nullptr) throw std::invalid_argument("bip scoring requires activation stats");
  check_stats_shape(*stats, model);
  ImportanceScores out;
  out.method = MethodKind::BIP;
  out.blocks.resize(model.blocks.size());
  parallel_for(model.blocks.size(), threads, [&](std::size_t l) {
    const auto& w = model.blocks[l];
    out.blocks[l] = finish(score_ffn_channels(*stats, w, l),
                           score_msa_channels(*stats, w, l, cfg, model.config.activation),
                           w.head_count(model.config));
  });
  return out;
}

}  // namespace bip::score
