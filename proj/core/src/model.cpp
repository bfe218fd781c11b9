#include "bip/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "bip/rng.hpp"
#include "forward_detail.hpp"

namespace bip {

void ModelConfig::validate() const {
  if (n_heads == 0 || n_blocks == 0 || ffn_hidden == 0 || d == 0) {
    throw std::invalid_argument("model config: d, n_heads, ffn_hidden and n_blocks must be >= 1");
  }
  if (d % n_heads != 0) {
    throw std::invalid_argument("model config: d=" + std::to_string(d) +
                                " is not divisible by n_heads=" + std::to_string(n_heads));
  }
  if (vocab == 0 || max_seq == 0) throw std::invalid_argument("model config: empty vocab or max_seq");
}

namespace {

template <typename T>
void expect_shape(const BasicMatrix<T>& m, std::size_t r, std::size_t c, const char* name) {
  if (m.rows() != r || m.cols() != c) {
    throw std::invalid_argument(std::string(name) + " has shape " + m.shape_string() + ", expected " +
                                std::to_string(r) + "x" + std::to_string(c));
  }
}

}  // namespace

template <typename T>
void BasicBlockWeights<T>::validate(const ModelConfig& cfg) const {
  const std::size_t d = cfg.d, a = wq.cols(), f = wu.cols();
  if (a == 0 || a % cfg.head_dim() != 0) {
    throw std::invalid_argument("block attention width " + std::to_string(a) +
                                " is not a positive multiple of head_dim");
  }
  if (f == 0) throw std::invalid_argument("block has no FFN channels");
  expect_shape(wq, d, a, "wq");
  expect_shape(wk, d, a, "wk");
  expect_shape(wv, d, a, "wv");
  expect_shape(wo, a, d, "wo");
  expect_shape(wu, d, f, "wu");
  expect_shape(wd, f, d, "wd");
  if (cfg.gated) {
    expect_shape(wg, d, f, "wg");
  } else if (!wg.empty()) {
    throw std::invalid_argument("wg present on an ungated model");
  }
}

template <typename T>
void BasicModel<T>::validate() const {
  config.validate();
  if (blocks.size() != config.n_blocks) {
    throw std::invalid_argument("model has " + std::to_string(blocks.size()) + " blocks, config says " +
                                std::to_string(config.n_blocks));
  }
  expect_shape(embedding, config.vocab, config.d, "embedding");
  expect_shape(position, config.max_seq, config.d, "position");
  expect_shape(lm_head, config.d, config.vocab, "lm_head");
  for (const auto& b : blocks) b.validate(config);
}

template <typename T>
BasicModel<T> zero_model(const ModelConfig& cfg) {
  cfg.validate();
  BasicModel<T> m;
  m.config = cfg;
  m.embedding = BasicMatrix<T>(cfg.vocab, cfg.d);
  m.position = BasicMatrix<T>(cfg.max_seq, cfg.d);
  m.lm_head = BasicMatrix<T>(cfg.d, cfg.vocab);
  for (std::size_t l = 0; l < cfg.n_blocks; ++l) {
    BasicBlockWeights<T> b;
    b.wq = BasicMatrix<T>(cfg.d, cfg.d);
    b.wk = BasicMatrix<T>(cfg.d, cfg.d);
    b.wv = BasicMatrix<T>(cfg.d, cfg.d);
    b.wo = BasicMatrix<T>(cfg.d, cfg.d);
    b.wu = BasicMatrix<T>(cfg.d, cfg.ffn_hidden);
    b.wd = BasicMatrix<T>(cfg.ffn_hidden, cfg.d);
    if (cfg.gated) b.wg = BasicMatrix<T>(cfg.d, cfg.ffn_hidden);
    m.blocks.push_back(std::move(b));
  }
  return m;
}

namespace {

void fill_normal(Matrix& m, Rng& rng, double stddev) {
  for (auto& v : m.values()) v = static_cast<float>(rng.normal(0.0, stddev));
}

}  // namespace

Model init_model(const ModelConfig& cfg, std::uint64_t seed) {
  Model m = zero_model<float>(cfg);
  Rng rng(seed, "init");
  const double in_scale = 1.0 / std::sqrt(static_cast<double>(cfg.d));
  const double resid = 1.0 / std::sqrt(2.0 * static_cast<double>(cfg.n_blocks));
  fill_normal(m.embedding, rng, 0.02);
  fill_normal(m.position, rng, 0.02);
  for (auto& b : m.blocks) {
    fill_normal(b.wq, rng, in_scale);
    fill_normal(b.wk, rng, in_scale);
    fill_normal(b.wv, rng, in_scale);
    fill_normal(b.wo, rng, in_scale * resid);
    fill_normal(b.wu, rng, in_scale);
    fill_normal(b.wd, rng, resid / std::sqrt(static_cast<double>(cfg.ffn_hidden)));
    if (cfg.gated) fill_normal(b.wg, rng, in_scale);
  }
  fill_normal(m.lm_head, rng, in_scale);
  return m;
}

BlockWeights random_block(const ModelConfig& cfg, std::uint64_t seed, float stddev) {
  cfg.validate();
  Rng rng(seed, "block");
  auto make = [&](std::size_t r, std::size_t c) {
    Matrix m(r, c);
    fill_normal(m, rng, stddev);
    return m;
  };
  BlockWeights b;
  b.wq = make(cfg.d, cfg.d);
  b.wk = make(cfg.d, cfg.d);
  b.wv = make(cfg.d, cfg.d);
  b.wo = make(cfg.d, cfg.d);
  b.wu = make(cfg.d, cfg.ffn_hidden);
  b.wd = make(cfg.ffn_hidden, cfg.d);
  if (cfg.gated) b.wg = make(cfg.d, cfg.ffn_hidden);
  return b;
}

ChannelMask expand_head_mask(std::span<const std::uint8_t> keep_heads, std::size_t head_dim) {
  ChannelMask out;
  out.reserve(keep_heads.size() * head_dim);
  for (auto k : keep_heads) out.insert(out.end(), head_dim, k ? 1 : 0);
  return out;
}

namespace detail {

template <typename T>
BasicMatrix<T> rms_normalize(const BasicMatrix<T>& x, std::vector<T>& inv_rms) {
  BasicMatrix<T> y(x.rows(), x.cols());
  inv_rms.assign(x.rows(), T(0));
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto r = x.row(i);
    T ss = 0;
    for (T v : r) ss += v * v;
    const T inv = T(1) / std::sqrt(ss / static_cast<T>(r.size()) + static_cast<T>(kRmsEps));
    inv_rms[i] = inv;
    auto o = y.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) o[j] = r[j] * inv;
  }
  return y;
}

template <typename T>
BasicMatrix<T> rms_normalize_backward(const BasicMatrix<T>& y, std::span<const T> inv_rms,
                                      const BasicMatrix<T>& dy) {
  BasicMatrix<T> dx(y.rows(), y.cols());
  const T n = static_cast<T>(y.cols());
  for (std::size_t i = 0; i < y.rows(); ++i) {
    auto yr = y.row(i);
    auto g = dy.row(i);
    T dot = 0;
    for (std::size_t j = 0; j < yr.size(); ++j) dot += g[j] * yr[j];
    const T mean = dot / n;
    auto o = dx.row(i);
    for (std::size_t j = 0; j < yr.size(); ++j) o[j] = inv_rms[i] * (g[j] - yr[j] * mean);
  }
  return dx;
}

namespace {

void check_mask(const ChannelMask& mask, std::size_t expected, const char* what) {
  if (!mask.empty() && mask.size() != expected) {
    throw std::invalid_argument(std::string(what) + " mask has length " + std::to_string(mask.size()) +
                                ", expected " + std::to_string(expected));
  }
}

template <typename T>
void apply_column_mask(BasicMatrix<T>& m, const ChannelMask& mask) {
  if (mask.empty()) return;
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto r = m.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] *= mask[j] ? T(1) : T(0);
  }
}

}  // namespace

template <typename T>
void block_forward_cached(const BasicMatrix<T>& x, const BasicBlockWeights<T>& w,
                          const ModelConfig& cfg, std::span<const std::size_t> segments,
                          const ChannelMask& head_mask, const ChannelMask& ffn_mask,
                          BlockCache<T>& c) {
  if (x.cols() != cfg.d) {
    throw std::invalid_argument("block_forward: input has " + std::to_string(x.cols()) +
                                " columns, model d=" + std::to_string(cfg.d));
  }
  w.validate(cfg);
  check_mask(head_mask, w.attn_width(), "head");
  check_mask(ffn_mask, w.ffn_width(), "ffn");

  c.x_in = x;
  if (cfg.prenorm) {
    c.attn_in = rms_normalize(x, c.attn_inv_rms);
  } else {
    c.attn_in = x;
    c.attn_inv_rms.clear();
  }
  c.q = matmul(c.attn_in, w.wq);
  c.k = matmul(c.attn_in, w.wk);
  c.v = matmul(c.attn_in, w.wv);

  const std::size_t hd = cfg.head_dim();
  const std::size_t heads = w.attn_width() / hd;
  const T scale = T(1) / std::sqrt(static_cast<T>(cfg.d));
  c.xh = BasicMatrix<T>(x.rows(), w.attn_width());
  c.probs.assign(segments.size() * heads, {});

  std::size_t r0 = 0;
  for (std::size_t s = 0; s < segments.size(); ++s) {
    const std::size_t len = segments[s];
    if (r0 + len > x.rows()) break;
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t c0 = h * hd;
      const BasicMatrix<T> qh = head_slice(c.q, r0, len, c0, hd);
      const BasicMatrix<T> kh = head_slice(c.k, r0, len, c0, hd);
      BasicMatrix<T> p = matmul_nt(qh, kh);
      for (std::size_t t = 0; t < len; ++t) {
        const std::size_t span_end = cfg.causal ? t + 1 : len;
        auto row = p.row(t);
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < span_end; ++j) {
          row[j] *= scale;
          mx = std::max(mx, row[j]);
        }
        T sum = 0;
        for (std::size_t j = 0; j < span_end; ++j) {
          row[j] = std::exp(row[j] - mx);
          sum += row[j];
        }
        const T inv = T(1) / sum;
        for (std::size_t j = 0; j < span_end; ++j) row[j] *= inv;
        for (std::size_t j = span_end; j < len; ++j) row[j] = T(0);
      }
      head_scatter(matmul(p, head_slice(c.v, r0, len, c0, hd)), c.xh, r0, c0);
      c.probs[s * heads + h] = std::move(p);
    }
    r0 += len;
  }
  if (r0 != x.rows()) throw std::invalid_argument("block_forward: segment lengths do not cover input");

  apply_column_mask(c.xh, head_mask);
  c.x_mid = matmul(c.xh, w.wo);
  add_inplace(c.x_mid, x);

  if (cfg.prenorm) {
    c.ffn_in = rms_normalize(c.x_mid, c.ffn_inv_rms);
  } else {
    c.ffn_in = c.x_mid;
    c.ffn_inv_rms.clear();
  }
  c.xu = matmul(c.ffn_in, w.wu);
  apply_column_mask(c.xu, ffn_mask);
  c.hidden = BasicMatrix<T>(c.xu.rows(), c.xu.cols());
  if (w.gated()) {
    c.xg = matmul(c.ffn_in, w.wg);
    for (std::size_t i = 0; i < c.xu.size(); ++i)
      c.hidden.data()[i] = activate(cfg.activation, c.xg.data()[i]) * c.xu.data()[i];
  } else {
    c.xg = {};
    for (std::size_t i = 0; i < c.xu.size(); ++i)
      c.hidden.data()[i] = activate(cfg.activation, c.xu.data()[i]);
  }
  c.x_out = matmul(c.hidden, w.wd);
  add_inplace(c.x_out, c.x_mid);
}

template <typename T>
void model_forward_cached(const BasicModel<T>& m, std::span<const Token> tokens,
                          std::span<const std::size_t> segments, std::span<const BlockMask> masks,
                          ModelCache<T>& cache) {
  const auto& cfg = m.config;
  if (!masks.empty() && masks.size() != m.blocks.size()) {
    throw std::invalid_argument("model_forward: " + std::to_string(masks.size()) +
                                " block masks for " + std::to_string(m.blocks.size()) + " blocks");
  }
  BasicMatrix<T> x(tokens.size(), cfg.d);
  std::size_t r = 0;
  for (std::size_t len : segments) {
    if (len > cfg.max_seq) {
      throw std::invalid_argument("sequence length " + std::to_string(len) + " exceeds max_seq " +
                                  std::to_string(cfg.max_seq));
    }
    for (std::size_t t = 0; t < len; ++t, ++r) {
      const Token tok = tokens[r];
      if (tok >= cfg.vocab) {
        throw std::out_of_range("token " + std::to_string(tok) + " out of range for vocab " +
                                std::to_string(cfg.vocab));
      }
      auto out = x.row(r);
      auto e = m.embedding.row(tok);
      auto p = m.position.row(t);
      for (std::size_t j = 0; j < cfg.d; ++j) out[j] = e[j] + p[j];
    }
  }
  if (r != tokens.size()) throw std::invalid_argument("model_forward: segments do not cover tokens");

  static const ChannelMask kNone;
  cache.blocks.resize(m.blocks.size());
  const BasicMatrix<T>* in = &x;
  for (std::size_t l = 0; l < m.blocks.size(); ++l) {
    const ChannelMask& hm = masks.empty() ? kNone : masks[l].head_channels;
    const ChannelMask& fm = masks.empty() ? kNone : masks[l].ffn;
    block_forward_cached(*in, m.blocks[l], cfg, segments, hm, fm, cache.blocks[l]);
    in = &cache.blocks[l].x_out;
  }
  if (cfg.prenorm) {
    cache.head_in = rms_normalize(*in, cache.head_inv_rms);
  } else {
    cache.head_in = *in;
    cache.head_inv_rms.clear();
  }
  cache.logits = matmul(cache.head_in, m.lm_head);
}

template BasicMatrix<float> rms_normalize(const BasicMatrix<float>&, std::vector<float>&);
template BasicMatrix<double> rms_normalize(const BasicMatrix<double>&, std::vector<double>&);
template BasicMatrix<float> rms_normalize_backward(const BasicMatrix<float>&, std::span<const float>,
                                                   const BasicMatrix<float>&);
template BasicMatrix<double> rms_normalize_backward(const BasicMatrix<double>&,
                                                    std::span<const double>,
                                                    const BasicMatrix<double>&);
template void block_forward_cached(const BasicMatrix<float>&, const BasicBlockWeights<float>&,
                                   const ModelConfig&, std::span<const std::size_t>,
                                   const ChannelMask&, const ChannelMask&, BlockCache<float>&);
template void block_forward_cached(const BasicMatrix<double>&, const BasicBlockWeights<double>&,
                                   const ModelConfig&, std::span<const std::size_t>,
                                   const ChannelMask&, const ChannelMask&, BlockCache<double>&);
template void model_forward_cached(const BasicModel<float>&, std::span<const Token>,
                                   std::span<const std::size_t>, std::span<const BlockMask>,
                                   ModelCache<float>&);
template void model_forward_cached(const BasicModel<double>&, std::span<const Token>,
                                   std::span<const std::size_t>, std::span<const BlockMask>,
                                   ModelCache<double>&);

}  // namespace detail

BlockTrace block_forward(const Matrix& x, const BlockWeights& w, const ModelConfig& cfg,
                         const ChannelMask& head_mask, const ChannelMask& ffn_mask) {
  detail::BlockCache<float> c;
  const std::size_t seg[] = {x.rows()};
  detail::block_forward_cached(x, w, cfg, seg, head_mask, ffn_mask, c);
  return {std::move(c.x_in), std::move(c.xh), std::move(c.x_mid), std::move(c.xu),
          std::move(c.x_out)};
}

ForwardResult model_forward(const Model& m, std::span<const Token> tokens,
                            std::span<const BlockMask> masks) {
  detail::ModelCache<float> cache;
  const std::size_t seg[] = {tokens.size()};
  detail::model_forward_cached(m, tokens, seg, masks, cache);
  ForwardResult out;
  out.logits = std::move(cache.logits);
  out.traces.reserve(cache.blocks.size());
  for (auto& c : cache.blocks) {
    out.traces.push_back(
        {std::move(c.x_in), std::move(c.xh), std::move(c.x_mid), std::move(c.xu), std::move(c.x_out)});
  }
  return out;
}

Matrix model_logits(const Model& m, std::span<const Token> tokens, std::span<const BlockMask> masks) {
  return model_forward(m, tokens, masks).logits;
}

template struct BasicBlockWeights<float>;
template struct BasicBlockWeights<double>;
template struct BasicModel<float>;
template struct BasicModel<double>;
template BasicModel<float> zero_model(const ModelConfig&);
template BasicModel<double> zero_model(const ModelConfig&);

}  // namespace bip
