#include "bip/train.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "bip/rng.hpp"
#include "forward_detail.hpp"

namespace bip::train {

void TrainConfig::validate() const {
  if (steps < 1) throw std::invalid_argument("train: steps must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  if (seq_len < 1) throw std::invalid_argument("train: seq_len must be >= 1");
  if (!(learning_rate >= 0.0)) throw std::invalid_argument("train: learning_rate must be >= 0");
  if (!(adam_beta1 > 0.0 && adam_beta1 < 1.0) || !(adam_beta2 > 0.0 && adam_beta2 < 1.0)) {
    throw std::invalid_argument("train: Adam betas must lie in (0, 1)");
  }
  if (!(adam_eps > 0.0)) throw std::invalid_argument("train: adam_eps must be positive");
  if (!(grad_clip > 0.0)) throw std::invalid_argument("train: grad_clip must be positive");
}

namespace {

template <typename T>
struct StackedBatch {
  std::vector<Token> inputs;
  std::vector<Token> targets;
  std::vector<std::size_t> segments;
};

template <typename T>
StackedBatch<T> stack(std::span<const TokenSeq> batch) {
  StackedBatch<T> s;
  for (const auto& seq : batch) {
    if (seq.size() < 2) throw std::invalid_argument("loss_and_grads: sequences need at least 2 tokens");
    s.inputs.insert(s.inputs.end(), seq.begin(), seq.end() - 1);
    s.targets.insert(s.targets.end(), seq.begin() + 1, seq.end());
    s.segments.push_back(seq.size() - 1);
  }
  if (s.inputs.empty()) throw std::invalid_argument("loss_and_grads: empty batch");
  return s;
}

// Writes softmax(logits) - onehot(target), scaled by 1/N, into dlogits and
// returns the summed NLL.
template <typename T>
double cross_entropy(const BasicMatrix<T>& logits, std::span<const Token> targets,
                     BasicMatrix<T>* dlogits) {
  const T inv_n = T(1) / static_cast<T>(targets.size());
  double nll = 0.0;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    auto row = logits.row(t);
    T mx = -std::numeric_limits<T>::infinity();
    for (T v : row) mx = std::max(mx, v);
    T sum = 0;
    for (T v : row) sum += std::exp(v - mx);
    const T lse = std::log(sum) + mx;
    nll += static_cast<double>(lse - row[targets[t]]);
    if (dlogits) {
      auto g = dlogits->row(t);
      for (std::size_t k = 0; k < row.size(); ++k) g[k] = std::exp(row[k] - lse) * inv_n;
      g[targets[t]] -= inv_n;
    }
  }
  return nll;
}

template <typename T>
void attention_backward(const detail::BlockCache<T>& c, const ModelConfig& cfg,
                        std::span<const std::size_t> segments, const BasicMatrix<T>& dxh,
                        BasicMatrix<T>& dq, BasicMatrix<T>& dk, BasicMatrix<T>& dv) {
  const std::size_t hd = cfg.head_dim();
  const std::size_t heads = c.q.cols() / hd;
  const T scale = T(1) / std::sqrt(static_cast<T>(cfg.d));
  std::size_t r0 = 0;
  for (std::size_t s = 0; s < segments.size(); ++s) {
    const std::size_t len = segments[s];
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t c0 = h * hd;
      const auto& p = c.probs[s * heads + h];
      const BasicMatrix<T> g = detail::head_slice(dxh, r0, len, c0, hd);
      const BasicMatrix<T> vh = detail::head_slice(c.v, r0, len, c0, hd);
      detail::head_scatter(matmul_tn(p, g), dv, r0, c0);
      BasicMatrix<T> ds = matmul_nt(g, vh);
      for (std::size_t t = 0; t < len; ++t) {
        auto prow = p.row(t);
        auto row = ds.row(t);
        T weighted = 0;
        for (std::size_t j = 0; j < len; ++j) weighted += prow[j] * row[j];
        for (std::size_t j = 0; j < len; ++j) row[j] = prow[j] * (row[j] - weighted) * scale;
      }
      detail::head_scatter(matmul(ds, detail::head_slice(c.k, r0, len, c0, hd)), dq, r0, c0);
      detail::head_scatter(matmul_tn(ds, detail::head_slice(c.q, r0, len, c0, hd)), dk, r0, c0);
    }
    r0 += len;
  }
}

template <typename T>
BasicModel<T> zero_like(const BasicModel<T>& m) {
  BasicModel<T> g = m;
  for_each_parameter(g, [](const std::string&, BasicMatrix<T>& p) {
    for (auto& v : p.values()) v = T(0);
  });
  return g;
}

template <typename T>
LossAndGrads<T> loss_and_grads_impl(const BasicModel<T>& model, std::span<const TokenSeq> batch,
                                    bool want_grads) {
  const ModelConfig& cfg = model.config;
  if (!cfg.causal) throw std::invalid_argument("loss_and_grads: language-model training needs a causal model");
  const auto sb = stack<T>(batch);
  detail::ModelCache<T> cache;
  detail::model_forward_cached(model, sb.inputs, sb.segments, {}, cache);

  LossAndGrads<T> out;
  BasicMatrix<T> dlogits(cache.logits.rows(), cache.logits.cols());
  const double nll = cross_entropy(cache.logits, sb.targets, want_grads ? &dlogits : nullptr);
  out.loss = nll / static_cast<double>(sb.targets.size());
  if (!want_grads) return out;

  out.grads = zero_like(model);
  auto& g = out.grads;

  matmul_tn_accumulate(cache.head_in, dlogits, g.lm_head);
  BasicMatrix<T> dx = matmul_nt(dlogits, model.lm_head);
  if (cfg.prenorm) dx = detail::rms_normalize_backward(cache.head_in, std::span<const T>(cache.head_inv_rms), dx);

  for (std::size_t l = model.blocks.size(); l-- > 0;) {
    const auto& w = model.blocks[l];
    const auto& c = cache.blocks[l];
    auto& gw = g.blocks[l];

    // x_out = x_mid + hidden W^D
    matmul_tn_accumulate(c.hidden, dx, gw.wd);
    const BasicMatrix<T> dhidden = matmul_nt(dx, w.wd);
    BasicMatrix<T> dxu(c.xu.rows(), c.xu.cols());
    BasicMatrix<T> dffn_in;
    if (w.gated()) {
      BasicMatrix<T> dxg(c.xg.rows(), c.xg.cols());
      for (std::size_t i = 0; i < dxu.size(); ++i) {
        const T gate = c.xg.data()[i];
        dxu.data()[i] = dhidden.data()[i] * activate(cfg.activation, gate);
        dxg.data()[i] = dhidden.data()[i] * c.xu.data()[i] * activate_grad(cfg.activation, gate);
      }
      matmul_tn_accumulate(c.ffn_in, dxg, gw.wg);
      dffn_in = matmul_nt(dxg, w.wg);
      add_inplace(dffn_in, matmul_nt(dxu, w.wu));
    } else {
      for (std::size_t i = 0; i < dxu.size(); ++i)
        dxu.data()[i] = dhidden.data()[i] * activate_grad(cfg.activation, c.xu.data()[i]);
      dffn_in = matmul_nt(dxu, w.wu);
    }
    matmul_tn_accumulate(c.ffn_in, dxu, gw.wu);
    BasicMatrix<T> dmid = dx;
    if (cfg.prenorm) {
      add_inplace(dmid, detail::rms_normalize_backward(c.ffn_in, std::span<const T>(c.ffn_inv_rms), dffn_in));
    } else {
      add_inplace(dmid, dffn_in);
    }

    // x_mid = x + X^H W^O
    matmul_tn_accumulate(c.xh, dmid, gw.wo);
    const BasicMatrix<T> dxh = matmul_nt(dmid, w.wo);
    BasicMatrix<T> dq(c.q.rows(), c.q.cols()), dk(c.k.rows(), c.k.cols()), dv(c.v.rows(), c.v.cols());
    attention_backward(c, cfg, sb.segments, dxh, dq, dk, dv);
    matmul_tn_accumulate(c.attn_in, dq, gw.wq);
    matmul_tn_accumulate(c.attn_in, dk, gw.wk);
    matmul_tn_accumulate(c.attn_in, dv, gw.wv);
    BasicMatrix<T> dattn_in = matmul_nt(dq, w.wq);
    add_inplace(dattn_in, matmul_nt(dk, w.wk));
    add_inplace(dattn_in, matmul_nt(dv, w.wv));
    BasicMatrix<T> dprev = std::move(dmid);
    if (cfg.prenorm) {
      add_inplace(dprev, detail::rms_normalize_backward(c.attn_in, std::span<const T>(c.attn_inv_rms), dattn_in));
    } else {
      add_inplace(dprev, dattn_in);
    }
    dx = std::move(dprev);
  }

  std::size_t r = 0;
  for (std::size_t len : sb.segments) {
    for (std::size_t t = 0; t < len; ++t, ++r) {
      auto src = dx.row(r);
      auto e = g.embedding.row(sb.inputs[r]);
      auto p = g.position.row(t);
      for (std::size_t j = 0; j < src.size(); ++j) {
        e[j] += src[j];
        p[j] += src[j];
      }
    }
  }
  return out;
}

}  // namespace

LossAndGrads<float> loss_and_grads(const Model& model, std::span<const TokenSeq> batch) {
  return loss_and_grads_impl(model, batch, true);
}

LossAndGrads<double> loss_and_grads(const BasicModel<double>& model, std::span<const TokenSeq> batch) {
  return loss_and_grads_impl(model, batch, true);
}

double loss_value(const BasicModel<double>& model, std::span<const TokenSeq> batch) {
  return loss_and_grads_impl(model, batch, false).loss;
}

template <typename T>
double global_grad_norm(const BasicModel<T>& grads) {
  double ss = 0.0;
  for_each_parameter(grads, [&](const std::string&, const BasicMatrix<T>& p) {
    for (T v : p.values()) ss += static_cast<double>(v) * static_cast<double>(v);
  });
  return std::sqrt(ss);
}

template double global_grad_norm(const BasicModel<float>&);
template double global_grad_norm(const BasicModel<double>&);

namespace {

std::vector<TokenSeq> sample_batch(const calib::Corpus& corpus, const TrainConfig& cfg, Rng& rng) {
  const std::size_t window = cfg.seq_len + 1;
  const std::uint64_t offsets = corpus.bytes.size() - window + 1;
  std::vector<TokenSeq> batch(cfg.batch_size);
  for (auto& seq : batch) {
    const std::size_t off = rng.below(offsets);
    seq.assign(reinterpret_cast<const Token*>(corpus.bytes.data()) + off,
               reinterpret_cast<const Token*>(corpus.bytes.data()) + off + window);
  }
  return batch;
}

}  // namespace

Model train(Model model, const calib::Corpus& corpus, const TrainConfig& cfg,
            const std::function<void(const StepLog&)>& on_step) {
  cfg.validate();
  model.validate();
  if (cfg.seq_len > model.config.max_seq) {
    throw std::invalid_argument("train: seq_len exceeds model max_seq");
  }
  if (corpus.bytes.size() < cfg.seq_len + 1) {
    throw std::invalid_argument("train: corpus of " + std::to_string(corpus.bytes.size()) +
                                " bytes is too short for one window of " + std::to_string(cfg.seq_len + 1));
  }

  Rng rng(cfg.seed, "train");
  Model m1 = zero_like(model), m2 = zero_like(model);
  const auto lr = static_cast<float>(cfg.learning_rate);
  const auto b1 = static_cast<float>(cfg.adam_beta1), b2 = static_cast<float>(cfg.adam_beta2);
  const auto eps = static_cast<float>(cfg.adam_eps);

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const auto batch = sample_batch(corpus, cfg, rng);
    auto lg = loss_and_grads(model, batch);
    if (!std::isfinite(lg.loss)) {
      throw std::runtime_error("training diverged: loss is " + std::to_string(lg.loss) + " at step " +
                               std::to_string(step));
    }
    const double norm = global_grad_norm(lg.grads);
    const float clip = norm > cfg.grad_clip ? static_cast<float>(cfg.grad_clip / norm) : 1.0f;
    const auto t = static_cast<double>(step + 1);
    const auto bc1 = static_cast<float>(1.0 - std::pow(cfg.adam_beta1, t));
    const auto bc2 = static_cast<float>(1.0 - std::pow(cfg.adam_beta2, t));

    std::vector<Matrix*> params, grads, first, second;
    for_each_parameter(model, [&](const std::string&, Matrix& p) { params.push_back(&p); });
    for_each_parameter(lg.grads, [&](const std::string&, Matrix& p) { grads.push_back(&p); });
    for_each_parameter(m1, [&](const std::string&, Matrix& p) { first.push_back(&p); });
    for_each_parameter(m2, [&](const std::string&, Matrix& p) { second.push_back(&p); });
    for (std::size_t i = 0; i < params.size(); ++i) {
      float* p = params[i]->data();
      const float* g = grads[i]->data();
      float* mm = first[i]->data();
      float* vv = second[i]->data();
      for (std::size_t k = 0; k < params[i]->size(); ++k) {
        const float gk = g[k] * clip;
        mm[k] = b1 * mm[k] + (1.0f - b1) * gk;
        vv[k] = b2 * vv[k] + (1.0f - b2) * gk * gk;
        const float mhat = mm[k] / bc1;
        const float vhat = vv[k] / bc2;
        p[k] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
    }
    if (on_step) on_step({step, lg.loss, norm});
  }
  return model;
}

}  // namespace bip::train
