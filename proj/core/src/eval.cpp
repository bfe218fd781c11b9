#include "bip/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <stdexcept>

#include "bip/parallel.hpp"

namespace bip::eval {

std::vector<double> recon_errors(const Model& dense, const prune::PruneMask& mask,
                                 std::span<const TokenSeq> batch, std::size_t threads) {
  if (batch.empty()) throw std::invalid_argument("recon_errors: empty batch");
  mask.validate(dense);
  const auto masks = mask.channel_masks(dense.config);
  const std::size_t nb = dense.blocks.size();

  // Per-sequence sums, reduced afterwards in sequence order.
  std::vector<std::vector<double>> sums(batch.size(), std::vector<double>(nb, 0.0));
  std::vector<std::size_t> counts(batch.size(), 0);
  parallel_for(batch.size(), threads, [&](std::size_t s) {
    const auto a = model_forward(dense, batch[s]);
    const auto b = model_forward(dense, batch[s], masks);
    for (std::size_t l = 0; l < nb; ++l) {
      const auto& x = a.traces[l].x_out;
      const auto& y = b.traces[l].x_out;
      double acc = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i)
        acc += std::abs(static_cast<double>(x.data()[i]) - static_cast<double>(y.data()[i]));
      sums[s][l] = acc;
    }
    counts[s] = a.traces.empty() ? 0 : a.traces[0].x_out.size();
  });
  std::vector<double> out(nb, 0.0);
  std::size_t total = 0;
  for (std::size_t s = 0; s < batch.size(); ++s) {
    for (std::size_t l = 0; l < nb; ++l) out[l] += sums[s][l];
    total += counts[s];
  }
  if (total == 0) throw std::invalid_argument("recon_errors: batch has no tokens");
  for (auto& v : out) v /= static_cast<double>(total);
  return out;
}

double block_recon_error(const Model& dense, const prune::PruneMask& mask,
                         std::span<const TokenSeq> batch, std::size_t upto_block) {
  if (upto_block >= dense.blocks.size()) {
    throw std::out_of_range("block index " + std::to_string(upto_block) + " out of range for " +
                            std::to_string(dense.blocks.size()) + " blocks");
  }
  return recon_errors(dense, mask, batch)[upto_block];
}

namespace {

void require_bound_preconditions(const BlockWeights& w, const ModelConfig& cfg) {
  if (cfg.prenorm) throw std::invalid_argument("bound verification requires prenorm off");
  if (w.gated() || cfg.gated) throw std::invalid_argument("bound verification requires an ungated FFN");
}

struct SideResult {
  double max_violation = -std::numeric_limits<double>::infinity();
  double min_slack = std::numeric_limits<double>::infinity();
  double max_rhs = 0.0;
};

// rhs[t,k] = c Σ_j (1 - keep_j) |act[t,j]| weight[j,k]
SideResult compare_side(const Matrix& dense_out, const Matrix& masked_out, const Matrix& act,
                        const ChannelMask& keep, const MatrixD& weight, double c) {
  SideResult r;
  const std::size_t rows = dense_out.rows(), cols = dense_out.cols();
  std::vector<double> rhs(cols);
  for (std::size_t t = 0; t < rows; ++t) {
    std::fill(rhs.begin(), rhs.end(), 0.0);
    for (std::size_t j = 0; j < act.cols() && !keep.empty(); ++j) {
      if (keep[j]) continue;
      const double a = std::abs(static_cast<double>(act(t, j)));
      for (std::size_t k = 0; k < cols; ++k) rhs[k] += a * weight(j, k);
    }
    for (std::size_t k = 0; k < cols; ++k) {
      const double bound = c * rhs[k];
      const double lhs =
          std::abs(static_cast<double>(dense_out(t, k)) - static_cast<double>(masked_out(t, k)));
      r.max_violation = std::max(r.max_violation, lhs - bound);
      r.min_slack = std::min(r.min_slack, bound - lhs);
      r.max_rhs = std::max(r.max_rhs, bound);
    }
  }
  return r;
}

}  // namespace

BoundCheck verify_bound(const BlockWeights& w, const ModelConfig& cfg, const Matrix& x,
                        const ChannelMask& ffn_mask, const ChannelMask& head_mask) {
  require_bound_preconditions(w, cfg);
  const double c_sigma = lipschitz_constant(cfg.activation);
  const double c = std::max(c_sigma, 1.0);

  const BlockTrace dense = block_forward(x, w, cfg);
  const BlockTrace ffn_only = block_forward(x, w, cfg, {}, ffn_mask);
  const BlockTrace msa_only = block_forward(x, w, cfg, head_mask, {});

  const MatrixD abs_wd = abs(w.wd).cast<double>();
  // |W^O|(|W^U||W^D| + I), formed explicitly.
  const MatrixD abs_wo = abs(w.wo).cast<double>();
  MatrixD prop = matmul(abs(w.wu).cast<double>(), abs_wd);
  for (std::size_t i = 0; i < prop.rows(); ++i) prop(i, i) += 1.0;
  const MatrixD msa_weight = matmul(abs_wo, prop);

  const SideResult f = compare_side(dense.x_out, ffn_only.x_out, dense.x_ffn_hidden, ffn_mask, abs_wd, c_sigma);
  const SideResult h = compare_side(dense.x_out, msa_only.x_out, dense.x_head_out, head_mask, msa_weight, c);

  BoundCheck out;
  out.ffn_max_violation = f.max_violation;
  out.msa_max_violation = h.max_violation;
  out.max_violation = std::max(f.max_violation, h.max_violation);
  out.min_slack = std::min(f.min_slack, h.min_slack);
  out.max_rhs = std::max(f.max_rhs, h.max_rhs);
  return out;
}

namespace {

double masked_error(const Matrix& dense_out, const BlockWeights& w, const ModelConfig& cfg,
                    const Matrix& x, std::span<const std::uint8_t> keep, Side side) {
  const ChannelMask units(keep.begin(), keep.end());
  const BlockTrace masked = side == Side::FFN
                                ? block_forward(x, w, cfg, {}, units)
                                : block_forward(x, w, cfg, expand_head_mask(units, cfg.head_dim()), {});
  double acc = 0.0;
  for (std::size_t i = 0; i < dense_out.size(); ++i)
    acc += std::abs(static_cast<double>(dense_out.data()[i]) - static_cast<double>(masked.x_out.data()[i]));
  return acc / static_cast<double>(dense_out.size());
}

}  // namespace

double mask_block_error(const BlockWeights& w, const ModelConfig& cfg, const Matrix& x,
                        std::span<const std::uint8_t> keep, Side side) {
  return masked_error(block_forward(x, w, cfg).x_out, w, cfg, x, keep, side);
}

std::uint64_t binomial(std::uint64_t n, std::uint64_t k) {
  if (k > n) return 0;
  k = std::min(k, n - k);
  std::uint64_t r = 1;
  for (std::uint64_t i = 1; i <= k; ++i) {
    // r * (n - k + i) / i stays exact; saturate instead of overflowing.
    const std::uint64_t num = n - k + i;
    if (r > std::numeric_limits<std::uint64_t>::max() / num) return std::numeric_limits<std::uint64_t>::max();
    r = r * num / i;
  }
  return r;
}

BruteForceResult brute_force_mask(const BlockWeights& w, const ModelConfig& cfg, const Matrix& x,
                                  std::size_t keep, Side side) {
  const std::size_t n = side == Side::FFN ? w.ffn_width() : w.head_count(cfg);
  if (keep == 0 || keep > n) {
    throw std::invalid_argument("brute_force_mask: keep=" + std::to_string(keep) + " out of [1, " +
                                std::to_string(n) + "]");
  }
  const std::uint64_t count = binomial(n, keep);
  if (count > kMaxEnumeratedMasks) {
    throw std::invalid_argument("brute_force_mask: C(" + std::to_string(n) + ", " + std::to_string(keep) +
                                ") = " + std::to_string(count) + " masks exceeds the limit of " +
                                std::to_string(kMaxEnumeratedMasks));
  }

  BruteForceResult out;
  out.all_errors.reserve(count);
  out.best_error = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> idx(keep);
  for (std::size_t i = 0; i < keep; ++i) idx[i] = i;
  const Matrix dense_out = block_forward(x, w, cfg).x_out;
  std::vector<std::uint8_t> mask(n);
  while (true) {
    std::fill(mask.begin(), mask.end(), 0);
    for (auto i : idx) mask[i] = 1;
    const double e = masked_error(dense_out, w, cfg, x, mask, side);
    out.all_errors.push_back(e);
    if (e < out.best_error) {
      out.best_error = e;
      out.best_mask = mask;
    }
    // Next combination in lexicographic order.
    std::size_t i = keep;
    while (i > 0 && idx[i - 1] == n - keep + (i - 1)) --i;
    if (i == 0) break;
    ++idx[i - 1];
    for (std::size_t j = i; j < keep; ++j) idx[j] = idx[j - 1] + 1;
  }
  return out;
}

namespace {

// Σ_t -log softmax(logits[t])[target_t], in double.
double sequence_nll(const Matrix& logits, std::span<const Token> targets) {
  double nll = 0.0;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    auto row = logits.row(t);
    double mx = -std::numeric_limits<double>::infinity();
    for (float v : row) mx = std::max(mx, static_cast<double>(v));
    double sum = 0.0;
    for (float v : row) sum += std::exp(static_cast<double>(v) - mx);
    nll += std::log(sum) + mx - static_cast<double>(row[targets[t]]);
  }
  return nll;
}

std::vector<double> log_softmax(std::span<const float> row) {
  double mx = -std::numeric_limits<double>::infinity();
  for (float v : row) mx = std::max(mx, static_cast<double>(v));
  double sum = 0.0;
  for (float v : row) sum += std::exp(static_cast<double>(v) - mx);
  const double lse = std::log(sum) + mx;
  std::vector<double> out(row.size());
  for (std::size_t i = 0; i < row.size(); ++i) out[i] = static_cast<double>(row[i]) - lse;
  return out;
}

}  // namespace

double perplexity(const Model& model, const calib::Corpus& corpus, std::size_t seq_len,
                  std::size_t threads) {
  if (seq_len == 0) throw std::invalid_argument("perplexity: seq_len must be positive");
  const std::size_t window = seq_len + 1;
  const std::size_t n = corpus.bytes.size();
  if (n < window) {
    throw std::invalid_argument("perplexity: corpus of " + std::to_string(n) + " bytes is shorter than " +
                                std::to_string(window));
  }
  const std::size_t windows = n / window;
  std::vector<double> nll(windows, 0.0);
  parallel_for(windows, threads, [&](std::size_t wi) {
    const auto* base = reinterpret_cast<const Token*>(corpus.bytes.data()) + wi * window;
    const std::span<const Token> input(base, seq_len);
    const std::span<const Token> target(base + 1, seq_len);
    nll[wi] = sequence_nll(model_logits(model, input), target);
  });
  double total = 0.0;
  for (double v : nll) total += v;
  return std::exp(total / static_cast<double>(windows * seq_len));
}

double kl_to_dense(const Model& dense, const Model& pruned, std::span<const TokenSeq> batch,
                   std::size_t threads) {
  if (dense.config.vocab != pruned.config.vocab || dense.config.d != pruned.config.d) {
    throw std::invalid_argument("kl_to_dense: models have different vocab or width");
  }
  if (batch.empty()) throw std::invalid_argument("kl_to_dense: empty batch");
  std::vector<double> sums(batch.size(), 0.0);
  std::vector<std::size_t> counts(batch.size(), 0);
  parallel_for(batch.size(), threads, [&](std::size_t s) {
    const Matrix p = model_logits(dense, batch[s]);
    const Matrix q = model_logits(pruned, batch[s]);
    double acc = 0.0;
    for (std::size_t t = 0; t < p.rows(); ++t) {
      const auto lp = log_softmax(p.row(t));
      const auto lq = log_softmax(q.row(t));
      double kl = 0.0;
      for (std::size_t i = 0; i < lp.size(); ++i) kl += std::exp(lp[i]) * (lp[i] - lq[i]);
      acc += kl;
    }
    sums[s] = acc;
    counts[s] = p.rows();
  });
  double total = 0.0;
  std::size_t tokens = 0;
  for (std::size_t s = 0; s < batch.size(); ++s) {
    total += sums[s];
    tokens += counts[s];
  }
  return total / static_cast<double>(tokens);
}

MacCounts count_macs(const Model& model, std::size_t seq_len) {
  MacCounts m;
  const std::uint64_t t = seq_len, d = model.config.d;
  for (const auto& w : model.blocks) {
    const std::uint64_t a = w.attn_width(), f = w.ffn_width();
    m.prunable += 3 * t * d * a;            // Q, K, V
    m.prunable += 2 * t * t * a;            // QKᵀ and PV, no causal halving
    m.prunable += t * a * d;                // W^O
    m.prunable += (w.gated() ? 2 : 1) * t * d * f;  // W^U (and W^G)
    m.prunable += t * f * d;                // W^D
  }
  m.other = t * d * model.config.vocab;
  return m;
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

void write_kv(std::ostream& os, const EvalReport& r) {
  os << "method=" << r.method << '\n';
  os << "ratio=" << format_double(r.ratio) << '\n';
  for (std::size_t l = 0; l < r.recon_error.size(); ++l) {
    os << "block" << l << ".recon_error=" << format_double(r.recon_error[l]) << '\n';
    if (l < r.bound_slack_min.size() && r.bound_slack_min[l]) {
      os << "block" << l << ".bound_slack_min=" << format_double(*r.bound_slack_min[l]) << '\n';
    }
  }
  os << "perplexity_dense=" << format_double(r.perplexity_dense) << '\n';
  os << "perplexity_pruned=" << format_double(r.perplexity_pruned) << '\n';
  os << "kl_mean=" << format_double(r.kl_mean) << '\n';
  os << "params_dense=" << r.params_dense << '\n';
  os << "params_pruned=" << r.params_pruned << '\n';
  os << "macs_dense=" << r.macs_dense << '\n';
  os << "macs_pruned=" << r.macs_pruned << '\n';
}

void write_csv_header(std::ostream& os) { os << "method,ratio,block,recon_error,ppl,kl,params,macs\n"; }

void write_csv_rows(std::ostream& os, const EvalReport& r) {
  for (std::size_t l = 0; l < r.recon_error.size(); ++l) {
    os << r.method << ',' << format_double(r.ratio) << ',' << l << ',' << format_double(r.recon_error[l])
       << ',' << format_double(r.perplexity_pruned) << ',' << format_double(r.kl_mean) << ','
       << r.params_pruned << ',' << r.macs_pruned << '\n';
  }
}

}  // namespace bip::eval
