#include "bip/calib.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "bip/parallel.hpp"
#include "bip/rng.hpp"

namespace bip::calib {

Corpus Corpus::from_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open corpus '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  Corpus c{ss.str(), path};
  if (c.bytes.empty()) throw std::runtime_error("corpus '" + path + "' is empty");
  return c;
}

void CalibSpec::validate(const ModelConfig& cfg) const {
  if (n_samples < 1) throw std::invalid_argument("calibration needs at least one sample");
  if (seq_len < 2) throw std::invalid_argument("calibration seq_len must be >= 2");
  if (seq_len > cfg.max_seq) {
    throw std::invalid_argument("calibration seq_len " + std::to_string(seq_len) +
                                " exceeds model max_seq " + std::to_string(cfg.max_seq));
  }
}

TokenSeq tokenize(const Corpus& corpus) {
  if (corpus.bytes.empty()) throw std::invalid_argument("tokenize: empty corpus");
  TokenSeq out(corpus.bytes.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<Token>(corpus.bytes[i]);
  return out;
}

std::string detokenize(std::span<const Token> tokens) {
  std::string out(tokens.size(), '\0');
  for (std::size_t i = 0; i < tokens.size(); ++i) out[i] = static_cast<char>(tokens[i]);
  return out;
}

std::vector<TokenSeq> sample_calibration(const Corpus& corpus, const CalibSpec& spec) {
  if (spec.n_samples < 1 || spec.seq_len < 2) throw std::invalid_argument("invalid calibration spec");
  const std::size_t n = corpus.bytes.size();
  if (n < spec.seq_len) {
    throw std::invalid_argument("corpus of " + std::to_string(n) + " bytes is shorter than seq_len " +
                                std::to_string(spec.seq_len));
  }
  Rng rng(spec.seed, "calib");
  const std::uint64_t offsets = n - spec.seq_len + 1;
  std::vector<TokenSeq> out;
  out.reserve(spec.n_samples);
  for (std::size_t s = 0; s < spec.n_samples; ++s) {
    const std::size_t off = rng.below(offsets);
    TokenSeq w(spec.seq_len);
    for (std::size_t t = 0; t < spec.seq_len; ++t) w[t] = static_cast<Token>(corpus.bytes[off + t]);
    out.push_back(std::move(w));
  }
  return out;
}

ActivationStats collect_stats(const Model& model, std::span<const TokenSeq> batches,
                              std::size_t threads) {
  if (batches.empty()) throw std::invalid_argument("collect_stats: no calibration sequences");
  const std::size_t nb = model.blocks.size();
  std::vector<std::vector<double>> sum_h(nb), sum_u(nb);
  for (std::size_t l = 0; l < nb; ++l) {
    sum_h[l].assign(model.blocks[l].attn_width(), 0.0);
    sum_u[l].assign(model.blocks[l].ffn_width(), 0.0);
  }

  // Forwards may run in parallel; accumulation below stays in sequence order.
  std::vector<ForwardResult> results(batches.size());
  std::size_t tokens = 0;
  for (const auto& seq : batches) tokens += seq.size();
  const std::size_t chunk = std::max<std::size_t>(threads, 1) * 4;
  for (std::size_t base = 0; base < batches.size(); base += chunk) {
    const std::size_t end = std::min(batches.size(), base + chunk);
    parallel_for(end - base, threads, [&](std::size_t i) {
      results[base + i] = model_forward(model, batches[base + i]);
    });
    for (std::size_t s = base; s < end; ++s) {
      for (std::size_t l = 0; l < nb; ++l) {
        const auto& tr = results[s].traces[l];
        for (std::size_t t = 0; t < tr.x_head_out.rows(); ++t) {
          auto h = tr.x_head_out.row(t);
          for (std::size_t j = 0; j < h.size(); ++j) sum_h[l][j] += std::abs(static_cast<double>(h[j]));
          auto u = tr.x_ffn_hidden.row(t);
          for (std::size_t j = 0; j < u.size(); ++j) sum_u[l][j] += std::abs(static_cast<double>(u[j]));
        }
      }
      results[s] = {};
    }
  }
  if (tokens == 0) throw std::invalid_argument("collect_stats: calibration sequences are empty");

  ActivationStats stats;
  stats.token_count = tokens;
  stats.blocks.resize(nb);
  const double inv = 1.0 / static_cast<double>(tokens);
  for (std::size_t l = 0; l < nb; ++l) {
    auto& b = stats.blocks[l];
    b.mean_abs_xh.resize(sum_h[l].size());
    b.mean_abs_xu.resize(sum_u[l].size());
    for (std::size_t j = 0; j < sum_h[l].size(); ++j) b.mean_abs_xh[j] = static_cast<float>(sum_h[l][j] * inv);
    for (std::size_t j = 0; j < sum_u[l].size(); ++j) b.mean_abs_xu[j] = static_cast<float>(sum_u[l][j] * inv);
  }
  return stats;
}

}  // namespace bip::calib
