#include "pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "bip/parallel.hpp"
#include "bip/rng.hpp"

namespace bip::pipeline {

PruneResult prune_model(const Model& dense, const calib::ActivationStats* stats,
                        const score::ScoreConfig& cfg, double ratio, std::size_t threads) {
  PruneResult r;
  r.scores = score::compute_scores(cfg, stats, dense, threads);
  r.mask = prune::select_masks(r.scores, prune::SparsityTarget(ratio));
  r.pruned = prune::apply_prune(dense, r.mask);
  return r;
}

EvalData make_eval_data(const calib::Corpus& corpus, std::size_t seq_len, std::size_t windows,
                        std::uint64_t seed) {
  EvalData d;
  d.corpus = &corpus;
  d.seq_len = seq_len;
  calib::CalibSpec spec{windows, seq_len, derive_seed(seed, "recon")};
  d.windows = calib::sample_calibration(corpus, spec);
  return d;
}

eval::EvalReport evaluate(const Model& dense, const PruneResult& pruned, const std::string& method,
                          double ratio, const EvalData& data, std::size_t threads,
                          std::optional<double> dense_ppl) {
  eval::EvalReport r;
  r.method = method;
  r.ratio = ratio;
  r.recon_error = eval::recon_errors(dense, pruned.mask, data.windows, threads);

  const auto& cfg = dense.config;
  if (!cfg.prenorm && !cfg.gated && !data.windows.empty()) {
    const auto masks = pruned.mask.channel_masks(cfg);
    const auto traces = model_forward(dense, data.windows.front()).traces;
    for (std::size_t l = 0; l < dense.blocks.size(); ++l) {
      const auto check = eval::verify_bound(dense.blocks[l], cfg, traces[l].x_in, masks[l].ffn,
                                            masks[l].head_channels);
      r.bound_slack_min.push_back(check.min_slack);
    }
  } else {
    r.bound_slack_min.assign(dense.blocks.size(), std::nullopt);
  }

  if (data.corpus) {
    r.perplexity_dense = dense_ppl ? *dense_ppl : eval::perplexity(dense, *data.corpus, data.seq_len, threads);
    r.perplexity_pruned = eval::perplexity(pruned.pruned, *data.corpus, data.seq_len, threads);
  }
  r.kl_mean = eval::kl_to_dense(dense, pruned.pruned, data.windows, threads);
  r.params_dense = prune::count_prunable(dense).total();
  r.params_pruned = prune::count_prunable(pruned.pruned).total();
  r.macs_dense = eval::count_macs(dense, data.seq_len).total();
  r.macs_pruned = eval::count_macs(pruned.pruned, data.seq_len).total();
  return r;
}

std::vector<eval::EvalReport> compare(const Model& dense, const calib::Corpus& calib_corpus,
                                      const calib::Corpus& eval_corpus, const CompareConfig& cfg,
                                      const std::function<void(const CompareEntry&)>& on_entry) {
  for (double r : cfg.ratios) prune::SparsityTarget check(r);
  const bool need_stats = std::any_of(cfg.methods.begin(), cfg.methods.end(), [](score::MethodKind k) {
    return score::PruneMethod{k, 0}.needs_stats();
  });
  calib::ActivationStats stats;
  if (need_stats) {
    stats = calib::collect_stats(dense, calib::sample_calibration(calib_corpus, cfg.calib), cfg.threads);
  }
  const EvalData data = make_eval_data(eval_corpus, cfg.eval_seq_len, cfg.eval_windows, cfg.seed);
  const double dense_ppl = eval::perplexity(dense, eval_corpus, cfg.eval_seq_len, cfg.threads);

  std::vector<eval::EvalReport> out;
  for (auto kind : cfg.methods) {
    score::ScoreConfig sc{{kind, derive_seed(cfg.seed, "random-method")}, cfg.include_constant_c};
    for (double ratio : cfg.ratios) {
      CompareEntry e;
      e.result = prune_model(dense, need_stats ? &stats : nullptr, sc, ratio, cfg.threads);
      e.report = evaluate(dense, e.result, score::to_string(kind), ratio, data, cfg.threads, dense_ppl);
      if (on_entry) on_entry(e);
      out.push_back(std::move(e.report));
    }
  }
  return out;
}

namespace {

Matrix normal_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
  Matrix m(rows, cols);
  for (auto& v : m.values()) v = static_cast<float>(rng.normal());
  return m;
}

// Exactly `keep` ones at uniformly random positions (partial Fisher-Yates).
ChannelMask random_keep(std::size_t n, std::size_t keep, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < keep; ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);
  ChannelMask m(n, 0);
  for (std::size_t i = 0; i < keep; ++i) m[idx[i]] = 1;
  return m;
}

}  // namespace

BoundTrialSummary run_bound_trials(const BoundTrialConfig& cfg, std::size_t threads) {
  if (cfg.ratios.empty()) throw std::invalid_argument("bound trials need at least one ratio");
  ModelConfig mc;
  mc.d = cfg.d;
  mc.n_heads = cfg.n_heads;
  mc.ffn_hidden = cfg.ffn;
  mc.n_blocks = 1;
  mc.activation = cfg.activation;
  mc.validate();

  std::vector<eval::BoundCheck> checks(cfg.trials);
  const std::uint64_t base = derive_seed(cfg.seed, "bound-trials");
  parallel_for(cfg.trials, threads, [&](std::size_t t) {
    Rng rng(base + t);
    const BlockWeights w = random_block(mc, rng.next_u64(), cfg.weight_sd);
    const Matrix x = normal_matrix(cfg.tokens, cfg.d, rng);
    const double r = cfg.ratios[t % cfg.ratios.size()];
    const ChannelMask ffn = random_keep(cfg.ffn, prune::keep_count(cfg.ffn, r), rng);
    // Alternate head-level and channel-level masks on X^H.
    ChannelMask heads;
    if (t % 2 == 0) {
      const auto keep = random_keep(cfg.n_heads, prune::keep_count(cfg.n_heads, r), rng);
      heads = expand_head_mask(keep, mc.head_dim());
    } else {
      heads = random_keep(cfg.d, prune::keep_count(cfg.d, r), rng);
    }
    checks[t] = eval::verify_bound(w, mc, x, ffn, heads);
  });

  BoundTrialSummary s;
  s.trials = cfg.trials;
  s.max_violation = -std::numeric_limits<double>::infinity();
  s.min_slack = std::numeric_limits<double>::infinity();
  for (const auto& c : checks) {
    const double rel = c.max_rhs > 0.0 ? c.max_violation / c.max_rhs : (c.max_violation > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
    s.worst_relative = std::max(s.worst_relative, rel);
    if (c.max_violation > cfg.rel_tolerance * c.max_rhs) ++s.failures;
    s.max_violation = std::max(s.max_violation, c.max_violation);
    s.min_slack = std::min(s.min_slack, c.min_slack);
  }
  return s;
}

OracleSummary run_oracle_trials(const OracleConfig& cfg, std::size_t threads) {
  ModelConfig mc;
  mc.d = cfg.d;
  mc.n_heads = cfg.n_heads;
  mc.ffn_hidden = cfg.ffn;
  mc.n_blocks = 1;
  mc.activation = cfg.activation;
  mc.validate();
  if (cfg.keep == 0 || cfg.keep > cfg.ffn) throw std::invalid_argument("oracle: keep must lie in [1, ffn]");

  OracleSummary s;
  s.trials.resize(cfg.trials);
  const std::uint64_t base = derive_seed(cfg.seed, "oracle-trials");
  parallel_for(cfg.trials, threads, [&](std::size_t t) {
    Rng rng(base + t);
    const BlockWeights w = random_block(mc, rng.next_u64(), cfg.weight_sd);
    const Matrix x = normal_matrix(cfg.tokens, cfg.d, rng);

    calib::ActivationStats stats;
    stats.blocks.push_back({{}, abs_col_mean(block_forward(x, w, mc).x_ffn_hidden)});
    stats.token_count = cfg.tokens;
    const auto scores = score::score_ffn_channels(stats, w, 0);
    std::vector<std::uint8_t> keep(cfg.ffn, 0);
    for (auto j : prune::top_k_indices(scores, cfg.keep)) keep[j] = 1;

    const auto bf = eval::brute_force_mask(w, mc, x, cfg.keep, eval::Side::FFN);
    OracleTrial& tr = s.trials[t];
    tr.score_error = eval::mask_block_error(w, mc, x, keep, eval::Side::FFN);
    tr.best_error = bf.best_error;
    tr.n_masks = bf.all_errors.size();
    tr.rank = static_cast<std::size_t>(std::count_if(bf.all_errors.begin(), bf.all_errors.end(),
                                                     [&](double e) { return e < tr.score_error; }));
    std::vector<double> sorted = bf.all_errors;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n = sorted.size();
    tr.median_error = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
    tr.within_best_20 = static_cast<double>(tr.rank) < 0.2 * static_cast<double>(n);
    tr.beats_median = tr.score_error < tr.median_error;
  });
  std::size_t best20 = 0, median = 0;
  for (const auto& tr : s.trials) {
    best20 += tr.within_best_20;
    median += tr.beats_median;
  }
  if (cfg.trials > 0) {
    s.frac_within_best_20 = static_cast<double>(best20) / static_cast<double>(cfg.trials);
    s.frac_beats_median = static_cast<double>(median) / static_cast<double>(cfg.trials);
  }
  return s;
}

}  // namespace bip::pipeline
