#pragma once

// End-to-end workflows shared by the command line and the acceptance suite.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "bip/calib.hpp"
#include "bip/eval.hpp"
#include "bip/model.hpp"
#include "bip/prune.hpp"
#include "bip/score.hpp"

namespace bip::pipeline {

struct PruneResult {
  score::ImportanceScores scores;
  prune::PruneMask mask;
  Model pruned;
};

/// Score, select and compact. `stats` may be null for weight-only methods.
PruneResult prune_model(const Model& dense, const calib::ActivationStats* stats,
                        const score::ScoreConfig& cfg, double ratio, std::size_t threads = 1);

struct EvalData {
  const calib::Corpus* corpus = nullptr;  // perplexity
  std::vector<TokenSeq> windows;          // reconstruction error and KL
  std::size_t seq_len = 128;
};

/// Held-out windows for reconstruction error and KL, drawn with the "recon" sub-seed.
EvalData make_eval_data(const calib::Corpus& corpus, std::size_t seq_len, std::size_t windows,
                        std::uint64_t seed);

/// `dense_ppl` skips recomputing the dense perplexity when already known.
eval::EvalReport evaluate(const Model& dense, const PruneResult& pruned, const std::string& method,
                          double ratio, const EvalData& data, std::size_t threads = 1,
                          std::optional<double> dense_ppl = std::nullopt);

struct CompareConfig {
  std::vector<score::MethodKind> methods = score::all_methods();
  std::vector<double> ratios = {0.0, 0.2, 0.5};
  calib::CalibSpec calib;
  std::size_t eval_seq_len = 128;
  std::size_t eval_windows = 16;
  std::uint64_t seed = 0;
  bool include_constant_c = false;
  std::size_t threads = 1;
};

struct CompareEntry {
  eval::EvalReport report;
  PruneResult result;
};

/// Every method at every ratio against one dense model. Calibration runs once.
/// `on_entry` sees each result as it is produced (e.g. to write containers).
std::vector<eval::EvalReport> compare(const Model& dense, const calib::Corpus& calib_corpus,
                                      const calib::Corpus& eval_corpus, const CompareConfig& cfg,
                                      const std::function<void(const CompareEntry&)>& on_entry = {});

// ---- bound soundness trials ----

struct BoundTrialConfig {
  ActivationKind activation = ActivationKind::ReLU;
  std::size_t trials = 1000;
  std::uint64_t seed = 0;
  std::size_t tokens = 8;
  std::size_t d = 16;
  std::size_t n_heads = 4;
  std::size_t ffn = 32;
  std::vector<double> ratios = {0.25, 0.5};
  float weight_sd = 0.5f;
  double rel_tolerance = 1e-5;
};

struct BoundTrialSummary {
  std::size_t trials = 0;
  std::size_t failures = 0;          // trials with violation > rel_tolerance × max RHS
  double worst_relative = 0.0;       // max over trials of violation / max RHS
  double max_violation = 0.0;
  double min_slack = 0.0;
};

BoundTrialSummary run_bound_trials(const BoundTrialConfig& cfg, std::size_t threads = 1);

// ---- exhaustive oracle trials ----

struct OracleConfig {
  std::size_t ffn = 12;
  std::size_t keep = 6;
  std::size_t trials = 50;
  std::size_t tokens = 64;
  std::size_t d = 16;
  std::size_t n_heads = 4;
  ActivationKind activation = ActivationKind::GeLU;
  float weight_sd = 0.5f;
  std::uint64_t seed = 0;
};

struct OracleTrial {
  double score_error = 0.0;  // true block error of the score-selected mask
  double best_error = 0.0;
  double median_error = 0.0;
  std::size_t rank = 0;      // masks with strictly smaller error
  std::size_t n_masks = 0;
  bool within_best_20 = false;
  bool beats_median = false;
};

struct OracleSummary {
  std::vector<OracleTrial> trials;
  double frac_within_best_20 = 0.0;
  double frac_beats_median = 0.0;
  bool pass() const { return frac_within_best_20 >= 0.9 && frac_beats_median >= 0.95; }
};

OracleSummary run_oracle_trials(const OracleConfig& cfg, std::size_t threads = 1);

}  // namespace bip::pipeline
