#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bip/calib.hpp"
#include "bip/model.hpp"
#include "bip/prune.hpp"

namespace bip::eval {

/// Mean |Δ| at every block output between the dense model and the masked
/// model, masks applied cumulatively from block 0.
std::vector<double> recon_errors(const Model& dense, const prune::PruneMask& mask,
                                 std::span<const TokenSeq> batch, std::size_t threads = 1);

double block_recon_error(const Model& dense, const prune::PruneMask& mask,
                         std::span<const TokenSeq> batch, std::size_t upto_block);

struct BoundCheck {
  double max_violation = 0.0;  // max over elements of LHS - RHS, both sides
  double min_slack = 0.0;      // min over elements of RHS - LHS
  double max_rhs = 0.0;
  double ffn_max_violation = 0.0;
  double msa_max_violation = 0.0;
};

/// Elementwise check of the two reconstruction-error upper bounds on one
/// block: FFN side with ffn_mask alone (constant C_σ), MSA side with
/// head_mask (channel level, on X^H) alone (constant max(C_σ, 1)).
/// Requires an ungated block without prenorm.
BoundCheck verify_bound(const BlockWeights& w, const ModelConfig& cfg, const Matrix& x,
                        const ChannelMask& ffn_mask, const ChannelMask& head_mask);

enum class Side { FFN, MsaHeads };

/// True mean |f(X) - f(X, mask)| for a unit-level keep mask (FFN channels or heads).
double mask_block_error(const BlockWeights& w, const ModelConfig& cfg, const Matrix& x,
                        std::span<const std::uint8_t> keep, Side side);

struct BruteForceResult {
  std::vector<std::uint8_t> best_mask;
  double best_error = 0.0;
  std::vector<double> all_errors;  // lexicographic order of kept index sets
};

inline constexpr std::uint64_t kMaxEnumeratedMasks = 1'000'000;

std::uint64_t binomial(std::uint64_t n, std::uint64_t k);

/// Exhaustive minimiser of the block objective over masks keeping exactly `keep` units.
BruteForceResult brute_force_mask(const BlockWeights& w, const ModelConfig& cfg, const Matrix& x,
                                  std::size_t keep, Side side);

/// exp(mean next-token NLL) over non-overlapping (seq_len + 1)-byte windows.
double perplexity(const Model& model, const calib::Corpus& corpus, std::size_t seq_len,
                  std::size_t threads = 1);

/// Mean over tokens of KL(dense ‖ pruned).
double kl_to_dense(const Model& dense, const Model& pruned, std::span<const TokenSeq> batch,
                   std::size_t threads = 1);

struct MacCounts {
  std::uint64_t prunable = 0;  // block projections and attention
  std::uint64_t other = 0;     // lm_head
  std::uint64_t total() const { return prunable + other; }
};

/// Σ T·in·out over linear maps plus 2·T²·width per block for QKᵀ and PV.
MacCounts count_macs(const Model& model, std::size_t seq_len);

struct EvalReport {
  std::string method;
  double ratio = 0.0;
  std::vector<double> recon_error;
  std::vector<std::optional<double>> bound_slack_min;
  double perplexity_dense = 0.0;
  double perplexity_pruned = 0.0;
  double kl_mean = 0.0;
  std::uint64_t params_dense = 0, params_pruned = 0;
  std::uint64_t macs_dense = 0, macs_pruned = 0;
};

std::string format_double(double v);
void write_kv(std::ostream& os, const EvalReport& r);
void write_csv_header(std::ostream& os);
void write_csv_rows(std::ostream& os, const EvalReport& r);

}  // namespace bip::eval
