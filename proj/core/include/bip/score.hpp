#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bip/calib.hpp"
#include "bip/model.hpp"

namespace bip::score {

enum class MethodKind { BIP, WandaLayer, Magnitude, Random, NISP };

struct PruneMethod {
  MethodKind kind = MethodKind::BIP;
  std::uint64_t seed = 0;  // Random only

  bool needs_stats() const { return kind == MethodKind::BIP || kind == MethodKind::WandaLayer; }
  friend bool operator==(const PruneMethod&, const PruneMethod&) = default;
};

std::string to_string(MethodKind kind);
MethodKind parse_method(std::string_view name);
/// Every implemented method, in reporting order.
std::vector<MethodKind> all_methods();

struct ScoreConfig {
  PruneMethod method;
  /// Multiply MSA channel scores by C = max(C_σ, 1). Never changes a ranking.
  bool include_constant_c = false;
};

struct BlockScores {
  std::vector<float> ffn;           // s^F, length F
  std::vector<float> msa_channels;  // s^H, length attention width
  std::vector<float> heads;         // per-head sums of msa_channels
  friend bool operator==(const BlockScores&, const BlockScores&) = default;
};

struct ImportanceScores {
  MethodKind method = MethodKind::BIP;
  std::vector<BlockScores> blocks;
  friend bool operator==(const ImportanceScores&, const ImportanceScores&) = default;
};

/// s_j^F = mean|X_j^U| · Σ_k |W^D_{j,k}|.
std::vector<float> score_ffn_channels(const calib::ActivationStats& stats, const BlockWeights& w,
                                      std::size_t block);

/// v = 1 + |W^U|(|W^D| 1), i.e. (I + |W^U||W^D|) applied to the ones vector.
std::vector<float> propagation_vector(const BlockWeights& w);

/// s_j^H = mean|X_j^H| · (|W^O| row j · v), optionally times C = max(C_σ, 1).
std::vector<float> score_msa_channels(const calib::ActivationStats& stats, const BlockWeights& w,
                                      std::size_t block, const ScoreConfig& cfg,
                                      ActivationKind activation);

/// Sums contiguous head_dim-wide channel ranges.
std::vector<float> aggregate_heads(std::span<const float> msa_channels, std::size_t n_heads);

/// Contender scorers: Magnitude, WandaLayer, NISP and Random.
ImportanceScores score_baseline(const PruneMethod& method, const calib::ActivationStats* stats,
                                const Model& model);

/// Dispatches on cfg.method; BIP uses the block-wise scores above.
ImportanceScores compute_scores(const ScoreConfig& cfg, const calib::ActivationStats* stats,
                                const Model& model, std::size_t threads = 1);

}  // namespace bip::score
