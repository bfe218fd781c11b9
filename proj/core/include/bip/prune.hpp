#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "bip/model.hpp"
#include "bip/score.hpp"

namespace bip::prune {

/// Fraction of prunable units removed from every block, in [0, 1).
class SparsityTarget {
 public:
  explicit SparsityTarget(double r);
  double r() const { return r_; }

 private:
  double r_;
};

/// Units kept out of n: max(1, round-half-up((1 - r) n)).
std::size_t keep_count(std::size_t n, double r);

struct BlockKeep {
  std::vector<std::uint8_t> keep_heads;  // s̄^H at head granularity
  std::vector<std::uint8_t> keep_ffn;    // s̄^F
  friend bool operator==(const BlockKeep&, const BlockKeep&) = default;
};

struct PruneMask {
  std::vector<BlockKeep> blocks;
  /// Ratio the mask was selected for; when set, popcounts are checked against it.
  std::optional<double> ratio;

  /// Throws if the mask does not fit the model or breaks its invariants.
  void validate(const Model& model) const;
  /// Per-block channel masks for the masked (uncompacted) forward.
  std::vector<BlockMask> channel_masks(const ModelConfig& cfg) const;

  friend bool operator==(const PruneMask&, const PruneMask&) = default;
};

/// All-ones mask matching the model's current widths.
PruneMask full_mask(const Model& model);

/// Top-k heads and top-k' FFN channels per block; ties keep the lower index.
PruneMask select_masks(const score::ImportanceScores& scores, SparsityTarget target);

/// Indices of the k largest scores, ascending by index. Ties keep the lower index.
std::vector<std::size_t> top_k_indices(std::span<const float> scores, std::size_t k);

/// Removes dropped heads (Q/K/V columns, O rows) and FFN channels (U/G
/// columns, D row). The input model is not modified.
Model apply_prune(const Model& model, const PruneMask& mask);

struct ParamCounts {
  std::uint64_t head_params = 0;
  std::uint64_t ffn_params = 0;
  std::uint64_t other_params = 0;
  std::uint64_t prunable() const { return head_params + ffn_params; }
  std::uint64_t total() const { return head_params + ffn_params + other_params; }
};

ParamCounts count_prunable(const Model& model);

}  // namespace bip::prune
