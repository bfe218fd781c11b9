#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "bip/model.hpp"

namespace bip::calib {

struct Corpus {
  std::string bytes;
  std::string name;

  static Corpus from_file(const std::string& path);
};

struct CalibSpec {
  std::size_t n_samples = 128;
  std::size_t seq_len = 128;
  std::uint64_t seed = 0;

  void validate(const ModelConfig& cfg) const;
};

/// Mean |X^H| and |X^U| per channel for one block.
struct BlockStats {
  std::vector<float> mean_abs_xh;
  std::vector<float> mean_abs_xu;
  friend bool operator==(const BlockStats&, const BlockStats&) = default;
};

struct ActivationStats {
  std::vector<BlockStats> blocks;
  std::size_t token_count = 0;
  friend bool operator==(const ActivationStats&, const ActivationStats&) = default;
};

/// Byte-level, identity mapping. Throws on an empty corpus.
TokenSeq tokenize(const Corpus& corpus);
std::string detokenize(std::span<const Token> tokens);

/// n_samples contiguous windows of seq_len tokens at uniformly random offsets.
std::vector<TokenSeq> sample_calibration(const Corpus& corpus, const CalibSpec& spec);

/// One forward per sequence; |X^H| and |X^U| are summed in (sequence, token)
/// order and divided by the total token count. `threads` parallelises the
/// forwards only.
ActivationStats collect_stats(const Model& model, std::span<const TokenSeq> batches,
                              std::size_t threads = 1);

}  // namespace bip::calib
