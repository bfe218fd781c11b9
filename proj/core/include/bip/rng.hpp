#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace bip {

/// Derives an independent sub-seed for a named purpose ("calib", "init", ...)
/// so every consumer of randomness is reproducible on its own.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view purpose);

/// mt19937_64 with portable uniform/normal conversions (the std distributions
/// are implementation-defined, which would break cross-platform golden files).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  Rng(std::uint64_t seed, std::string_view purpose) : engine_(derive_seed(seed, purpose)) {}

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  /// Uniform integer in [0, bound). Rejection-sampled, so unbiased.
  std::uint64_t below(std::uint64_t bound);
  /// Standard normal via Box-Muller.
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace bip
