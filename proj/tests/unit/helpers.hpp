#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "bip/model.hpp"
#include "bip/rng.hpp"

namespace testutil {

inline bip::Matrix random_matrix(std::size_t r, std::size_t c, bip::Rng& rng, double sd = 1.0) {
  bip::Matrix m(r, c);
  for (auto& v : m.values()) v = static_cast<float>(rng.normal(0.0, sd));
  return m;
}

inline bip::Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed, double sd = 1.0) {
  bip::Rng rng(seed);
  return random_matrix(r, c, rng, sd);
}

// Naive triple loop in double.
inline std::vector<double> reference_product(const bip::Matrix& a, const bip::Matrix& b) {
  std::vector<double> out(a.rows() * b.cols(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += double(a(i, k)) * double(b(k, j));
      out[i * b.cols() + j] = s;
    }
  return out;
}

// max |a - b| / max(max |b|, tiny)
inline double max_rel_diff(const bip::Matrix& a, const bip::Matrix& b) {
  double num = 0.0, den = 1e-30;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num = std::max(num, std::abs(double(a.data()[i]) - double(b.data()[i])));
    den = std::max(den, std::abs(double(b.data()[i])));
  }
  return num / den;
}

inline bip::TokenSeq random_tokens(std::size_t n, std::uint64_t seed) {
  bip::Rng rng(seed);
  bip::TokenSeq t(n);
  for (auto& x : t) x = static_cast<bip::Token>(rng.below(256));
  return t;
}

inline bip::ModelConfig small_config(std::size_t d = 8, std::size_t heads = 2, std::size_t ffn = 16,
                                     std::size_t blocks = 1) {
  bip::ModelConfig c;
  c.d = d;
  c.n_heads = heads;
  c.ffn_hidden = ffn;
  c.n_blocks = blocks;
  c.max_seq = 64;
  return c;
}

}  // namespace testutil
