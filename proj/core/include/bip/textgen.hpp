#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

namespace bip::textgen {

/// English-like prose from a small seeded grammar: Zipf-weighted word
/// choice, nested clauses, punctuation, dialogue and paragraphs. Output is
/// exactly n_bytes long and a pure function of (n_bytes, seed).
std::string generate(std::size_t n_bytes, std::uint64_t seed);

}  // namespace bip::textgen
