#include <benchmark/benchmark.h>

#include "bip/model.hpp"
#include "bip/rng.hpp"
#include "bip/tensor.hpp"

namespace {

bip::Matrix filled(std::size_t r, std::size_t c, std::uint64_t seed) {
  bip::Rng rng(seed);
  bip::Matrix m(r, c);
  for (auto& v : m.values()) v = static_cast<float>(rng.normal());
  return m;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto k = static_cast<std::size_t>(state.range(1));
  const auto m = static_cast<std::size_t>(state.range(2));
  const bip::Matrix a = filled(n, k, 1), b = filled(k, m, 2);
  for (auto _ : state) benchmark::DoNotOptimize(bip::matmul(a, b));
  state.counters["GMAC/s"] =
      benchmark::Counter(static_cast<double>(n * k * m) * state.iterations() / 1e9, benchmark::Counter::kIsRate);
}
BENCHMARK(BM_Matmul)->Args({512, 64, 64})->Args({512, 64, 128})->Args({512, 128, 64})->Args({64, 16, 64})
    ->Args({128, 64, 256});

void BM_MatmulTnAccumulate(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const bip::Matrix a = filled(n, 64, 3), b = filled(n, 128, 4);
  bip::Matrix acc(64, 128);
  for (auto _ : state) {
    bip::matmul_tn_accumulate(a, b, acc);
    benchmark::ClobberMemory();
  }
}
BENCHMARK(BM_MatmulTnAccumulate)->Arg(512);

void BM_Softmax(benchmark::State& state) {
  const bip::Matrix m = filled(128, 128, 5);
  for (auto _ : state) benchmark::DoNotOptimize(bip::softmax_rows(m));
}
BENCHMARK(BM_Softmax);

void BM_BlockForward(benchmark::State& state) {
  bip::ModelConfig cfg;
  cfg.d = 64;
  cfg.n_heads = 4;
  cfg.ffn_hidden = 128;
  cfg.n_blocks = 1;
  const auto w = bip::random_block(cfg, 6, 0.1f);
  const bip::Matrix x = filled(static_cast<std::size_t>(state.range(0)), 64, 7);
  for (auto _ : state) benchmark::DoNotOptimize(bip::block_forward(x, w, cfg));
}
BENCHMARK(BM_BlockForward)->Arg(16)->Arg(128);

}  // namespace
