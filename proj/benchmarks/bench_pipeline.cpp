#include <benchmark/benchmark.h>

#include "bip/calib.hpp"
#include "bip/eval.hpp"
#include "bip/prune.hpp"
#include "bip/score.hpp"
#include "bip/textgen.hpp"
#include "bip/train.hpp"

namespace {

bip::ModelConfig lm_config() {
  bip::ModelConfig c;
  c.d = 64;
  c.n_heads = 4;
  c.ffn_hidden = 128;
  c.n_blocks = 4;
  c.prenorm = true;
  return c;
}

const bip::calib::Corpus& corpus() {
  static const bip::calib::Corpus c{bip::textgen::generate(1 << 18, 0), "bench"};
  return c;
}

void BM_TrainStep(benchmark::State& state) {
  const bip::Model m = bip::init_model(lm_config(), 1);
  const auto batch = bip::calib::sample_calibration(corpus(), {8, 65, 2});
  for (auto _ : state) benchmark::DoNotOptimize(bip::train::loss_and_grads(m, batch));
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

void BM_CollectStats(benchmark::State& state) {
  const bip::Model m = bip::init_model(lm_config(), 1);
  const auto windows = bip::calib::sample_calibration(corpus(), {16, 128, 3});
  for (auto _ : state) benchmark::DoNotOptimize(bip::calib::collect_stats(m, windows));
}
BENCHMARK(BM_CollectStats)->Unit(benchmark::kMillisecond);

void BM_ScoreAndPrune(benchmark::State& state) {
  const bip::Model m = bip::init_model(lm_config(), 1);
  const auto stats = bip::calib::collect_stats(m, bip::calib::sample_calibration(corpus(), {4, 64, 4}));
  const bip::score::ScoreConfig cfg{{bip::score::MethodKind::BIP, 0}, false};
  for (auto _ : state) {
    const auto s = bip::score::compute_scores(cfg, &stats, m);
    benchmark::DoNotOptimize(bip::prune::apply_prune(m, bip::prune::select_masks(s, bip::prune::SparsityTarget(0.5))));
  }
}
BENCHMARK(BM_ScoreAndPrune)->Unit(benchmark::kMicrosecond);

void BM_BruteForce924(benchmark::State& state) {
  bip::ModelConfig cfg;
  cfg.d = 16;
  cfg.n_heads = 4;
  cfg.ffn_hidden = 12;
  cfg.n_blocks = 1;
  const auto w = bip::random_block(cfg, 5, 0.5f);
  bip::Matrix x(64, 16);
  for (std::size_t i = 0; i < x.size(); ++i) x.data()[i] = static_cast<float>((i * 37 % 11) - 5) * 0.2f;
  for (auto _ : state) benchmark::DoNotOptimize(bip::eval::brute_force_mask(w, cfg, x, 6, bip::eval::Side::FFN));
}
BENCHMARK(BM_BruteForce924)->Unit(benchmark::kMillisecond);

}  // namespace
