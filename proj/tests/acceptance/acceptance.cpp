// Acceptance suite: one PASS/FAIL line per criterion, exit 1 if any fails.
//
//   bip_acceptance [--only 1,4] [--cache-dir DIR]
//
// --cache-dir keeps the ten trained models between runs (development only;
// ctest runs without it and trains from scratch).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>

#include <unistd.h>

#include <CLI11.hpp>

#include "bip/container.hpp"
#include "bip/runtime.hpp"
#include "bip/textgen.hpp"
#include "bip/train.hpp"
#include "cli.hpp"
#include "gradcheck.hpp"
#include "helpers.hpp"
#include "pipeline.hpp"

namespace fs = std::filesystem;
using namespace bip;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double jaccard(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    inter += a[i] && b[i];
    uni += a[i] || b[i];
  }
  return uni ? static_cast<double>(inter) / static_cast<double>(uni) : 1.0;
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

// ---- shared trained-model fixture (criteria 4, 5, 8, 9) ----

constexpr std::size_t kModels = 10;
constexpr std::size_t kCorpusBytes = 1 << 20;
constexpr std::size_t kHeldoutBytes = 1 << 16;

ModelConfig lm_config() {
  ModelConfig c;
  c.d = 64;
  c.n_heads = 4;
  c.ffn_hidden = 128;
  c.n_blocks = 4;
  c.prenorm = true;
  c.activation = ActivationKind::GeLU;
  return c;
}

struct Fixture {
  calib::Corpus corpus{textgen::generate(kCorpusBytes, 0), "train"};
  calib::Corpus heldout{textgen::generate(kHeldoutBytes, 1), "heldout"};
  std::vector<Model> models;
  double train_seconds = 0.0;
  std::string cache_dir;

  const std::vector<Model>& trained() {
    if (!models.empty()) return models;
    const auto t0 = Clock::now();
    for (std::size_t s = 0; s < kModels; ++s) {
      const fs::path cached = cache_dir.empty() ? fs::path() : fs::path(cache_dir) / ("lm" + std::to_string(s) + ".bip");
      if (!cache_dir.empty() && fs::exists(cached)) {
        models.push_back(io::read_model(io::Container::load(cached.string())));
        continue;
      }
      train::TrainConfig tc;
      tc.seed = s;
      models.push_back(train::train(init_model(lm_config(), s), corpus, tc));
      std::cerr << "  trained model " << s << " (" << fmt("%.0f", seconds_since(t0)) << " s)\n";
      if (!cache_dir.empty()) {
        fs::create_directories(cache_dir);
        io::Container c;
        io::write_model(c, models.back());
        c.save(cached.string());
      }
    }
    train_seconds = seconds_since(t0);
    return models;
  }
};

calib::CalibSpec calib_spec(std::uint64_t seed, std::size_t windows = 128) {
  return {windows, 128, derive_seed(seed, "calib")};
}

// ---- criteria ----

Outcome bounds() {
  const auto t0 = Clock::now();
  Outcome o{true, ""};
  for (auto act : {ActivationKind::ReLU, ActivationKind::GeLU, ActivationKind::SiLU}) {
    pipeline::BoundTrialConfig cfg;  // 1000 trials, T=8, d=16, N^F=32, sd 0.5, r in {0.25, 0.5}
    cfg.activation = act;
    const auto s = pipeline::run_bound_trials(cfg, 1);
    o.pass = o.pass && s.failures == 0 && s.trials == 1000;
    o.detail += to_string(act) + ": " + std::to_string(s.failures) + "/1000 over tolerance, worst " +
                fmt("%.2e", s.worst_relative) + " x max RHS; ";
  }
  const double secs = seconds_since(t0);
  o.pass = o.pass && secs < 120.0;
  o.detail += fmt("%.1f s (limit 120)", secs);
  return o;
}

Outcome surgery() {
  Rng rng(derive_seed(0, "surgery"));
  double worst = 0.0;
  std::size_t gated = 0;
  for (int trial = 0; trial < 100; ++trial) {
    ModelConfig cfg;
    cfg.n_heads = 1 + rng.below(4);
    cfg.d = cfg.n_heads * (1 + rng.below(32 / cfg.n_heads));
    cfg.ffn_hidden = 1 + rng.below(64);
    cfg.n_blocks = 1 + rng.below(3);
    cfg.max_seq = 32;
    cfg.gated = trial % 2 == 1;
    cfg.prenorm = rng.below(2) == 1;
    cfg.activation = static_cast<ActivationKind>(rng.below(3));
    gated += cfg.gated;

    Model m = init_model(cfg, rng.next_u64());
    for (auto& b : m.blocks) b = random_block(cfg, rng.next_u64(), 0.5f);
    m.embedding = testutil::random_matrix(cfg.vocab, cfg.d, rng);
    const auto scores = score::score_baseline({score::MethodKind::Random, rng.next_u64()}, nullptr, m);
    const auto mask = prune::select_masks(scores, prune::SparsityTarget(rng.uniform() * 0.95));
    const Model p = prune::apply_prune(m, mask);
    const TokenSeq toks = testutil::random_tokens(1 + rng.below(32), rng.next_u64());
    worst = std::max(worst, testutil::max_rel_diff(model_logits(p, toks),
                                                   model_logits(m, toks, mask.channel_masks(cfg))));
  }
  return {worst <= 1e-4, "100 models (" + std::to_string(gated) + " gated), max relative difference " +
                             fmt("%.2e", worst) + " (limit 1e-4)"};
}

Outcome oracle() {
  const auto t0 = Clock::now();
  const auto s = pipeline::run_oracle_trials(pipeline::OracleConfig{}, 1);
  const double secs = seconds_since(t0);
  return {s.pass() && secs < 300.0,
          "within best 20% in " + fmt("%.0f%%", 100 * s.frac_within_best_20) + " of 50 (need 90%), beats median in " +
              fmt("%.0f%%", 100 * s.frac_beats_median) + " (need 95%), " + fmt("%.1f s", secs) + " (limit 300)"};
}

// Criterion 4 and 5 share the pruning work.
struct QualityRun {
  std::vector<double> bip_final, wanda_final;
  std::map<std::pair<std::string, double>, std::vector<double>> ppl;
  std::vector<double> dense_ppl;
  double seconds = 0.0;
};

QualityRun quality_run(Fixture& fx) {
  QualityRun q;
  const auto& models = fx.trained();
  const auto t0 = Clock::now();
  const auto data = pipeline::make_eval_data(fx.heldout, 128, 16, 0);
  for (std::size_t s = 0; s < models.size(); ++s) {
    const Model& m = models[s];
    const auto stats = calib::collect_stats(m, calib::sample_calibration(fx.corpus, calib_spec(s)));
    q.dense_ppl.push_back(eval::perplexity(m, fx.heldout, 128));
    for (auto kind : {score::MethodKind::BIP, score::MethodKind::WandaLayer, score::MethodKind::Random,
                      score::MethodKind::Magnitude}) {
      const score::ScoreConfig sc{{kind, derive_seed(s, "random-method")}, false};
      for (double r : {0.2, 0.5}) {
        const auto pr = pipeline::prune_model(m, &stats, sc, r);
        if (r == 0.2 && kind == score::MethodKind::BIP)
          q.bip_final.push_back(eval::recon_errors(m, pr.mask, data.windows).back());
        if (r == 0.2 && kind == score::MethodKind::WandaLayer)
          q.wanda_final.push_back(eval::recon_errors(m, pr.mask, data.windows).back());
        q.ppl[{score::to_string(kind), r}].push_back(eval::perplexity(pr.pruned, fx.heldout, 128));
      }
    }
  }
  q.seconds = seconds_since(t0);
  return q;
}

Outcome accumulation(Fixture& fx, const QualityRun& q) {
  std::size_t wins = 0;
  std::string per;
  for (std::size_t s = 0; s < q.bip_final.size(); ++s) {
    wins += q.bip_final[s] <= q.wanda_final[s];
    per += fmt("%.4g", q.bip_final[s]) + "/" + fmt("%.4g", q.wanda_final[s]) + " ";
  }
  const double total = fx.train_seconds + q.seconds;
  return {wins >= 7 && total < 1800.0,
          "BIP <= WandaLayer final-block error in " + std::to_string(wins) + "/10 seeds (need 7); bip/wanda: " + per +
              "; train " + fmt("%.0f s", fx.train_seconds) + " + prune/eval " + fmt("%.0f s", q.seconds) +
              " (limit 1800)"};
}

Outcome quality(const QualityRun& q) {
  const double bip2 = median(q.ppl.at({"bip", 0.2})), rnd2 = median(q.ppl.at({"random", 0.2}));
  const double mag2 = median(q.ppl.at({"magnitude", 0.2}));
  const double bip5 = median(q.ppl.at({"bip", 0.5})), rnd5 = median(q.ppl.at({"random", 0.5}));
  const double gap2 = rnd2 - bip2, gap5 = rnd5 - bip5;
  const bool ok = bip2 <= rnd2 && bip2 <= mag2 && gap5 > gap2;
  return {ok, "median PPL dense " + fmt("%.3f", median(q.dense_ppl)) + "; r=0.2 bip " + fmt("%.3f", bip2) +
                  " random " + fmt("%.3f", rnd2) + " magnitude " + fmt("%.3f", mag2) + " wanda " +
                  fmt("%.3f", median(q.ppl.at({"wanda", 0.2}))) + "; r=0.5 bip " + fmt("%.3f", bip5) + " random " +
                  fmt("%.3f", rnd5) + "; random-bip gap " + fmt("%.3f", gap2) + " -> " + fmt("%.3f", gap5)};
}

Outcome gradients() {
  ModelConfig cfg;
  cfg.d = 8;
  cfg.n_heads = 2;
  cfg.ffn_hidden = 16;
  cfg.n_blocks = 1;
  cfg.max_seq = 32;
  cfg.prenorm = true;
  Model m = init_model(cfg, 1);
  Rng rng(2);
  for_each_parameter(m, [&](const std::string&, Matrix& p) {
    for (auto& v : p.values()) v = static_cast<float>(rng.normal(0.0, 0.5));
  });
  const std::vector<TokenSeq> batch = {testutil::random_tokens(16, 3), testutil::random_tokens(16, 4)};
  const auto errs = testutil::gradient_check(m.cast<double>(), batch, 50, 5, 1e-4);
  double worst = 0.0;
  std::string per;
  bool ok = errs.size() == 9;
  for (const auto& [family, e] : errs) {
    worst = std::max(worst, e.max_rel);
    ok = ok && e.coords == 50;
    per += family + " " + fmt("%.1e", e.max_rel) + ", ";
  }
  return {ok && worst <= 1e-3, per + "max " + fmt("%.2e", worst) + " (limit 1e-3)"};
}

Outcome accounting() {
  ModelConfig cfg;
  cfg.d = 64;
  cfg.n_heads = 8;
  cfg.ffn_hidden = 128;
  cfg.n_blocks = 4;
  const Model m = init_model(cfg, 7);
  const auto scores = score::score_baseline({score::MethodKind::Magnitude, 0}, nullptr, m);
  const Model p = prune::apply_prune(m, prune::select_masks(scores, prune::SparsityTarget(0.5)));
  const double params = 1.0 - double(prune::count_prunable(p).prunable()) / double(prune::count_prunable(m).prunable());
  const double macs = 1.0 - double(eval::count_macs(p, 128).prunable) / double(eval::count_macs(m, 128).prunable);
  bool ok = std::abs(params - 0.5) <= 0.02 && std::abs(macs - 0.5) <= 0.02;

  // (n, r, expected kept) by round-half-up with a floor of one.
  const std::tuple<std::size_t, double, std::size_t> table[] = {
      {4, 0.25, 3}, {8, 0.5, 4}, {128, 0.2, 102}, {5, 0.5, 3}, {12, 0.5, 6}, {4, 0.9, 1}, {128, 0.5, 64}};
  for (const auto& [n, r, k] : table) ok = ok && prune::keep_count(n, r) == k;
  std::size_t kept_heads = 0, kept_ffn = 0;
  for (const auto& b : p.blocks) {
    kept_heads += b.head_count(cfg);
    kept_ffn += b.ffn_width();
  }
  ok = ok && kept_heads == 4 * 4 && kept_ffn == 4 * 64;

  ModelConfig small = cfg;
  small.n_heads = 4;
  const Model q = init_model(small, 8);
  const auto mask = prune::select_masks(score::score_baseline({score::MethodKind::Magnitude, 0}, nullptr, q),
                                        prune::SparsityTarget(0.25));
  for (const auto& b : mask.blocks) ok = ok && std::count(b.keep_heads.begin(), b.keep_heads.end(), 1) == 3;
  return {ok, "prunable params reduced " + fmt("%.4f", params) + ", prunable MACs " + fmt("%.4f", macs) +
                  " (target 0.5 +- 0.02); kept-count table exact; n=4 r=0.25 keeps 3 heads"};
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

Outcome determinism(Fixture& fx) {
  const fs::path dir = fs::temp_directory_path() / ("bip_acceptance_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  {
    io::Container c;
    io::write_model(c, fx.trained()[0]);
    c.save((dir / "model.bip").string());
    std::ofstream(dir / "corpus.txt", std::ios::binary) << fx.corpus.bytes;
    std::ofstream(dir / "heldout.txt", std::ios::binary) << fx.heldout.bytes.substr(0, 1 << 14);
  }
  auto compare = [&](const std::string& tag, const std::string& threads) {
    std::ostringstream out, err;
    return cli::run({"--threads", threads, "compare", "--model", (dir / "model.bip").string(), "--corpus",
                     (dir / "corpus.txt").string(), "--eval-corpus", (dir / "heldout.txt").string(), "--out",
                     (dir / (tag + ".csv")).string(), "--out-dir", (dir / tag).string(), "--seed", "11"},
                    out, err);
  };
  bool ok = compare("a", "1") == 0 && compare("b", "1") == 0 && compare("c", "4") == 0;
  const std::string csv = slurp(dir / "a.csv");
  ok = ok && !csv.empty() && csv == slurp(dir / "b.csv") && csv == slurp(dir / "c.csv");
  std::size_t containers = 0;
  if (fs::exists(dir / "a")) {
    for (const auto& e : fs::directory_iterator(dir / "a")) {
      const std::string bytes = slurp(e.path());
      ok = ok && bytes == slurp(dir / "b" / e.path().filename()) && bytes == slurp(dir / "c" / e.path().filename());
      ++containers;
    }
  }
  ok = ok && containers == 15;

  // Head sums and C-flag argsort invariance on the trained model's real statistics.
  const Model& m = fx.trained()[0];
  const auto stats = calib::collect_stats(m, calib::sample_calibration(fx.corpus, calib_spec(0)));
  const auto off = score::compute_scores({{score::MethodKind::BIP, 0}, false}, &stats, m);
  const auto on = score::compute_scores({{score::MethodKind::BIP, 0}, true}, &stats, m);
  auto order = [](const std::vector<float>& v) {
    std::vector<std::size_t> i(v.size());
    std::iota(i.begin(), i.end(), std::size_t{0});
    std::stable_sort(i.begin(), i.end(), [&](auto a, auto b) { return v[a] > v[b]; });
    return i;
  };
  bool sums = true, ranks = true;
  for (std::size_t l = 0; l < off.blocks.size(); ++l) {
    const auto& b = off.blocks[l];
    const std::size_t hd = b.msa_channels.size() / b.heads.size();
    for (std::size_t h = 0; h < b.heads.size(); ++h) {
      float s = 0.0f;
      for (std::size_t j = h * hd; j < (h + 1) * hd; ++j) s += b.msa_channels[j];
      sums = sums && s == b.heads[h];
    }
    ranks = ranks && order(b.msa_channels) == order(on.blocks[l].msa_channels) &&
            order(b.heads) == order(on.blocks[l].heads) && order(b.ffn) == order(on.blocks[l].ffn);
  }
  fs::remove_all(dir);
  return {ok && sums && ranks, std::string("compare CSV and ") + std::to_string(containers) +
                                   " containers byte-identical across 2 single-threaded runs and a 4-thread run: " +
                                   (ok ? "yes" : "no") + "; head sums exact: " + (sums ? "yes" : "no") +
                                   "; C flag keeps argsort: " + (ranks ? "yes" : "no")};
}

Outcome calibration(Fixture& fx) {
  const Model& m = fx.trained()[0];
  constexpr double r = 0.5;
  auto mask_for = [&](const calib::CalibSpec& spec) {
    const auto stats = calib::collect_stats(m, calib::sample_calibration(fx.corpus, spec));
    return prune::select_masks(score::compute_scores({{score::MethodKind::BIP, 0}, false}, &stats, m),
                               prune::SparsityTarget(r));
  };
  // Worst block over the model.
  auto min_jaccard = [](const prune::PruneMask& a, const prune::PruneMask& b) {
    double j = 1.0;
    for (std::size_t l = 0; l < a.blocks.size(); ++l) j = std::min(j, jaccard(a.blocks[l].keep_ffn, b.blocks[l].keep_ffn));
    return j;
  };
  const auto one = mask_for(calib_spec(0, 1));
  const auto full0 = mask_for(calib_spec(0)), full1 = mask_for(calib_spec(1)), full2 = mask_for(calib_spec(2));
  const double size_j = min_jaccard(one, full0);
  const double seed_j = std::min({min_jaccard(full0, full1), min_jaccard(full0, full2), min_jaccard(full1, full2)});
  return {size_j >= 0.8 && seed_j >= 0.9, "r=0.5, worst-block Jaccard of kept FFN channels: 1 vs 128 windows " +
                                              fmt("%.3f", size_j) + " (need 0.8); across 3 seeds " +
                                              fmt("%.3f", seed_j) + " (need 0.9)"};
}

}  // namespace

int main(int argc, char** argv) {
  retain_heap_memory();
  CLI::App app{"Acceptance criteria"};
  std::vector<int> only;
  Fixture fx;
  app.add_option("--only", only, "Run only these criteria")->delimiter(',');
  app.add_option("--cache-dir", fx.cache_dir, "Reuse trained models from this directory");
  CLI11_PARSE(app, argc, argv);
  auto want = [&](int id) { return only.empty() || std::find(only.begin(), only.end(), id) != only.end(); };

  bool all = true;
  auto report = [&](int id, const char* name, const std::function<Outcome()>& fn) {
    if (!want(id)) return;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    all = all && o.pass;
    std::cout << "criterion " << id << " [" << name << "] " << (o.pass ? "PASS" : "FAIL") << ": " << o.detail
              << std::endl;
  };

  report(1, "bound soundness", bounds);
  report(2, "surgery equivalence", surgery);
  report(3, "oracle proximity", oracle);
  report(6, "gradient oracle", gradients);
  report(7, "accounting", accounting);
  std::optional<QualityRun> q;
  if (want(4) || want(5)) q = quality_run(fx);
  report(4, "error accumulation", [&] { return accumulation(fx, *q); });
  report(5, "quality ordering", [&] { return quality(*q); });
  report(8, "determinism", [&] { return determinism(fx); });
  report(9, "calibration robustness", [&] { return calibration(fx); });
  std::cout << (all ? "ALL PASS" : "SOME CRITERIA FAILED") << std::endl;
  return all ? 0 : 1;
}
