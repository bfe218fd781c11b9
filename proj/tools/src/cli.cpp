#include "cli.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include <CLI11.hpp>

#include "bip/calib.hpp"
#include "bip/container.hpp"
#include "bip/eval.hpp"
#include "bip/model.hpp"
#include "bip/prune.hpp"
#include "bip/rng.hpp"
#include "bip/score.hpp"
#include "bip/train.hpp"
#include "pipeline.hpp"

namespace bip::cli {

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::size_t threads = 1;
  bool time = false;
};

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
  f << text;
  if (!f) throw std::runtime_error("failed writing '" + path + "'");
}

score::MethodKind method_arg(const std::string& name) {
  try {
    return score::parse_method(name);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

void check_ratio(double r) {
  if (!(r >= 0.0 && r < 1.0)) throw UsageError("--ratio must lie in [0, 1), got " + eval::format_double(r));
}

// ---- calibration source shared by score / prune ----

struct StatsSource {
  std::string stats_path;
  std::string corpus_path;
  calib::CalibSpec spec;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--stats", stats_path, "Activation statistics container from `calibrate`");
    cmd->add_option("--corpus", corpus_path, "Calibration corpus (used when --stats is absent)");
    cmd->add_option("--samples", spec.n_samples, "Calibration windows")->capture_default_str();
    cmd->add_option("--seq-len", spec.seq_len, "Calibration window length")->capture_default_str();
  }

  std::optional<calib::ActivationStats> load(const Model& model, bool needed, std::uint64_t seed,
                                             std::size_t threads) {
    if (!stats_path.empty() && !corpus_path.empty()) throw UsageError("give either --stats or --corpus, not both");
    if (!stats_path.empty()) return io::read_stats(io::Container::load(stats_path));
    if (!needed) return std::nullopt;
    if (corpus_path.empty()) throw UsageError("this method needs activation statistics: pass --stats or --corpus");
    spec.seed = seed;
    spec.validate(model.config);
    const auto corpus = calib::Corpus::from_file(corpus_path);
    return calib::collect_stats(model, calib::sample_calibration(corpus, spec), threads);
  }
};

// ---- commands ----

struct InitCmd {
  std::string out;
  std::uint64_t seed = 0;
  ModelConfig cfg;
  std::string activation = "gelu";
  bool non_causal = false;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("init", "Create a randomly initialised model");
    c->add_option("--out", out, "Output model container")->required();
    c->add_option("--seed", seed)->capture_default_str();
    c->add_option("--d", cfg.d, "Embedding width")->capture_default_str();
    c->add_option("--heads", cfg.n_heads)->capture_default_str();
    c->add_option("--ffn", cfg.ffn_hidden, "FFN hidden width")->capture_default_str();
    c->add_option("--blocks", cfg.n_blocks)->capture_default_str();
    c->add_option("--activation", activation, "relu, gelu or silu")->capture_default_str();
    c->add_flag("--prenorm", cfg.prenorm, "RMS-normalise sub-module inputs");
    c->add_flag("--gated", cfg.gated, "Gated FFN");
    c->add_flag("--non-causal", non_causal);
  }

  int run(std::ostream& out_s) {
    try {
      cfg.activation = parse_activation(activation);
      cfg.causal = !non_causal;
      cfg.validate();
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    io::Container c;
    io::write_model(c, init_model(cfg, seed));
    c.meta["init.seed"] = std::to_string(seed);
    c.save(out);
    out_s << "wrote " << out << '\n';
    return kExitOk;
  }
};

struct TrainCmd {
  std::string model, corpus, out, log;
  train::TrainConfig tc;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("train", "Train a model on a byte corpus");
    c->add_option("--model", model)->required();
    c->add_option("--corpus", corpus)->required();
    c->add_option("--out", out)->required();
    c->add_option("--steps", tc.steps)->capture_default_str();
    c->add_option("--batch", tc.batch_size)->capture_default_str();
    c->add_option("--seq-len", tc.seq_len)->capture_default_str();
    c->add_option("--lr", tc.learning_rate)->capture_default_str();
    c->add_option("--clip", tc.grad_clip)->capture_default_str();
    c->add_option("--seed", tc.seed)->capture_default_str();
    c->add_option("--log", log, "CSV of step,loss,grad_norm");
  }

  int run(std::ostream& out_s) {
    try {
      tc.validate();
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    const Model m = io::read_model(io::Container::load(model));
    const auto text = calib::Corpus::from_file(corpus);
    std::ostringstream csv;
    csv << "step,loss,grad_norm\n";
    const Model trained = train::train(m, text, tc, [&](const train::StepLog& s) {
      csv << s.step << ',' << eval::format_double(s.loss) << ',' << eval::format_double(s.grad_norm) << '\n';
      if (s.step % 100 == 0 || s.step + 1 == tc.steps) {
        out_s << "step " << s.step << " loss " << eval::format_double(s.loss) << '\n';
      }
    });
    io::Container c;
    io::write_model(c, trained);
    c.meta["train.steps"] = std::to_string(tc.steps);
    c.meta["train.seed"] = std::to_string(tc.seed);
    c.save(out);
    if (!log.empty()) write_text(log, csv.str());
    return kExitOk;
  }
};

struct CalibrateCmd {
  std::string model, corpus, out;
  calib::CalibSpec spec;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("calibrate", "Collect mean |X^H| and |X^U| per channel");
    c->add_option("--model", model)->required();
    c->add_option("--corpus", corpus)->required();
    c->add_option("--out", out)->required();
    c->add_option("--samples", spec.n_samples)->capture_default_str();
    c->add_option("--seq-len", spec.seq_len)->capture_default_str();
    c->add_option("--seed", spec.seed)->capture_default_str();
  }

  int run(std::ostream& out_s, const Globals& g) {
    const Model m = io::read_model(io::Container::load(model));
    try {
      spec.validate(m.config);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    const auto text = calib::Corpus::from_file(corpus);
    io::Container c;
    io::write_stats(c, calib::collect_stats(m, calib::sample_calibration(text, spec), g.threads));
    c.meta["calib.seed"] = std::to_string(spec.seed);
    c.save(out);
    out_s << "wrote " << out << '\n';
    return kExitOk;
  }
};

struct ScoreCmd {
  std::string model, out, method = "bip";
  std::uint64_t seed = 0;
  bool include_c = false;
  StatsSource stats;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("score", "Compute channel and head importance scores");
    c->add_option("--model", model)->required();
    c->add_option("--out", out)->required();
    c->add_option("--method", method, "bip, wanda, magnitude, random or nisp")->capture_default_str();
    c->add_option("--seed", seed)->capture_default_str();
    c->add_flag("--include-c", include_c, "Multiply MSA scores by max(C_sigma, 1)");
    stats.add_to(c);
  }

  int run(std::ostream& out_s, const Globals& g) {
    const score::ScoreConfig sc{{method_arg(method), seed}, include_c};
    const Model m = io::read_model(io::Container::load(model));
    const auto st = stats.load(m, sc.method.needs_stats(), seed, g.threads);
    io::Container c;
    io::write_scores(c, score::compute_scores(sc, st ? &*st : nullptr, m, g.threads));
    c.save(out);
    out_s << "wrote " << out << '\n';
    return kExitOk;
  }
};

struct PruneCmd {
  std::string model, out, method = "bip";
  double ratio = 0.0;
  std::uint64_t seed = 0;
  bool include_c = false;
  StatsSource stats;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("prune", "Score, select and compact (calibrate first if needed)");
    c->add_option("--model", model)->required();
    c->add_option("--out", out)->required();
    c->add_option("--method", method)->capture_default_str();
    c->add_option("--ratio", ratio, "Sparsity r in [0, 1)")->required();
    c->add_option("--seed", seed)->capture_default_str();
    c->add_flag("--include-c", include_c);
    stats.add_to(c);
  }

  int run(std::ostream& out_s, const Globals& g) {
    check_ratio(ratio);
    const score::ScoreConfig sc{{method_arg(method), seed}, include_c};
    const Model m = io::read_model(io::Container::load(model));
    const auto st = stats.load(m, sc.method.needs_stats(), seed, g.threads);
    const auto r = pipeline::prune_model(m, st ? &*st : nullptr, sc, ratio, g.threads);
    io::Container c;
    io::write_model(c, r.pruned);
    io::write_mask(c, r.mask);
    io::write_scores(c, r.scores);
    c.meta["prune.method"] = method;
    c.save(out);
    const auto before = prune::count_prunable(m), after = prune::count_prunable(r.pruned);
    out_s << "prunable params " << before.prunable() << " -> " << after.prunable() << "; wrote " << out << '\n';
    return kExitOk;
  }
};

void print_table(std::ostream& os, const std::vector<eval::EvalReport>& reports) {
  os << std::left << std::setw(10) << "method" << std::setw(7) << "ratio" << std::setw(14) << "final_recon"
     << std::setw(12) << "ppl" << std::setw(12) << "kl" << std::setw(10) << "params" << "macs\n";
  for (const auto& r : reports) {
    os << std::setw(10) << r.method << std::setw(7) << eval::format_double(r.ratio) << std::setw(14)
       << eval::format_double(r.recon_error.empty() ? 0.0 : r.recon_error.back()) << std::setw(12)
       << eval::format_double(r.perplexity_pruned) << std::setw(12) << eval::format_double(r.kl_mean)
       << std::setw(10) << r.params_pruned << r.macs_pruned << '\n';
  }
}

struct EvalCmd {
  std::string dense, pruned, corpus, report, csv;
  std::size_t seq_len = 128, windows = 16;
  std::uint64_t seed = 0;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("eval", "Compare a pruned container against its dense model");
    c->add_option("--dense", dense)->required();
    c->add_option("--pruned", pruned, "Container written by `prune`")->required();
    c->add_option("--corpus", corpus, "Held-out text")->required();
    c->add_option("--seq-len", seq_len)->capture_default_str();
    c->add_option("--windows", windows, "Windows for reconstruction error and KL")->capture_default_str();
    c->add_option("--seed", seed)->capture_default_str();
    c->add_option("--report", report, "Key-value report path");
    c->add_option("--csv", csv, "CSV rows path");
  }

  int run(std::ostream& out_s, const Globals& g) {
    if (windows == 0) throw UsageError("--windows must be >= 1");
    const Model d = io::read_model(io::Container::load(dense));
    const auto pc = io::Container::load(pruned);
    pipeline::PruneResult pr;
    pr.pruned = io::read_model(pc);
    pr.mask = io::read_mask(pc);
    const std::string method = pc.meta.contains("prune.method") ? pc.meta_at("prune.method") : "unknown";
    const double ratio = pr.mask.ratio.value_or(0.0);
    if (pr.pruned.config != d.config) throw std::runtime_error("pruned container does not derive from this dense model");
    if (prune::apply_prune(d, pr.mask) != pr.pruned) {
      throw std::runtime_error("pruned weights do not match the dense model under the stored mask");
    }
    const auto text = calib::Corpus::from_file(corpus);
    const auto data = pipeline::make_eval_data(text, seq_len, windows, seed);
    const auto r = pipeline::evaluate(d, pr, method, ratio, data, g.threads);
    std::ostringstream kv, rows;
    eval::write_kv(kv, r);
    eval::write_csv_header(rows);
    eval::write_csv_rows(rows, r);
    if (!report.empty()) write_text(report, kv.str());
    if (!csv.empty()) write_text(csv, rows.str());
    out_s << kv.str();
    return kExitOk;
  }
};

struct BoundCmd {
  pipeline::BoundTrialConfig cfg;
  std::string activation = "relu";

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("bound-check", "Numerically verify the block reconstruction-error bounds");
    c->add_option("--trials", cfg.trials)->capture_default_str();
    c->add_option("--activation", activation)->capture_default_str();
    c->add_option("--seed", cfg.seed)->capture_default_str();
    c->add_option("--tokens", cfg.tokens)->capture_default_str();
    c->add_option("--d", cfg.d)->capture_default_str();
    c->add_option("--heads", cfg.n_heads)->capture_default_str();
    c->add_option("--ffn", cfg.ffn)->capture_default_str();
    c->add_option("--ratios", cfg.ratios)->delimiter(',')->capture_default_str();
    c->add_option("--weight-sd", cfg.weight_sd)->capture_default_str();
    c->add_option("--tolerance", cfg.rel_tolerance, "Allowed violation relative to max RHS")->capture_default_str();
  }

  int run(std::ostream& out_s, const Globals& g) {
    try {
      cfg.activation = parse_activation(activation);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    for (double r : cfg.ratios) check_ratio(r);
    const auto s = pipeline::run_bound_trials(cfg, g.threads);
    out_s << "activation=" << to_string(cfg.activation) << '\n'
          << "trials=" << s.trials << '\n'
          << "failures=" << s.failures << '\n'
          << "worst_relative_violation=" << eval::format_double(s.worst_relative) << '\n'
          << "max_violation=" << eval::format_double(s.max_violation) << '\n'
          << "min_slack=" << eval::format_double(s.min_slack) << '\n';
    return s.failures == 0 ? kExitOk : kExitFailure;
  }
};

struct OracleCmd {
  pipeline::OracleConfig cfg;
  std::string activation = "gelu";

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("oracle", "Rank the score-selected FFN mask among all masks");
    c->add_option("--ffn-size", cfg.ffn)->capture_default_str();
    c->add_option("--keep", cfg.keep)->capture_default_str();
    c->add_option("--trials", cfg.trials)->capture_default_str();
    c->add_option("--tokens", cfg.tokens)->capture_default_str();
    c->add_option("--d", cfg.d)->capture_default_str();
    c->add_option("--heads", cfg.n_heads)->capture_default_str();
    c->add_option("--activation", activation)->capture_default_str();
    c->add_option("--weight-sd", cfg.weight_sd)->capture_default_str();
    c->add_option("--seed", cfg.seed)->capture_default_str();
  }

  int run(std::ostream& out_s, const Globals& g) {
    try {
      cfg.activation = parse_activation(activation);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    if (cfg.keep == 0 || cfg.keep > cfg.ffn) throw UsageError("--keep must lie in [1, --ffn-size]");
    if (eval::binomial(cfg.ffn, cfg.keep) > eval::kMaxEnumeratedMasks) {
      throw UsageError("C(" + std::to_string(cfg.ffn) + ", " + std::to_string(cfg.keep) + ") exceeds the enumeration limit");
    }
    const auto s = pipeline::run_oracle_trials(cfg, g.threads);
    out_s << "trial,rank,n_masks,quantile,score_error,best_error,median_error\n";
    for (std::size_t t = 0; t < s.trials.size(); ++t) {
      const auto& tr = s.trials[t];
      out_s << t << ',' << tr.rank << ',' << tr.n_masks << ','
            << eval::format_double(static_cast<double>(tr.rank) / static_cast<double>(tr.n_masks)) << ','
            << eval::format_double(tr.score_error) << ',' << eval::format_double(tr.best_error) << ','
            << eval::format_double(tr.median_error) << '\n';
    }
    out_s << "within_best_20pct=" << eval::format_double(s.frac_within_best_20) << '\n'
          << "beats_median=" << eval::format_double(s.frac_beats_median) << '\n'
          << "pass=" << (s.pass() ? "true" : "false") << '\n';
    return s.pass() ? kExitOk : kExitFailure;
  }
};

struct CompareCmd {
  std::string model, corpus, eval_corpus, out, out_dir;
  std::vector<std::string> methods;
  pipeline::CompareConfig cfg;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("compare", "Run every method at every ratio and emit one CSV");
    c->add_option("--model", model)->required();
    c->add_option("--corpus", corpus, "Calibration corpus")->required();
    c->add_option("--eval-corpus", eval_corpus, "Held-out corpus (defaults to --corpus)");
    c->add_option("--out", out, "CSV path")->required();
    c->add_option("--out-dir", out_dir, "Directory for one pruned container per method and ratio");
    c->add_option("--methods", methods, "Comma list; default all")->delimiter(',');
    c->add_option("--ratios", cfg.ratios)->delimiter(',')->capture_default_str();
    c->add_option("--samples", cfg.calib.n_samples)->capture_default_str();
    c->add_option("--seq-len", cfg.calib.seq_len)->capture_default_str();
    c->add_option("--eval-seq-len", cfg.eval_seq_len)->capture_default_str();
    c->add_option("--windows", cfg.eval_windows)->capture_default_str();
    c->add_option("--seed", cfg.seed)->capture_default_str();
    c->add_flag("--include-c", cfg.include_constant_c);
  }

  int run(std::ostream& out_s, const Globals& g) {
    if (!methods.empty()) {
      cfg.methods.clear();
      for (const auto& m : methods) cfg.methods.push_back(method_arg(m));
    }
    for (double r : cfg.ratios) check_ratio(r);
    if (cfg.eval_windows == 0) throw UsageError("--windows must be >= 1");
    cfg.calib.seed = derive_seed(cfg.seed, "calib");
    cfg.threads = g.threads;
    const Model dense = io::read_model(io::Container::load(model));
    try {
      cfg.calib.validate(dense.config);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    const auto calib_text = calib::Corpus::from_file(corpus);
    const auto eval_text = eval_corpus.empty() ? calib_text : calib::Corpus::from_file(eval_corpus);
    if (!out_dir.empty()) std::filesystem::create_directories(out_dir);

    const auto reports = pipeline::compare(dense, calib_text, eval_text, cfg, [&](const pipeline::CompareEntry& e) {
      if (out_dir.empty()) return;
      io::Container c;
      io::write_model(c, e.result.pruned);
      io::write_mask(c, e.result.mask);
      io::write_scores(c, e.result.scores);
      c.meta["prune.method"] = e.report.method;
      char name[64];
      std::snprintf(name, sizeof name, "%s_r%.3f.bip", e.report.method.c_str(), e.report.ratio);
      c.save((std::filesystem::path(out_dir) / name).string());
    });
    std::ostringstream csv;
    eval::write_csv_header(csv);
    for (const auto& r : reports) eval::write_csv_rows(csv, r);
    write_text(out, csv.str());
    print_table(out_s, reports);
    return kExitOk;
  }
};

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Block-wise structured pruning toolkit for small transformer LMs", "bip"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--threads", g.threads, "Worker threads for per-block and per-trial loops")->capture_default_str();
  app.add_flag("--time", g.time, "Print elapsed wall time");

  InitCmd init_cmd;
  TrainCmd train_cmd;
  CalibrateCmd calibrate_cmd;
  ScoreCmd score_cmd;
  PruneCmd prune_cmd;
  EvalCmd eval_cmd;
  BoundCmd bound_cmd;
  OracleCmd oracle_cmd;
  CompareCmd compare_cmd;
  init_cmd.add(app);
  train_cmd.add(app);
  calibrate_cmd.add(app);
  score_cmd.add(app);
  prune_cmd.add(app);
  eval_cmd.add(app);
  bound_cmd.add(app);
  oracle_cmd.add(app);
  compare_cmd.add(app);

  std::vector<const char*> argv{"bip"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitUsage;
  }

  const auto t0 = std::chrono::steady_clock::now();
  int code = kExitFailure;
  try {
    if (g.threads < 1) throw UsageError("--threads must be >= 1");
    const std::string cmd = app.get_subcommands().front()->get_name();
    if (cmd == "init") code = init_cmd.run(out);
    else if (cmd == "train") code = train_cmd.run(out);
    else if (cmd == "calibrate") code = calibrate_cmd.run(out, g);
    else if (cmd == "score") code = score_cmd.run(out, g);
    else if (cmd == "prune") code = prune_cmd.run(out, g);
    else if (cmd == "eval") code = eval_cmd.run(out, g);
    else if (cmd == "bound-check") code = bound_cmd.run(out, g);
    else if (cmd == "oracle") code = oracle_cmd.run(out, g);
    else if (cmd == "compare") code = compare_cmd.run(out, g);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  if (g.time) {
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    err << "elapsed " << eval::format_double(s) << " s\n";
  }
  return code;
}

}  // namespace bip::cli
