#include <cmath>

#include "doctest.h"
#include "gradcheck.hpp"
#include "helpers.hpp"

#include "bip/textgen.hpp"
#include "bip/train.hpp"

using namespace bip;
using namespace bip::train;

namespace {

ModelConfig tiny(bool prenorm, bool gated, ActivationKind act = ActivationKind::GeLU) {
  ModelConfig cfg = testutil::small_config(8, 2, 16, 1);
  cfg.prenorm = prenorm;
  cfg.gated = gated;
  cfg.activation = act;
  return cfg;
}

// Init with every family at a scale where gradients are not vanishingly small.
BasicModel<double> check_model(const ModelConfig& cfg, std::uint64_t seed) {
  Model m = init_model(cfg, seed);
  Rng rng(seed + 17);
  for_each_parameter(m, [&](const std::string&, Matrix& p) {
    for (auto& v : p.values()) v = static_cast<float>(rng.normal(0.0, 0.5));
  });
  return m.cast<double>();
}

}  // namespace

TEST_SUITE("train") {

TEST_CASE("config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.steps = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = {};
  c.learning_rate = -1e-3;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = {};
  c.adam_beta1 = 1.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = {};
  c.adam_beta2 = 0.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = {};
  c.grad_clip = 0.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("uniform logits give ln 256") {
  const Model m = zero_model<float>(tiny(true, false));
  const std::vector<TokenSeq> batch = {testutil::random_tokens(20, 1), testutil::random_tokens(9, 2)};
  CHECK(loss_and_grads(m, batch).loss == doctest::Approx(std::log(256.0)).epsilon(1e-6));
  CHECK(loss_value(m.cast<double>(), batch) == doctest::Approx(std::log(256.0)).epsilon(1e-12));
}

TEST_CASE("absent bytes get exactly zero embedding gradient") {
  Model m = init_model(tiny(true, false), 3);
  const std::vector<TokenSeq> batch = {{1, 2, 3, 4, 5, 1, 2}};
  const auto g = loss_and_grads(m, batch).grads;
  for (std::size_t row : {0u, 6u, 7u, 100u, 255u})  // 7 is a target only, never an input
    for (std::size_t k = 0; k < 8; ++k) CHECK(g.embedding(row, k) == 0.0f);
  double used = 0;
  for (std::size_t k = 0; k < 8; ++k) used += std::abs(g.embedding(1, k));
  CHECK(used > 0.0);
  // Positions past the longest input row are untouched too.
  for (std::size_t k = 0; k < 8; ++k) CHECK(g.position(6, k) == 0.0f);
}

TEST_CASE("float and double gradients agree") {
  const ModelConfig cfg = tiny(true, true);
  const BasicModel<double> md = check_model(cfg, 4);
  const std::vector<TokenSeq> batch = {testutil::random_tokens(12, 3), testutil::random_tokens(12, 4)};
  const auto gd = loss_and_grads(md, batch);
  const auto gf = loss_and_grads(md.cast<float>(), batch);
  CHECK(gf.loss == doctest::Approx(gd.loss).epsilon(1e-5));
  CHECK(global_grad_norm(gf.grads) == doctest::Approx(global_grad_norm(gd.grads)).epsilon(1e-4));
}

TEST_CASE("analytic gradients match central differences") {
  const std::vector<TokenSeq> batch = {testutil::random_tokens(10, 5), testutil::random_tokens(7, 6)};
  for (bool prenorm : {false, true}) {
    for (bool gated : {false, true}) {
      for (auto act : {ActivationKind::ReLU, ActivationKind::GeLU, ActivationKind::SiLU}) {
        const auto errs = testutil::gradient_check(check_model(tiny(prenorm, gated, act), 7), batch, 50, 8);
        for (const auto& [family, e] : errs) {
          INFO(family << " prenorm=" << prenorm << " gated=" << gated << " act=" << to_string(act));
          CHECK(e.coords == 50);
          CHECK(e.max_rel <= 1e-3);
        }
        CHECK(errs.size() == (gated ? 10u : 9u));
      }
    }
  }
}

TEST_CASE("non-causal models are rejected") {
  ModelConfig cfg = tiny(true, false);
  cfg.causal = false;
  const std::vector<TokenSeq> batch = {{1, 2, 3}};
  CHECK_THROWS_AS(loss_and_grads(zero_model<float>(cfg), batch), std::invalid_argument);
}

TEST_CASE("zero learning rate leaves parameters bitwise unchanged") {
  ModelConfig cfg = testutil::small_config(16, 4, 32, 2);
  cfg.prenorm = true;
  const Model m = init_model(cfg, 9);
  const calib::Corpus c{textgen::generate(20'000, 1), "t"};
  TrainConfig tc;
  tc.steps = 5;
  tc.seq_len = 32;
  tc.learning_rate = 0.0;
  CHECK(train::train(m, c, tc) == m);
}

TEST_CASE("training is deterministic and reduces the loss") {
  ModelConfig cfg = testutil::small_config(32, 4, 64, 2);
  cfg.prenorm = true;
  const Model m = init_model(cfg, 10);
  const calib::Corpus c{textgen::generate(100'000, 2), "t"};
  TrainConfig tc;
  tc.steps = 51;
  tc.seq_len = 32;
  tc.seed = 4;
  std::vector<double> losses;
  const Model a = train::train(m, c, tc, [&](const StepLog& s) { losses.push_back(s.loss); });
  REQUIRE(losses.size() == 51);
  CHECK(losses[50] < losses[0]);
  CHECK(train::train(m, c, tc) == a);
  CHECK_FALSE(a == m);
}

TEST_CASE("training preconditions") {
  ModelConfig cfg = testutil::small_config(8, 2, 16, 1);
  cfg.prenorm = true;
  const Model m = init_model(cfg, 11);
  TrainConfig tc;
  tc.steps = 1;
  tc.seq_len = 32;
  CHECK_THROWS_AS(train::train(m, calib::Corpus{"too short", "s"}, tc), std::invalid_argument);
  tc.seq_len = cfg.max_seq + 1;
  CHECK_THROWS_AS(train::train(m, calib::Corpus{std::string(1000, 'a'), "a"}, tc), std::invalid_argument);
}

TEST_CASE("divergence is reported with its step") {
  ModelConfig cfg = testutil::small_config(8, 2, 16, 1);
  Model m = init_model(cfg, 12);
  m.lm_head(0, 0) = std::numeric_limits<float>::quiet_NaN();
  TrainConfig tc;
  tc.steps = 3;
  tc.seq_len = 16;
  try {
    (void)train::train(m, calib::Corpus{textgen::generate(1000, 3), "t"}, tc);
    FAIL("expected divergence");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("at step 0") != std::string::npos);
  }
}

}
