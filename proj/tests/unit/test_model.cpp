#include <cmath>

#include "doctest.h"
#include "helpers.hpp"

#include "bip/model.hpp"

using namespace bip;
using testutil::random_matrix;

namespace {

Model random_model(const ModelConfig& cfg, std::uint64_t seed) {
  Model m = init_model(cfg, seed);
  // init keeps the embeddings small; widen them so every path carries signal.
  Rng rng(seed + 1000);
  m.embedding = random_matrix(cfg.vocab, cfg.d, rng);
  m.position = random_matrix(cfg.max_seq, cfg.d, rng, 0.1);
  return m;
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("zero weights pass the input through both residuals") {
  const ModelConfig cfg = testutil::small_config();
  const BlockWeights w = zero_model<float>(cfg).blocks[0];
  const Matrix x = random_matrix(5, cfg.d, 1);
  const BlockTrace t = block_forward(x, w, cfg);
  CHECK(t.x_out == x);
  CHECK(t.x_mid == x);
}

TEST_CASE("all-ones masks are bitwise identical to no masks") {
  ModelConfig cfg = testutil::small_config(8, 2, 16);
  for (bool gated : {false, true}) {
    cfg.gated = gated;
    const BlockWeights w = random_block(cfg, 3, 0.5f);
    const Matrix x = random_matrix(4, 8, 4);
    const BlockTrace a = block_forward(x, w, cfg);
    const BlockTrace b = block_forward(x, w, cfg, ChannelMask(8, 1), ChannelMask(16, 1));
    CHECK(a.x_head_out == b.x_head_out);
    CHECK(a.x_mid == b.x_mid);
    CHECK(a.x_ffn_hidden == b.x_ffn_hidden);
    CHECK(a.x_out == b.x_out);
  }
}

TEST_CASE("zero FFN mask leaves only the attention residual") {
  const ModelConfig cfg = testutil::small_config();
  const BlockWeights w = random_block(cfg, 5, 0.5f);
  const BlockTrace t = block_forward(random_matrix(6, 8, 6), w, cfg, {}, ChannelMask(16, 0));
  CHECK(t.x_out == t.x_mid);
}

TEST_CASE("residual identity X' = X^H W^O + X") {
  for (bool prenorm : {false, true}) {
    ModelConfig cfg = testutil::small_config(16, 4, 32);
    cfg.prenorm = prenorm;
    const BlockWeights w = random_block(cfg, 7, 0.5f);
    const Matrix x = random_matrix(9, 16, 8);
    const BlockTrace t = block_forward(x, w, cfg);
    Matrix expect = matmul(t.x_head_out, w.wo);
    add_inplace(expect, x);
    CHECK(testutil::max_rel_diff(t.x_mid, expect) <= 1e-5);
  }
}

TEST_CASE("shape errors") {
  const ModelConfig cfg = testutil::small_config();
  const BlockWeights w = random_block(cfg, 1, 0.5f);
  CHECK_THROWS_AS(block_forward(Matrix(3, 7), w, cfg), std::invalid_argument);
  CHECK_THROWS_AS(block_forward(Matrix(3, 8), w, cfg, ChannelMask(7, 1)), std::invalid_argument);
  CHECK_THROWS_AS(block_forward(Matrix(3, 8), w, cfg, {}, ChannelMask(15, 1)), std::invalid_argument);
  ModelConfig bad = cfg;
  bad.n_heads = 3;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("zero-weight LM gives embedding times lm_head") {
  const ModelConfig cfg = testutil::small_config();
  Model m = zero_model<float>(cfg);
  m.embedding = random_matrix(cfg.vocab, cfg.d, 9);
  m.lm_head = random_matrix(cfg.d, cfg.vocab, 10);
  const TokenSeq toks = {3, 200, 17, 3};
  const Matrix logits = model_logits(m, toks);
  for (std::size_t t = 0; t < toks.size(); ++t) {
    Matrix e(1, cfg.d);
    for (std::size_t j = 0; j < cfg.d; ++j) e(0, j) = m.embedding(toks[t], j);
    const Matrix expect = matmul(e, m.lm_head);
    for (std::size_t v = 0; v < cfg.vocab; ++v) CHECK(logits(t, v) == expect(0, v));
  }
}

TEST_CASE("sequences do not interact and forwards are deterministic") {
  ModelConfig cfg = testutil::small_config(16, 4, 32, 2);
  cfg.prenorm = true;
  const Model m = random_model(cfg, 11);
  const TokenSeq a = testutil::random_tokens(12, 1), b = testutil::random_tokens(12, 2);
  const Matrix la = model_logits(m, a);
  (void)model_logits(m, b);
  CHECK(model_logits(m, a) == la);
  CHECK(model_forward(m, a).logits == la);
}

TEST_CASE("causal: later tokens never change earlier logits") {
  ModelConfig cfg = testutil::small_config(16, 4, 32, 2);
  const Model m = random_model(cfg, 12);
  TokenSeq toks = testutil::random_tokens(20, 3);
  const Matrix before = model_logits(m, toks);
  for (std::size_t t : {5u, 12u, 19u}) {
    TokenSeq changed = toks;
    for (std::size_t k = t + 1; k < changed.size(); ++k) changed[k] = static_cast<Token>(changed[k] ^ 0x5a);
    const Matrix after = model_logits(m, changed);
    for (std::size_t r = 0; r <= t; ++r)
      for (std::size_t v = 0; v < cfg.vocab; ++v) REQUIRE(after(r, v) == before(r, v));
  }
}

TEST_CASE("non-causal attention does see later tokens") {
  ModelConfig cfg = testutil::small_config(16, 4, 32, 1);
  cfg.causal = false;
  const Model m = random_model(cfg, 13);
  TokenSeq toks = testutil::random_tokens(8, 4);
  const Matrix before = model_logits(m, toks);
  toks.back() ^= 1;
  CHECK_FALSE(model_logits(m, toks).row(0)[0] == before.row(0)[0]);
}

TEST_CASE("token range and length are enforced") {
  ModelConfig cfg = testutil::small_config();
  cfg.vocab = 100;
  const Model m = zero_model<float>(cfg);
  CHECK_THROWS_AS(model_logits(m, TokenSeq{1, 150}), std::out_of_range);
  CHECK_THROWS(model_logits(m, TokenSeq(cfg.max_seq + 1, 1)));
}

TEST_CASE("dropping a ReLU channel with nonnegative pre-activation subtracts its W^D row") {
  ModelConfig cfg = testutil::small_config();
  cfg.activation = ActivationKind::ReLU;
  BlockWeights w = random_block(cfg, 14, 0.5f);
  w.wo = Matrix(cfg.d, cfg.d);  // X' = X
  Rng rng(15);
  Matrix x(5, cfg.d);
  for (auto& v : x.values()) v = static_cast<float>(std::abs(rng.normal()));
  const std::size_t j = 6;
  for (std::size_t k = 0; k < cfg.d; ++k) w.wu(k, j) = std::abs(w.wu(k, j));

  const BlockTrace full = block_forward(x, w, cfg);
  ChannelMask drop(cfg.ffn_hidden, 1);
  drop[j] = 0;
  const BlockTrace masked = block_forward(x, w, cfg, {}, drop);
  for (std::size_t t = 0; t < x.rows(); ++t) {
    REQUIRE(full.x_ffn_hidden(t, j) >= 0.0f);
    for (std::size_t k = 0; k < cfg.d; ++k) {
      const double expect = double(full.x_out(t, k)) - double(full.x_ffn_hidden(t, j)) * w.wd(j, k);
      CHECK(masked.x_out(t, k) == doctest::Approx(expect).epsilon(1e-5).scale(1.0));
    }
  }
}

TEST_CASE("head masks expand to contiguous channel ranges") {
  const std::vector<std::uint8_t> keep = {1, 0, 1};
  CHECK(expand_head_mask(keep, 2) == ChannelMask{1, 1, 0, 0, 1, 1});
}

TEST_CASE("init is seeded") {
  const ModelConfig cfg = testutil::small_config(16, 4, 32, 2);
  CHECK(init_model(cfg, 5) == init_model(cfg, 5));
  CHECK_FALSE(init_model(cfg, 5) == init_model(cfg, 6));
  CHECK(random_block(cfg, 5, 0.5f) == random_block(cfg, 5, 0.5f));
}

}
