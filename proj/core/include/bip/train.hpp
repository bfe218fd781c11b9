#pragma once

#include <cstdint>
#include <functional>
#include <span>

#include "bip/calib.hpp"
#include "bip/model.hpp"

namespace bip::train {

struct TrainConfig {
  std::size_t steps = 2000;
  std::size_t batch_size = 8;
  std::size_t seq_len = 64;
  double learning_rate = 3e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.99;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  double grad_clip = 1.0;

  void validate() const;
};

template <typename T>
struct LossAndGrads {
  double loss = 0.0;
  BasicModel<T> grads;  // same shapes as the model
};

/// Mean next-token cross-entropy over every sequence (input seq[0..n-2],
/// target seq[1..n-1]) and its exact gradient. Sequences are stacked and run
/// through one forward; gradients accumulate in sequence order.
LossAndGrads<float> loss_and_grads(const Model& model, std::span<const TokenSeq> batch);
/// Double-precision path for gradient checking.
LossAndGrads<double> loss_and_grads(const BasicModel<double>& model, std::span<const TokenSeq> batch);

/// Loss only, double precision.
double loss_value(const BasicModel<double>& model, std::span<const TokenSeq> batch);

template <typename T>
double global_grad_norm(const BasicModel<T>& grads);

struct StepLog {
  std::size_t step = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
};

/// Adam with bias correction and global-norm clipping on random
/// (seq_len + 1)-byte windows. Throws if the loss becomes non-finite.
Model train(Model model, const calib::Corpus& corpus, const TrainConfig& cfg,
            const std::function<void(const StepLog&)>& on_step = {});

}  // namespace bip::train
