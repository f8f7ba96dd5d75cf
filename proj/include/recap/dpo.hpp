// SPDX-License-Identifier: Apache-2.0
//
// DPO objective on the toy policy.
//
//   r(x, y)  = beta * (log pi_theta(y|x) - log pi_ref(y|x))
//   margin   = r(x, y_w) - r(x, y_l)
//   loss     = mean over pairs of -log sigmoid(margin) = softplus(-margin)
//   gradient = -beta * mean[ sigmoid(-margin) * (grad log pi(y_w|x) - grad log pi(y_l|x)) ]
//
// The reference policy is read-only everywhere in this module.
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "recap/toy_policy.hpp"

namespace recap {

struct DpoConfig {
  double beta = 0.1;
  double learning_rate = 1e-2;
  std::size_t batch_size = 64;

  void validate() const;
};

struct PairLogProbs {
  double lp_w_theta = 0.0;
  double lp_w_ref = 0.0;
  double lp_l_theta = 0.0;
  double lp_l_ref = 0.0;
};

/// A preference pair in model tokens, both sequences EOS-terminated.
struct TokenPair {
  std::size_t context = 0;
  TokenSeq chosen;
  TokenSeq rejected;
};

double sigmoid(double x);
/// log(1 + e^x), stable for large |x|.
double softplus(double x);

double implicit_reward(double lp_theta, double lp_ref, double beta);
double reward_margin(const PairLogProbs& lp, double beta);

double dpo_loss(std::span<const PairLogProbs> batch, double beta);

PairLogProbs pair_log_probs(const ToyPolicy& policy, const ToyPolicy& reference, const TokenPair& pair);

double dpo_loss(const ToyPolicy& policy, const ToyPolicy& reference, std::span<const TokenPair> batch,
                double beta);

struct DpoGradient {
  Matrix grad;               // d loss / d policy logits
  double loss = 0.0;
  double mean_margin = 0.0;
  double mean_weight = 0.0;  // mean sigmoid(-margin)
};

/// Gradient of the batch-mean DPO loss w.r.t. the policy logits. Pairs are
/// reduced in input order so the result is bit-reproducible.
DpoGradient dpo_grad(const ToyPolicy& policy, const ToyPolicy& reference,
                     std::span<const TokenPair> batch, double beta);

/// theta - lr * grad. Throws NonFiniteGradient (and leaves nothing updated)
/// if any gradient entry is not finite.
ToyPolicy sgd_step(const ToyPolicy& policy, const Matrix& gradient, double learning_rate);

/// A supervised example for the SFT stage.
struct TokenExample {
  std::size_t context = 0;
  TokenSeq tokens;
};

/// Gradient of the mean negative log-likelihood.
Matrix nll_grad(const ToyPolicy& policy, std::span<const TokenExample> batch);

struct SftSchedule {
  std::size_t batch_size = 128;
  std::size_t epochs = 10;
  double learning_rate = 1e-1;
  std::uint64_t seed = 0;
};

/// Minibatch SGD on the NLL, reshuffling each epoch with a seeded stream.
ToyPolicy train_sft(ToyPolicy policy, std::vector<TokenExample> data, const SftSchedule& schedule);

}  // namespace recap
