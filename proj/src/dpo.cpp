// SPDX-License-Identifier: Apache-2.0
#include "recap/dpo.hpp"

#include <cmath>

#include "recap/errors.hpp"

namespace recap {

void DpoConfig::validate() const {
  if (!(beta > 0.0) || !std::isfinite(beta)) throw InvalidArgument("beta must be finite and > 0");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw InvalidArgument("learning_rate must be finite and >= 0");
  }
  if (batch_size == 0) throw InvalidArgument("batch_size must be positive");
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

double implicit_reward(double lp_theta, double lp_ref, double beta) {
  return beta * (lp_theta - lp_ref);
}

double reward_margin(const PairLogProbs& lp, double beta) {
  return implicit_reward(lp.lp_w_theta, lp.lp_w_ref, beta) -
         implicit_reward(lp.lp_l_theta, lp.lp_l_ref, beta);
}

double dpo_loss(std::span<const PairLogProbs> batch, double beta) {
  if (batch.empty()) throw EmptyBatch("dpo_loss on an empty batch");
  double total = 0.0;
  for (const auto& lp : batch) {
    if (!std::isfinite(lp.lp_w_theta) || !std::isfinite(lp.lp_w_ref) ||
        !std::isfinite(lp.lp_l_theta) || !std::isfinite(lp.lp_l_ref)) {
      throw InvalidArgument("non-finite log-probability in batch");
    }
    total += softplus(-reward_margin(lp, beta));
  }
  return total / static_cast<double>(batch.size());
}

PairLogProbs pair_log_probs(const ToyPolicy& policy, const ToyPolicy& reference, const TokenPair& pair) {
  return {log_prob(policy, pair.context, pair.chosen), log_prob(reference, pair.context, pair.chosen),
          log_prob(policy, pair.context, pair.rejected),
          log_prob(reference, pair.context, pair.rejected)};
}

namespace {

void check_shapes(const ToyPolicy& policy, const ToyPolicy& reference) {
  if (!policy.same_shape(reference)) throw ShapeMismatch("policy and reference differ in shape");
}

}  // namespace

double dpo_loss(const ToyPolicy& policy, const ToyPolicy& reference, std::span<const TokenPair> batch,
                double beta) {
  check_shapes(policy, reference);
  std::vector<PairLogProbs> lps;
  lps.reserve(batch.size());
  for (const auto& p : batch) lps.push_back(pair_log_probs(policy, reference, p));
  return dpo_loss(lps, beta);
}

DpoGradient dpo_grad(const ToyPolicy& policy, const ToyPolicy& reference,
                     std::span<const TokenPair> batch, double beta) {
  check_shapes(policy, reference);
  if (batch.empty()) throw EmptyBatch("dpo_grad on an empty batch");
  DpoGradient out{Matrix(policy.num_contexts(), policy.vocab_size()), 0.0, 0.0, 0.0};
  const double n = static_cast<double>(batch.size());
  for (const auto& pair : batch) {
    const double margin = reward_margin(pair_log_probs(policy, reference, pair), beta);
    const double weight = sigmoid(-margin);
    out.loss += softplus(-margin);
    out.mean_margin += margin;
    out.mean_weight += weight;
    const double scale = -beta * weight / n;
    add_log_prob_grad(policy, pair.context, pair.chosen, scale, out.grad);
    add_log_prob_grad(policy, pair.context, pair.rejected, -scale, out.grad);
  }
  out.loss /= n;
  out.mean_margin /= n;
  out.mean_weight /= n;
  return out;
}

ToyPolicy sgd_step(const ToyPolicy& policy, const Matrix& gradient, double learning_rate) {
  if (!gradient.same_shape(policy.logits())) throw ShapeMismatch("gradient shape mismatch");
  if (!std::isfinite(learning_rate)) throw InvalidArgument("learning rate must be finite");
  for (double g : gradient.values()) {
    if (!std::isfinite(g)) throw NonFiniteGradient("gradient has a non-finite entry");
  }
  Matrix next = policy.logits();
  auto theta = next.values();
  const auto g = gradient.values();
  for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= learning_rate * g[i];
  return ToyPolicy(policy.max_len(), std::move(next));
}

Matrix nll_grad(const ToyPolicy& policy, std::span<const TokenExample> batch) {
  if (batch.empty()) throw EmptyBatch("nll_grad on an empty batch");
  Matrix g(policy.num_contexts(), policy.vocab_size());
  const double scale = -1.0 / static_cast<double>(batch.size());
  for (const auto& ex : batch) add_log_prob_grad(policy, ex.context, ex.tokens, scale, g);
  return g;
}

ToyPolicy train_sft(ToyPolicy policy, std::vector<TokenExample> data, const SftSchedule& schedule) {
  if (data.empty()) throw EmptyBatch("no SFT examples");
  if (schedule.batch_size == 0) throw InvalidArgument("batch_size must be positive");
  Rng rng(derive_seed(schedule.seed, "sft-shuffle"));
  for (std::size_t epoch = 0; epoch < schedule.epochs; ++epoch) {
    rng.shuffle(std::span<TokenExample>(data));
    for (std::size_t begin = 0; begin < data.size(); begin += schedule.batch_size) {
      const std::size_t end = std::min(data.size(), begin + schedule.batch_size);
      const std::span<const TokenExample> batch(data.data() + begin, end - begin);
      policy = sgd_step(policy, nll_grad(policy, batch), schedule.learning_rate);
    }
  }
  return policy;
}

}  // namespace recap
