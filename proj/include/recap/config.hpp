// SPDX-License-Identifier: Apache-2.0
//
// Run configuration. The file format is INI: `[section]` headers and
// `key = value` lines, `;` or `#` comments. Parsing is strict: unknown
// sections or keys are a ConfigError. `serialize()` writes every field in a
// fixed order, and the config hash stamped into manifests is the SHA-256 of
// that text.
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "recap/chat_client.hpp"
#include "recap/dataset.hpp"
#include "recap/dpo.hpp"
#include "recap/pair_foundry.hpp"
#include "recap/toy_policy.hpp"

namespace recap {

/// Batch size, learning rate and epochs of one training stage. The learning
/// rates are the 7B LoRA values and are kept for reference; toy runs use
/// the [dpo] and [toy] learning rates instead.
struct StagePreset {
  std::size_t batch_size = 0;
  double learning_rate = 0.0;
  std::size_t epochs = 0;
};

struct EndpointSettings {
  std::string kind;  // generator: toy_policy|mock|http_chat, judge: oracle|mock|http_chat
  ChatEndpointConfig chat;
  std::string prompt;  // template path
  double mock_halluc_rate = 0.1;
  std::string canned;  // mock judge verdict file, optional
};

struct ToySettings {
  ToyWorldConfig world;
  BasePolicyShape base;
  std::size_t sft_records = 1000;
  std::size_t pair_records = 1000;  // fresh records per round
  std::size_t heldout_records = 1000;
  std::size_t sft_attempts = 4;  // teacher draws per record before giving up
  std::size_t review_max_halluc = 0;
  double sft_learning_rate = 0.1;
  double lambda_halluc = 1.0;
};

struct PipelineConfig {
  std::uint64_t seed = 0;
  std::size_t workers = 4;
  std::size_t max_rounds = 2;
  bool reuse_old_pairs = false;

  StagePreset sft{128, 1e-5, 10};
  StagePreset dpo{64, 5e-6, 1};
  StagePreset cdpo{64, 5e-6, 1};
  // Image pixel bounds for the large-model presets. Nothing here processes images.
  std::uint64_t resolution_min = 3136;
  std::uint64_t resolution_max = 12845056;

  SamplerParams sampler;
  BalanceConfig balance;
  std::size_t plateau_window = 4;
  double plateau_delta = 0.005;

  // Toy-scale DPO.
  double beta = 0.5;
  double learning_rate = 1.0;
  std::size_t max_steps = 3000;  // per round
  std::size_t eval_every = 25;
  std::size_t eval_samples = 1000;

  EndpointSettings generator{"toy_policy", {}, "prompts/sft/v1.txt", 0.1, {}};
  EndpointSettings judge{"oracle", {}, "prompts/judge/v1.txt", 0.1, {}};
  ToySettings toy;

  void validate() const;
  std::string serialize() const;
  std::string hash() const;

  static PipelineConfig parse(std::string_view text);
  static PipelineConfig load(const std::filesystem::path& path);
};

}  // namespace recap
