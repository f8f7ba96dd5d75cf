// SPDX-License-Identifier: Apache-2.0
//
// Desk-scale stand-in for a captioning VLM: a context-conditioned categorical
// policy over a small vocabulary, plus the synthetic "scene" world whose exact
// oracle replaces the critic and the hallucination judge.
//
// Generation model: at each of the first L-1 steps a token is drawn i.i.d.
// from softmax(logits[context]); drawing EOS (id 0) stops. If L-1 tokens are
// drawn without EOS, EOS is appended with probability one. Under this rule
// the probabilities of all valid sequences sum to exactly one.
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "recap/dataset.hpp"
#include "recap/judgment.hpp"
#include "recap/rng.hpp"

namespace recap {

using Token = std::uint32_t;
using TokenSeq = std::vector<Token>;
inline constexpr Token kEos = 0;

/// Dense row-major matrix. Holds policy logits and their gradients.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  bool same_shape(const Matrix& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }
  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

class ToyPolicy {
 public:
  /// All-zero (uniform) logits.
  ToyPolicy(std::size_t vocab_size, std::size_t num_contexts, std::size_t max_len);
  ToyPolicy(std::size_t max_len, Matrix logits);

  std::size_t vocab_size() const noexcept { return logits_.cols(); }
  std::size_t num_contexts() const noexcept { return logits_.rows(); }
  std::size_t max_len() const noexcept { return max_len_; }
  std::size_t num_parameters() const noexcept { return logits_.size(); }

  const Matrix& logits() const noexcept { return logits_; }
  std::span<const double> row(std::size_t context) const;

  bool same_shape(const ToyPolicy& o) const noexcept {
    return max_len_ == o.max_len_ && logits_.same_shape(o.logits_);
  }
  bool operator==(const ToyPolicy&) const = default;

 private:
  std::size_t max_len_;
  Matrix logits_;
};

std::vector<double> log_softmax(std::span<const double> logits);
std::vector<double> softmax(std::span<const double> logits);

/// Throws TokenOutOfRange / InvalidArgument unless `seq` is a valid
/// generation for `policy` in `context`.
void validate_sequence(const ToyPolicy& policy, std::size_t context, std::span<const Token> seq);

/// Number of positions in `seq` that were actually sampled (the forced
/// final EOS of a full-length sequence is not).
std::size_t sampled_steps(std::size_t max_len, std::span<const Token> seq);

double log_prob(const ToyPolicy& policy, std::size_t context, std::span<const Token> seq);

/// d log_prob / d logits. Only row `context` is nonzero.
Matrix log_prob_grad(const ToyPolicy& policy, std::size_t context, std::span<const Token> seq);

/// out += scale * d log_prob / d logits, without allocating a full matrix.
void add_log_prob_grad(const ToyPolicy& policy, std::size_t context, std::span<const Token> seq,
                       double scale, Matrix& out);

/// Per-step token distribution after temperature, top-k and top-p
/// truncation, renormalized. Ties in ranking go to the lower token id.
std::vector<double> step_distribution(std::span<const double> logits, const SamplerParams& params);

TokenSeq sample(const ToyPolicy& policy, std::size_t context, const SamplerParams& params, Rng& rng);

// Checkpoints: "RCAPPOL1", then u32 version, V, C, L (little endian), then
// C*V IEEE-754 doubles in little-endian byte order, row major.
std::string encode_checkpoint(const ToyPolicy& policy);
ToyPolicy decode_checkpoint(std::string_view bytes);
void save_checkpoint(const std::filesystem::path& path, const ToyPolicy& policy);
ToyPolicy load_checkpoint(const std::filesystem::path& path);
/// SHA-256 of the checkpoint encoding.
std::string policy_hash(const ToyPolicy& policy);

struct SyntheticScene {
  std::size_t context_id = 0;
  std::vector<Token> faithful_tokens;  // sorted
  std::vector<Token> halluc_tokens;    // sorted

  void validate(std::size_t vocab_size) const;
  bool is_faithful(Token t) const;
  bool is_hallucinated(Token t) const;
};

struct OracleCritic {
  double lambda_halluc = 1.0;
};

/// |unique faithful tokens| - lambda * |hallucinated token occurrences|.
double oracle_score(const OracleCritic& critic, const SyntheticScene& scene,
                    std::span<const Token> seq);

/// One detail per non-EOS token.
DetailJudgment oracle_detail_judgments(const SyntheticScene& scene, std::span<const Token> seq,
                                       std::string record_id = {});

std::string token_text(Token t);

struct ToyWorldConfig {
  std::size_t contexts = 8;
  std::size_t vocab = 64;
  std::size_t max_len = 16;
  std::size_t faithful_per_scene = 8;
  std::size_t halluc_per_scene = 8;
};

/// Logit means used to draw an untrained base policy for a world.
struct BasePolicyShape {
  double eos = 0.5;
  double faithful = 0.8;
  double halluc = 0.8;
  double neutral = -1.0;
  double spread = 0.5;
};

class ToyWorld {
 public:
  ToyWorld(ToyWorldConfig config, std::vector<SyntheticScene> scenes);
  static ToyWorld generate(const ToyWorldConfig& config, std::uint64_t seed);

  const ToyWorldConfig& config() const noexcept { return config_; }
  const SyntheticScene& scene(std::size_t context) const;
  const std::vector<SyntheticScene>& scenes() const noexcept { return scenes_; }

  static std::string image_ref(std::size_t context);
  std::size_t context_of(std::string_view image_ref) const;

  /// "t3 t7" for [3, 7, EOS]; EOS-only renders as "".
  static std::string render(std::span<const Token> seq);
  /// Inverse of render, EOS appended.
  TokenSeq parse(std::string_view text) const;

  /// n records with uniformly drawn scenes; ids are "<prefix>-000000"...
  std::vector<CaptionRecord> make_records(std::string_view prefix, std::size_t n,
                                          std::uint64_t seed) const;

  ToyPolicy base_policy(const BasePolicyShape& shape, std::uint64_t seed) const;

 private:
  ToyWorldConfig config_;
  std::vector<SyntheticScene> scenes_;
};

}  // namespace recap
