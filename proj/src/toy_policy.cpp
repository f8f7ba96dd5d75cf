// SPDX-License-Identifier: Apache-2.0
#include "recap/toy_policy.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <limits>
#include <numeric>

#include "recap/errors.hpp"
#include "recap/util.hpp"

namespace recap {

namespace {

constexpr char kCheckpointMagic[8] = {'R', 'C', 'A', 'P', 'P', 'O', 'L', '1'};
constexpr std::uint32_t kCheckpointVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double d) {
  const auto bits = std::bit_cast<std::uint64_t>(d);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

std::uint64_t get_le(std::string_view bytes, std::size_t offset, int width) {
  std::uint64_t v = 0;
  for (int i = 0; i < width; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[offset + i])) << (8 * i);
  }
  return v;
}

void check_context(const ToyPolicy& policy, std::size_t context) {
  if (context >= policy.num_contexts()) {
    throw InvalidArgument("context " + std::to_string(context) + " out of range");
  }
}

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace

ToyPolicy::ToyPolicy(std::size_t vocab_size, std::size_t num_contexts, std::size_t max_len)
    : ToyPolicy(max_len, Matrix(num_contexts, vocab_size)) {}

ToyPolicy::ToyPolicy(std::size_t max_len, Matrix logits) : max_len_(max_len), logits_(std::move(logits)) {
  if (logits_.cols() < 2) throw InvalidArgument("vocab_size must be >= 2");
  if (logits_.rows() < 1) throw InvalidArgument("num_contexts must be >= 1");
  if (max_len_ < 1) throw InvalidArgument("max_len must be >= 1");
  if (!all_finite(logits_.values())) throw InvalidArgument("policy logits must be finite");
}

std::span<const double> ToyPolicy::row(std::size_t context) const {
  check_context(*this, context);
  return logits_.row(context);
}

std::vector<double> log_softmax(std::span<const double> logits) {
  const double max = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double x : logits) sum += std::exp(x - max);
  const double lse = max + std::log(sum);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

std::vector<double> softmax(std::span<const double> logits) {
  auto out = log_softmax(logits);
  for (double& x : out) x = std::exp(x);
  return out;
}

void validate_sequence(const ToyPolicy& policy, std::size_t context, std::span<const Token> seq) {
  check_context(policy, context);
  if (seq.empty()) throw InvalidArgument("sequence must end with EOS");
  if (seq.size() > policy.max_len()) {
    throw InvalidArgument("sequence length " + std::to_string(seq.size()) + " exceeds max_len " +
                          std::to_string(policy.max_len()));
  }
  for (std::size_t t = 0; t < seq.size(); ++t) {
    if (seq[t] >= policy.vocab_size()) {
      throw TokenOutOfRange("token " + std::to_string(seq[t]) + " at position " + std::to_string(t) +
                            " >= vocab_size " + std::to_string(policy.vocab_size()));
    }
    if (seq[t] == kEos && t + 1 != seq.size()) throw InvalidArgument("EOS before end of sequence");
  }
  if (seq.back() != kEos) throw InvalidArgument("sequence must end with EOS");
}

std::size_t sampled_steps(std::size_t max_len, std::span<const Token> seq) {
  return seq.size() == max_len ? max_len - 1 : seq.size();
}

double log_prob(const ToyPolicy& policy, std::size_t context, std::span<const Token> seq) {
  validate_sequence(policy, context, seq);
  const auto ls = log_softmax(policy.row(context));
  const std::size_t n = sampled_steps(policy.max_len(), seq);
  double total = 0.0;
  for (std::size_t t = 0; t < n; ++t) total += ls[seq[t]];
  return total;
}

void add_log_prob_grad(const ToyPolicy& policy, std::size_t context, std::span<const Token> seq,
                       double scale, Matrix& out) {
  validate_sequence(policy, context, seq);
  if (!out.same_shape(policy.logits())) throw ShapeMismatch("gradient shape mismatch");
  const auto p = softmax(policy.row(context));
  const std::size_t n = sampled_steps(policy.max_len(), seq);
  auto row = out.row(context);
  for (std::size_t v = 0; v < p.size(); ++v) row[v] -= scale * static_cast<double>(n) * p[v];
  for (std::size_t t = 0; t < n; ++t) row[seq[t]] += scale;
}

Matrix log_prob_grad(const ToyPolicy& policy, std::size_t context, std::span<const Token> seq) {
  Matrix g(policy.num_contexts(), policy.vocab_size());
  add_log_prob_grad(policy, context, seq, 1.0, g);
  return g;
}

std::vector<double> step_distribution(std::span<const double> logits, const SamplerParams& params) {
  params.validate();
  const std::size_t V = logits.size();
  std::vector<std::size_t> order(V);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return logits[a] > logits[b]; });

  std::vector<double> dist(V, 0.0);
  if (params.temperature == 0.0) {
    dist[order.front()] = 1.0;
    return dist;
  }

  std::vector<double> scaled(logits.begin(), logits.end());
  for (double& x : scaled) x /= params.temperature;
  const auto p = softmax(scaled);

  const std::size_t k = std::min(params.top_k, V);
  double kept_mass = 0.0;
  for (std::size_t i = 0; i < k; ++i) kept_mass += p[order[i]];

  double cum = 0.0;
  std::size_t keep = 0;
  while (keep < k) {
    cum += p[order[keep]] / kept_mass;
    ++keep;
    if (cum >= params.top_p) break;
  }

  double z = 0.0;
  for (std::size_t i = 0; i < keep; ++i) z += p[order[i]];
  for (std::size_t i = 0; i < keep; ++i) dist[order[i]] = p[order[i]] / z;
  return dist;
}

namespace {

Token draw(const std::vector<double>& cdf, Rng& rng) {
  const double u = rng.uniform() * cdf.back();
  const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
  auto idx = static_cast<std::size_t>(it - cdf.begin());
  if (idx >= cdf.size()) idx = cdf.size() - 1;
  // u can round up to cdf.back(); step back onto the last token with mass.
  while (idx > 0 && cdf[idx] == cdf[idx - 1]) --idx;
  return static_cast<Token>(idx);
}

}  // namespace

TokenSeq sample(const ToyPolicy& policy, std::size_t context, const SamplerParams& params, Rng& rng) {
  const auto dist = step_distribution(policy.row(context), params);
  std::vector<double> cdf(dist.size());
  std::partial_sum(dist.begin(), dist.end(), cdf.begin());

  TokenSeq seq;
  seq.reserve(policy.max_len());
  while (seq.size() + 1 < policy.max_len()) {
    const Token t = draw(cdf, rng);
    seq.push_back(t);
    if (t == kEos) return seq;
  }
  seq.push_back(kEos);
  return seq;
}

std::string encode_checkpoint(const ToyPolicy& policy) {
  std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(policy.vocab_size()));
  put_u32(out, static_cast<std::uint32_t>(policy.num_contexts()));
  put_u32(out, static_cast<std::uint32_t>(policy.max_len()));
  for (double d : policy.logits().values()) put_f64(out, d);
  return out;
}

ToyPolicy decode_checkpoint(std::string_view bytes) {
  constexpr std::size_t kHeader = sizeof kCheckpointMagic + 16;
  if (bytes.size() < kHeader || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) {
    throw IoError("not a policy checkpoint");
  }
  const auto version = get_le(bytes, 8, 4);
  if (version != kCheckpointVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto V = static_cast<std::size_t>(get_le(bytes, 12, 4));
  const auto C = static_cast<std::size_t>(get_le(bytes, 16, 4));
  const auto L = static_cast<std::size_t>(get_le(bytes, 20, 4));
  if (bytes.size() != kHeader + V * C * 8) throw IoError("checkpoint size does not match header");
  Matrix logits(C, V);
  auto values = logits.values();
  for (std::size_t i = 0; i < values.size(); ++i) {
    values[i] = std::bit_cast<double>(get_le(bytes, kHeader + 8 * i, 8));
  }
  return ToyPolicy(L, std::move(logits));
}

void save_checkpoint(const std::filesystem::path& path, const ToyPolicy& policy) {
  write_file_atomic(path, encode_checkpoint(policy));
}

ToyPolicy load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path));
}

std::string policy_hash(const ToyPolicy& policy) { return sha256_hex(encode_checkpoint(policy)); }

void SyntheticScene::validate(std::size_t vocab_size) const {
  auto check = [&](const std::vector<Token>& tokens, const char* what) {
    for (Token t : tokens) {
      if (t == kEos) throw InvalidArgument(std::string(what) + " tokens must not contain EOS");
      if (t >= vocab_size) throw TokenOutOfRange(std::string(what) + " token out of range");
    }
    if (!std::is_sorted(tokens.begin(), tokens.end())) {
      throw InvalidArgument(std::string(what) + " tokens must be sorted");
    }
  };
  check(faithful_tokens, "faithful");
  check(halluc_tokens, "hallucination");
  for (Token t : faithful_tokens) {
    if (is_hallucinated(t)) throw InvalidArgument("faithful and hallucination tokens overlap");
  }
}

bool SyntheticScene::is_faithful(Token t) const {
  return std::binary_search(faithful_tokens.begin(), faithful_tokens.end(), t);
}

bool SyntheticScene::is_hallucinated(Token t) const {
  return std::binary_search(halluc_tokens.begin(), halluc_tokens.end(), t);
}

double oracle_score(const OracleCritic& critic, const SyntheticScene& scene,
                    std::span<const Token> seq) {
  std::vector<Token> seen;
  std::size_t halluc = 0;
  for (Token t : seq) {
    if (t == kEos) continue;
    if (scene.is_faithful(t)) {
      if (std::find(seen.begin(), seen.end(), t) == seen.end()) seen.push_back(t);
    } else if (scene.is_hallucinated(t)) {
      ++halluc;
    }
  }
  return static_cast<double>(seen.size()) - critic.lambda_halluc * static_cast<double>(halluc);
}

std::string token_text(Token t) { return "t" + std::to_string(t); }

DetailJudgment oracle_detail_judgments(const SyntheticScene& scene, std::span<const Token> seq,
                                       std::string record_id) {
  DetailJudgment j;
  j.record_id = std::move(record_id);
  for (Token t : seq) {
    if (t == kEos) continue;
    ++j.caption_length;
    const Verdict v = scene.is_faithful(t)       ? Verdict::faithful
                      : scene.is_hallucinated(t) ? Verdict::hallucinated
                                                 : Verdict::neutral;
    j.details.push_back({token_text(t), v});
  }
  return j;
}

ToyWorld::ToyWorld(ToyWorldConfig config, std::vector<SyntheticScene> scenes)
    : config_(config), scenes_(std::move(scenes)) {
  if (scenes_.size() != config_.contexts) throw InvalidArgument("one scene per context required");
  for (std::size_t c = 0; c < scenes_.size(); ++c) {
    if (scenes_[c].context_id != c) throw InvalidArgument("scene context ids must be 0..C-1");
    scenes_[c].validate(config_.vocab);
  }
}

ToyWorld ToyWorld::generate(const ToyWorldConfig& config, std::uint64_t seed) {
  if (config.vocab < 2 || config.faithful_per_scene + config.halluc_per_scene > config.vocab - 1) {
    throw InvalidArgument("vocabulary too small for the requested scene sizes");
  }
  Rng rng(derive_seed(seed, "toy-world"));
  std::vector<SyntheticScene> scenes;
  for (std::size_t c = 0; c < config.contexts; ++c) {
    std::vector<Token> pool(config.vocab - 1);
    std::iota(pool.begin(), pool.end(), Token{1});
    rng.shuffle(std::span<Token>(pool));
    SyntheticScene s;
    s.context_id = c;
    s.faithful_tokens.assign(pool.begin(), pool.begin() + config.faithful_per_scene);
    s.halluc_tokens.assign(pool.begin() + config.faithful_per_scene,
                           pool.begin() + config.faithful_per_scene + config.halluc_per_scene);
    std::sort(s.faithful_tokens.begin(), s.faithful_tokens.end());
    std::sort(s.halluc_tokens.begin(), s.halluc_tokens.end());
    scenes.push_back(std::move(s));
  }
  return ToyWorld(config, std::move(scenes));
}

const SyntheticScene& ToyWorld::scene(std::size_t context) const {
  if (context >= scenes_.size()) throw InvalidArgument("no scene for context " + std::to_string(context));
  return scenes_[context];
}

std::string ToyWorld::image_ref(std::size_t context) {
  return "toy://scene/" + std::to_string(context);
}

std::size_t ToyWorld::context_of(std::string_view image_ref) const {
  constexpr std::string_view kPrefix = "toy://scene/";
  if (!image_ref.starts_with(kPrefix)) {
    throw InvalidArgument("not a toy scene reference: '" + std::string(image_ref) + "'");
  }
  const auto digits = image_ref.substr(kPrefix.size());
  std::size_t c = 0;
  const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), c);
  if (ec != std::errc() || ptr != digits.data() + digits.size() || c >= scenes_.size()) {
    throw InvalidArgument("bad toy scene reference: '" + std::string(image_ref) + "'");
  }
  return c;
}

std::string ToyWorld::render(std::span<const Token> seq) {
  std::string out;
  for (Token t : seq) {
    if (t == kEos) break;
    if (!out.empty()) out.push_back(' ');
    out += token_text(t);
  }
  return out;
}

TokenSeq ToyWorld::parse(std::string_view text) const {
  TokenSeq seq;
  std::size_t pos = 0;
  while (pos < text.size()) {
    while (pos < text.size() && text[pos] == ' ') ++pos;
    if (pos >= text.size()) break;
    auto end = text.find(' ', pos);
    if (end == std::string_view::npos) end = text.size();
    const auto word = text.substr(pos, end - pos);
    Token t = 0;
    if (word.size() < 2 || word[0] != 't') {
      throw InvalidArgument("bad toy token '" + std::string(word) + "'");
    }
    const auto [ptr, ec] = std::from_chars(word.data() + 1, word.data() + word.size(), t);
    if (ec != std::errc() || ptr != word.data() + word.size() || t == kEos || t >= config_.vocab) {
      throw TokenOutOfRange("bad toy token '" + std::string(word) + "'");
    }
    seq.push_back(t);
    pos = end;
  }
  seq.push_back(kEos);
  if (seq.size() > config_.max_len) throw InvalidArgument("toy caption longer than max_len");
  return seq;
}

std::vector<CaptionRecord> ToyWorld::make_records(std::string_view prefix, std::size_t n,
                                                  std::uint64_t seed) const {
  Rng rng(derive_seed(seed, prefix));
  std::vector<CaptionRecord> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = static_cast<std::size_t>(rng.below(config_.contexts));
    char id[32];
    std::snprintf(id, sizeof id, "%06zu", i);
    CaptionRecord r;
    r.id = std::string(prefix) + "-" + id;
    r.image_ref = image_ref(c);
    // Web alt text: a terse, faithful but incomplete hint.
    const auto& f = scenes_[c].faithful_tokens;
    std::vector<Token> hint(f.begin(), f.begin() + std::min<std::size_t>(2, f.size()));
    hint.push_back(kEos);
    r.alt_text = render(hint);
    r.source = CaptionSource::alt_text;
    out.push_back(std::move(r));
  }
  return out;
}

ToyPolicy ToyWorld::base_policy(const BasePolicyShape& shape, std::uint64_t seed) const {
  Rng rng(derive_seed(seed, "base-policy"));
  Matrix logits(config_.contexts, config_.vocab);
  for (std::size_t c = 0; c < config_.contexts; ++c) {
    const auto& s = scenes_[c];
    for (std::size_t v = 0; v < config_.vocab; ++v) {
      const auto t = static_cast<Token>(v);
      const double mean = t == kEos              ? shape.eos
                          : s.is_faithful(t)     ? shape.faithful
                          : s.is_hallucinated(t) ? shape.halluc
                                                 : shape.neutral;
      logits(c, v) = t == kEos ? mean : rng.normal(mean, shape.spread);
    }
  }
  return ToyPolicy(config_.max_len, std::move(logits));
}

}  // namespace recap
