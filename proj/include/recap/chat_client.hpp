// SPDX-License-Identifier: Apache-2.0
//
// OpenAI-style chat-completion client with bounded concurrency and
// exponential backoff. Used for caption generation and LLM judging.
#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <semaphore>
#include <span>
#include <string>
#include <vector>

#include "recap/dataset.hpp"
#include "recap/errors.hpp"
#include "recap/rng.hpp"

namespace recap {

struct ChatEndpointConfig {
  std::string base_url;  // scheme://host[:port][/prefix]
  std::string model;
  std::string api_key_env = "OPENAI_API_KEY";
  std::string path = "/v1/chat/completions";
  std::chrono::milliseconds timeout{60'000};
  int max_retries = 4;  // retries after the first attempt
  std::size_t max_in_flight = 4;
  std::chrono::milliseconds backoff_base{500};
  std::chrono::milliseconds backoff_ceiling{20'000};
  std::uint64_t jitter_seed = 0;
  std::optional<std::filesystem::path> audit_log;

  void validate() const;
};

struct ChatMessage {
  std::string role;
  std::string text;
  std::optional<std::string> image_url;
};

struct ChatUsage {
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;
};

struct ChatResult {
  std::string text;
  ChatUsage usage;
  int attempts = 0;
  std::vector<std::chrono::milliseconds> backoff_delays;
  std::string raw_response;
};

class ChatError : public Error {
 public:
  using Error::Error;
};

/// Non-retryable HTTP status (4xx other than 408/429).
class ChatHttpError : public ChatError {
 public:
  ChatHttpError(int status, const std::string& body)
      : ChatError("chat endpoint returned HTTP " + std::to_string(status) + ": " + body.substr(0, 200)),
        status_(status) {}
  int status() const noexcept { return status_; }

 private:
  int status_;
};

/// 2xx response whose body is not a chat completion.
class ChatDecodeError : public ChatError {
 public:
  using ChatError::ChatError;
};

class ChatRetriesExhausted : public ChatError {
 public:
  ChatRetriesExhausted(int attempts, const std::string& last_error)
      : ChatError("chat request failed after " + std::to_string(attempts) +
                  " attempts: " + last_error),
        attempts_(attempts) {}
  int attempts() const noexcept { return attempts_; }

 private:
  int attempts_;
};

bool is_retryable_status(int status);

/// min(ceiling, base * 2^retry) with "equal jitter": uniform in [d/2, d].
std::chrono::milliseconds backoff_delay(int retry, std::chrono::milliseconds base,
                                        std::chrono::milliseconds ceiling, Rng& rng);

/// The request body sent for `messages`. Exposed for tests and audit.
nlohmann::json chat_request_body(const std::string& model, std::span<const ChatMessage> messages,
                                 const SamplerParams& sampler);

class ChatClient {
 public:
  using Sleeper = std::function<void(std::chrono::milliseconds)>;

  explicit ChatClient(ChatEndpointConfig config, Sleeper sleeper = {});

  /// One chat-completion exchange. Thread-safe; at most `max_in_flight`
  /// HTTP requests from this client are outstanding at any time.
  ChatResult complete(std::span<const ChatMessage> messages, const SamplerParams& sampler);

  const ChatEndpointConfig& config() const noexcept { return config_; }

 private:
  void audit(const nlohmann::json& entry);

  ChatEndpointConfig config_;
  Sleeper sleeper_;
  std::string host_;
  std::string path_;
  std::counting_semaphore<1024> slots_;
  std::mutex rng_mu_;
  Rng jitter_;
  std::mutex audit_mu_;
};

/// Anything that turns a prompt into text: a remote chat model or a mock.
class TextEndpoint {
 public:
  virtual ~TextEndpoint() = default;
  virtual std::string complete(std::span<const ChatMessage> messages, const SamplerParams& sampler) = 0;
  virtual std::string describe() const = 0;
  /// True when identical inputs always yield identical outputs.
  virtual bool deterministic() const = 0;
};

class ChatTextEndpoint final : public TextEndpoint {
 public:
  explicit ChatTextEndpoint(ChatClient& client) : client_(client) {}
  std::string complete(std::span<const ChatMessage> messages, const SamplerParams& sampler) override;
  std::string describe() const override;
  bool deterministic() const override { return false; }

 private:
  ChatClient& client_;
};

/// Offline stand-in: a caption assembled from a fixed phrase bank, keyed by
/// a hash of the prompt and the sampler seed.
class MockTextEndpoint final : public TextEndpoint {
 public:
  std::string complete(std::span<const ChatMessage> messages, const SamplerParams& sampler) override;
  std::string describe() const override { return "mock"; }
  bool deterministic() const override { return true; }
};

}  // namespace recap
