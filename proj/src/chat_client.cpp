// SPDX-License-Identifier: Apache-2.0
#include "recap/chat_client.hpp"

#include <httplib.h>

#include <algorithm>
#include <array>
#include <cstdlib>
#include <fstream>
#include <thread>

#include "recap/util.hpp"

namespace recap {

void ChatEndpointConfig::validate() const {
  if (base_url.empty()) throw ConfigError("chat endpoint needs a base_url");
  if (model.empty()) throw ConfigError("chat endpoint needs a model name");
  if (max_retries < 0) throw ConfigError("max_retries must be >= 0");
  if (max_in_flight == 0 || max_in_flight > 1024) throw ConfigError("max_in_flight must be in 1..1024");
  if (timeout.count() <= 0) throw ConfigError("timeout must be positive");
  if (backoff_base.count() < 0 || backoff_ceiling < backoff_base) {
    throw ConfigError("backoff_ceiling must be >= backoff_base >= 0");
  }
}

bool is_retryable_status(int status) {
  return status == 408 || status == 429 || (status >= 500 && status <= 599);
}

std::chrono::milliseconds backoff_delay(int retry, std::chrono::milliseconds base,
                                        std::chrono::milliseconds ceiling, Rng& rng) {
  const int shift = std::clamp(retry, 0, 30);
  const auto full = std::min<std::int64_t>(ceiling.count(), base.count() << shift);
  const double half = static_cast<double>(full) / 2.0;
  return std::chrono::milliseconds(static_cast<std::int64_t>(half + rng.uniform() * half));
}

nlohmann::json chat_request_body(const std::string& model, std::span<const ChatMessage> messages,
                                 const SamplerParams& sampler) {
  auto msgs = nlohmann::json::array();
  for (const auto& m : messages) {
    if (m.image_url) {
      msgs.push_back({{"role", m.role},
                      {"content",
                       {{{"type", "text"}, {"text", m.text}},
                        {{"type", "image_url"}, {"image_url", {{"url", *m.image_url}}}}}}});
    } else {
      msgs.push_back({{"role", m.role}, {"content", m.text}});
    }
  }
  return {{"model", model},
          {"messages", msgs},
          {"temperature", sampler.temperature},
          {"top_p", sampler.top_p},
          {"top_k", sampler.top_k},
          {"seed", sampler.seed},
          {"n", 1}};
}

namespace {

std::pair<std::string, std::string> split_base_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  const auto host_begin = scheme_end == std::string::npos ? 0 : scheme_end + 3;
  const auto slash = url.find('/', host_begin);
  if (slash == std::string::npos) return {url, ""};
  std::string prefix = url.substr(slash);
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  return {url.substr(0, slash), prefix};
}

void default_sleep(std::chrono::milliseconds d) { std::this_thread::sleep_for(d); }

}  // namespace

ChatClient::ChatClient(ChatEndpointConfig config, Sleeper sleeper)
    : config_(std::move(config)),
      sleeper_(sleeper ? std::move(sleeper) : Sleeper(default_sleep)),
      slots_(static_cast<std::ptrdiff_t>(std::clamp<std::size_t>(config_.max_in_flight, 1, 1024))),
      jitter_(config_.jitter_seed) {
  config_.validate();
  auto [host, prefix] = split_base_url(config_.base_url);
  host_ = std::move(host);
  path_ = prefix + config_.path;
}

void ChatClient::audit(const nlohmann::json& entry) {
  if (!config_.audit_log) return;
  std::lock_guard lock(audit_mu_);
  std::ofstream out(*config_.audit_log, std::ios::app | std::ios::binary);
  out << dump_line(entry) << '\n';
}

ChatResult ChatClient::complete(std::span<const ChatMessage> messages, const SamplerParams& sampler) {
  const auto body = chat_request_body(config_.model, messages, sampler);
  const std::string payload = body.dump();

  httplib::Headers headers;
  if (!config_.api_key_env.empty()) {
    if (const char* key = std::getenv(config_.api_key_env.c_str()); key && *key) {
      headers.emplace("Authorization", std::string("Bearer ") + key);
    }
  }

  ChatResult result;
  std::string last_error;
  const int max_attempts = config_.max_retries + 1;
  for (int attempt = 1; attempt <= max_attempts; ++attempt) {
    result.attempts = attempt;
    int status = 0;
    std::string response_body;
    {
      slots_.acquire();
      struct Release {
        std::counting_semaphore<1024>& s;
        ~Release() { s.release(); }
      } release{slots_};
      httplib::Client cli(host_);
      const auto secs = std::chrono::duration_cast<std::chrono::seconds>(config_.timeout);
      const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(config_.timeout - secs);
      cli.set_connection_timeout(secs.count(), usecs.count());
      cli.set_read_timeout(secs.count(), usecs.count());
      cli.set_write_timeout(secs.count(), usecs.count());
      auto res = cli.Post(path_, headers, payload, "application/json");
      if (res) {
        status = res->status;
        response_body = res->body;
      } else {
        last_error = "transport error: " + httplib::to_string(res.error());
      }
    }
    audit({{"ts", utc_now_iso8601()},
           {"attempt", attempt},
           {"status", status},
           {"request", body},
           {"response", response_body}});

    if (status >= 200 && status < 300) {
      result.raw_response = response_body;
      nlohmann::json parsed;
      try {
        parsed = nlohmann::json::parse(response_body);
        const auto& content = parsed.at("choices").at(0).at("message").at("content");
        if (!content.is_string()) throw ChatDecodeError("message content is not a string");
        result.text = content.get<std::string>();
      } catch (const ChatDecodeError&) {
        throw;
      } catch (const std::exception& e) {
        throw ChatDecodeError(std::string("malformed chat completion: ") + e.what());
      }
      if (auto it = parsed.find("usage"); it != parsed.end() && it->is_object()) {
        result.usage.prompt_tokens = it->value("prompt_tokens", std::int64_t{0});
        result.usage.completion_tokens = it->value("completion_tokens", std::int64_t{0});
      }
      return result;
    }
    if (status != 0 && !is_retryable_status(status)) throw ChatHttpError(status, response_body);
    if (status != 0) last_error = "HTTP " + std::to_string(status);
    if (attempt == max_attempts) break;

    std::chrono::milliseconds delay;
    {
      std::lock_guard lock(rng_mu_);
      delay = backoff_delay(attempt - 1, config_.backoff_base, config_.backoff_ceiling, jitter_);
    }
    result.backoff_delays.push_back(delay);
    sleeper_(delay);
  }
  throw ChatRetriesExhausted(result.attempts, last_error);
}

std::string ChatTextEndpoint::complete(std::span<const ChatMessage> messages,
                                       const SamplerParams& sampler) {
  return client_.complete(messages, sampler).text;
}

std::string ChatTextEndpoint::describe() const {
  return client_.config().model + "@" + client_.config().base_url;
}

std::string MockTextEndpoint::complete(std::span<const ChatMessage> messages,
                                       const SamplerParams& sampler) {
  static constexpr std::array<std::string_view, 12> kPhrases = {
      "a red brick building",    "two people walking",      "a wooden table",
      "soft evening light",      "a small white dog",       "green trees in the background",
      "a street sign",           "a glass of water",        "a bicycle leaning on a wall",
      "clouds over the hills",   "a stack of old books",    "a blue ceramic bowl"};
  std::string prompt;
  for (const auto& m : messages) prompt += m.role + ":" + m.text + "\n" + m.image_url.value_or("");
  Rng rng(derive_seed(derive_seed(sampler.seed, prompt), "mock-text"));
  const std::size_t n = 2 + static_cast<std::size_t>(rng.below(3));
  std::string out = "The image shows ";
  for (std::size_t i = 0; i < n; ++i) {
    if (i > 0) out += i + 1 == n ? " and " : ", ";
    out += kPhrases[rng.below(kPhrases.size())];
  }
  out += ".";
  return out;
}

}  // namespace recap
