// Local chat-completion server for client tests. A script decides the reply
// to each request; the server counts requests and records the highest number
// of requests it was handling at once.
#pragma once

#include <atomic>
#include <chrono>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <httplib.h>
#include <json.hpp>

namespace testing {

struct Reply {
  int status = 200;
  std::string body;
};

inline std::string completion_body(const std::string& text) {
  return nlohmann::json{{"choices", {{{"message", {{"role", "assistant"}, {"content", text}}}}}},
                        {"usage", {{"prompt_tokens", 3}, {"completion_tokens", 5}}}}
      .dump();
}

class MockChatServer {
 public:
  /// `script(n, request)` answers the n-th request (0-based).
  using Script = std::function<Reply(std::size_t, const nlohmann::json&)>;

  explicit MockChatServer(Script script, std::chrono::milliseconds hold = {})
      : script_(std::move(script)), hold_(hold) {
    server_.new_task_queue = [] { return new httplib::ThreadPool(64); };
    server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      const int now = ++in_flight_;
      int seen = max_in_flight_.load();
      while (now > seen && !max_in_flight_.compare_exchange_weak(seen, now)) {
      }
      const std::size_t n = requests_++;
      nlohmann::json body;
      try {
        body = nlohmann::json::parse(req.body);
      } catch (...) {
      }
      {
        std::lock_guard lock(mu_);
        bodies_.push_back(body);
        auth_.push_back(req.get_header_value("Authorization"));
      }
      if (hold_.count() > 0) std::this_thread::sleep_for(hold_);
      const Reply r = script_(n, body);
      res.status = r.status;
      res.set_content(r.body, "application/json");
      --in_flight_;
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  ~MockChatServer() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  std::string base_url() const { return "http://127.0.0.1:" + std::to_string(port_); }
  std::size_t requests() const { return requests_.load(); }
  int max_in_flight() const { return max_in_flight_.load(); }
  std::vector<nlohmann::json> bodies() const {
    std::lock_guard lock(mu_);
    return bodies_;
  }
  std::vector<std::string> auth_headers() const {
    std::lock_guard lock(mu_);
    return auth_;
  }

 private:
  Script script_;
  std::chrono::milliseconds hold_;
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
  std::atomic<int> in_flight_{0};
  std::atomic<int> max_in_flight_{0};
  std::atomic<std::size_t> requests_{0};
  mutable std::mutex mu_;
  std::vector<nlohmann::json> bodies_;
  std::vector<std::string> auth_;
};

}  // namespace testing
