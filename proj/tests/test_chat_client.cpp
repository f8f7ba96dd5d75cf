#include <doctest.h>

#include <cstdlib>
#include <future>
#include <set>
#include <sstream>

#include "mock_chat_server.hpp"
#include "recap/chat_client.hpp"
#include "recap/util.hpp"
#include "support.hpp"

using namespace recap;
using namespace std::chrono_literals;
using testing::MockChatServer;
using testing::Reply;

namespace {

ChatEndpointConfig endpoint(const MockChatServer& server) {
  ChatEndpointConfig c;
  c.base_url = server.base_url();
  c.model = "test-model";
  c.api_key_env = "";
  c.timeout = 5s;
  return c;
}

const std::vector<ChatMessage> kHello{{"user", "hello", std::nullopt}};

struct RecordingSleeper {
  std::shared_ptr<std::vector<std::chrono::milliseconds>> slept =
      std::make_shared<std::vector<std::chrono::milliseconds>>();
  void operator()(std::chrono::milliseconds d) const { slept->push_back(d); }
};

}  // namespace

TEST_CASE("chat client: echo round trip with usage") {
  MockChatServer server([](std::size_t, const nlohmann::json& body) {
    return Reply{200, testing::completion_body("echo: " + body.at("messages")[0]["content"].get<std::string>())};
  });
  ChatClient client(endpoint(server));
  SamplerParams sampler;
  sampler.temperature = 0.7;
  const auto r = client.complete(kHello, sampler);
  CHECK(r.text == "echo: hello");
  CHECK(r.attempts == 1);
  CHECK(r.usage.prompt_tokens == 3);
  CHECK(r.usage.completion_tokens == 5);
  CHECK(r.backoff_delays.empty());
  const auto body = server.bodies().at(0);
  CHECK(body.at("model") == "test-model");
  CHECK(body.at("temperature") == 0.7);
}

TEST_CASE("chat client: image messages carry the url") {
  const std::vector<ChatMessage> msg{{"user", "describe", std::string("https://x/y.png")}};
  const auto body = chat_request_body("m", msg, {});
  CHECK(body.dump().find("https://x/y.png") != std::string::npos);
  CHECK(body.dump().find("describe") != std::string::npos);
}

TEST_CASE("chat client: 429 twice then success retries with backoff") {
  MockChatServer server([](std::size_t n, const nlohmann::json&) {
    return n < 2 ? Reply{429, "{\"error\":\"slow down\"}"} : Reply{200, testing::completion_body("ok")};
  });
  auto cfg = endpoint(server);
  cfg.backoff_base = 100ms;
  cfg.backoff_ceiling = 1000ms;
  RecordingSleeper sleeper;
  ChatClient client(cfg, sleeper);
  const auto r = client.complete(kHello, {});
  CHECK(r.text == "ok");
  CHECK(r.attempts == 3);
  CHECK(server.requests() == 3);
  REQUIRE(r.backoff_delays.size() == 2);
  CHECK(*sleeper.slept == r.backoff_delays);
  CHECK(r.backoff_delays[0] >= 50ms);
  CHECK(r.backoff_delays[0] <= 100ms);
  CHECK(r.backoff_delays[1] >= 100ms);
  CHECK(r.backoff_delays[1] <= 200ms);
}

TEST_CASE("chat client: 5xx and 408 are retried, other 4xx are not") {
  CHECK(is_retryable_status(429));
  CHECK(is_retryable_status(408));
  CHECK(is_retryable_status(500));
  CHECK(is_retryable_status(503));
  CHECK_FALSE(is_retryable_status(400));
  CHECK_FALSE(is_retryable_status(401));
  CHECK_FALSE(is_retryable_status(404));

  MockChatServer server([](std::size_t, const nlohmann::json&) { return Reply{400, "{\"error\":\"bad\"}"}; });
  ChatClient client(endpoint(server), RecordingSleeper{});
  try {
    (void)client.complete(kHello, {});
    FAIL("expected ChatHttpError");
  } catch (const ChatHttpError& e) {
    CHECK(e.status() == 400);
  }
  CHECK(server.requests() == 1);
}

TEST_CASE("chat client: malformed 200 body is a decode error and not retried") {
  for (const std::string body : {"not json", "{\"choices\": []}", "{\"choices\":[{\"message\":{\"content\":7}}]}"}) {
    MockChatServer server([&](std::size_t, const nlohmann::json&) { return Reply{200, body}; });
    ChatClient client(endpoint(server), RecordingSleeper{});
    CHECK_THROWS_AS(client.complete(kHello, {}), ChatDecodeError);
    CHECK(server.requests() == 1);
  }
}

TEST_CASE("chat client: retries exhausted reports the attempt count") {
  MockChatServer server([](std::size_t, const nlohmann::json&) { return Reply{503, "busy"}; });
  auto cfg = endpoint(server);
  cfg.max_retries = 3;
  RecordingSleeper sleeper;
  ChatClient client(cfg, sleeper);
  try {
    (void)client.complete(kHello, {});
    FAIL("expected ChatRetriesExhausted");
  } catch (const ChatRetriesExhausted& e) {
    CHECK(e.attempts() == 4);
    CHECK(std::string(e.what()).find("HTTP 503") != std::string::npos);
  }
  CHECK(server.requests() == 4);
  CHECK(sleeper.slept->size() == 3);
}

TEST_CASE("chat client: connection failures are retried") {
  std::string url;
  {
    MockChatServer gone([](std::size_t, const nlohmann::json&) { return Reply{}; });
    url = gone.base_url();
  }
  ChatEndpointConfig cfg;
  cfg.base_url = url;
  cfg.model = "m";
  cfg.max_retries = 2;
  cfg.timeout = 1s;
  ChatClient client(cfg, RecordingSleeper{});
  try {
    (void)client.complete(kHello, {});
    FAIL("expected ChatRetriesExhausted");
  } catch (const ChatRetriesExhausted& e) {
    CHECK(e.attempts() == 3);
  }
}

TEST_CASE("chat client: in-flight requests stay within the bound") {
  MockChatServer server([](std::size_t, const nlohmann::json&) { return Reply{200, testing::completion_body("x")}; },
                        30ms);
  auto cfg = endpoint(server);
  cfg.max_in_flight = 3;
  ChatClient client(cfg);
  std::vector<std::future<ChatResult>> jobs;
  for (int i = 0; i < 24; ++i) {
    jobs.push_back(std::async(std::launch::async, [&] { return client.complete(kHello, {}); }));
  }
  for (auto& j : jobs) CHECK(j.get().text == "x");
  CHECK(server.requests() == 24);
  CHECK(server.max_in_flight() <= 3);
  CHECK(server.max_in_flight() >= 2);
}

TEST_CASE("backoff delay bounds") {
  Rng rng(1);
  for (int retry = 0; retry < 12; ++retry) {
    for (int i = 0; i < 200; ++i) {
      const auto d = backoff_delay(retry, 500ms, 20'000ms, rng);
      const auto cap = std::min<std::int64_t>(20'000, 500LL << retry);
      CHECK(d.count() >= cap / 2);
      CHECK(d.count() <= cap);
    }
  }
  CHECK(backoff_delay(40, 500ms, 20'000ms, rng) <= 20'000ms);
  CHECK(backoff_delay(3, 0ms, 0ms, rng) == 0ms);
}

TEST_CASE("chat client: api key goes in the header and never into the audit log") {
  MockChatServer server([](std::size_t n, const nlohmann::json&) {
    return n == 0 ? Reply{500, "oops"} : Reply{200, testing::completion_body("fine")};
  });
  testing::TempDir dir;
  ::setenv("RECAP_TEST_CHAT_KEY", "sk-secret-123", 1);
  auto cfg = endpoint(server);
  cfg.api_key_env = "RECAP_TEST_CHAT_KEY";
  cfg.audit_log = dir / "audit.jsonl";
  ChatClient client(cfg, RecordingSleeper{});
  CHECK(client.complete(kHello, {}).text == "fine");
  ::unsetenv("RECAP_TEST_CHAT_KEY");
  for (const auto& h : server.auth_headers()) CHECK(h == "Bearer sk-secret-123");
  const auto log = read_file(dir / "audit.jsonl");
  CHECK(log.find("sk-secret") == std::string::npos);
  std::vector<std::string> lines;
  std::istringstream in(log);
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  REQUIRE(lines.size() == 2);
  CHECK(nlohmann::json::parse(lines[0]).at("status") == 500);
  CHECK(nlohmann::json::parse(lines[1]).at("status") == 200);
  CHECK(nlohmann::json::parse(lines[1]).at("request").at("model") == "test-model");
}

TEST_CASE("chat client: configuration checks") {
  ChatEndpointConfig c;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.base_url = "http://127.0.0.1:1";
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.model = "m";
  CHECK_NOTHROW(c.validate());
  c.max_in_flight = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.max_in_flight = 1;
  c.backoff_ceiling = 1ms;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("mock text endpoint is deterministic per prompt and seed") {
  MockTextEndpoint m;
  SamplerParams s;
  s.seed = 3;
  const auto a = m.complete(kHello, s);
  CHECK(a == m.complete(kHello, s));
  CHECK(a.rfind("The image shows ", 0) == 0);
  std::set<std::string> seen;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    s.seed = seed;
    seen.insert(m.complete(kHello, s));
  }
  CHECK(seen.size() > 10);
}
