#include <doctest.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "verbcal/client.hpp"
#include "verbcal/simulate.hpp"

using namespace verbcal;

namespace {

// Serves canned responses in order on an ephemeral port.
class StubServer {
 public:
  explicit StubServer(std::vector<std::pair<int, std::string>> replies) : replies_(std::move(replies)) {
    server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      last_body_ = req.body;
      const auto i = std::min<std::size_t>(hits_++, replies_.size() - 1);
      res.status = replies_[i].first;
      res.set_content(replies_[i].second, "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~StubServer() {
    server_.stop();
    thread_.join();
  }

  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }
  int hits() const { return hits_.load(); }
  const std::string& last_body() const { return last_body_; }

 private:
  httplib::Server server_;
  std::vector<std::pair<int, std::string>> replies_;
  std::atomic<int> hits_{0};
  std::string last_body_;
  int port_ = 0;
  std::thread thread_;
};

const std::string kOkBody =
    R"({"choices":[{"message":{"content":"Final answer: B"},
        "logprobs":{"content":[{"token":"Final answer:","logprob":-0.1,"top_logprobs":[]},
                               {"token":" B","logprob":-0.2231435513,"top_logprobs":[{"token":" B","logprob":-0.2231435513},{"token":" C","logprob":-1.6}]}]}}],
        "usage":{"completion_tokens":7}})";

ClientConfig local_config(const std::string& url) {
  ClientConfig c;
  c.base_url = url;
  c.model_name = "stub";
  c.api_key_env = "";
  c.retry.backoff_base_seconds = 0.0;
  c.request_timeout_seconds = 5.0;
  return c;
}

PromptBundle logit_bundle() {
  PromptBundle b;
  b.user = "Question?";
  b.expects_logprobs = true;
  return b;
}

class CountingBackend : public Backend {
 public:
  ModelResponse send(const PromptBundle&, const RequestOptions&, const std::string&) override {
    std::this_thread::sleep_for(std::chrono::milliseconds(2));
    return {"ok", 1, std::nullopt, ""};
  }
  bool supports_logprobs() const override { return false; }
};

}  // namespace

TEST_CASE("a 429 is retried once and then succeeds") {
  StubServer server({{429, R"({"error":"slow down"})"}, {200, kOkBody}});
  auto cfg = local_config(server.url());
  Client client(std::make_shared<HttpBackend>(cfg), cfg);
  const auto r = client.complete(logit_bundle());
  CHECK(server.hits() == 2);
  CHECK(client.attempts() == 2);
  CHECK(r.raw_text == "Final answer: B");
  CHECK(r.token_usage == 7);
  REQUIRE(r.token_logprobs.has_value());
  CHECK(r.token_logprobs->size() == 2);
  CHECK((*r.token_logprobs)[1].offset == 13);

  const auto body = nlohmann::json::parse(server.last_body());
  CHECK(body["model"] == "stub");
  CHECK(body["logprobs"] == true);
  CHECK(body["top_logprobs"] == 5);
  CHECK(body["messages"].back()["content"] == "Question?");
}

TEST_CASE("retries stop at max_attempts and non-transient errors are not retried") {
  {
    StubServer server({{503, "down"}});
    auto cfg = local_config(server.url());
    cfg.retry.max_attempts = 3;
    Client client(std::make_shared<HttpBackend>(cfg), cfg);
    try {
      client.complete(logit_bundle());
      FAIL("expected HttpError");
    } catch (const HttpError& e) {
      CHECK(e.status() == 503);
    }
    CHECK(server.hits() == 3);
  }
  {
    StubServer server({{400, "bad request"}});
    auto cfg = local_config(server.url());
    Client client(std::make_shared<HttpBackend>(cfg), cfg);
    CHECK_THROWS_AS(client.complete(logit_bundle()), HttpError);
    CHECK(server.hits() == 1);
  }
}

TEST_CASE("parse_chat_completion") {
  const auto r = parse_chat_completion(kOkBody, true);
  REQUIRE(r.token_logprobs);
  CHECK((*r.token_logprobs)[0].offset == 0);
  CHECK((*r.token_logprobs)[1].top.size() == 2);

  const auto plain = parse_chat_completion(R"({"choices":[{"message":{"content":"hi"}}]})", false);
  CHECK(plain.raw_text == "hi");
  CHECK_FALSE(plain.token_logprobs);

  try {
    parse_chat_completion(R"({"choices":[{"message":{"content":"hi"},"logprobs":null}]})", true);
    FAIL("expected LogprobsUnsupported");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::LogprobsUnsupported);
  }
  CHECK_THROWS_AS(parse_chat_completion("not json", false), Error);
  CHECK_THROWS_AS(parse_chat_completion(R"({"choices":[]})", false), Error);
}

TEST_CASE("logprob prompts fail fast on a backend without logprobs") {
  ClientConfig cfg;
  Client client(std::make_shared<CountingBackend>(), cfg);
  try {
    client.complete(logit_bundle());
    FAIL("expected LogprobsUnsupported");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::LogprobsUnsupported);
  }
  CHECK(client.attempts() == 0);
}

TEST_CASE("in-flight requests never exceed max_parallel") {
  ClientConfig cfg;
  cfg.max_parallel = 3;
  Client client(std::make_shared<CountingBackend>(), cfg);
  std::atomic<int> peak{0};
  client.set_in_flight_hook([&](int n) {
    int seen = peak.load();
    while (n > seen && !peak.compare_exchange_weak(seen, n)) {
    }
  });
  std::vector<std::thread> threads;
  for (int t = 0; t < 12; ++t) {
    threads.emplace_back([&] {
      PromptBundle b;
      b.user = "x";
      for (int i = 0; i < 5; ++i) client.complete(b);
    });
  }
  for (auto& t : threads) t.join();
  CHECK(peak.load() <= 3);
  CHECK(peak.load() >= 1);
  CHECK(client.attempts() == 60);
}

TEST_CASE("the simulated backend answers identical requests identically") {
  const auto questions = synthetic_questions(3, 4, 1);
  SimulatedModelSpec spec;
  spec.seed = 5;
  ClientConfig cfg;
  Client client(std::make_shared<SimulatedBackend>(spec, questions), cfg);
  auto bundle = build_elicitation_prompt(questions[1], Method::verb_conf());
  RequestOptions opts;
  opts.seed = 11;
  const auto a = client.complete(bundle, opts);
  const auto b = client.complete(bundle, opts);
  CHECK(a == b);
  opts.seed = 12;
  CHECK(client.complete(bundle, opts).raw_text != a.raw_text);
}

TEST_CASE("transcripts record every exchange") {
  const auto path = std::filesystem::temp_directory_path() / "verbcal_transcript_test.jsonl";
  std::filesystem::remove(path);
  {
    const auto questions = synthetic_questions(2, 0, 1);
    ClientConfig cfg;
    Client client(std::make_shared<SimulatedBackend>(SimulatedModelSpec{}, questions), cfg);
    client.set_transcript(path);
    client.complete(build_elicitation_prompt(questions[0], Method::verb_distrib()));
    client.complete(build_elicitation_prompt(questions[1], Method::verb_conf()));
  }
  std::ifstream in(path);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.contains("request_id"));
    CHECK(j["request"].contains("user"));
    CHECK(j["response"]["raw_text"].is_string());
    ++n;
  }
  CHECK(n == 2);
  std::filesystem::remove(path);
}

TEST_CASE("client config validation") {
  ClientConfig c;
  c.max_parallel = 0;
  CHECK_THROWS_AS(c.validate(), Error);
  c = ClientConfig{};
  c.retry.max_attempts = 0;
  CHECK_THROWS_AS(c.validate(), Error);
}
