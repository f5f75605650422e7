#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include "verbcal/model.hpp"
#include "verbcal/prompt.hpp"

namespace verbcal {

struct RetryPolicy {
  int max_attempts = 3;
  double backoff_base_seconds = 1.0;  // delay before retry i is base * 2^(i-1)
};

struct ClientConfig {
  std::string base_url = "https://api.openai.com";
  std::string endpoint_path = "/v1/chat/completions";
  std::string model_name;
  std::string api_key_env = "OPENAI_API_KEY";
  double temperature = 0.0;
  int max_tokens = 4096;
  int top_logprobs = 5;
  int max_parallel = 4;
  RetryPolicy retry;
  double request_timeout_seconds = 120.0;
  bool logprobs = true;  // whether the endpoint can return logprobs

  void validate() const;
};

/// Per-call overrides of the configured sampling settings.
struct RequestOptions {
  std::optional<double> temperature;
  std::optional<std::uint64_t> seed;
};

/// Something that turns a prompt into a completion: an HTTP endpoint, the
/// simulator, or a scripted stand-in in tests.
class Backend {
 public:
  virtual ~Backend() = default;
  virtual ModelResponse send(const PromptBundle& bundle, const RequestOptions& options,
                             const std::string& request_id) = 0;
  virtual bool supports_logprobs() const = 0;
};

/// Shareable across threads. Bounds in-flight requests to max_parallel,
/// retries transient failures (HTTP 429/5xx, timeouts) with exponential
/// backoff, and optionally appends every exchange to a JSONL transcript.
class Client {
 public:
  Client(std::shared_ptr<Backend> backend, ClientConfig config);

  ModelResponse complete(const PromptBundle& bundle, const RequestOptions& options = {});

  bool supports_logprobs() const { return backend_->supports_logprobs(); }
  const ClientConfig& config() const { return config_; }

  /// Requests handed to the backend, retries included.
  std::uint64_t attempts() const { return attempts_.load(); }

  /// Called with the in-flight count each time a request starts.
  void set_in_flight_hook(std::function<void(int)> hook) { in_flight_hook_ = std::move(hook); }
  void set_transcript(const std::filesystem::path& path);

 private:
  void acquire();
  void release();
  void write_transcript(const PromptBundle& bundle, const RequestOptions& options, const std::string& request_id,
                        const ModelResponse* response, const std::string& error);

  std::shared_ptr<Backend> backend_;
  ClientConfig config_;
  std::mutex slots_mutex_;
  std::condition_variable slots_cv_;
  int in_flight_ = 0;
  std::atomic<std::uint64_t> attempts_{0};
  std::function<void(int)> in_flight_hook_;
  std::mutex transcript_mutex_;
  std::optional<std::ofstream> transcript_;
};

/// OpenAI-style chat-completions endpoint.
class HttpBackend : public Backend {
 public:
  explicit HttpBackend(ClientConfig config);

  ModelResponse send(const PromptBundle& bundle, const RequestOptions& options,
                     const std::string& request_id) override;
  bool supports_logprobs() const override { return config_.logprobs; }

  /// Request body for a bundle; exposed for tests of the wire format.
  std::string request_body(const PromptBundle& bundle, const RequestOptions& options) const;

 private:
  ClientConfig config_;
  std::string api_key_;
};

/// Parse a chat-completions response body. Character offsets are rebuilt
/// from cumulative token lengths when the server does not send them.
ModelResponse parse_chat_completion(std::string_view body, bool want_logprobs);

/// Rebuild offsets as the running sum of token lengths.
void assign_cumulative_offsets(std::vector<TokenLogprob>& tokens);

}  // namespace verbcal
