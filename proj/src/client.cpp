#include "verbcal/client.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <thread>

#include <json.hpp>

#include "verbcal/hash.hpp"

namespace verbcal {

void ClientConfig::validate() const {
  if (max_parallel < 1) throw Error(ErrorCode::ConfigError, "max_parallel must be >= 1");
  if (temperature < 0.0) throw Error(ErrorCode::ConfigError, "temperature must be >= 0");
  if (retry.max_attempts < 1) throw Error(ErrorCode::ConfigError, "retry.max_attempts must be >= 1");
  if (retry.backoff_base_seconds < 0.0) throw Error(ErrorCode::ConfigError, "negative backoff");
  if (top_logprobs < 0) throw Error(ErrorCode::ConfigError, "top_logprobs must be >= 0");
  if (max_tokens < 1) throw Error(ErrorCode::ConfigError, "max_tokens must be >= 1");
  if (request_timeout_seconds <= 0.0) throw Error(ErrorCode::ConfigError, "request timeout must be positive");
}

Client::Client(std::shared_ptr<Backend> backend, ClientConfig config)
    : backend_(std::move(backend)), config_(std::move(config)) {
  if (!backend_) throw Error(ErrorCode::ConfigError, "client without backend");
  config_.validate();
}

void Client::set_transcript(const std::filesystem::path& path) {
  std::lock_guard lock(transcript_mutex_);
  transcript_.emplace(path, std::ios::app | std::ios::binary);
  if (!*transcript_) throw Error(ErrorCode::IoError, "cannot open transcript " + path.string());
}

void Client::acquire() {
  std::unique_lock lock(slots_mutex_);
  slots_cv_.wait(lock, [&] { return in_flight_ < config_.max_parallel; });
  ++in_flight_;
  if (in_flight_hook_) in_flight_hook_(in_flight_);
}

void Client::release() {
  {
    std::lock_guard lock(slots_mutex_);
    --in_flight_;
  }
  slots_cv_.notify_one();
}

ModelResponse Client::complete(const PromptBundle& bundle, const RequestOptions& options) {
  if (bundle.expects_logprobs && !backend_->supports_logprobs()) {
    throw Error(ErrorCode::LogprobsUnsupported, "backend cannot return logprobs");
  }
  // Deterministic id so logs of simulated runs are reproducible.
  auto id_seed = fnv1a64(bundle.user);
  id_seed = mix_seed(id_seed, options.seed.value_or(0));

  for (int attempt = 1;; ++attempt) {
    const auto request_id = "req-" + hex64(mix_seed(id_seed, static_cast<std::uint64_t>(attempt)));
    bool retry = false;
    std::string failure;
    acquire();
    ++attempts_;
    try {
      auto response = backend_->send(bundle, options, request_id);
      release();
      response.request_id = request_id;
      response.validate();
      write_transcript(bundle, options, request_id, &response, "");
      return response;
    } catch (const HttpError& e) {
      release();
      write_transcript(bundle, options, request_id, nullptr, e.what());
      if (!e.transient() || attempt >= config_.retry.max_attempts) throw;
      retry = true;
    } catch (const Error& e) {
      release();
      write_transcript(bundle, options, request_id, nullptr, e.what());
      if (e.code() != ErrorCode::Timeout || attempt >= config_.retry.max_attempts) throw;
      retry = true;
    } catch (...) {
      release();
      throw;
    }
    if (retry) {
      const double delay = config_.retry.backoff_base_seconds * std::pow(2.0, attempt - 1);
      if (delay > 0.0) std::this_thread::sleep_for(std::chrono::duration<double>(delay));
    }
  }
}

void Client::write_transcript(const PromptBundle& bundle, const RequestOptions& options, const std::string& request_id,
                              const ModelResponse* response, const std::string& error) {
  std::lock_guard lock(transcript_mutex_);
  if (!transcript_) return;
  nlohmann::ordered_json j;
  j["request_id"] = request_id;
  nlohmann::ordered_json req;
  if (bundle.system) req["system"] = *bundle.system;
  req["user"] = bundle.user;
  req["logprobs"] = bundle.expects_logprobs;
  if (options.temperature) req["temperature"] = *options.temperature;
  if (options.seed) req["seed"] = *options.seed;
  j["request"] = std::move(req);
  if (response != nullptr) {
    j["response"] = {{"raw_text", response->raw_text}, {"token_usage", response->token_usage}};
  } else {
    j["error"] = error;
  }
  *transcript_ << j.dump() << '\n';
  transcript_->flush();
}

void assign_cumulative_offsets(std::vector<TokenLogprob>& tokens) {
  std::size_t offset = 0;
  for (auto& t : tokens) {
    t.offset = offset;
    offset += t.token.size();
  }
}

ModelResponse parse_chat_completion(std::string_view body, bool want_logprobs) {
  const auto j = nlohmann::json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw Error(ErrorCode::BadSchema, "completion body is not JSON");
  ModelResponse r;
  try {
    const auto& choice = j.at("choices").at(0);
    const auto& content = choice.at("message").at("content");
    r.raw_text = content.is_string() ? content.get<std::string>() : std::string();
    if (j.contains("usage") && j["usage"].contains("completion_tokens")) {
      r.token_usage = j["usage"]["completion_tokens"].get<std::int64_t>();
    }
    if (want_logprobs) {
      const auto lp = choice.find("logprobs");
      if (lp == choice.end() || lp->is_null() || !lp->contains("content") || (*lp)["content"].is_null()) {
        throw Error(ErrorCode::LogprobsUnsupported, "server returned no logprobs");
      }
      std::vector<TokenLogprob> tokens;
      bool has_offsets = true;
      for (const auto& t : (*lp)["content"]) {
        TokenLogprob tok;
        tok.token = t.at("token").get<std::string>();
        tok.logprob = std::min(0.0, t.at("logprob").get<double>());
        if (t.contains("text_offset")) {
          tok.offset = t["text_offset"].get<std::size_t>();
        } else {
          has_offsets = false;
        }
        if (t.contains("top_logprobs")) {
          for (const auto& alt : t["top_logprobs"]) {
            tok.top.push_back({alt.at("token").get<std::string>(), std::min(0.0, alt.at("logprob").get<double>())});
          }
        }
        tokens.push_back(std::move(tok));
      }
      if (!has_offsets) assign_cumulative_offsets(tokens);
      r.token_logprobs = std::move(tokens);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::BadSchema, std::string("completion body: ") + e.what());
  }
  return r;
}

}  // namespace verbcal
