#include <cstdlib>

#include <httplib.h>
#include <json.hpp>

#include "verbcal/client.hpp"

namespace verbcal {

namespace {

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

Endpoint split_url(const std::string& base_url, const std::string& endpoint_path) {
  const auto scheme_end = base_url.find("://");
  if (scheme_end == std::string::npos) throw Error(ErrorCode::ConfigError, "base_url needs a scheme: " + base_url);
  const auto path_start = base_url.find('/', scheme_end + 3);
  Endpoint e;
  e.origin = base_url.substr(0, path_start);
  std::string prefix = path_start == std::string::npos ? "" : base_url.substr(path_start);
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  e.path = prefix + endpoint_path;
  return e;
}

}  // namespace

HttpBackend::HttpBackend(ClientConfig config) : config_(std::move(config)) {
  config_.validate();
  if (!config_.api_key_env.empty()) {
    if (const char* key = std::getenv(config_.api_key_env.c_str())) api_key_ = key;
  }
#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
  if (config_.base_url.starts_with("https://")) {
    throw Error(ErrorCode::ConfigError, "built without TLS support; cannot reach " + config_.base_url);
  }
#endif
}

std::string HttpBackend::request_body(const PromptBundle& bundle, const RequestOptions& options) const {
  nlohmann::ordered_json body;
  body["model"] = config_.model_name;
  auto messages = nlohmann::ordered_json::array();
  if (bundle.system) messages.push_back({{"role", "system"}, {"content", *bundle.system}});
  messages.push_back({{"role", "user"}, {"content", bundle.user}});
  body["messages"] = std::move(messages);
  body["temperature"] = options.temperature.value_or(config_.temperature);
  body["max_tokens"] = config_.max_tokens;
  if (options.seed) body["seed"] = *options.seed;
  if (bundle.expects_logprobs) {
    body["logprobs"] = true;
    if (config_.top_logprobs > 0) body["top_logprobs"] = config_.top_logprobs;
  }
  return body.dump();
}

ModelResponse HttpBackend::send(const PromptBundle& bundle, const RequestOptions& options,
                                const std::string& request_id) {
  const auto endpoint = split_url(config_.base_url, config_.endpoint_path);
  httplib::Client cli(endpoint.origin);
  const auto timeout = std::chrono::duration<double>(config_.request_timeout_seconds);
  cli.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  cli.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  cli.set_write_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));

  httplib::Headers headers{{"X-Request-Id", request_id}};
  if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

  const auto res = cli.Post(endpoint.path, headers, request_body(bundle, options), "application/json");
  if (!res) {
    const auto err = res.error();
    const auto what = httplib::to_string(err);
    if (err == httplib::Error::Read || err == httplib::Error::Write || err == httplib::Error::ConnectionTimeout ||
        err == httplib::Error::Connection) {
      throw Error(ErrorCode::Timeout, what + " (" + endpoint.origin + ")");
    }
    throw HttpError(0, what);
  }
  if (res->status < 200 || res->status >= 300) throw HttpError(res->status, res->body.substr(0, 200));
  return parse_chat_completion(res->body, bundle.expects_logprobs);
}

}  // namespace verbcal
