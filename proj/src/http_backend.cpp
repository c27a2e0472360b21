#include "lingopt/http_backend.hpp"

#include <chrono>
#include <cstdlib>
#include <thread>

#include <httplib.h>

namespace lingopt {

namespace {

double elapsed_ms(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
      .count();
}

bool is_server_error(int status) { return status >= 500 && status < 600; }

}  // namespace

HttpBackendOptions HttpBackendOptions::from_env() {
  HttpBackendOptions opts;
  if (const char* url = std::getenv("LINGOPT_BACKEND_URL")) {
    opts.base_url = url;
  }
  if (const char* ms = std::getenv("LINGOPT_BACKEND_TIMEOUT_MS")) {
    char* end = nullptr;
    const long val = std::strtol(ms, &end, 10);
    if (end == ms || *end != '\0' || val <= 0) {
      throw ConfigError("LINGOPT_BACKEND_TIMEOUT_MS must be a positive integer, got '" +
                        std::string(ms) + "'");
    }
    opts.timeout_ms = static_cast<int>(val);
  }
  return opts;
}

HttpBackend::HttpBackend(HttpBackendOptions options) : options_(std::move(options)) {
  if (options_.base_url.empty()) {
    throw ConfigError("http backend: base_url is empty (set LINGOPT_BACKEND_URL)");
  }
  if (options_.max_attempts < 1) {
    throw ConfigError("http backend: max_attempts must be >= 1");
  }
}

std::string HttpBackend::name() const { return "http:" + options_.base_url; }

std::string HttpBackend::post_with_retries(const std::string& path,
                                           const std::string& body) {
  std::string last_failure;
  for (int attempt = 1; attempt <= options_.max_attempts; ++attempt) {
    if (attempt > 1) {
      const int delay = options_.backoff_base_ms << (attempt - 2);
      std::this_thread::sleep_for(std::chrono::milliseconds(delay));
    }

    httplib::Client client(options_.base_url);
    const auto timeout = std::chrono::milliseconds(options_.timeout_ms);
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);
    if (!options_.bearer_token.empty()) {
      client.set_bearer_token_auth(options_.bearer_token);
    }

    const httplib::Result res = client.Post(path, body, "application/json");
    if (!res) {
      last_failure = "transport failure (" + httplib::to_string(res.error()) + ")";
      continue;  // retryable
    }
    if (is_server_error(res->status)) {
      last_failure = "server error " + std::to_string(res->status);
      continue;  // retryable
    }
    if (res->status >= 400) {
      throw RequestError("http backend: " + path + " rejected with status " +
                             std::to_string(res->status) +
                             (res->body.empty() ? "" : ": " + res->body),
                         res->status);
    }
    return res->body;
  }
  throw TransportError("http backend: " + path + " failed after " +
                       std::to_string(options_.max_attempts) + " attempts; last: " +
                       last_failure);
}

LogprobsResponse HttpBackend::logprobs(const LogprobsRequest& req) {
  const auto t0 = std::chrono::steady_clock::now();
  req.validate();
  const std::string reply = post_with_retries("/v1/logprobs", logprobs_request_to_json(req));
  LogprobsResponse resp = logprobs_response_from_json(reply);
  if (req.echo_tokens && resp.tokens.size() != resp.logprobs.size()) {
    throw ProtocolError("http backend: echoed token count " +
                        std::to_string(resp.tokens.size()) + " != logprob count " +
                        std::to_string(resp.logprobs.size()));
  }
  resp.latency_ms = elapsed_ms(t0);
  return resp;
}

GenerateResponse HttpBackend::generate(const GenerateRequest& req) {
  const auto t0 = std::chrono::steady_clock::now();
  req.validate();
  const std::string reply = post_with_retries("/v1/generate", generate_request_to_json(req));
  GenerateResponse resp = generate_response_from_json(reply);
  resp.latency_ms = elapsed_ms(t0);
  if (resp.text.empty()) {
    throw EmptyOutputError("http backend: empty generation for prompt '" + req.prompt + "'");
  }
  return resp;
}

HealthStatus HttpBackend::healthcheck() {
  httplib::Client client(options_.base_url);
  const auto timeout = std::chrono::milliseconds(options_.timeout_ms);
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);

  const httplib::Result res = client.Get("/v1/health");
  if (!res) {
    HealthStatus s;
    s.ok = false;
    s.detail = "unavailable (" + httplib::to_string(res.error()) + ")";
    return s;
  }
  if (res->status != 200) {
    HealthStatus s;
    s.ok = false;
    s.detail = "unavailable (status " + std::to_string(res->status) + ")";
    return s;
  }
  return health_from_json(res->body);
}

}  // namespace lingopt
