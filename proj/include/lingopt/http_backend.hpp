#pragma once

#include "lingopt/backend.hpp"

namespace lingopt {

struct HttpBackendOptions {
  std::string base_url;  // e.g. "http://127.0.0.1:8080"
  int timeout_ms = 30000;
  std::string bearer_token;  // optional Authorization header
  int max_attempts = 3;      // retried only on transport errors and 5xx
  int backoff_base_ms = 200;  // doubled after each failed attempt

  /// Reads LINGOPT_BACKEND_URL and LINGOPT_BACKEND_TIMEOUT_MS.
  static HttpBackendOptions from_env();
};

/// Remote backend over the JSON wire protocol. One handle is shareable
/// across threads; every call opens its own connection.
class HttpBackend : public ModelBackend {
public:
  explicit HttpBackend(HttpBackendOptions options);

  LogprobsResponse logprobs(const LogprobsRequest& req) override;
  GenerateResponse generate(const GenerateRequest& req) override;
  HealthStatus healthcheck() override;
  std::string name() const override;

private:
  /// POSTs body to path with the retry policy; returns the reply body.
  std::string post_with_retries(const std::string& path, const std::string& body);

  HttpBackendOptions options_;
};

}  // namespace lingopt
