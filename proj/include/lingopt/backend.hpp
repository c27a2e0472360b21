#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "lingopt/errors.hpp"
#include "lingopt/image.hpp"

namespace lingopt {

// The model capability consumed by scoring, the optimization pipeline, and
// the eval harness. Two realizations ship: the in-process toy model and a
// remote inference server speaking a small HTTP+JSON protocol.

/// Image argument: an inline base64 grid payload, or an opaque reference
/// string the server resolves on its side.
struct ImagePayload {
  enum class Kind { Inline, Ref };
  Kind kind = Kind::Inline;
  std::string value;

  static ImagePayload inline_grid(const ImageGrid& img);
  static ImagePayload reference(std::string ref);
};

struct LogprobsRequest {
  std::optional<ImagePayload> image;
  std::string prompt;
  std::string continuation;
  bool echo_tokens = false;

  void validate() const;  // continuation must be nonempty
};

struct GenerateRequest {
  std::optional<ImagePayload> image;
  std::string prompt;
  int max_tokens = 16;
  double temperature = 0.0;  // 0 = greedy

  void validate() const;  // max_tokens >= 1, temperature >= 0
};

struct LogprobsResponse {
  std::vector<std::string> tokens;  // filled when echo_tokens was requested
  std::vector<double> logprobs;     // natural log, one per continuation token
  std::string backend;
  double latency_ms = 0.0;
};

struct GenerateResponse {
  std::string text;
  std::string backend;
  double latency_ms = 0.0;
};

struct HealthStatus {
  bool ok = false;
  std::string backend;
  std::string detail;  // failure description when not ok
};

class ModelBackend {
public:
  virtual ~ModelBackend() = default;

  /// Per-token log P(continuation_i | image, prompt, continuation_{1:i-1}).
  virtual LogprobsResponse logprobs(const LogprobsRequest& req) = 0;

  /// Text completion; temperature 0 is deterministic greedy decoding.
  /// Raises EmptyOutputError when the completion is empty.
  virtual GenerateResponse generate(const GenerateRequest& req) = 0;

  virtual HealthStatus healthcheck() = 0;

  virtual std::string name() const = 0;
};

// Wire codecs shared by the HTTP client, the stub server, and golden-file
// tests. Serialization is canonical: objects dump with alphabetically
// ordered keys, so equal requests yield byte-equal bodies.
std::string logprobs_request_to_json(const LogprobsRequest& req);
LogprobsRequest logprobs_request_from_json(const std::string& body);
std::string logprobs_response_to_json(const LogprobsResponse& resp);
LogprobsResponse logprobs_response_from_json(const std::string& body);
std::string generate_request_to_json(const GenerateRequest& req);
GenerateRequest generate_request_from_json(const std::string& body);
std::string generate_response_to_json(const GenerateResponse& resp);
GenerateResponse generate_response_from_json(const std::string& body);
std::string health_to_json(const std::string& backend_name);
HealthStatus health_from_json(const std::string& body);

}  // namespace lingopt
