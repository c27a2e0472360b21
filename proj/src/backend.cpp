#include "lingopt/backend.hpp"

#include <json.hpp>

namespace lingopt {

using nlohmann::json;

ImagePayload ImagePayload::inline_grid(const ImageGrid& img) {
  return {Kind::Inline, grid_to_base64(img)};
}

ImagePayload ImagePayload::reference(std::string ref) {
  return {Kind::Ref, std::move(ref)};
}

void LogprobsRequest::validate() const {
  if (continuation.empty()) {
    throw PreconditionError("logprobs request: continuation must be nonempty");
  }
}

void GenerateRequest::validate() const {
  if (max_tokens < 1) {
    throw PreconditionError("generate request: max_tokens must be >= 1");
  }
  if (!(temperature >= 0.0)) {
    throw PreconditionError("generate request: temperature must be >= 0");
  }
}

namespace {

json image_to_json(const std::optional<ImagePayload>& image) {
  if (!image) return nullptr;
  return json{{"kind", image->kind == ImagePayload::Kind::Inline ? "inline" : "ref"},
              {"value", image->value}};
}

std::optional<ImagePayload> image_from_json(const json& j) {
  if (j.is_null()) return std::nullopt;
  if (!j.is_object() || !j.contains("kind") || !j.contains("value") ||
      !j["kind"].is_string() || !j["value"].is_string()) {
    throw ProtocolError("wire: image must be null or {kind, value}");
  }
  const std::string kind = j["kind"].get<std::string>();
  ImagePayload p;
  if (kind == "inline") {
    p.kind = ImagePayload::Kind::Inline;
  } else if (kind == "ref") {
    p.kind = ImagePayload::Kind::Ref;
  } else {
    throw ProtocolError("wire: unknown image kind '" + kind + "'");
  }
  p.value = j["value"].get<std::string>();
  return p;
}

json parse(const std::string& body, const char* what) {
  json j = json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    throw ProtocolError(std::string("wire: ") + what + " is not a JSON object");
  }
  return j;
}

void require_field(const json& j, const char* field, const char* what) {
  if (!j.contains(field)) {
    throw ProtocolError(std::string("wire: ") + what + " missing field '" + field + "'");
  }
}

}  // namespace

std::string logprobs_request_to_json(const LogprobsRequest& req) {
  json j;
  j["image"] = image_to_json(req.image);
  j["prompt"] = req.prompt;
  j["continuation"] = req.continuation;
  j["echo_tokens"] = req.echo_tokens;
  return j.dump();
}

LogprobsRequest logprobs_request_from_json(const std::string& body) {
  const json j = parse(body, "logprobs request");
  for (const char* f : {"image", "prompt", "continuation", "echo_tokens"}) {
    require_field(j, f, "logprobs request");
  }
  if (!j["prompt"].is_string() || !j["continuation"].is_string() ||
      !j["echo_tokens"].is_boolean()) {
    throw ProtocolError("wire: logprobs request field types");
  }
  LogprobsRequest req;
  req.image = image_from_json(j["image"]);
  req.prompt = j["prompt"].get<std::string>();
  req.continuation = j["continuation"].get<std::string>();
  req.echo_tokens = j["echo_tokens"].get<bool>();
  return req;
}

std::string logprobs_response_to_json(const LogprobsResponse& resp) {
  json j;
  j["tokens"] = resp.tokens;
  j["logprobs"] = resp.logprobs;
  j["backend"] = resp.backend;
  return j.dump();
}

LogprobsResponse logprobs_response_from_json(const std::string& body) {
  const json j = parse(body, "logprobs reply");
  for (const char* f : {"tokens", "logprobs", "backend"}) {
    require_field(j, f, "logprobs reply");
  }
  if (!j["tokens"].is_array() || !j["logprobs"].is_array() || !j["backend"].is_string()) {
    throw ProtocolError("wire: logprobs reply field types");
  }
  LogprobsResponse resp;
  for (const auto& t : j["tokens"]) {
    if (!t.is_string()) throw ProtocolError("wire: logprobs reply tokens must be strings");
    resp.tokens.push_back(t.get<std::string>());
  }
  for (const auto& lp : j["logprobs"]) {
    if (!lp.is_number()) throw ProtocolError("wire: logprobs reply values must be numbers");
    const double v = lp.get<double>();
    if (v > 0.0) {
      throw ProtocolError("wire: positive logprob " + std::to_string(v));
    }
    resp.logprobs.push_back(v);
  }
  if (!resp.tokens.empty() && resp.tokens.size() != resp.logprobs.size()) {
    throw ProtocolError("wire: logprobs reply token/value count mismatch (" +
                        std::to_string(resp.tokens.size()) + " vs " +
                        std::to_string(resp.logprobs.size()) + ")");
  }
  resp.backend = j["backend"].get<std::string>();
  return resp;
}

std::string generate_request_to_json(const GenerateRequest& req) {
  json j;
  j["image"] = image_to_json(req.image);
  j["prompt"] = req.prompt;
  j["max_tokens"] = req.max_tokens;
  j["temperature"] = req.temperature;
  return j.dump();
}

GenerateRequest generate_request_from_json(const std::string& body) {
  const json j = parse(body, "generate request");
  for (const char* f : {"image", "prompt", "max_tokens", "temperature"}) {
    require_field(j, f, "generate request");
  }
  if (!j["prompt"].is_string() || !j["max_tokens"].is_number_integer() ||
      !j["temperature"].is_number()) {
    throw ProtocolError("wire: generate request field types");
  }
  GenerateRequest req;
  req.image = image_from_json(j["image"]);
  req.prompt = j["prompt"].get<std::string>();
  req.max_tokens = j["max_tokens"].get<int>();
  req.temperature = j["temperature"].get<double>();
  return req;
}

std::string generate_response_to_json(const GenerateResponse& resp) {
  json j;
  j["text"] = resp.text;
  j["backend"] = resp.backend;
  return j.dump();
}

GenerateResponse generate_response_from_json(const std::string& body) {
  const json j = parse(body, "generate reply");
  for (const char* f : {"text", "backend"}) {
    require_field(j, f, "generate reply");
  }
  if (!j["text"].is_string() || !j["backend"].is_string()) {
    throw ProtocolError("wire: generate reply field types");
  }
  GenerateResponse resp;
  resp.text = j["text"].get<std::string>();
  resp.backend = j["backend"].get<std::string>();
  return resp;
}

std::string health_to_json(const std::string& backend_name) {
  json j;
  j["status"] = "ok";
  j["backend"] = backend_name;
  return j.dump();
}

HealthStatus health_from_json(const std::string& body) {
  const json j = parse(body, "health reply");
  for (const char* f : {"status", "backend"}) {
    require_field(j, f, "health reply");
  }
  if (!j["status"].is_string() || !j["backend"].is_string()) {
    throw ProtocolError("wire: health reply field types");
  }
  HealthStatus s;
  s.ok = j["status"].get<std::string>() == "ok";
  s.backend = j["backend"].get<std::string>();
  if (!s.ok) s.detail = "status '" + j["status"].get<std::string>() + "'";
  return s;
}

}  // namespace lingopt
