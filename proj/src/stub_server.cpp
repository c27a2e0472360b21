#include "lingopt/stub_server.hpp"

#include <sstream>

#include <httplib.h>
#include <json.hpp>

namespace lingopt {

namespace {

std::vector<std::string> whitespace_tokens(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::string> out;
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

std::string join(const std::vector<std::string>& words, size_t count) {
  std::string out;
  for (size_t i = 0; i < std::min(count, words.size()); ++i) {
    if (i > 0) out += ' ';
    out += words[i];
  }
  return out;
}

std::string error_body(const std::string& msg) {
  return nlohmann::json{{"error", msg}}.dump();
}

}  // namespace

StubServer::StubServer(int port) : server_(std::make_unique<httplib::Server>()) {
  server_->Post("/v1/logprobs", [this](const httplib::Request& req, httplib::Response& res) {
    int status = 200;
    const std::string body = handle_logprobs(req.body, status);
    res.status = status;
    res.set_content(body, "application/json");
  });
  server_->Post("/v1/generate", [this](const httplib::Request& req, httplib::Response& res) {
    int status = 200;
    const std::string body = handle_generate(req.body, status);
    res.status = status;
    res.set_content(body, "application/json");
  });
  server_->Get("/v1/health", [this](const httplib::Request&, httplib::Response& res) {
    std::lock_guard lock(mu_);
    res.set_content(health_raw_ ? *health_raw_ : health_to_json(backend_name_),
                    "application/json");
  });

  if (port == 0) {
    port_ = server_->bind_to_any_port("127.0.0.1");
  } else {
    if (!server_->bind_to_port("127.0.0.1", port)) {
      throw ConfigError("stub server: cannot bind port " + std::to_string(port));
    }
    port_ = port;
  }
  if (port_ <= 0) {
    throw ConfigError("stub server: bind failed");
  }
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  while (!server_->is_running()) {
    std::this_thread::yield();
  }
}

StubServer::~StubServer() { stop(); }

void StubServer::stop() {
  if (server_ && server_->is_running()) {
    server_->stop();
  }
  if (thread_.joinable()) {
    thread_.join();
  }
}

void StubServer::add_rule(StubRule rule) {
  std::lock_guard lock(mu_);
  rules_.push_back(std::move(rule));
}

void StubServer::clear_rules() {
  std::lock_guard lock(mu_);
  rules_.clear();
}

void StubServer::set_backend_name(std::string name) {
  std::lock_guard lock(mu_);
  backend_name_ = std::move(name);
}

void StubServer::set_default_logprob(double per_token) {
  std::lock_guard lock(mu_);
  default_logprob_ = per_token;
}

void StubServer::set_default_text(std::string text) {
  std::lock_guard lock(mu_);
  default_text_ = std::move(text);
}

void StubServer::set_health_raw(std::string raw) {
  std::lock_guard lock(mu_);
  health_raw_ = std::move(raw);
}

void StubServer::set_delegate(std::shared_ptr<ModelBackend> delegate) {
  std::lock_guard lock(mu_);
  delegate_ = std::move(delegate);
}

std::vector<std::string> StubServer::recorded_logprobs() const {
  std::lock_guard lock(mu_);
  return recorded_logprobs_;
}

std::vector<std::string> StubServer::recorded_generate() const {
  std::lock_guard lock(mu_);
  return recorded_generate_;
}

void StubServer::reset_recordings() {
  std::lock_guard lock(mu_);
  recorded_logprobs_.clear();
  recorded_generate_.clear();
}

StubRule* StubServer::find_rule(StubRule::Endpoint endpoint, const std::string& prompt,
                                const std::string& continuation, bool has_image) {
  for (auto& rule : rules_) {
    if (rule.endpoint != StubRule::Endpoint::Any && rule.endpoint != endpoint) continue;
    if (rule.times == 0) continue;
    if (!rule.prompt_equals.empty() && prompt != rule.prompt_equals) continue;
    if (!rule.prompt_contains.empty() &&
        prompt.find(rule.prompt_contains) == std::string::npos) {
      continue;
    }
    if (!rule.continuation_contains.empty() &&
        continuation.find(rule.continuation_contains) == std::string::npos) {
      continue;
    }
    if (rule.has_image.has_value() && *rule.has_image != has_image) continue;
    if (rule.times > 0) --rule.times;
    return &rule;
  }
  return nullptr;
}

std::string StubServer::handle_logprobs(const std::string& body, int& status_out) {
  std::lock_guard lock(mu_);
  recorded_logprobs_.push_back(body);

  LogprobsRequest req;
  try {
    req = logprobs_request_from_json(body);
  } catch (const ProtocolError& e) {
    status_out = 400;
    return error_body(e.what());
  }

  StubRule* rule =
      find_rule(StubRule::Endpoint::Logprobs, req.prompt, req.continuation, req.image.has_value());
  if (rule && rule->status != 200) {
    status_out = rule->status;
    return rule->raw_body ? *rule->raw_body : error_body("scripted failure");
  }
  if (rule && rule->raw_body) {
    return *rule->raw_body;
  }

  if (delegate_ && !rule) {
    try {
      LogprobsResponse resp = delegate_->logprobs(req);
      resp.backend = backend_name_;
      return logprobs_response_to_json(resp);
    } catch (const RequestError& e) {
      status_out = e.status();
      return error_body(e.what());
    } catch (const Error& e) {
      status_out = 500;
      return error_body(e.what());
    }
  }

  const std::vector<std::string> words = whitespace_tokens(req.continuation);
  LogprobsResponse resp;
  resp.backend = backend_name_;
  if (rule && rule->logprobs) {
    resp.logprobs = *rule->logprobs;
  } else {
    const double lp = rule && rule->per_token_logprob ? *rule->per_token_logprob
                                                      : default_logprob_;
    resp.logprobs.assign(words.size(), lp);
  }
  if (rule && rule->tokens) {
    resp.tokens = *rule->tokens;
  } else if (req.echo_tokens) {
    resp.tokens.assign(words.begin(),
                       words.begin() + std::min(words.size(), resp.logprobs.size()));
    resp.tokens.resize(resp.logprobs.size(), "<pad>");
  }
  return logprobs_response_to_json(resp);
}

std::string StubServer::handle_generate(const std::string& body, int& status_out) {
  std::lock_guard lock(mu_);
  recorded_generate_.push_back(body);

  GenerateRequest req;
  try {
    req = generate_request_from_json(body);
  } catch (const ProtocolError& e) {
    status_out = 400;
    return error_body(e.what());
  }

  StubRule* rule =
      find_rule(StubRule::Endpoint::Generate, req.prompt, "", req.image.has_value());
  if (rule && rule->status != 200) {
    status_out = rule->status;
    return rule->raw_body ? *rule->raw_body : error_body("scripted failure");
  }
  if (rule && rule->raw_body) {
    return *rule->raw_body;
  }

  if (delegate_ && !rule) {
    try {
      GenerateResponse resp = delegate_->generate(req);
      resp.backend = backend_name_;
      return generate_response_to_json(resp);
    } catch (const EmptyOutputError&) {
      GenerateResponse resp;
      resp.backend = backend_name_;
      return generate_response_to_json(resp);  // empty text round-trips
    } catch (const RequestError& e) {
      status_out = e.status();
      return error_body(e.what());
    } catch (const Error& e) {
      status_out = 500;
      return error_body(e.what());
    }
  }

  // Server-side truncation to max_tokens whitespace tokens.
  const std::string full = rule && rule->text ? *rule->text : default_text_;
  GenerateResponse resp;
  resp.text = join(whitespace_tokens(full), static_cast<size_t>(req.max_tokens));
  resp.backend = backend_name_;
  return generate_response_to_json(resp);
}

void apply_stub_script(StubServer& server, const std::string& script_json) {
  using nlohmann::json;
  const json j = json::parse(script_json, nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    throw LoadError("stub script: not a JSON object");
  }
  if (j.contains("backend")) server.set_backend_name(j["backend"].get<std::string>());
  if (j.contains("default_logprob")) {
    server.set_default_logprob(j["default_logprob"].get<double>());
  }
  if (j.contains("default_text")) server.set_default_text(j["default_text"].get<std::string>());
  if (j.contains("health_raw")) server.set_health_raw(j["health_raw"].get<std::string>());
  if (!j.contains("rules")) return;
  if (!j["rules"].is_array()) throw LoadError("stub script: rules must be an array");

  for (const auto& r : j["rules"]) {
    StubRule rule;
    if (r.contains("endpoint")) {
      const std::string e = r["endpoint"].get<std::string>();
      if (e == "logprobs") {
        rule.endpoint = StubRule::Endpoint::Logprobs;
      } else if (e == "generate") {
        rule.endpoint = StubRule::Endpoint::Generate;
      } else if (e == "any") {
        rule.endpoint = StubRule::Endpoint::Any;
      } else {
        throw LoadError("stub script: unknown endpoint '" + e + "'");
      }
    }
    if (r.contains("prompt_contains")) {
      rule.prompt_contains = r["prompt_contains"].get<std::string>();
    }
    if (r.contains("prompt_equals")) rule.prompt_equals = r["prompt_equals"].get<std::string>();
    if (r.contains("continuation_contains")) {
      rule.continuation_contains = r["continuation_contains"].get<std::string>();
    }
    if (r.contains("has_image")) rule.has_image = r["has_image"].get<bool>();
    if (r.contains("times")) rule.times = r["times"].get<int>();
    if (r.contains("status")) rule.status = r["status"].get<int>();
    if (r.contains("tokens")) rule.tokens = r["tokens"].get<std::vector<std::string>>();
    if (r.contains("logprobs")) rule.logprobs = r["logprobs"].get<std::vector<double>>();
    if (r.contains("per_token_logprob")) {
      rule.per_token_logprob = r["per_token_logprob"].get<double>();
    }
    if (r.contains("text")) rule.text = r["text"].get<std::string>();
    if (r.contains("raw_body")) rule.raw_body = r["raw_body"].get<std::string>();
    server.add_rule(std::move(rule));
  }
}

}  // namespace lingopt
