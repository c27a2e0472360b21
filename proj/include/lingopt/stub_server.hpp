#pragma once

#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "lingopt/backend.hpp"

namespace httplib {
class Server;
}

namespace lingopt {

/// One scripted behavior of the stub server. Rules are consulted in
/// insertion order; the first rule whose constraints all hold (and whose
/// use count is not exhausted) wins. Unmatched requests get the default
/// reply. Matching on request content instead of arrival order keeps
/// scripted runs reproducible under concurrency.
struct StubRule {
  enum class Endpoint { Any, Logprobs, Generate };
  Endpoint endpoint = Endpoint::Any;

  // Constraints; empty / unset means "no constraint".
  std::string prompt_contains;
  std::string prompt_equals;
  std::string continuation_contains;
  std::optional<bool> has_image;

  int times = -1;   // how often the rule may fire; -1 = unlimited
  int status = 200;  // non-200 simulates server failures

  // Reply content. raw_body overrides everything (malformed-reply tests).
  std::optional<std::vector<std::string>> tokens;
  std::optional<std::vector<double>> logprobs;
  std::optional<double> per_token_logprob;
  std::optional<std::string> text;
  std::optional<std::string> raw_body;
};

/// Local HTTP server implementing the wire protocol for tests and the
/// stub-server command. Replies are scripted via rules, synthesized from
/// defaults, or delegated to a real in-process backend.
class StubServer {
public:
  /// Binds 127.0.0.1 on an ephemeral port (port 0) or the given port.
  explicit StubServer(int port = 0);
  ~StubServer();
  StubServer(const StubServer&) = delete;
  StubServer& operator=(const StubServer&) = delete;

  int port() const { return port_; }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }

  void add_rule(StubRule rule);
  void clear_rules();
  void set_backend_name(std::string name);
  void set_default_logprob(double per_token);
  void set_default_text(std::string text);
  /// Overrides the health endpoint's body verbatim (negative tests).
  void set_health_raw(std::string raw);
  /// Serves a real backend instead of synthesized replies; rules with a
  /// non-200 status still fire first, so failures can be injected.
  void set_delegate(std::shared_ptr<ModelBackend> delegate);

  /// Raw request bodies in arrival order.
  std::vector<std::string> recorded_logprobs() const;
  std::vector<std::string> recorded_generate() const;
  void reset_recordings();

  void stop();

private:
  std::string handle_logprobs(const std::string& body, int& status_out);
  std::string handle_generate(const std::string& body, int& status_out);
  StubRule* find_rule(StubRule::Endpoint endpoint, const std::string& prompt,
                      const std::string& continuation, bool has_image);

  mutable std::mutex mu_;
  std::vector<StubRule> rules_;
  std::string backend_name_ = "stub";
  double default_logprob_ = -1.0;
  std::string default_text_ = "ok";
  std::optional<std::string> health_raw_;
  std::shared_ptr<ModelBackend> delegate_;
  std::vector<std::string> recorded_logprobs_;
  std::vector<std::string> recorded_generate_;

  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  int port_ = 0;
};

/// Applies a JSON script ({"backend", "default_logprob", "default_text",
/// "rules": [...]}) to a server; used by the stub-server command.
void apply_stub_script(StubServer& server, const std::string& script_json);

}  // namespace lingopt
