#include "lingopt/toy_backend.hpp"

#include <bit>
#include <chrono>
#include <cmath>
#include <random>

namespace lingopt {

namespace {

double elapsed_ms(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
      .count();
}

// Stateless per-request seed so sampled generation is a pure function of
// the request (FNV-1a over the prompt plus the temperature bits).
std::uint64_t request_seed(const GenerateRequest& req) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&](unsigned char b) {
    h ^= b;
    h *= 1099511628211ull;
  };
  for (unsigned char c : req.prompt) mix(c);
  const auto bits = std::bit_cast<std::uint64_t>(req.temperature);
  for (int i = 0; i < 8; ++i) mix(static_cast<unsigned char>(bits >> (8 * i)));
  return h;
}

}  // namespace

ToyBackend::ToyBackend(ToyModelParams params, std::string name)
    : params_(std::move(params)), name_(std::move(name)) {}

std::optional<ImageGrid> ToyBackend::decode_image(
    const std::optional<ImagePayload>& image) const {
  if (!image) return std::nullopt;
  if (image->kind == ImagePayload::Kind::Ref) {
    throw RequestError("toy backend cannot resolve image references", 400);
  }
  return grid_from_base64(image->value);
}

LogprobsResponse ToyBackend::logprobs(const LogprobsRequest& req) {
  const auto t0 = std::chrono::steady_clock::now();
  req.validate();
  const auto image = decode_image(req.image);
  const Vocabulary& vocab = params_.vocab;
  const std::vector<int> prompt_ids = vocab.encode(strip_image_sentinel(req.prompt));
  const std::vector<int> cont_ids = vocab.encode(req.continuation);
  if (cont_ids.empty()) {
    throw PreconditionError("toy backend: continuation tokenized to nothing");
  }

  LogprobsResponse resp;
  resp.logprobs = forward_logprobs(image, prompt_ids, cont_ids, params_);
  if (req.echo_tokens) {
    resp.tokens.reserve(cont_ids.size());
    for (int id : cont_ids) resp.tokens.push_back(vocab.token(id));
  }
  resp.backend = name_;
  resp.latency_ms = elapsed_ms(t0);
  return resp;
}

GenerateResponse ToyBackend::generate(const GenerateRequest& req) {
  const auto t0 = std::chrono::steady_clock::now();
  req.validate();
  const auto image = decode_image(req.image);
  const Vocabulary& vocab = params_.vocab;
  const std::vector<int> prompt_ids = vocab.encode(strip_image_sentinel(req.prompt));

  std::vector<int> out_ids;
  if (req.temperature == 0.0) {
    out_ids = generate_greedy(image, prompt_ids, req.max_tokens, params_);
  } else {
    // Temperature sampling, deterministic per request.
    std::mt19937_64 rng(request_seed(req));
    for (int step = 0; step < req.max_tokens; ++step) {
      const Eigen::RowVectorXd logits =
          next_token_logits(image, prompt_ids, out_ids, params_);
      const Eigen::RowVectorXd scaled = logits / req.temperature;
      const double lse = scaled.maxCoeff() +
                         std::log((scaled.array() - scaled.maxCoeff()).exp().sum());
      const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
      double acc = 0.0;
      int pick = params_.vocab.size() - 1;
      for (int v = 0; v < params_.vocab.size(); ++v) {
        acc += std::exp(scaled(v) - lse);
        if (u < acc) {
          pick = v;
          break;
        }
      }
      if (pick == params_.vocab.eos_id()) break;
      out_ids.push_back(pick);
    }
  }

  GenerateResponse resp;
  resp.text = vocab.decode(out_ids);
  resp.backend = name_;
  resp.latency_ms = elapsed_ms(t0);
  if (resp.text.empty()) {
    throw EmptyOutputError("toy backend: generation produced no tokens for prompt '" +
                           req.prompt + "'");
  }
  return resp;
}

HealthStatus ToyBackend::healthcheck() {
  HealthStatus s;
  s.ok = true;
  s.backend = name_;
  return s;
}

}  // namespace lingopt
