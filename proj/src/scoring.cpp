#include "lingopt/scoring.hpp"

#include <cmath>
#include <future>

#include "lingopt/text.hpp"

namespace lingopt {

const char* kind_name(InstructionKind kind) {
  switch (kind) {
    case InstructionKind::Initial: return "initial";
    case InstructionKind::Rewritten: return "rewritten";
    case InstructionKind::Optimized: return "optimized";
  }
  return "?";
}

void Instruction::validate() const {
  if (trim(text).empty()) {
    throw PreconditionError("instruction: text is empty after trimming");
  }
  if (ias.has_value() && (!std::isfinite(*ias) || *ias < 0.0)) {
    throw PreconditionError("instruction: ias must be finite and >= 0");
  }
}

std::string ias_prompt(const std::string& instruction_text) {
  if (instruction_text.empty()) {
    throw PreconditionError("ias_prompt: instruction text is empty");
  }
  return "<Image>Based on the image given, the most appropriate instruction should be: " +
         instruction_text;
}

double mean_continuation_nll(ModelBackend& backend,
                             const std::optional<ImagePayload>& image,
                             const std::string& prompt, const std::string& continuation) {
  LogprobsRequest req;
  req.image = image;
  req.prompt = prompt;
  req.continuation = continuation;
  req.echo_tokens = true;

  const LogprobsResponse resp = backend.logprobs(req);
  if (resp.logprobs.empty()) {
    throw ProtocolError("scoring: backend returned no logprobs for '" + continuation + "'");
  }
  if (!resp.tokens.empty() && resp.tokens.size() != resp.logprobs.size()) {
    throw ProtocolError("scoring: token count " + std::to_string(resp.tokens.size()) +
                        " != logprob count " + std::to_string(resp.logprobs.size()));
  }

  double sum = 0.0;
  for (double lp : resp.logprobs) sum -= lp;
  const double mean = sum / static_cast<double>(resp.logprobs.size());
  if (!std::isfinite(mean)) {
    throw NumericError("scoring: non-finite mean NLL for '" + continuation + "'");
  }
  return mean;
}

double compute_ias(ModelBackend& backend, const std::optional<ImagePayload>& image,
                   const Instruction& instruction) {
  instruction.validate();
  const std::string normalized = collapse_whitespace(instruction.text);
  return mean_continuation_nll(backend, image, ias_prompt(normalized), normalized);
}

ScoredPair score_pair(ModelBackend& backend, const std::optional<ImagePayload>& image,
                      Instruction initial, Instruction rewritten, bool concurrent) {
  initial.validate();
  rewritten.validate();

  if (concurrent) {
    auto init_future = std::async(std::launch::async, [&] {
      return compute_ias(backend, image, initial);
    });
    auto rewr_future = std::async(std::launch::async, [&] {
      return compute_ias(backend, image, rewritten);
    });
    initial.ias = init_future.get();
    rewritten.ias = rewr_future.get();
  } else {
    initial.ias = compute_ias(backend, image, initial);
    rewritten.ias = compute_ias(backend, image, rewritten);
  }
  return {std::move(initial), std::move(rewritten)};
}

}  // namespace lingopt
