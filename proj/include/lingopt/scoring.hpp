#pragma once

#include <optional>
#include <string>

#include "lingopt/backend.hpp"

namespace lingopt {

enum class InstructionKind { Initial, Rewritten, Optimized };

const char* kind_name(InstructionKind kind);

/// An instruction at some stage of optimization, with its alignment score
/// once computed. Lower scores mean better image/instruction alignment.
struct Instruction {
  std::string text;
  InstructionKind kind = InstructionKind::Initial;
  std::optional<double> ias;

  void validate() const;  // text nonempty after trimming; ias finite, >= 0
};

struct ScoredPair {
  Instruction initial;
  Instruction rewritten;
};

/// Exact scoring prompt: "<Image>Based on the image given, the most
/// appropriate instruction should be: {text}". No other alteration; a
/// literal "{}" inside the instruction is not re-expanded.
std::string ias_prompt(const std::string& instruction_text);

/// Mean per-token NLL of the continuation given the prompt (natural log).
/// The single code path behind both the alignment score and ranking-mode
/// candidate losses.
double mean_continuation_nll(ModelBackend& backend,
                             const std::optional<ImagePayload>& image,
                             const std::string& prompt, const std::string& continuation);

/// Alignment score: mean over the instruction's tokens of
/// -log P(t_i | image, prompt prefix, t_1..i-1), natural log. Only the
/// instruction tokens are scored, never the template prefix. Instruction
/// whitespace is normalized (trim + collapse) before scoring, so trailing
/// whitespace cannot move the score.
double compute_ias(ModelBackend& backend, const std::optional<ImagePayload>& image,
                   const Instruction& instruction);

/// Scores both instructions; the two computations are independent and run
/// concurrently unless `concurrent` is false (the sequential path exists
/// to demonstrate equivalence).
ScoredPair score_pair(ModelBackend& backend, const std::optional<ImagePayload>& image,
                      Instruction initial, Instruction rewritten, bool concurrent = true);

}  // namespace lingopt
