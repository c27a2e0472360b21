#pragma once

#include <optional>
#include <string>
#include <vector>

#include "lingopt/backend.hpp"
#include "lingopt/scoring.hpp"

namespace lingopt {

// Autonomous instruction optimization: rewrite the initial instruction,
// score both variants, rank them worst-to-best in a comparison prompt, and
// ask the model for an instruction that would score even better.

enum class RoundsMode { Standard1R, RewritingXR, LoopXR };

const char* mode_name(RoundsMode mode);
RoundsMode mode_from_name(const std::string& name);

struct PipelineConfig {
  RoundsMode rounds_mode = RoundsMode::Standard1R;
  int rounds = 1;  // 1..4; exactly 1 for Standard1R
  bool guard_fallback = false;  // return the best-scoring instruction seen
  int score_decimals = 4;
  int max_rewrite_tokens = 32;
  int max_optimize_tokens = 32;

  void validate() const;
};

/// One backend call as recorded in the trace; carries enough of the
/// request to replay it and the output it produced.
struct CallRecord {
  std::string operation;  // "generate" or "logprobs"
  int round = 0;          // 0 = pre-round work (rewrites, first scoring)
  bool has_image = false;
  std::string prompt;
  std::string continuation;  // logprobs only
  int max_tokens = 0;        // generate only
  std::string output_text;   // generate only
  std::vector<double> logprobs;  // logprobs only
  double latency_ms = 0.0;
};

struct OptimizationTrace {
  Instruction initial;
  std::vector<Instruction> rewrites;
  std::vector<Instruction> optimized;  // in generation order
  Instruction final;                   // the instruction optimize() returned
  std::vector<std::string> round_prompts;
  std::vector<CallRecord> calls;
  bool rewrite_fell_back = false;     // empty rewrite degraded to pass-through
  bool empty_optimized_fallback = false;
  bool guard_applied = false;
  std::string mode;
  int rounds = 0;

  /// Line-delimited JSON: one record per backend call, then a summary
  /// record {"initial", "optimized", "ias", "mode", "rounds"}.
  std::string to_jsonl() const;
};

/// A backend failure mid-pipeline. Carries everything seen so far plus a
/// usable fallback instruction, always one of {initial, rewrites, prior
/// optimized} — never an empty or synthesized string.
class PipelineError : public Error {
public:
  PipelineError(const std::string& msg, OptimizationTrace trace, Instruction fallback);
  const OptimizationTrace& trace() const { return trace_; }
  const Instruction& fallback() const { return fallback_; }

private:
  OptimizationTrace trace_;
  Instruction fallback_;
};

/// Rewrites via the fixed prompt "There is the text {initial}. Please
/// modify the text to make it better while retaining the sentence
/// structure and keywords." (image-less generate, trimmed result). An
/// empty rewrite falls back to a copy of the initial instruction;
/// *fell_back reports that when supplied.
Instruction rewrite(ModelBackend& backend, const Instruction& initial,
                    int max_tokens = 32, bool* fell_back = nullptr);

/// The exact rewrite prompt for an instruction text.
std::string rewrite_prompt(const std::string& initial_text);

/// Renders a score with fixed decimals (round-half-even).
std::string format_score(double value, int decimals);

/// Comparison prompt over any number of scored instructions, listed in
/// descending IAS order (worst first, best last; ties keep insertion
/// order, so the fresher instruction takes the better slot).
std::string build_comparison_prompt(const std::vector<Instruction>& scored, int decimals);

/// Two-instruction form over a scored pair; both IAS values must be set.
std::string build_comparison_prompt(const ScoredPair& pair, int decimals);

/// Runs the configured optimization and returns the final instruction plus
/// the full trace. Backend failures raise PipelineError.
std::pair<Instruction, OptimizationTrace> optimize(ModelBackend& backend,
                                                   const std::optional<ImagePayload>& image,
                                                   const Instruction& initial,
                                                   const PipelineConfig& cfg);

}  // namespace lingopt
