#include "lingopt/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <future>
#include <mutex>

#include <json.hpp>

#include "lingopt/text.hpp"

namespace lingopt {

const char* mode_name(RoundsMode mode) {
  switch (mode) {
    case RoundsMode::Standard1R: return "standard_1r";
    case RoundsMode::RewritingXR: return "rewriting_xr";
    case RoundsMode::LoopXR: return "loop_xr";
  }
  return "?";
}

RoundsMode mode_from_name(const std::string& name) {
  if (name == "standard_1r") return RoundsMode::Standard1R;
  if (name == "rewriting_xr") return RoundsMode::RewritingXR;
  if (name == "loop_xr") return RoundsMode::LoopXR;
  throw ConfigError("pipeline: unknown rounds mode '" + name + "'");
}

void PipelineConfig::validate() const {
  if (rounds < 1 || rounds > 4) {
    throw ConfigError("pipeline: rounds must lie in 1..4, got " + std::to_string(rounds));
  }
  if (rounds_mode == RoundsMode::Standard1R && rounds != 1) {
    throw ConfigError("pipeline: standard_1r requires rounds == 1");
  }
  if (score_decimals < 0 || score_decimals > 17) {
    throw ConfigError("pipeline: score_decimals out of range");
  }
  if (max_rewrite_tokens < 1 || max_optimize_tokens < 1) {
    throw ConfigError("pipeline: token limits must be >= 1");
  }
}

PipelineError::PipelineError(const std::string& msg, OptimizationTrace trace,
                             Instruction fallback)
    : Error(msg), trace_(std::move(trace)), fallback_(std::move(fallback)) {}

std::string rewrite_prompt(const std::string& initial_text) {
  return "There is the text " + initial_text +
         ". Please modify the text to make it better while retaining the sentence "
         "structure and keywords.";
}

std::string format_score(double value, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, value);
  return buf;
}

std::string build_comparison_prompt(const std::vector<Instruction>& scored, int decimals) {
  if (scored.size() < 2) {
    throw PreconditionError("comparison prompt: need at least two scored instructions");
  }
  for (const auto& inst : scored) {
    if (!inst.ias.has_value()) {
      throw PreconditionError("comparison prompt: instruction '" + inst.text +
                              "' has no score");
    }
  }
  // Worst (highest IAS) first; stable, so on ties the later-inserted
  // (fresher) instruction keeps the better slot.
  std::vector<Instruction> ordered = scored;
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const Instruction& a, const Instruction& b) { return *a.ias > *b.ias; });

  std::string prompt =
      "The following instructions are scored; lower score means better instruction.\n";
  for (const auto& inst : ordered) {
    prompt += "Instruction: " + inst.text + "\n";
    prompt += "Score: " + format_score(*inst.ias, decimals) + "\n";
  }
  prompt += "Write a new instruction that would get an even lower score:\nInstruction:";
  return prompt;
}

std::string build_comparison_prompt(const ScoredPair& pair, int decimals) {
  if (!pair.initial.ias.has_value() || !pair.rewritten.ias.has_value()) {
    throw PreconditionError("comparison prompt: pair is not fully scored");
  }
  return build_comparison_prompt(std::vector<Instruction>{pair.initial, pair.rewritten},
                                 decimals);
}

namespace {

/// Wraps the real backend and appends every successful call to the trace;
/// safe for the concurrent scoring phase.
class TracingBackend : public ModelBackend {
public:
  TracingBackend(ModelBackend& inner, OptimizationTrace& trace)
      : inner_(inner), trace_(trace) {}

  std::atomic<int> round{0};

  LogprobsResponse logprobs(const LogprobsRequest& req) override {
    LogprobsResponse resp = inner_.logprobs(req);
    CallRecord rec;
    rec.operation = "logprobs";
    rec.round = round.load();
    rec.has_image = req.image.has_value();
    rec.prompt = req.prompt;
    rec.continuation = req.continuation;
    rec.logprobs = resp.logprobs;
    rec.latency_ms = resp.latency_ms;
    std::lock_guard lock(mu_);
    trace_.calls.push_back(std::move(rec));
    return resp;
  }

  GenerateResponse generate(const GenerateRequest& req) override {
    GenerateResponse resp = inner_.generate(req);
    record_generate(req, resp.text, resp.latency_ms);
    return resp;
  }

  /// Empty generations raise before we can see the response, but the call
  /// still happened; the pipeline records it explicitly in that case.
  void record_generate(const GenerateRequest& req, const std::string& output,
                       double latency_ms) {
    CallRecord rec;
    rec.operation = "generate";
    rec.round = round.load();
    rec.has_image = req.image.has_value();
    rec.prompt = req.prompt;
    rec.max_tokens = req.max_tokens;
    rec.output_text = output;
    rec.latency_ms = latency_ms;
    std::lock_guard lock(mu_);
    trace_.calls.push_back(std::move(rec));
  }

  HealthStatus healthcheck() override { return inner_.healthcheck(); }
  std::string name() const override { return inner_.name(); }

private:
  ModelBackend& inner_;
  OptimizationTrace& trace_;
  std::mutex mu_;
};

/// Best (lowest-IAS) instruction among the scored entries; <= keeps the
/// later-inserted instruction on ties, favoring the fresher formulation.
Instruction best_known(const std::vector<Instruction>& scored) {
  const Instruction* best = nullptr;
  for (const auto& inst : scored) {
    if (!inst.ias.has_value()) continue;
    if (best == nullptr || *inst.ias <= *best->ias) best = &inst;
  }
  if (best == nullptr) {
    throw PreconditionError("pipeline: no scored instruction to fall back to");
  }
  return *best;
}

/// Single-caller wrapper that buffers its call records instead of writing
/// them to the shared trace; the scoring phase appends the buffers in
/// entry order afterwards, so concurrent completion order cannot leak
/// into the trace.
class BufferingBackend : public ModelBackend {
public:
  BufferingBackend(ModelBackend& inner, int round) : inner_(inner), round_(round) {}

  std::vector<CallRecord> records;

  LogprobsResponse logprobs(const LogprobsRequest& req) override {
    LogprobsResponse resp = inner_.logprobs(req);
    CallRecord rec;
    rec.operation = "logprobs";
    rec.round = round_;
    rec.has_image = req.image.has_value();
    rec.prompt = req.prompt;
    rec.continuation = req.continuation;
    rec.logprobs = resp.logprobs;
    rec.latency_ms = resp.latency_ms;
    records.push_back(std::move(rec));
    return resp;
  }

  GenerateResponse generate(const GenerateRequest&) override {
    throw ProtocolError("pipeline: unexpected generation during scoring");
  }
  HealthStatus healthcheck() override { return inner_.healthcheck(); }
  std::string name() const override { return inner_.name(); }

private:
  ModelBackend& inner_;
  int round_ = 0;
};

void score_all(ModelBackend& inner, const std::optional<ImagePayload>& image,
               std::vector<Instruction>& entries, OptimizationTrace& trace, int round) {
  std::vector<BufferingBackend> shims;
  shims.reserve(entries.size());
  for (size_t i = 0; i < entries.size(); ++i) shims.emplace_back(inner, round);

  std::vector<std::future<double>> futures;
  futures.reserve(entries.size());
  for (size_t i = 0; i < entries.size(); ++i) {
    futures.push_back(std::async(std::launch::async, [&shim = shims[i], &image,
                                                      &entry = entries[i]] {
      return compute_ias(shim, image, entry);
    }));
  }

  std::exception_ptr first_error;
  for (size_t i = 0; i < entries.size(); ++i) {
    try {
      entries[i].ias = futures[i].get();
    } catch (...) {
      if (!first_error) first_error = std::current_exception();
    }
  }
  // Whatever happened, the calls that did run belong in the trace.
  for (auto& shim : shims) {
    for (auto& rec : shim.records) trace.calls.push_back(std::move(rec));
  }
  if (first_error) std::rethrow_exception(first_error);
}

Instruction rewrite_via(TracingBackend& backend, const Instruction& initial,
                        const std::string& prompt, int max_tokens, bool* fell_back) {
  if (fell_back) *fell_back = false;
  GenerateRequest req;
  req.prompt = prompt;
  req.max_tokens = max_tokens;
  req.temperature = 0.0;

  std::string text;
  try {
    text = trim(backend.generate(req).text);
  } catch (const EmptyOutputError&) {
    backend.record_generate(req, "", 0.0);
    text.clear();
  }
  if (text.empty()) {
    if (fell_back) *fell_back = true;
    return {initial.text, InstructionKind::Rewritten, std::nullopt};
  }
  return {text, InstructionKind::Rewritten, std::nullopt};
}

}  // namespace

Instruction rewrite(ModelBackend& backend, const Instruction& initial, int max_tokens,
                    bool* fell_back) {
  initial.validate();
  OptimizationTrace scratch;
  TracingBackend tracing(backend, scratch);
  return rewrite_via(tracing, initial, rewrite_prompt(initial.text), max_tokens, fell_back);
}

std::pair<Instruction, OptimizationTrace> optimize(ModelBackend& backend,
                                                   const std::optional<ImagePayload>& image,
                                                   const Instruction& initial,
                                                   const PipelineConfig& cfg) {
  cfg.validate();
  initial.validate();

  OptimizationTrace trace;
  trace.mode = mode_name(cfg.rounds_mode);
  trace.rounds = cfg.rounds;
  trace.initial = initial;
  trace.final = initial;  // placeholder until a real result lands

  TracingBackend tracing(backend, trace);
  std::vector<Instruction> entries;  // all scored instructions, insertion order

  auto fail = [&](const std::string& what, const Error& cause) -> PipelineError {
    Instruction fallback = initial;
    for (const auto& e : entries) {
      if (e.ias.has_value() &&
          (!fallback.ias.has_value() || *e.ias <= *fallback.ias)) {
        fallback = e;
      }
    }
    trace.final = fallback;
    return PipelineError("pipeline: " + what + " failed: " + cause.what(), trace, fallback);
  };

  // Rewrite phase: one rewrite normally, `rounds` distinct variants in
  // rewriting mode (variant k >= 2 suffixes the prompt to break greedy
  // decoding's determinism).
  const int n_rewrites = cfg.rounds_mode == RoundsMode::RewritingXR ? cfg.rounds : 1;
  try {
    for (int k = 1; k <= n_rewrites; ++k) {
      std::string prompt = rewrite_prompt(initial.text);
      if (k >= 2) prompt += " Variant " + std::to_string(k) + ":";
      bool fell = false;
      Instruction rw = rewrite_via(tracing, initial, prompt, cfg.max_rewrite_tokens, &fell);
      if (fell) trace.rewrite_fell_back = true;
      trace.rewrites.push_back(std::move(rw));
    }
  } catch (const PipelineError&) {
    throw;
  } catch (const Error& e) {
    throw fail("rewrite", e);
  }

  // Scoring phase: initial plus all rewrites, concurrently.
  entries.push_back(initial);
  for (const auto& rw : trace.rewrites) entries.push_back(rw);
  try {
    score_all(backend, image, entries, trace, 0);
  } catch (const Error& e) {
    throw fail("scoring", e);
  }
  trace.initial = entries[0];
  for (size_t i = 0; i < trace.rewrites.size(); ++i) {
    trace.rewrites[i] = entries[i + 1];
  }

  // Comparison rounds: regenerate from the ranked set; in loop mode each
  // intermediate result is scored and joins the set.
  const int n_rounds = cfg.rounds_mode == RoundsMode::LoopXR ? cfg.rounds : 1;
  for (int r = 1; r <= n_rounds; ++r) {
    tracing.round = r;
    const std::string prompt = build_comparison_prompt(entries, cfg.score_decimals);
    trace.round_prompts.push_back(prompt);

    GenerateRequest req;
    req.image = image;
    req.prompt = prompt;
    req.max_tokens = cfg.max_optimize_tokens;
    req.temperature = 0.0;

    std::string text;
    try {
      text = trim(tracing.generate(req).text);
    } catch (const EmptyOutputError&) {
      tracing.record_generate(req, "", 0.0);
    } catch (const Error& e) {
      throw fail("optimized generation", e);
    }
    if (text.empty()) {
      trace.empty_optimized_fallback = true;
      const Instruction fallback = best_known(entries);
      trace.final = fallback;
      return {fallback, trace};
    }

    Instruction opt{text, InstructionKind::Optimized, std::nullopt};
    const bool is_last = r == n_rounds;
    if (!is_last || cfg.guard_fallback) {
      try {
        opt.ias = compute_ias(tracing, image, opt);
      } catch (const Error& e) {
        trace.optimized.push_back(opt);
        throw fail("optimized scoring", e);
      }
      entries.push_back(opt);
    }
    trace.optimized.push_back(std::move(opt));
  }

  Instruction result = trace.optimized.back();
  if (cfg.guard_fallback) {
    const Instruction best = best_known(entries);
    if (best.text != result.text) {
      trace.guard_applied = true;
      result = best;
    }
  }
  trace.final = result;
  return {std::move(result), trace};
}

std::string OptimizationTrace::to_jsonl() const {
  using nlohmann::json;
  std::string out;
  for (const auto& call : calls) {
    json j;
    j["op"] = call.operation;
    j["round"] = call.round;
    j["has_image"] = call.has_image;
    j["prompt"] = call.prompt;
    j["latency_ms"] = call.latency_ms;
    if (call.operation == "logprobs") {
      j["continuation"] = call.continuation;
      j["logprobs"] = call.logprobs;
    } else {
      j["max_tokens"] = call.max_tokens;
      j["output"] = call.output_text;
    }
    out += j.dump() + "\n";
  }

  auto ias_or_null = [](const Instruction& inst) {
    return inst.ias.has_value() ? json(*inst.ias) : json(nullptr);
  };
  json summary;
  summary["initial"] = initial.text;
  summary["optimized"] = final.text;
  json ias;
  ias["initial"] = ias_or_null(initial);
  ias["rewrites"] = json::array();
  for (const auto& rw : rewrites) ias["rewrites"].push_back(ias_or_null(rw));
  ias["optimized"] = json::array();
  for (const auto& op : optimized) ias["optimized"].push_back(ias_or_null(op));
  ias["final"] = ias_or_null(final);
  summary["ias"] = ias;
  summary["mode"] = mode;
  summary["rounds"] = rounds;
  out += summary.dump() + "\n";
  return out;
}

}  // namespace lingopt
