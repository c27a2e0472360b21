// Acceptance gate for the instruction-optimization toolkit: every
// product-level criterion runs end to end and prints one PASS/FAIL line.
// The binary exits nonzero if any criterion fails, so it doubles as the
// release check under ctest.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "lingopt/backend.hpp"
#include "lingopt/checkpoint.hpp"
#include "lingopt/cmaa.hpp"
#include "lingopt/corpus.hpp"
#include "lingopt/evalharness.hpp"
#include "lingopt/http_backend.hpp"
#include "lingopt/pipeline.hpp"
#include "lingopt/scoring.hpp"
#include "lingopt/stub_server.hpp"
#include "lingopt/tensor.hpp"
#include "lingopt/text.hpp"
#include "lingopt/toy_backend.hpp"
#include "lingopt/toymodel.hpp"
#include "lingopt/vocab.hpp"

using namespace lingopt;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Failure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require(bool ok, const std::string& what) {
  if (!ok) throw Failure(what);
}

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void require_close(double actual, double expected, double tol, const std::string& what) {
  if (!(std::abs(actual - expected) <= tol)) {
    throw Failure(what + ": got " + num(actual) + ", expected " + num(expected) +
                  " within " + num(tol));
  }
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

/// The reference training run (default architecture and schedule on the
/// built-in corpus), trained once and shared by the criteria that need an
/// overfit model.
const ToyModelParams& overfit_params() {
  static const ToyModelParams params = [] {
    auto init = ToyModelParams::init(ToyModelConfig{}, corpus::toy_vocab(), 7);
    return train(corpus::training_pairs(7), std::move(init), TrainSchedule{}).params;
  }();
  return params;
}

HttpBackendOptions fast_options(const std::string& url) {
  HttpBackendOptions opts;
  opts.base_url = url;
  opts.timeout_ms = 5000;
  opts.backoff_base_ms = 1;
  return opts;
}

// --------------------------------------------------------------------------
// 1. Attention rows are convex weights: each row sums to one and every
//    fused output coordinate stays inside the extent of the value rows.

void criterion_attention_rows() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto random_matrix = [&](Eigen::Index r, Eigen::Index c) {
    Matrix2D m(r, c);
    for (Eigen::Index i = 0; i < r; ++i) {
      for (Eigen::Index j = 0; j < c; ++j) m(i, j) = gauss(rng);
    }
    return m;
  };

  for (int it = 0; it < 100; ++it) {
    const auto tokens = static_cast<Eigen::Index>(1 + rng() % 64);
    const auto queries = static_cast<Eigen::Index>(1 + rng() % 64);

    CmaaConfig cfg;
    Matrix2D text, vis, value_rows;
    std::optional<CmaaWeights> weights;
    if (it % 2 == 0) {
      const auto d = static_cast<Eigen::Index>(1 + rng() % 128);
      cfg.d_text = d;
      cfg.d_vis = d;
      cfg.use_scaling = (it % 4 == 0);
      text = random_matrix(tokens, d);
      vis = random_matrix(queries, d);
      value_rows = text;
    } else {
      cfg.d_text = static_cast<Eigen::Index>(1 + rng() % 128);
      cfg.d_vis = static_cast<Eigen::Index>(1 + rng() % 128);
      cfg.d_model = static_cast<Eigen::Index>(1 + rng() % 32);
      cfg.use_projections = true;
      cfg.use_scaling = (it % 4 == 1);
      text = random_matrix(tokens, cfg.d_text);
      vis = random_matrix(queries, cfg.d_vis);
      CmaaWeights w;
      w.query = random_matrix(cfg.d_vis, cfg.d_model);
      w.key = random_matrix(cfg.d_text, cfg.d_model);
      w.value = random_matrix(cfg.d_text, cfg.d_model);
      weights = w;
      value_rows = matmul(text, w.value);
    }

    const FusedRepresentation fused = cmaa_fuse(text, vis, cfg, weights);
    require(fused.attention.rows() == queries && fused.attention.cols() == tokens,
            "attention shape mismatch at iteration " + std::to_string(it));
    require(fused.u_mm.rows() == queries && fused.u_mm.cols() == value_rows.cols(),
            "fused shape mismatch at iteration " + std::to_string(it));

    int bad_rows = 0, negative = 0, out_of_hull = 0;
    for (Eigen::Index q = 0; q < queries; ++q) {
      if (std::abs(fused.attention.row(q).sum() - 1.0) > 1e-9) ++bad_rows;
      for (Eigen::Index t = 0; t < tokens; ++t) {
        if (fused.attention(q, t) < -1e-12) ++negative;
      }
    }
    const Eigen::RowVectorXd lo = value_rows.colwise().minCoeff();
    const Eigen::RowVectorXd hi = value_rows.colwise().maxCoeff();
    for (Eigen::Index q = 0; q < queries; ++q) {
      for (Eigen::Index c = 0; c < value_rows.cols(); ++c) {
        const double v = fused.u_mm(q, c);
        if (v < lo(c) - 1e-9 || v > hi(c) + 1e-9) ++out_of_hull;
      }
    }
    require(bad_rows == 0, std::to_string(bad_rows) + " rows do not sum to 1 at iteration " +
                               std::to_string(it));
    require(negative == 0, "negative attention weights at iteration " + std::to_string(it));
    require(out_of_hull == 0, std::to_string(out_of_hull) +
                                  " fused coordinates escape the value hull at iteration " +
                                  std::to_string(it));
  }
  require(seconds_since(t0) < 5.0, "runtime bound exceeded: " + num(seconds_since(t0)) + "s");
}

// --------------------------------------------------------------------------
// 2. Hand-computed case: one query [1,0] over identity keys/values gives
//    attention [e/(e+1), 1/(e+1)] ~ [0.7311, 0.2689] and the same fused row.

void criterion_attention_hand_case() {
  Matrix2D vis(1, 2);
  vis << 1, 0;
  Matrix2D text(2, 2);
  text << 1, 0, 0, 1;
  CmaaConfig cfg;
  cfg.d_text = 2;
  cfg.d_vis = 2;

  const FusedRepresentation fused = cmaa_fuse(text, vis, cfg);
  require_close(fused.attention(0, 0), 0.7311, 1e-4, "attention weight on the first token");
  require_close(fused.attention(0, 1), 0.2689, 1e-4, "attention weight on the second token");
  require_close(fused.u_mm(0, 0), 0.7311, 1e-4, "fused coordinate 0");
  require_close(fused.u_mm(0, 1), 0.2689, 1e-4, "fused coordinate 1");
}

// --------------------------------------------------------------------------
// 3. Analytic gradients agree with central differences on a probe small
//    enough for finite differencing, for both the full architecture and
//    the near-quadratic linear-only variant.

void criterion_gradient_check() {
  const auto t0 = Clock::now();
  const Vocabulary vocab = Vocabulary::build({"what", "is", "this", "cat", "dog", "red"});

  ToyModelConfig cfg;
  cfg.d_model = 8;
  cfg.d_ff = 16;
  cfg.max_seq_len = 32;
  cfg.use_cmaa_projections = true;
  cfg.init_std = 0.5;  // larger weights stress the nonlinearities
  auto params = ToyModelParams::init(cfg, vocab, 11);
  require(params.trainable_scalars() <= 5000,
          "full-architecture probe exceeds the finite-difference budget: " +
              std::to_string(params.trainable_scalars()) + " scalars");

  const std::vector<TrainExample> probe = {
      {corpus::fixture_image(0, 3), "what is this", "cat"},
      {std::nullopt, "what is this", "red dog"},
  };
  const double err = grad_check(params, probe);
  require(err < 1e-4, "full-architecture max relative error " + num(err) + " >= 1e-4");

  ToyModelConfig lin;
  lin.linear_only = true;
  lin.d_model = 8;
  lin.max_seq_len = 16;
  auto lparams = ToyModelParams::init(lin, vocab, 12);
  const std::vector<TrainExample> lprobe = {{std::nullopt, "what is this", "dog"}};
  const double lerr = grad_check(lparams, lprobe);
  require(lerr < 1e-7, "linear-only max relative error " + num(lerr) + " >= 1e-7");

  require(seconds_since(t0) < 60.0, "runtime bound exceeded: " + num(seconds_since(t0)) + "s");
}

// --------------------------------------------------------------------------
// 4. The default training run overfits the sixteen-pair corpus, the
//    schedule endpoints are exact, and frozen tensors come back untouched.

void criterion_training_convergence() {
  const auto t0 = Clock::now();

  const ToyModelParams& trained = overfit_params();
  const double final_nll = batch_loss(corpus::training_pairs(7), trained);
  require(final_nll < 0.1, "final mean per-token NLL " + num(final_nll) + " >= 0.1");
  require(seconds_since(t0) < 120.0,
          "runtime bound exceeded: " + num(seconds_since(t0)) + "s");

  TrainSchedule sched;  // defaults: 2000 steps, 100 warmup
  require(lr_at(sched, 0) == sched.floor_lr, "learning rate at step 0 is not the floor");
  require(lr_at(sched, sched.warmup_steps) == sched.peak_lr,
          "learning rate at the end of warmup is not the peak");
  require(lr_at(sched, sched.total_steps - 1) == sched.floor_lr,
          "learning rate at the final step is not the floor");

  // Selective fine-tuning: train only the head and fusion projections for
  // a short run; everything frozen must come back bit for bit.
  auto params = ToyModelParams::init(ToyModelConfig{}, corpus::toy_vocab(), 7);
  params.freeze_all_except({TensorSlot::Head, TensorSlot::CmaaQuery, TensorSlot::CmaaKey,
                            TensorSlot::CmaaValue});
  const ToyModelParams before = params;

  const auto pairs = corpus::training_pairs(7);
  const std::vector<TrainExample> subset(pairs.begin(), pairs.begin() + 2);
  TrainSchedule quick;
  quick.total_steps = 40;
  quick.warmup_steps = 5;
  quick.batch_size = 2;
  const TrainResult result = train(subset, std::move(params), quick);

  bool some_trainable_moved = false;
  for (std::size_t i = 0; i < result.params.tensors.size(); ++i) {
    const NamedTensor& was = before.tensors[i];
    const NamedTensor& now = result.params.tensors[i];
    require(was.name == now.name, "tensor order changed across training");
    const bool identical =
        std::memcmp(was.value.data(), now.value.data(),
                    sizeof(double) * static_cast<std::size_t>(was.value.size())) == 0;
    if (!was.trainable) {
      require(identical, "frozen tensor '" + was.name + "' changed during training");
    } else if (!identical) {
      some_trainable_moved = true;
    }
  }
  require(some_trainable_moved, "no trainable tensor changed; the run did nothing");
}

// --------------------------------------------------------------------------
// 5. A zeroed model is uniform over its 4-entry vocabulary, so the
//    alignment score of any instruction is exactly ln 4.

void criterion_uniform_alignment_score() {
  const Vocabulary vocab = Vocabulary::build({});
  require(vocab.size() == 4, "special-only vocabulary should have 4 entries");

  ToyModelConfig cfg;
  cfg.d_model = 8;
  cfg.d_ff = 12;
  cfg.max_seq_len = 64;
  auto params = ToyModelParams::init(cfg, vocab, 3);
  for (auto& t : params.tensors) t.value.setZero();
  ToyBackend backend(std::move(params));

  const double expected = std::log(4.0);
  for (const char* text : {"one", "one two three", "a b c d e f g"}) {
    const Instruction inst{text, InstructionKind::Initial, std::nullopt};
    const double ias = compute_ias(backend, std::nullopt, inst);
    require_close(ias, expected, 1e-9,
                  std::string("alignment score of '") + text + "' under the uniform model");
  }
}

// --------------------------------------------------------------------------
// 6. The alignment score equals an exhaustive chain-rule oracle built from
//    next-token logits, for every continuation of length <= 3 over a
//    three-word vocabulary.

void criterion_alignment_score_oracle() {
  const auto t0 = Clock::now();
  const Vocabulary vocab = Vocabulary::build({"cat", "dog", "red"});
  ToyModelConfig cfg;
  cfg.d_model = 8;
  cfg.d_ff = 12;
  cfg.max_seq_len = 64;
  cfg.init_std = 0.3;
  const ToyModelParams params = ToyModelParams::init(cfg, vocab, 21);

  const ImageGrid img = corpus::fixture_image(2, 7);
  ToyBackend backend(params, "oracle-toy");
  const std::optional<ImagePayload> payload = ImagePayload::inline_grid(img);

  const auto logsumexp = [](const Eigen::RowVectorXd& v) {
    const double m = v.maxCoeff();
    return m + std::log((v.array() - m).exp().sum());
  };

  const std::vector<std::string> words = {"cat", "dog", "red"};
  int checked = 0;
  for (int len = 1; len <= 3; ++len) {
    int combos = 1;
    for (int i = 0; i < len; ++i) combos *= 3;
    for (int code = 0; code < combos; ++code) {
      std::string text;
      int rest = code;
      for (int i = 0; i < len; ++i) {
        if (!text.empty()) text += ' ';
        text += words[static_cast<std::size_t>(rest % 3)];
        rest /= 3;
      }

      const Instruction inst{text, InstructionKind::Initial, std::nullopt};
      const double ias = compute_ias(backend, payload, inst);

      // Independent oracle: accumulate log-softmax terms one token at a
      // time through the generation-path logits.
      const std::vector<int> prompt_ids =
          vocab.encode(strip_image_sentinel(ias_prompt(text)));
      const std::vector<int> cont_ids = vocab.encode(text);
      double total = 0.0;
      std::vector<int> generated;
      for (int id : cont_ids) {
        const Eigen::RowVectorXd logits = next_token_logits(img, prompt_ids, generated, params);
        total += logits(id) - logsumexp(logits);
        generated.push_back(id);
      }
      const double oracle = -total / static_cast<double>(cont_ids.size());

      require_close(ias, oracle, 1e-9, "continuation '" + text + "'");
      ++checked;
    }
  }
  require(checked == 39, "expected 39 continuations, saw " + std::to_string(checked));
  require(seconds_since(t0) < 10.0, "runtime bound exceeded: " + num(seconds_since(t0)) + "s");
}

// --------------------------------------------------------------------------
// 7. Comparison prompts over 1000 random score pairs are byte-identical
//    across runs, always ordered worst-to-best, and ties keep insertion
//    order so the fresher instruction takes the better slot.

void criterion_ranking_determinism() {
  struct Case {
    double first_score;
    double second_score;
    bool tie;
  };
  std::vector<Case> cases;

  const auto build_all = [&cases](bool record) {
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> score(0.0, 5.0);
    std::vector<std::string> prompts;
    prompts.reserve(1000);
    for (int i = 0; i < 1000; ++i) {
      double a = score(rng);
      double b = score(rng);
      const bool tie = (i % 10 == 0);
      if (tie) b = a;
      const Instruction initial{"alpha variant " + std::to_string(i),
                                InstructionKind::Initial, a};
      const Instruction rewritten{"beta variant " + std::to_string(i),
                                  InstructionKind::Rewritten, b};
      prompts.push_back(
          build_comparison_prompt(std::vector<Instruction>{initial, rewritten}, 4));
      if (record) cases.push_back({a, b, tie});
    }
    return prompts;
  };

  const std::vector<std::string> first = build_all(true);
  const std::vector<std::string> second = build_all(false);
  require(first == second, "prompts differ between two identically seeded runs");

  for (int i = 0; i < 1000; ++i) {
    const std::string& p = first[static_cast<std::size_t>(i)];
    const std::size_t s1 = p.find("Score: ");
    require(s1 != std::string::npos, "first score line missing");
    const std::size_t s2 = p.find("Score: ", s1 + 1);
    require(s2 != std::string::npos, "second score line missing");
    const double v1 = std::stod(p.substr(s1 + 7));
    const double v2 = std::stod(p.substr(s2 + 7));
    require(v1 >= v2, "scores not descending in prompt " + std::to_string(i));

    const std::size_t alpha = p.find("alpha");
    const std::size_t beta = p.find("beta");
    const Case& c = cases[static_cast<std::size_t>(i)];
    if (c.tie) {
      require(alpha < beta,
              "tie must keep insertion order (prompt " + std::to_string(i) + ")");
    } else if (c.first_score > c.second_score) {
      require(alpha < beta, "worse-scored entry must come first (prompt " +
                                std::to_string(i) + ")");
    } else {
      require(beta < alpha, "worse-scored entry must come first (prompt " +
                                std::to_string(i) + ")");
    }
  }
}

// --------------------------------------------------------------------------
// 8. The pipeline issues exactly the documented backend calls, and the
//    bodies crossing the wire are canonical and match the golden schema.

void criterion_pipeline_call_arithmetic() {
  // Wire codec against the checked-in goldens, byte for byte.
  LogprobsRequest lreq;
  lreq.prompt = "a";
  lreq.continuation = "b c";
  lreq.echo_tokens = true;
  require(logprobs_request_to_json(lreq) ==
              read_file(std::string(GOLDEN_DIR) + "/wire_logprobs_request.json"),
          "logprobs request drifted from the golden file");

  GenerateRequest greq;
  greq.prompt = "hello";
  greq.image = ImagePayload::reference("img-7");
  greq.max_tokens = 16;
  require(generate_request_to_json(greq) ==
              read_file(std::string(GOLDEN_DIR) + "/wire_generate_request.json"),
          "generate request drifted from the golden file");

  StubServer server;
  server.set_default_logprob(-1.0);
  StubRule rewrite_rule;
  rewrite_rule.endpoint = StubRule::Endpoint::Generate;
  rewrite_rule.prompt_contains = "There is the text";
  rewrite_rule.text = "a much better instruction";
  StubRule comparison_rule;
  comparison_rule.endpoint = StubRule::Endpoint::Generate;
  comparison_rule.prompt_contains = "The following instructions are scored";
  comparison_rule.text = "the optimized instruction";
  server.add_rule(rewrite_rule);
  server.add_rule(comparison_rule);

  HttpBackend client(fast_options(server.url()));
  const std::optional<ImagePayload> image = ImagePayload::reference("img-1");
  const Instruction initial{"original instruction", InstructionKind::Initial, std::nullopt};

  // Single-round mode: one image-less rewrite, two scorings, one
  // image-bearing regeneration.
  PipelineConfig cfg;
  const auto [optimized, trace] = optimize(client, image, initial, cfg);
  require(optimized.text == "the optimized instruction", "unexpected optimized text");
  require(trace.calls.size() == 4, "expected 4 calls, saw " +
                                       std::to_string(trace.calls.size()));
  require(trace.calls[0].operation == "generate" && trace.calls[0].round == 0 &&
              !trace.calls[0].has_image,
          "call 0 must be the image-less rewrite");
  for (int i : {1, 2}) {
    require(trace.calls[static_cast<std::size_t>(i)].operation == "logprobs" &&
                trace.calls[static_cast<std::size_t>(i)].round == 0 &&
                trace.calls[static_cast<std::size_t>(i)].has_image,
            "call " + std::to_string(i) + " must be an image-bearing scoring");
  }
  require(trace.calls[3].operation == "generate" && trace.calls[3].round == 1 &&
              trace.calls[3].has_image,
          "call 3 must be the image-bearing regeneration");

  const std::vector<std::string> gens = server.recorded_generate();
  const std::vector<std::string> lps = server.recorded_logprobs();
  require(gens.size() == 2 && lps.size() == 2, "server saw an unexpected call count");

  // The rewrite body, reconstructed independently, must match byte for byte.
  nlohmann::json expected_rewrite;
  expected_rewrite["image"] = nullptr;
  expected_rewrite["max_tokens"] = 32;
  expected_rewrite["prompt"] = rewrite_prompt("original instruction");
  expected_rewrite["temperature"] = 0.0;
  require(gens[0] == expected_rewrite.dump(), "rewrite request body drifted");

  const auto expected_scoring = [](const std::string& text) {
    nlohmann::json j;
    j["continuation"] = text;
    j["echo_tokens"] = true;
    j["image"]["kind"] = "ref";
    j["image"]["value"] = "img-1";
    j["prompt"] = ias_prompt(text);
    return j.dump();
  };
  const std::string e_initial = expected_scoring("original instruction");
  const std::string e_rewrite = expected_scoring("a much better instruction");
  const bool scoring_bodies_match = (lps[0] == e_initial && lps[1] == e_rewrite) ||
                                    (lps[0] == e_rewrite && lps[1] == e_initial);
  require(scoring_bodies_match, "scoring request bodies drifted");

  for (const auto& body : gens) {
    require(nlohmann::json::parse(body).dump() == body, "generate body not canonical");
  }
  for (const auto& body : lps) {
    require(nlohmann::json::parse(body).dump() == body, "logprobs body not canonical");
  }

  // Loop mode, three rounds: the rewrite, four scorings, three
  // regenerations (the last product is returned unscored).
  server.reset_recordings();
  PipelineConfig loop;
  loop.rounds_mode = RoundsMode::LoopXR;
  loop.rounds = 3;
  const auto [loop_optimized, loop_trace] = optimize(client, image, initial, loop);
  require(loop_trace.calls.size() == 8, "expected 8 calls, saw " +
                                            std::to_string(loop_trace.calls.size()));

  int rewrite_gens = 0, round_zero_scorings = 0, later_scorings = 0;
  std::vector<int> generate_rounds;
  for (const CallRecord& call : loop_trace.calls) {
    if (call.operation == "generate") {
      generate_rounds.push_back(call.round);
      if (call.round == 0) {
        require(!call.has_image, "round-0 generate must be the image-less rewrite");
        ++rewrite_gens;
      } else {
        require(call.has_image, "regenerations must carry the image");
      }
    } else {
      require(call.operation == "logprobs", "unexpected operation " + call.operation);
      require(call.has_image, "scorings must carry the image");
      if (call.round == 0) {
        ++round_zero_scorings;
      } else {
        require(call.round >= 1 && call.round <= 3, "scoring round out of range");
        ++later_scorings;
      }
    }
  }
  require(rewrite_gens == 1, "expected exactly one rewrite generate");
  require(generate_rounds == std::vector<int>{0, 1, 2, 3},
          "generates must land in rounds 0..3 in order");
  require(round_zero_scorings == 2, "round 0 must score the initial/rewrite pair");
  require(later_scorings == 2, "rounds past 0 must score two intermediate products");
  require(server.recorded_generate().size() == 4 && server.recorded_logprobs().size() == 4,
          "server call counts diverge from the trace");
}

// --------------------------------------------------------------------------
// 9. Concurrent scoring is bit-identical to sequential scoring, and
//    sixteen concurrent callers get non-interleaved, correct replies.

void criterion_concurrency_equivalence() {
  ToyBackend backend(overfit_params());
  const std::optional<ImagePayload> image =
      ImagePayload::inline_grid(corpus::fixture_image(3, 7));
  for (int t = 0; t < 50; ++t) {
    const Instruction a{"describe picture number " + std::to_string(t),
                        InstructionKind::Initial, std::nullopt};
    const Instruction b{"give a careful description of picture " + std::to_string(t),
                        InstructionKind::Rewritten, std::nullopt};
    const ScoredPair sequential = score_pair(backend, image, a, b, false);
    const ScoredPair concurrent = score_pair(backend, image, a, b, true);
    require(sequential.initial.ias.has_value() && concurrent.initial.ias.has_value() &&
                sequential.rewritten.ias.has_value() && concurrent.rewritten.ias.has_value(),
            "score_pair left a score unset in trial " + std::to_string(t));
    require(*sequential.initial.ias == *concurrent.initial.ias &&
                *sequential.rewritten.ias == *concurrent.rewritten.ias,
            "concurrent and sequential scores diverge in trial " + std::to_string(t));
  }

  StubServer server;
  server.set_default_logprob(-1.0);
  for (int t = 0; t < 16; ++t) {
    StubRule rule;
    rule.endpoint = StubRule::Endpoint::Generate;
    rule.prompt_equals = "prompt-" + std::to_string(t);
    rule.text = "reply-" + std::to_string(t);
    server.add_rule(rule);
  }
  HttpBackend client(fast_options(server.url()));

  std::mutex mu;
  std::vector<std::string> errors;
  std::vector<std::thread> threads;
  threads.reserve(16);
  for (int t = 0; t < 16; ++t) {
    threads.emplace_back([&, t] {
      try {
        std::string continuation;
        for (int w = 0; w <= t; ++w) continuation += (w == 0 ? "tok" : " tok");
        for (int iter = 0; iter < 4; ++iter) {
          LogprobsRequest lr;
          lr.prompt = "shared prompt";
          lr.continuation = continuation;
          const LogprobsResponse resp = client.logprobs(lr);
          if (resp.logprobs.size() != static_cast<std::size_t>(t + 1)) {
            throw Failure("caller " + std::to_string(t) + " got " +
                          std::to_string(resp.logprobs.size()) + " logprobs");
          }
          for (double v : resp.logprobs) {
            if (v != -1.0) throw Failure("caller " + std::to_string(t) + " got stray logprob");
          }
          GenerateRequest gr;
          gr.prompt = "prompt-" + std::to_string(t);
          gr.max_tokens = 4;
          const GenerateResponse gen = client.generate(gr);
          if (gen.text != "reply-" + std::to_string(t)) {
            throw Failure("caller " + std::to_string(t) + " got interleaved reply '" +
                          gen.text + "'");
          }
        }
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(mu);
        errors.push_back(e.what());
      }
    });
  }
  for (auto& th : threads) th.join();
  require(errors.empty(), errors.empty() ? "" : errors.front());
  require(server.recorded_logprobs().size() == 64 && server.recorded_generate().size() == 64,
          "server recorded an unexpected call count");
}

// --------------------------------------------------------------------------
// 10. The overfit model aces its own corpus in both eval modes, headline
//     metrics recompute exactly from the rows, and multi-turn prompt
//     construction keeps the dialogue in order.

void criterion_eval_harness() {
  ToyBackend backend(overfit_params());
  const auto records = parse_dataset(corpus::dataset_jsonl(7, false), "fixture-dataset");
  require(records.size() == 16, "fixture dataset should have 16 records");

  EvalConfig gen;
  gen.mode = EvalMode::Generation;
  gen.metric = EvalMetric::Accuracy;
  gen.initial_instruction_template = corpus::default_template();
  gen.parallelism = 4;
  gen.max_answer_tokens = 8;
  const EvalReport gen_report = run_eval(backend, records, gen);
  require(gen_report.value == 1.0,
          "generation accuracy " + num(gen_report.value) + " != 1.0");
  require(recompute_metric(gen_report) == gen_report.value,
          "generation metric does not recompute from its rows");

  EvalConfig rank = gen;
  rank.mode = EvalMode::Ranking;
  rank.metric = EvalMetric::Mrr;
  const EvalReport rank_report = run_eval(backend, records, rank);
  require(rank_report.value == 1.0,
          "mean reciprocal rank " + num(rank_report.value) + " != 1.0");
  require(recompute_metric(rank_report) == rank_report.value,
          "ranking metric does not recompute from its rows");
  int correct = 0;
  for (const EvalRow& row : rank_report.rows) correct += row.correct ? 1 : 0;
  require(correct == 16, "ranking mode got " + std::to_string(correct) + "/16 correct");

  EvalConfig rank_acc = rank;
  rank_acc.metric = EvalMetric::Accuracy;
  const EvalReport acc_report = run_eval(backend, records, rank_acc);
  require(acc_report.value == 1.0,
          "ranking accuracy " + num(acc_report.value) + " != 1.0");
  require(recompute_metric(acc_report) == acc_report.value,
          "ranking accuracy does not recompute from its rows");

  // Multi-turn prompt construction: prior turns appear in order, the
  // final question closes the prompt, and the gold answer is the last
  // turn's answer.
  const auto with_dialogue = parse_dataset(corpus::dataset_jsonl(7, true), "fixture-dataset");
  require(with_dialogue.size() == 17, "dialogue dataset should have 17 records");
  const DatasetRecord& dialogue = with_dialogue.back();
  require(dialogue.multi_turn(), "the final record must be multi-turn");
  const std::string question = dialogue.eval_question();
  std::size_t pos = 0;
  for (std::size_t i = 0; i < dialogue.turns.size(); ++i) {
    const std::size_t q_at = question.find(dialogue.turns[i].q, pos);
    require(q_at != std::string::npos,
            "turn " + std::to_string(i) + " question missing or out of order");
    pos = q_at + dialogue.turns[i].q.size();
    if (i + 1 < dialogue.turns.size()) {
      const std::size_t a_at = question.find(dialogue.turns[i].a, pos);
      require(a_at != std::string::npos,
              "turn " + std::to_string(i) + " answer missing or out of order");
      pos = a_at + dialogue.turns[i].a.size();
    }
  }
  const std::string& last_q = dialogue.turns.back().q;
  require(question.size() >= last_q.size() &&
              question.compare(question.size() - last_q.size(), last_q.size(), last_q) == 0,
          "the final question must close the prompt");
  require(dialogue.gold() == dialogue.turns.back().a, "gold must be the last turn's answer");
  const std::string instantiated =
      instantiate_template(corpus::default_template(), question);
  require(instantiated.find(question) != std::string::npos,
          "instantiated template must embed the dialogue question");
}

// --------------------------------------------------------------------------
// 11. The ablation grid completes everywhere: three reports for the main
//     cells, and per-round alignment-score traces for loop rounds 1..4.

void criterion_ablation_grid() {
  ToyBackend backend(overfit_params());
  const auto records = parse_dataset(corpus::dataset_jsonl(7, false), "fixture-dataset");

  EvalConfig base;
  base.mode = EvalMode::Generation;
  base.metric = EvalMetric::Accuracy;
  base.initial_instruction_template = corpus::default_template();
  base.parallelism = 4;
  base.max_answer_tokens = 8;

  std::vector<AblationSpec> specs;
  {
    AblationSpec off;
    off.name = "aio_off";
    off.aio = AblationSpec::Aio::Off;
    specs.push_back(off);
    AblationSpec rewrite_only;
    rewrite_only.name = "rewrite_only";
    rewrite_only.aio = AblationSpec::Aio::RewriteOnly;
    specs.push_back(rewrite_only);
    AblationSpec full;
    full.name = "full";
    full.aio = AblationSpec::Aio::Full;
    full.pipeline.rounds_mode = RoundsMode::LoopXR;
    full.pipeline.rounds = 2;
    specs.push_back(full);
    for (int r = 1; r <= 4; ++r) {
      AblationSpec loop;
      loop.name = "loop_r" + std::to_string(r);
      loop.aio = AblationSpec::Aio::Full;
      loop.pipeline.rounds_mode = r > 1 ? RoundsMode::LoopXR : RoundsMode::Standard1R;
      loop.pipeline.rounds = r;
      specs.push_back(loop);
    }
  }

  const auto outcomes = run_ablation_grid(backend, records, base, specs);
  require(outcomes.size() == specs.size(), "grid dropped a cell");

  const auto count_lines = [](const std::string& trace, int& record_lines, int& mean_lines) {
    record_lines = 0;
    mean_lines = 0;
    std::istringstream in(trace);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const nlohmann::json parsed = nlohmann::json::parse(line);
      if (parsed.contains("record_id")) {
        ++record_lines;
      } else {
        ++mean_lines;
      }
    }
  };

  int reports = 0;
  for (const AblationOutcome& outcome : outcomes) {
    require(outcome.ok, "cell '" + outcome.name + "' failed: " + outcome.error);
    if (outcome.name == "aio_off" || outcome.name == "rewrite_only" ||
        outcome.name == "full") {
      require(outcome.report.rows.size() == 16,
              "cell '" + outcome.name + "' produced a short report");
      require(!outcome.report.to_report_text().empty(),
              "cell '" + outcome.name + "' produced an empty report");
      ++reports;
    }
    if (outcome.name == "aio_off") {
      require(outcome.ias_trace.empty(), "the no-pipeline cell must not emit scores");
    }
    if (outcome.name.rfind("loop_r", 0) == 0) {
      const int rounds = outcome.name.back() - '0';
      int record_lines = 0, mean_lines = 0;
      count_lines(outcome.ias_trace, record_lines, mean_lines);
      require(record_lines == 16 * rounds,
              "cell '" + outcome.name + "' recorded " + std::to_string(record_lines) +
                  " per-record scores, expected " + std::to_string(16 * rounds));
      require(mean_lines == rounds,
              "cell '" + outcome.name + "' recorded " + std::to_string(mean_lines) +
                  " round means, expected " + std::to_string(rounds));
    }
  }
  require(reports == 3, "expected 3 main-cell reports, saw " + std::to_string(reports));
}

// --------------------------------------------------------------------------
// 12. A checkpoint round-trip restores every tensor bit for bit and leaves
//     generations unchanged.

void criterion_checkpoint_round_trip() {
  const ToyModelParams& params = overfit_params();
  const fs::path path = fs::temp_directory_path() / "lingopt_acceptance_ckpt.bin";
  save_checkpoint(path.string(), params);
  const ToyModelParams loaded = load_checkpoint(path.string());
  fs::remove(path);

  require(loaded.vocab.tokens() == params.vocab.tokens(), "vocabulary changed in transit");
  require(loaded.tensors.size() == params.tensors.size(), "tensor count changed in transit");
  for (std::size_t i = 0; i < params.tensors.size(); ++i) {
    const NamedTensor& a = params.tensors[i];
    const NamedTensor& b = loaded.tensors[i];
    require(a.name == b.name, "tensor name changed in transit");
    require(a.trainable == b.trainable, "trainable flag changed in transit");
    require(a.value.rows() == b.value.rows() && a.value.cols() == b.value.cols(),
            "tensor '" + a.name + "' changed shape in transit");
    require(std::memcmp(a.value.data(), b.value.data(),
                        sizeof(double) * static_cast<std::size_t>(a.value.size())) == 0,
            "tensor '" + a.name + "' is not bit-identical after reload");
  }

  for (int k : {0, 5, 11}) {
    const ImageGrid img = corpus::fixture_image(k, 7);
    const std::vector<int> prompt_ids = params.vocab.encode(corpus::training_prompt());
    const std::vector<int> before = generate_greedy(img, prompt_ids, 8, params);
    const std::vector<int> after = generate_greedy(img, prompt_ids, 8, loaded);
    require(before == after, "greedy generation diverges for image " + std::to_string(k));
  }

  ToyBackend original(params);
  ToyBackend restored(loaded);
  GenerateRequest req;
  req.prompt = corpus::training_prompt();
  req.image = ImagePayload::inline_grid(corpus::fixture_image(0, 7));
  req.max_tokens = 8;
  require(original.generate(req).text == restored.generate(req).text,
          "backend generations diverge after reload");
}

}  // namespace

int main() {
  struct Criterion {
    const char* title;
    std::function<void()> run;
  };
  const std::vector<Criterion> criteria = {
      {"attention rows are stochastic and stay in the value hull", criterion_attention_rows},
      {"single-query attention matches the hand computation", criterion_attention_hand_case},
      {"analytic gradients match central differences", criterion_gradient_check},
      {"training converges with exact schedule endpoints", criterion_training_convergence},
      {"uniform-model alignment score is ln(vocab)", criterion_uniform_alignment_score},
      {"alignment score matches chain-rule enumeration", criterion_alignment_score_oracle},
      {"comparison prompts rank deterministically", criterion_ranking_determinism},
      {"pipeline issues the documented calls with canonical bodies",
       criterion_pipeline_call_arithmetic},
      {"concurrent scoring equals sequential scoring", criterion_concurrency_equivalence},
      {"overfit eval reaches perfect accuracy and reciprocal rank", criterion_eval_harness},
      {"ablation grid completes with per-round score traces", criterion_ablation_grid},
      {"checkpoints round-trip bit-identically", criterion_checkpoint_round_trip},
  };

  const int total = static_cast<int>(criteria.size());
  int failed = 0;
  for (int i = 0; i < total; ++i) {
    const auto t0 = Clock::now();
    std::string error;
    try {
      criteria[static_cast<std::size_t>(i)].run();
    } catch (const std::exception& e) {
      error = e.what();
    } catch (...) {
      error = "unknown exception";
    }
    const double secs = seconds_since(t0);
    if (error.empty()) {
      std::printf("[%2d/%d] PASS (%5.1fs) %s\n", i + 1, total, secs,
                  criteria[static_cast<std::size_t>(i)].title);
    } else {
      ++failed;
      std::printf("[%2d/%d] FAIL (%5.1fs) %s: %s\n", i + 1, total, secs,
                  criteria[static_cast<std::size_t>(i)].title, error.c_str());
    }
    std::fflush(stdout);
  }
  std::printf("acceptance: %d/%d criteria passed\n", total - failed, total);
  return failed == 0 ? 0 : 1;
}
