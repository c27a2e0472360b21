// lingopt — operator surface for the instruction-optimization toolkit.
//
// Subcommands: optimize, score, train-toy, eval, ablate, fixtures,
// stub-server. Exit codes: 0 success, 1 internal error, 2 usage error,
// 3 backend or input resource unavailable.
#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "lingopt/backend.hpp"
#include "lingopt/checkpoint.hpp"
#include "lingopt/corpus.hpp"
#include "lingopt/errors.hpp"
#include "lingopt/evalharness.hpp"
#include "lingopt/http_backend.hpp"
#include "lingopt/image.hpp"
#include "lingopt/pipeline.hpp"
#include "lingopt/scoring.hpp"
#include "lingopt/stub_server.hpp"
#include "lingopt/text.hpp"
#include "lingopt/toy_backend.hpp"
#include "lingopt/toymodel.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace lingopt;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInternal = 1;
constexpr int kExitUsage = 2;
constexpr int kExitBackend = 3;

struct GlobalOpts {
  std::uint64_t seed = 7;
  bool verbose = false;
};

/// Builds the backend named by --backend: "toy:<checkpoint>" loads the toy
/// model, an http(s) URL talks to a remote server. An empty spec falls
/// back to LINGOPT_BACKEND_URL.
std::unique_ptr<ModelBackend> make_backend(const std::string& spec) {
  std::string resolved = spec;
  if (resolved.empty()) {
    resolved = HttpBackendOptions::from_env().base_url;
  }
  if (resolved.empty()) {
    throw ConfigError(
        "no backend selected: pass --backend toy:<checkpoint>|http://<url> "
        "or set LINGOPT_BACKEND_URL");
  }
  if (resolved.rfind("toy:", 0) == 0) {
    const std::string path = resolved.substr(4);
    if (path.empty()) {
      throw ConfigError("--backend toy: needs a checkpoint path");
    }
    return std::make_unique<ToyBackend>(load_checkpoint(path));
  }
  if (resolved.rfind("http://", 0) == 0 || resolved.rfind("https://", 0) == 0) {
    HttpBackendOptions opts = HttpBackendOptions::from_env();
    opts.base_url = resolved;
    return std::make_unique<HttpBackend>(std::move(opts));
  }
  if (resolved.rfind("http:", 0) == 0) {
    HttpBackendOptions opts = HttpBackendOptions::from_env();
    opts.base_url = "http://" + resolved.substr(5);
    return std::make_unique<HttpBackend>(std::move(opts));
  }
  throw ConfigError("--backend must be toy:<checkpoint> or http://<url>, got '" +
                    resolved + "'");
}

/// Parses an --image argument: "" or "none" → no image, "ref:<id>" → a
/// remote reference, anything else → path to a base64 grid file.
std::optional<ImagePayload> parse_image_arg(const std::string& arg) {
  if (arg.empty() || arg == "none") return std::nullopt;
  ImagePayload payload;
  if (arg.rfind("ref:", 0) == 0) {
    payload.kind = ImagePayload::Kind::Ref;
    payload.value = arg.substr(4);
    if (payload.value.empty()) {
      throw ConfigError("--image ref: needs an identifier");
    }
    return payload;
  }
  std::ifstream in(arg);
  if (!in) {
    throw LoadError("image: cannot open '" + arg + "'");
  }
  std::string b64((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  b64 = trim(b64);
  try {
    grid_from_base64(b64);  // reject corrupt files up front
  } catch (const Error& e) {
    throw LoadError("image: cannot decode '" + arg + "': " + e.what());
  }
  payload.kind = ImagePayload::Kind::Inline;
  payload.value = b64;
  return payload;
}

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw LoadError("cannot open '" + path.string() + "' for writing");
  }
  out << text;
  if (!out) {
    throw LoadError("short write to '" + path.string() + "'");
  }
}

fs::path ensure_out_dir(const std::string& out) {
  fs::path dir(out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) {
    throw LoadError("cannot create output directory '" + out + "': " + ec.message());
  }
  return dir;
}

void echo_config(const GlobalOpts& g, const json& cfg) {
  if (g.verbose) {
    std::cerr << cfg.dump() << "\n";
  }
}

/// Maps a library error to the exit-code contract.
int exit_code_for(const Error& e) {
  if (dynamic_cast<const ConfigError*>(&e) != nullptr ||
      dynamic_cast<const PreconditionError*>(&e) != nullptr) {
    return kExitUsage;
  }
  if (dynamic_cast<const LoadError*>(&e) != nullptr ||
      dynamic_cast<const TransportError*>(&e) != nullptr ||
      dynamic_cast<const RequestError*>(&e) != nullptr) {
    return kExitBackend;
  }
  return kExitInternal;
}

// ----------------------------------------------------------------- optimize

struct OptimizeArgs {
  std::string backend;
  std::string image;
  std::string instruction;
  std::string mode = "standard_1r";
  int rounds = 1;
  bool guard = false;
  int decimals = 4;
  std::string out = ".";
};

int cmd_optimize(const GlobalOpts& g, const OptimizeArgs& a) {
  auto backend = make_backend(a.backend);
  const HealthStatus health = backend->healthcheck();
  if (!health.ok) {
    std::cerr << "error: backend '" << backend->name() << "' is unavailable: "
              << health.detail << "\n";
    return kExitBackend;
  }

  PipelineConfig cfg;
  cfg.rounds_mode = mode_from_name(a.mode);
  cfg.rounds = a.rounds;
  cfg.guard_fallback = a.guard;
  cfg.score_decimals = a.decimals;
  cfg.validate();

  json echo;
  echo["kind"] = "config";
  echo["backend"] = backend->name();
  echo["mode"] = mode_name(cfg.rounds_mode);
  echo["rounds"] = cfg.rounds;
  echo["guard_fallback"] = cfg.guard_fallback;
  echo["score_decimals"] = cfg.score_decimals;
  echo["seed"] = g.seed;
  echo_config(g, echo);

  const std::optional<ImagePayload> image = parse_image_arg(a.image);
  const Instruction initial{trim(a.instruction), InstructionKind::Initial, std::nullopt};
  initial.validate();

  const fs::path out_dir = ensure_out_dir(a.out);
  const fs::path trace_path = out_dir / "trace.jsonl";
  try {
    auto [optimized, trace] = optimize(*backend, image, initial, cfg);
    write_text_file(trace_path, echo.dump() + "\n" + trace.to_jsonl());
    std::cout << optimized.text << "\n";
    return kExitOk;
  } catch (const PipelineError& e) {
    write_text_file(trace_path, echo.dump() + "\n" + e.trace().to_jsonl());
    std::cerr << "error: " << e.what() << "\n"
              << "fallback instruction: " << e.fallback().text << "\n"
              << "trace written to " << trace_path.string() << "\n";
    return kExitInternal;
  }
}

// -------------------------------------------------------------------- score

struct ScoreArgs {
  std::string backend;
  std::string image;
  std::vector<std::string> texts;
};

int cmd_score(const GlobalOpts& g, const ScoreArgs& a) {
  auto backend = make_backend(a.backend);
  const std::optional<ImagePayload> image = parse_image_arg(a.image);

  json echo;
  echo["kind"] = "config";
  echo["backend"] = backend->name();
  echo["instructions"] = a.texts.size();
  echo["seed"] = g.seed;
  echo_config(g, echo);

  for (const auto& text : a.texts) {
    const Instruction inst{trim(text), InstructionKind::Initial, std::nullopt};
    inst.validate();
    const double ias = compute_ias(*backend, image, inst);
    std::printf("%s\t%.6f\n", inst.text.c_str(), ias);
  }
  return kExitOk;
}

// ---------------------------------------------------------------- train-toy

struct TrainToyArgs {
  long steps = 2000;
  long warmup = 100;
  double peak_lr = 5e-3;
  double floor_lr = 1e-4;
  int batch_size = 16;
  std::string out = "out";
};

int cmd_train_toy(const GlobalOpts& g, const TrainToyArgs& a) {
  TrainSchedule sched;
  sched.total_steps = a.steps;
  sched.warmup_steps = a.warmup;
  sched.peak_lr = a.peak_lr;
  sched.floor_lr = a.floor_lr;
  sched.batch_size = a.batch_size;
  sched.seed = g.seed;
  sched.validate();

  json echo;
  echo["kind"] = "config";
  echo["steps"] = sched.total_steps;
  echo["warmup"] = sched.warmup_steps;
  echo["peak_lr"] = sched.peak_lr;
  echo["floor_lr"] = sched.floor_lr;
  echo["batch_size"] = sched.batch_size;
  echo["seed"] = g.seed;
  echo_config(g, echo);

  const fs::path out_dir = ensure_out_dir(a.out);
  const Vocabulary vocab = corpus::toy_vocab();
  ToyModelParams params = ToyModelParams::init(ToyModelConfig{}, vocab, g.seed);
  const auto dataset = corpus::training_pairs(g.seed);

  TrainResult result = train(dataset, std::move(params), sched);
  const double final_nll = batch_loss(dataset, result.params);

  const fs::path ckpt_path = out_dir / "checkpoint.bin";
  const fs::path trace_path = out_dir / "loss_trace.tsv";
  save_checkpoint(ckpt_path.string(), result.params);
  write_loss_trace(trace_path.string(), result.trace);

  std::printf("final_nll %.17g\n", final_nll);
  std::printf("checkpoint %s\n", ckpt_path.string().c_str());
  std::printf("loss_trace %s\n", trace_path.string().c_str());
  return kExitOk;
}

// --------------------------------------------------------------------- eval

struct EvalArgs {
  std::string backend;
  std::string dataset;
  std::string mode = "generation";
  std::string metric = "accuracy";
  std::string tmpl;
  bool aio = false;
  std::string pipeline_mode = "standard_1r";
  int rounds = 1;
  bool guard = false;
  int parallelism = 1;
  int max_answer_tokens = 8;
  std::string out;
};

EvalConfig build_eval_config(const EvalArgs& a) {
  EvalConfig cfg;
  cfg.mode = eval_mode_from_name(a.mode);
  cfg.metric = metric_from_name(a.metric);
  cfg.initial_instruction_template = a.tmpl.empty() ? corpus::default_template() : a.tmpl;
  cfg.pipeline_enabled = a.aio;
  cfg.pipeline.rounds_mode = mode_from_name(a.pipeline_mode);
  cfg.pipeline.rounds = a.rounds;
  cfg.pipeline.guard_fallback = a.guard;
  cfg.parallelism = a.parallelism;
  cfg.max_answer_tokens = a.max_answer_tokens;
  cfg.validate();
  return cfg;
}

int cmd_eval(const GlobalOpts& g, const EvalArgs& a) {
  auto backend = make_backend(a.backend);
  const EvalConfig cfg = build_eval_config(a);
  const auto records = load_dataset(a.dataset);

  json echo;
  echo["kind"] = "config";
  echo["backend"] = backend->name();
  echo["mode"] = eval_mode_name(cfg.mode);
  echo["metric"] = metric_name(cfg.metric);
  echo["pipeline_enabled"] = cfg.pipeline_enabled;
  echo["records"] = records.size();
  echo["seed"] = g.seed;
  echo_config(g, echo);

  const EvalReport report = run_eval(*backend, records, cfg);
  if (!a.out.empty()) {
    const fs::path out_dir = ensure_out_dir(a.out);
    write_text_file(out_dir / "report.txt", report.to_report_text());
  }
  std::printf("%s %.17g\n", report.metric.c_str(), report.value);
  return kExitOk;
}

// ------------------------------------------------------------------- ablate

struct AblateArgs {
  std::string backend;
  std::string dataset;
  std::string mode = "generation";
  std::string metric = "accuracy";
  std::string tmpl;
  int rounds = 2;
  int parallelism = 1;
  int max_answer_tokens = 8;
  std::string out = "out";
};

int cmd_ablate(const GlobalOpts& g, const AblateArgs& a) {
  auto backend = make_backend(a.backend);
  const auto records = load_dataset(a.dataset);

  EvalArgs base_args;
  base_args.mode = a.mode;
  base_args.metric = a.metric;
  base_args.tmpl = a.tmpl;
  base_args.rounds = 1;
  base_args.parallelism = a.parallelism;
  base_args.max_answer_tokens = a.max_answer_tokens;
  const EvalConfig base = build_eval_config(base_args);

  json echo;
  echo["kind"] = "config";
  echo["backend"] = backend->name();
  echo["mode"] = a.mode;
  echo["metric"] = a.metric;
  echo["rounds"] = a.rounds;
  echo["records"] = records.size();
  echo["seed"] = g.seed;
  echo_config(g, echo);

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
    full.pipeline.rounds_mode = a.rounds > 1 ? RoundsMode::LoopXR : RoundsMode::Standard1R;
    full.pipeline.rounds = a.rounds;
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

  const fs::path out_dir = ensure_out_dir(a.out);
  const auto outcomes = run_ablation_grid(*backend, records, base, specs);

  int failures = 0;
  for (const auto& outcome : outcomes) {
    if (!outcome.ok) {
      ++failures;
      std::printf("%s FAILED %s\n", outcome.name.c_str(), outcome.error.c_str());
      continue;
    }
    const bool loop_spec = outcome.name.rfind("loop_r", 0) == 0;
    if (!loop_spec) {
      write_text_file(out_dir / ("report_" + outcome.name + ".txt"),
                      outcome.report.to_report_text());
    }
    if (!outcome.ias_trace.empty()) {
      write_text_file(out_dir / ("ias_" + outcome.name + ".jsonl"), outcome.ias_trace);
    }
    std::printf("%s ok %s=%.17g\n", outcome.name.c_str(), outcome.report.metric.c_str(),
                outcome.report.value);
  }
  return failures == 0 ? kExitOk : kExitInternal;
}

// ----------------------------------------------------------------- fixtures

struct FixturesArgs {
  std::string out = "out";
  bool multi_turn = false;
};

int cmd_fixtures(const GlobalOpts& g, const FixturesArgs& a) {
  const fs::path out_dir = ensure_out_dir(a.out);
  const fs::path dataset_path = out_dir / "dataset.jsonl";
  corpus::write_dataset(dataset_path.string(), g.seed, a.multi_turn);
  for (int k = 0; k < corpus::kPairCount; ++k) {
    char name[16];
    std::snprintf(name, sizeof(name), "img%02d.b64", k);
    write_text_file(out_dir / name, grid_to_base64(corpus::fixture_image(k, g.seed)) + "\n");
  }
  const int records = corpus::kPairCount + (a.multi_turn ? 1 : 0);
  std::printf("wrote %s (%d records) and %d images\n", dataset_path.string().c_str(),
              records, corpus::kPairCount);
  return kExitOk;
}

// -------------------------------------------------------------- stub-server

std::atomic<bool> g_stub_stop{false};

void stub_signal_handler(int) { g_stub_stop.store(true); }

struct StubServerArgs {
  std::string script;
  int port = 0;
};

int cmd_stub_server(const StubServerArgs& a) {
  StubServer server(a.port);
  if (!a.script.empty()) {
    std::ifstream in(a.script);
    if (!in) {
      throw LoadError("stub-server: cannot open script '" + a.script + "'");
    }
    std::string text((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
    apply_stub_script(server, text);
  }
  std::printf("listening on %s\n", server.url().c_str());
  std::fflush(stdout);

  std::signal(SIGINT, stub_signal_handler);
  std::signal(SIGTERM, stub_signal_handler);
  while (!g_stub_stop.load()) {
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
  server.stop();
  std::printf("stopped\n");
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lingopt — multi-modal instruction optimization toolkit"};
  app.name("lingopt");  // keep help output independent of the invocation path
  app.require_subcommand(1);
  app.set_config("--config", "", "Read defaults from a key=value file with [section] headers");
  app.get_config_ptr()->check(CLI::ExistingFile);

  GlobalOpts g;
  app.add_option("--seed", g.seed, "Seed for every stochastic component")
      ->capture_default_str();
  app.add_flag("-v,--verbose", g.verbose, "Echo the effective config to stderr");

  OptimizeArgs opt;
  CLI::App* optimize_cmd =
      app.add_subcommand("optimize", "Optimize one instruction and write the call trace");
  optimize_cmd->add_option("instruction", opt.instruction, "Initial instruction text")
      ->required();
  optimize_cmd->add_option("--backend", opt.backend,
                           "Backend: toy:<checkpoint> or http://<url>");
  optimize_cmd->add_option("--image", opt.image,
                           "Image: path to a base64 grid file, ref:<id>, or none");
  optimize_cmd->add_option("--mode", opt.mode,
                           "Rounds mode: standard_1r, rewriting_xr, loop_xr")
      ->capture_default_str();
  optimize_cmd->add_option("--rounds", opt.rounds, "Rounds for the xr modes")
      ->check(CLI::Range(1, 4))
      ->capture_default_str();
  optimize_cmd->add_flag("--guard", opt.guard,
                         "Return the best-scoring instruction seen, not just the last");
  optimize_cmd->add_option("--decimals", opt.decimals,
                           "Score decimals in the comparison prompt")
      ->check(CLI::Range(0, 17))
      ->capture_default_str();
  optimize_cmd->add_option("--out", opt.out, "Directory for trace.jsonl")
      ->capture_default_str();

  ScoreArgs score;
  CLI::App* score_cmd =
      app.add_subcommand("score", "Print an alignment-score table for instructions");
  score_cmd->add_option("texts", score.texts, "Instruction texts to score")
      ->required()
      ->expected(-1);
  score_cmd->add_option("--backend", score.backend,
                        "Backend: toy:<checkpoint> or http://<url>");
  score_cmd->add_option("--image", score.image,
                        "Image: path to a base64 grid file, ref:<id>, or none");

  TrainToyArgs train;
  CLI::App* train_cmd =
      app.add_subcommand("train-toy", "Train the toy model on the built-in corpus");
  train_cmd->add_option("--steps", train.steps, "Optimizer steps")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  train_cmd->add_option("--warmup", train.warmup, "Linear warmup steps")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  train_cmd->add_option("--peak-lr", train.peak_lr, "Peak learning rate")
      ->capture_default_str();
  train_cmd->add_option("--floor-lr", train.floor_lr, "Floor learning rate")
      ->capture_default_str();
  train_cmd->add_option("--batch-size", train.batch_size, "Examples per step")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  train_cmd->add_option("--out", train.out, "Directory for checkpoint.bin and loss_trace.tsv")
      ->capture_default_str();

  EvalArgs eval;
  CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate a backend over a JSONL dataset");
  eval_cmd->add_option("--backend", eval.backend, "Backend: toy:<checkpoint> or http://<url>");
  eval_cmd->add_option("--dataset", eval.dataset, "Line-delimited JSON dataset")->required();
  eval_cmd->add_option("--mode", eval.mode, "Eval mode: generation or ranking")
      ->capture_default_str();
  eval_cmd->add_option("--metric", eval.metric, "Headline metric: accuracy or mrr")
      ->capture_default_str();
  eval_cmd->add_option("--template", eval.tmpl,
                       "Initial-instruction template with a {} question slot");
  eval_cmd->add_flag("--aio", eval.aio, "Optimize each instruction before evaluating");
  eval_cmd->add_option("--pipeline-mode", eval.pipeline_mode,
                       "Rounds mode when --aio is set")
      ->capture_default_str();
  eval_cmd->add_option("--rounds", eval.rounds, "Rounds when --aio is set")
      ->check(CLI::Range(1, 4))
      ->capture_default_str();
  eval_cmd->add_flag("--guard", eval.guard, "Guard fallback when --aio is set");
  eval_cmd->add_option("--parallelism", eval.parallelism, "Concurrent records")
      ->check(CLI::Range(1, 64))
      ->capture_default_str();
  eval_cmd->add_option("--max-answer-tokens", eval.max_answer_tokens,
                       "Answer length cap in generation mode")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  eval_cmd->add_option("--out", eval.out, "Directory for report.txt (omit to skip)");

  AblateArgs ablate;
  CLI::App* ablate_cmd =
      app.add_subcommand("ablate", "Run the pipeline ablation grid over a dataset");
  ablate_cmd->add_option("--backend", ablate.backend,
                         "Backend: toy:<checkpoint> or http://<url>");
  ablate_cmd->add_option("--dataset", ablate.dataset, "Line-delimited JSON dataset")
      ->required();
  ablate_cmd->add_option("--mode", ablate.mode, "Eval mode: generation or ranking")
      ->capture_default_str();
  ablate_cmd->add_option("--metric", ablate.metric, "Headline metric: accuracy or mrr")
      ->capture_default_str();
  ablate_cmd->add_option("--template", ablate.tmpl,
                         "Initial-instruction template with a {} question slot");
  ablate_cmd->add_option("--rounds", ablate.rounds, "Rounds for the full-pipeline mode")
      ->check(CLI::Range(1, 4))
      ->capture_default_str();
  ablate_cmd->add_option("--parallelism", ablate.parallelism, "Concurrent records")
      ->check(CLI::Range(1, 64))
      ->capture_default_str();
  ablate_cmd
      ->add_option("--max-answer-tokens", ablate.max_answer_tokens,
                   "Answer length cap in generation mode")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  ablate_cmd->add_option("--out", ablate.out, "Directory for reports and score traces")
      ->capture_default_str();

  FixturesArgs fixtures;
  CLI::App* fixtures_cmd =
      app.add_subcommand("fixtures", "Write the built-in dataset and images to a directory");
  fixtures_cmd->add_option("--out", fixtures.out, "Output directory")->capture_default_str();
  fixtures_cmd->add_flag("--multi-turn", fixtures.multi_turn,
                         "Include the three-turn dialogue record");

  StubServerArgs stub;
  CLI::App* stub_cmd =
      app.add_subcommand("stub-server", "Serve scripted wire-protocol replies until SIGINT");
  stub_cmd->add_option("--script", stub.script, "JSON script of reply rules")
      ->check(CLI::ExistingFile);
  stub_cmd->add_option("--port", stub.port, "Port to bind (0 = ephemeral)")
      ->check(CLI::Range(0, 65535))
      ->capture_default_str();

  for (CLI::App* sub : app.get_subcommands(nullptr)) {
    sub->fallthrough();  // let --seed/-v/--config appear after the subcommand
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (optimize_cmd->parsed()) return cmd_optimize(g, opt);
    if (score_cmd->parsed()) return cmd_score(g, score);
    if (train_cmd->parsed()) return cmd_train_toy(g, train);
    if (eval_cmd->parsed()) return cmd_eval(g, eval);
    if (ablate_cmd->parsed()) return cmd_ablate(g, ablate);
    if (fixtures_cmd->parsed()) return cmd_fixtures(g, fixtures);
    if (stub_cmd->parsed()) return cmd_stub_server(stub);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    const int code = exit_code_for(e);
    if (code == kExitUsage) {
      std::cerr << app.get_name() << ": run 'lingopt <command> --help' for usage\n";
    }
    return code;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInternal;
  }
  return kExitUsage;
}
