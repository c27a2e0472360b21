#include "lingopt/evalharness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <fstream>
#include <functional>
#include <mutex>
#include <thread>

#include <json.hpp>

#include "lingopt/text.hpp"

namespace lingopt {

using nlohmann::json;

void DatasetRecord::validate() const {
  if (record_id.empty()) {
    throw LoadError("dataset record: empty record_id");
  }
  if (turns.empty()) {
    throw LoadError("dataset record '" + record_id + "': turns must be nonempty");
  }
  for (const auto& turn : turns) {
    if (turn.q.empty()) {
      throw LoadError("dataset record '" + record_id + "': empty question");
    }
  }
  if (options.has_value()) {
    if (options->empty()) {
      throw LoadError("dataset record '" + record_id + "': options present but empty");
    }
    if (std::find(options->begin(), options->end(), gold()) == options->end()) {
      throw LoadError("dataset record '" + record_id + "': gold answer '" + gold() +
                      "' not among options");
    }
  }
}

const std::string& DatasetRecord::gold() const {
  if (turns.empty()) {
    throw PreconditionError("dataset record: no turns");
  }
  return turns.back().a;
}

std::string DatasetRecord::eval_question() const {
  std::string out;
  for (size_t i = 0; i + 1 < turns.size(); ++i) {
    out += turns[i].q;
    out += ' ';
    out += turns[i].a;
    out += ' ';
  }
  out += turns.back().q;
  return out;
}

const char* eval_mode_name(EvalMode mode) {
  return mode == EvalMode::Generation ? "generation" : "ranking";
}

EvalMode eval_mode_from_name(const std::string& name) {
  if (name == "generation") return EvalMode::Generation;
  if (name == "ranking") return EvalMode::Ranking;
  throw ConfigError("eval: unknown mode '" + name + "'");
}

const char* metric_name(EvalMetric metric) {
  return metric == EvalMetric::Accuracy ? "accuracy" : "mrr";
}

EvalMetric metric_from_name(const std::string& name) {
  if (name == "accuracy") return EvalMetric::Accuracy;
  if (name == "mrr") return EvalMetric::Mrr;
  throw ConfigError("eval: unknown metric '" + name + "'");
}

void EvalConfig::validate() const {
  if (trim(initial_instruction_template).empty()) {
    throw ConfigError("eval: initial_instruction_template is empty");
  }
  if (mode == EvalMode::Generation && metric == EvalMetric::Mrr) {
    throw ConfigError("eval: mrr requires ranking mode");
  }
  if (parallelism < 1) {
    throw ConfigError("eval: parallelism must be >= 1");
  }
  if (max_answer_tokens < 1) {
    throw ConfigError("eval: max_answer_tokens must be >= 1");
  }
  if (pipeline_enabled) {
    pipeline.validate();
  }
}

namespace {

std::optional<ImagePayload> parse_image_field(const json& j, const std::string& where) {
  if (j.is_null()) return std::nullopt;
  if (!j.is_object() || !j.contains("kind") || !j.contains("value") ||
      !j["kind"].is_string() || !j["value"].is_string()) {
    throw LoadError(where + ": image must be null or {kind, value}");
  }
  const std::string kind = j["kind"].get<std::string>();
  ImagePayload p;
  if (kind == "inline") {
    p.kind = ImagePayload::Kind::Inline;
  } else if (kind == "ref") {
    p.kind = ImagePayload::Kind::Ref;
  } else {
    throw LoadError(where + ": unknown image kind '" + kind + "'");
  }
  p.value = j["value"].get<std::string>();
  return p;
}

}  // namespace

std::vector<DatasetRecord> parse_dataset(const std::string& jsonl, const std::string& origin) {
  std::vector<DatasetRecord> records;
  size_t line_no = 0;
  size_t pos = 0;
  while (pos <= jsonl.size()) {
    const size_t end = jsonl.find('\n', pos);
    const std::string line = jsonl.substr(
        pos, end == std::string::npos ? std::string::npos : end - pos);
    pos = end == std::string::npos ? jsonl.size() + 1 : end + 1;
    ++line_no;
    if (trim(line).empty()) continue;

    const std::string where = origin + ":" + std::to_string(line_no);
    const json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
      throw LoadError(where + ": malformed JSON record: " + line);
    }
    try {
      DatasetRecord rec;
      if (!j.contains("record_id") || !j["record_id"].is_string()) {
        throw LoadError("missing string field 'record_id'");
      }
      rec.record_id = j["record_id"].get<std::string>();
      rec.image = parse_image_field(j.contains("image") ? j["image"] : json(nullptr), where);
      if (!j.contains("turns") || !j["turns"].is_array() || j["turns"].empty()) {
        throw LoadError("field 'turns' must be a nonempty array");
      }
      for (const auto& t : j["turns"]) {
        if (!t.is_object() || !t.contains("q") || !t.contains("a") || !t["q"].is_string() ||
            !t["a"].is_string()) {
          throw LoadError("each turn must be {\"q\": string, \"a\": string}");
        }
        rec.turns.push_back({t["q"].get<std::string>(), t["a"].get<std::string>()});
      }
      if (j.contains("options") && !j["options"].is_null()) {
        if (!j["options"].is_array()) {
          throw LoadError("field 'options' must be an array of strings");
        }
        std::vector<std::string> opts;
        for (const auto& o : j["options"]) {
          if (!o.is_string()) throw LoadError("options must be strings");
          opts.push_back(o.get<std::string>());
        }
        rec.options = std::move(opts);
      }
      rec.validate();
      records.push_back(std::move(rec));
    } catch (const LoadError& e) {
      const std::string msg = e.what();
      if (msg.rfind(origin, 0) == 0) throw;  // already positioned
      throw LoadError(where + ": " + msg);
    }
  }
  if (records.empty()) {
    throw LoadError(origin + ": empty dataset");
  }
  return records;
}

std::vector<DatasetRecord> load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw LoadError("dataset: cannot open '" + path + "'");
  }
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_dataset(text, path);
}

namespace {

/// How the pipeline is applied to the instruction before evaluation.
enum class AioApplication { None, RewriteOnly, Full };

/// Observer receiving each record's per-round alignment scores (index i =
/// round i+1); used by the ablation runner, absent in plain evals.
using RoundIasObserver =
    std::function<void(const std::string& record_id, const std::vector<double>& round_ias)>;

struct InstructionOutcome {
  std::string instruction;  // what the record is evaluated with
  std::string optimized;    // row annotation when the pipeline ran
};

InstructionOutcome prepare_instruction(ModelBackend& backend, const DatasetRecord& rec,
                                       const EvalConfig& cfg, AioApplication aio,
                                       const RoundIasObserver& observer) {
  const std::string question = rec.eval_question();
  InstructionOutcome out;
  out.instruction = instantiate_template(cfg.initial_instruction_template, question);

  if (aio == AioApplication::RewriteOnly) {
    const Instruction initial{out.instruction, InstructionKind::Initial, std::nullopt};
    Instruction rw = rewrite(backend, initial, cfg.pipeline.max_rewrite_tokens);
    out.instruction = rw.text;
    out.optimized = rw.text;
    if (observer) {
      rw.ias = compute_ias(backend, rec.image, rw);
      observer(rec.record_id, {*rw.ias});
    }
  } else if (aio == AioApplication::Full) {
    const Instruction initial{out.instruction, InstructionKind::Initial, std::nullopt};
    auto [optimized, trace] = optimize(backend, rec.image, initial, cfg.pipeline);
    out.instruction = optimized.text;
    out.optimized = optimized.text;
    if (observer) {
      // Per round r, the alignment score of the instruction the pipeline
      // would hand back after r rounds: the round's own product when it
      // generated one, otherwise the fallback it returned instead.
      const int total_rounds =
          cfg.pipeline.rounds_mode == RoundsMode::LoopXR ? cfg.pipeline.rounds : 1;
      std::optional<double> final_ias = optimized.ias;
      std::vector<double> round_ias;
      for (int r = 1; r <= total_rounds; ++r) {
        if (static_cast<size_t>(r) <= trace.optimized.size()) {
          Instruction& opt = trace.optimized[static_cast<size_t>(r) - 1];
          if (!opt.ias.has_value()) {
            opt.ias = compute_ias(backend, rec.image, opt);
          }
          round_ias.push_back(*opt.ias);
        } else {
          if (!final_ias.has_value()) {
            final_ias = compute_ias(backend, rec.image, optimized);
          }
          round_ias.push_back(*final_ias);
        }
      }
      observer(rec.record_id, round_ias);
    }
  }
  return out;
}

EvalRow eval_one_generation(ModelBackend& backend, const DatasetRecord& rec,
                            const EvalConfig& cfg, AioApplication aio,
                            const RoundIasObserver& observer) {
  EvalRow row;
  row.record_id = rec.record_id;
  row.gold = rec.gold();
  try {
    const InstructionOutcome prep = prepare_instruction(backend, rec, cfg, aio, observer);
    row.optimized = prep.optimized;

    GenerateRequest req;
    req.image = rec.image;
    req.prompt = prep.instruction;
    req.max_tokens = cfg.max_answer_tokens;
    req.temperature = 0.0;
    row.predicted = backend.generate(req).text;
    row.correct = normalize_answer(row.predicted) == normalize_answer(row.gold);
  } catch (const Error& e) {
    row.failed = true;
    row.error = e.what();
    row.correct = false;
  }
  return row;
}

EvalRow eval_one_ranking(ModelBackend& backend, const DatasetRecord& rec,
                         const EvalConfig& cfg, AioApplication aio,
                         const RoundIasObserver& observer) {
  EvalRow row;
  row.record_id = rec.record_id;
  row.gold = rec.gold();
  const std::vector<std::string>& options = *rec.options;
  try {
    const InstructionOutcome prep = prepare_instruction(backend, rec, cfg, aio, observer);
    row.optimized = prep.optimized;

    row.losses.reserve(options.size());
    for (const auto& candidate : options) {
      row.losses.push_back(mean_continuation_nll(backend, rec.image, prep.instruction,
                                                 collapse_whitespace(candidate)));
    }

    // Prediction: lowest loss, first-listed on ties.
    size_t best = 0;
    for (size_t i = 1; i < row.losses.size(); ++i) {
      if (row.losses[i] < row.losses[best]) best = i;
    }
    row.predicted = options[best];
    row.correct = options[best] == row.gold;

    // Rank of the gold candidate under the same tie rule.
    const size_t gold_idx = static_cast<size_t>(
        std::find(options.begin(), options.end(), row.gold) - options.begin());
    int rank = 1;
    for (size_t i = 0; i < row.losses.size(); ++i) {
      if (i == gold_idx) continue;
      if (row.losses[i] < row.losses[gold_idx] ||
          (row.losses[i] == row.losses[gold_idx] && i < gold_idx)) {
        ++rank;
      }
    }
    row.rank = rank;
    row.reciprocal_rank = 1.0 / static_cast<double>(rank);
  } catch (const Error& e) {
    row.failed = true;
    row.error = e.what();
    row.correct = false;
    row.rank = 0;
    row.reciprocal_rank = 0.0;
    row.losses.clear();
  }
  return row;
}

double compute_metric(const std::vector<EvalRow>& rows, EvalMetric metric) {
  if (rows.empty()) {
    throw PreconditionError("eval: no rows to compute a metric over");
  }
  double sum = 0.0;
  for (const auto& row : rows) {
    sum += metric == EvalMetric::Accuracy ? (row.correct ? 1.0 : 0.0) : row.reciprocal_rank;
  }
  return sum / static_cast<double>(rows.size());
}

EvalReport run_eval_impl(ModelBackend& backend, const std::vector<DatasetRecord>& records,
                         const EvalConfig& cfg, AioApplication aio,
                         const RoundIasObserver& observer) {
  cfg.validate();
  if (records.empty()) {
    throw PreconditionError("eval: empty record list");
  }
  if (cfg.mode == EvalMode::Ranking) {
    for (const auto& rec : records) {
      if (!rec.options.has_value()) {
        throw PreconditionError("eval: ranking mode requires options on every record; '" +
                                rec.record_id + "' has none");
      }
    }
  }

  const auto t0 = std::chrono::steady_clock::now();
  std::vector<EvalRow> rows(records.size());
  std::atomic<size_t> cursor{0};
  auto worker = [&] {
    while (true) {
      const size_t i = cursor.fetch_add(1);
      if (i >= records.size()) break;
      rows[i] = cfg.mode == EvalMode::Generation
                    ? eval_one_generation(backend, records[i], cfg, aio, observer)
                    : eval_one_ranking(backend, records[i], cfg, aio, observer);
    }
  };

  const int workers =
      std::min<int>(cfg.parallelism, static_cast<int>(records.size()));
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(workers));
    for (int i = 0; i < workers; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  std::sort(rows.begin(), rows.end(),
            [](const EvalRow& a, const EvalRow& b) { return a.record_id < b.record_id; });

  EvalReport report;
  report.config = cfg;
  report.metric = metric_name(cfg.metric);
  report.rows = std::move(rows);
  report.value = compute_metric(report.rows, cfg.metric);
  report.wall_clock_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
          .count();
  return report;
}

}  // namespace

EvalReport eval_generation(ModelBackend& backend, const std::vector<DatasetRecord>& records,
                           const EvalConfig& cfg) {
  if (cfg.mode != EvalMode::Generation) {
    throw ConfigError("eval_generation: config mode is not generation");
  }
  return run_eval_impl(backend, records, cfg,
                       cfg.pipeline_enabled ? AioApplication::Full : AioApplication::None,
                       {});
}

EvalReport eval_ranking(ModelBackend& backend, const std::vector<DatasetRecord>& records,
                        const EvalConfig& cfg) {
  if (cfg.mode != EvalMode::Ranking) {
    throw ConfigError("eval_ranking: config mode is not ranking");
  }
  return run_eval_impl(backend, records, cfg,
                       cfg.pipeline_enabled ? AioApplication::Full : AioApplication::None,
                       {});
}

EvalReport run_eval(ModelBackend& backend, const std::vector<DatasetRecord>& records,
                    const EvalConfig& cfg) {
  return cfg.mode == EvalMode::Generation ? eval_generation(backend, records, cfg)
                                          : eval_ranking(backend, records, cfg);
}

double recompute_metric(const EvalReport& report) {
  return compute_metric(report.rows, report.config.metric);
}

std::string EvalReport::to_report_text() const {
  json header;
  header["kind"] = "eval_report";
  header["mode"] = eval_mode_name(config.mode);
  header["metric"] = metric;
  header["value"] = value;
  header["records"] = rows.size();
  json cfg_echo;
  cfg_echo["initial_instruction_template"] = config.initial_instruction_template;
  cfg_echo["pipeline_enabled"] = config.pipeline_enabled;
  cfg_echo["metric"] = metric_name(config.metric);
  cfg_echo["mode"] = eval_mode_name(config.mode);
  cfg_echo["parallelism"] = config.parallelism;
  cfg_echo["max_answer_tokens"] = config.max_answer_tokens;
  if (config.pipeline_enabled) {
    cfg_echo["pipeline_mode"] = mode_name(config.pipeline.rounds_mode);
    cfg_echo["pipeline_rounds"] = config.pipeline.rounds;
    cfg_echo["guard_fallback"] = config.pipeline.guard_fallback;
  }
  header["config"] = cfg_echo;

  std::string out = header.dump() + "\n";
  for (const auto& row : rows) {
    json r;
    r["record_id"] = row.record_id;
    r["predicted"] = row.predicted;
    r["gold"] = row.gold;
    r["correct"] = row.correct;
    r["failed"] = row.failed;
    if (row.failed) r["error"] = row.error;
    if (config.mode == EvalMode::Ranking) {
      r["rank"] = row.rank;
      r["reciprocal_rank"] = row.reciprocal_rank;
      r["losses"] = row.losses;
    }
    if (config.pipeline_enabled) {
      r["optimized"] = row.optimized;
    }
    out += r.dump() + "\n";
  }

  json footer;
  footer["kind"] = "footer";
  footer["wall_clock_ms"] = wall_clock_ms;
  out += footer.dump() + "\n";
  return out;
}

std::vector<AblationOutcome> run_ablation_grid(ModelBackend& backend,
                                               const std::vector<DatasetRecord>& records,
                                               const EvalConfig& base,
                                               const std::vector<AblationSpec>& specs) {
  if (specs.empty()) {
    throw PreconditionError("ablation: empty mode list");
  }

  std::vector<AblationOutcome> outcomes;
  outcomes.reserve(specs.size());
  for (const auto& spec : specs) {
    AblationOutcome outcome;
    outcome.name = spec.name;

    EvalConfig cfg = base;
    AioApplication aio = AioApplication::None;
    switch (spec.aio) {
      case AblationSpec::Aio::Off:
        cfg.pipeline_enabled = false;
        break;
      case AblationSpec::Aio::RewriteOnly:
        cfg.pipeline_enabled = true;  // row annotation + config echo
        cfg.pipeline = spec.pipeline;
        aio = AioApplication::RewriteOnly;
        break;
      case AblationSpec::Aio::Full:
        cfg.pipeline_enabled = true;
        cfg.pipeline = spec.pipeline;
        aio = AioApplication::Full;
        break;
    }

    // Collect per-record, per-round alignment scores.
    std::mutex mu;
    std::vector<std::pair<std::string, std::vector<double>>> collected;
    RoundIasObserver observer;
    if (aio != AioApplication::None) {
      observer = [&mu, &collected](const std::string& record_id,
                                   const std::vector<double>& round_ias) {
        std::lock_guard lock(mu);
        collected.emplace_back(record_id, round_ias);
      };
    }

    try {
      outcome.report = run_eval_impl(backend, records, cfg, aio, observer);
      outcome.ok = true;
    } catch (const Error& e) {
      outcome.ok = false;
      outcome.error = e.what();
      outcomes.push_back(std::move(outcome));
      continue;
    }

    std::sort(collected.begin(), collected.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    std::string trace;
    size_t max_rounds = 0;
    for (const auto& [record_id, round_ias] : collected) {
      max_rounds = std::max(max_rounds, round_ias.size());
      for (size_t r = 0; r < round_ias.size(); ++r) {
        json line;
        line["record_id"] = record_id;
        line["round"] = r + 1;
        line["ias"] = round_ias[r];
        trace += line.dump() + "\n";
      }
    }
    for (size_t r = 0; r < max_rounds; ++r) {
      double sum = 0.0;
      size_t n = 0;
      for (const auto& [record_id, round_ias] : collected) {
        if (r < round_ias.size()) {
          sum += round_ias[r];
          ++n;
        }
      }
      if (n > 0) {
        json line;
        line["round"] = r + 1;
        line["mean_ias"] = sum / static_cast<double>(n);
        trace += line.dump() + "\n";
      }
    }
    outcome.ias_trace = std::move(trace);
    outcomes.push_back(std::move(outcome));
  }
  return outcomes;
}

std::string diff_reports(const EvalReport& a, const EvalReport& b) {
  std::string out;
  size_t i = 0, j = 0;
  int flips = 0;
  while (i < a.rows.size() && j < b.rows.size()) {
    const EvalRow& ra = a.rows[i];
    const EvalRow& rb = b.rows[j];
    if (ra.record_id < rb.record_id) {
      out += ra.record_id + ": only in first report\n";
      ++i;
      continue;
    }
    if (rb.record_id < ra.record_id) {
      out += rb.record_id + ": only in second report\n";
      ++j;
      continue;
    }
    if (ra.correct != rb.correct) {
      out += ra.record_id + ": " + (ra.correct ? "correct" : "incorrect") + " -> " +
             (rb.correct ? "correct" : "incorrect") + " (predicted '" + ra.predicted +
             "' -> '" + rb.predicted + "')\n";
      ++flips;
    }
    ++i;
    ++j;
  }
  for (; i < a.rows.size(); ++i) out += a.rows[i].record_id + ": only in first report\n";
  for (; j < b.rows.size(); ++j) out += b.rows[j].record_id + ": only in second report\n";
  out += "flips: " + std::to_string(flips) + "\n";
  return out;
}

}  // namespace lingopt
