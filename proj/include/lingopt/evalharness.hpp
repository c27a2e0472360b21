#pragma once

#include <optional>
#include <string>
#include <vector>

#include "lingopt/backend.hpp"
#include "lingopt/pipeline.hpp"

namespace lingopt {

struct DatasetTurn {
  std::string q;
  std::string a;
};

struct DatasetRecord {
  std::string record_id;
  std::optional<ImagePayload> image;
  std::vector<DatasetTurn> turns;
  std::optional<std::vector<std::string>> options;

  void validate() const;  // turns nonempty; gold answer in options when present
  bool multi_turn() const { return turns.size() > 1; }
  const std::string& gold() const;  // last turn's answer

  /// Question fed to the instruction template: the first m-1 full Q/A
  /// pairs then question m, joined with single spaces.
  std::string eval_question() const;
};

enum class EvalMode { Generation, Ranking };
enum class EvalMetric { Accuracy, Mrr };

const char* eval_mode_name(EvalMode mode);
EvalMode eval_mode_from_name(const std::string& name);
const char* metric_name(EvalMetric metric);
EvalMetric metric_from_name(const std::string& name);

struct EvalConfig {
  EvalMode mode = EvalMode::Generation;
  bool pipeline_enabled = false;
  std::string initial_instruction_template;  // "{}" slots
  EvalMetric metric = EvalMetric::Accuracy;
  PipelineConfig pipeline;  // consulted when pipeline_enabled
  int parallelism = 1;
  int max_answer_tokens = 8;

  void validate() const;
};

struct EvalRow {
  std::string record_id;
  std::string predicted;
  std::string gold;
  bool correct = false;
  int rank = 0;  // 1-based rank of the gold candidate (ranking mode)
  double reciprocal_rank = 0.0;
  std::vector<double> losses;  // per-candidate mean NLL (ranking mode)
  std::string optimized;       // final instruction when the pipeline ran
  bool failed = false;         // backend failure; scores zero
  std::string error;
};

struct EvalReport {
  EvalConfig config;
  std::string metric;  // name of the headline metric
  double value = 0.0;
  std::vector<EvalRow> rows;  // sorted by record_id
  double wall_clock_ms = 0.0;

  /// Header JSON line, one row line per record, then a footer line with
  /// wall-clock timing. Byte-identical across identical runs except for
  /// the footer.
  std::string to_report_text() const;
};

std::vector<DatasetRecord> parse_dataset(const std::string& jsonl, const std::string& origin);
std::vector<DatasetRecord> load_dataset(const std::string& path);

EvalReport eval_generation(ModelBackend& backend, const std::vector<DatasetRecord>& records,
                           const EvalConfig& cfg);
EvalReport eval_ranking(ModelBackend& backend, const std::vector<DatasetRecord>& records,
                        const EvalConfig& cfg);
/// Dispatches on cfg.mode.
EvalReport run_eval(ModelBackend& backend, const std::vector<DatasetRecord>& records,
                    const EvalConfig& cfg);

/// Recompute the headline metric from the rows (exactly as the runner
/// does); tests compare against the header value bit-for-bit.
double recompute_metric(const EvalReport& report);

/// One cell of the ablation grid: how much of the optimization pipeline is
/// applied to the instruction before evaluation.
struct AblationSpec {
  enum class Aio { Off, RewriteOnly, Full };
  std::string name;
  Aio aio = Aio::Off;
  PipelineConfig pipeline;
};

struct AblationOutcome {
  std::string name;
  bool ok = false;
  std::string error;  // failure description when not ok
  EvalReport report;
  /// Per-record, per-round alignment scores as JSONL ({"record_id",
  /// "round", "ias"} lines, then {"round", "mean_ias"} summaries).
  std::string ias_trace;
};

std::vector<AblationOutcome> run_ablation_grid(ModelBackend& backend,
                                               const std::vector<DatasetRecord>& records,
                                               const EvalConfig& base,
                                               const std::vector<AblationSpec>& specs);

/// Per-record correctness flips between two reports of the same dataset.
std::string diff_reports(const EvalReport& a, const EvalReport& b);

}  // namespace lingopt
