#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lingopt/cmaa.hpp"
#include "lingopt/image.hpp"
#include "lingopt/tensor.hpp"
#include "lingopt/vocab.hpp"

namespace lingopt {

/// Architecture of the toy multi-modal model: a 4x4 patch-embedding visual
/// encoder, CMAA fusion of patch rows with prompt-token embeddings, and a
/// one-block autoregressive decoder (single head, relu feed-forward, tied
/// nothing). linear_only swaps the decoder for a bare head on embeddings,
/// used as a near-quadratic gradient-check probe.
struct ToyModelConfig {
  int d_model = 32;
  int d_ff = 64;
  int max_seq_len = 64;
  bool use_cmaa_projections = true;
  bool linear_only = false;
  double init_std = 0.02;

  static constexpr int kPatchSize = 4;
  static constexpr int kPatchDim = kPatchSize * kPatchSize;

  void validate() const;
};

enum class TensorSlot {
  PatchEmbed,
  TokenEmbed,
  PosEmbed,
  AttnQuery,
  AttnKey,
  AttnValue,
  AttnOut,
  FfIn,
  FfOut,
  Head,
  CmaaQuery,
  CmaaKey,
  CmaaValue,
};

const char* slot_name(TensorSlot slot);

struct NamedTensor {
  std::string name;
  Matrix2D value;
  bool trainable = true;
};

/// Model parameters: named tensors in fixed declaration order (the
/// checkpoint serialization order) plus the vocabulary and architecture.
struct ToyModelParams {
  ToyModelConfig config;
  Vocabulary vocab;
  std::vector<NamedTensor> tensors;

  /// Seeded random initialization, deterministic across platforms.
  static ToyModelParams init(const ToyModelConfig& cfg, const Vocabulary& vocab,
                             std::uint64_t seed);

  bool has(TensorSlot slot) const;
  const Matrix2D& at(TensorSlot slot) const;
  Matrix2D& at(TensorSlot slot);
  NamedTensor& tensor(TensorSlot slot);

  void set_trainable(TensorSlot slot, bool trainable);
  void freeze_all_except(const std::vector<TensorSlot>& keep);
  std::size_t trainable_scalars() const;

  CmaaConfig cmaa_config() const;
};

/// One supervised pair. The target sequence scored during training is the
/// encoded target text followed by <eos>. Image is absent only for
/// text-only probes.
struct TrainExample {
  std::optional<ImageGrid> image;
  std::string prompt;
  std::string target;
};

/// Linear warmup from floor_lr to peak_lr over warmup_steps, then cosine
/// decay back to floor_lr at total_steps.
struct TrainSchedule {
  long total_steps = 2000;
  long warmup_steps = 100;
  double peak_lr = 5e-3;
  double floor_lr = 1e-4;
  int batch_size = 16;
  std::uint64_t seed = 7;

  void validate() const;
};

double lr_at(const TrainSchedule& sched, long step);

struct TraceEntry {
  long step;
  double lr;
  double loss;
};

struct TrainResult {
  ToyModelParams params;
  std::vector<TraceEntry> trace;
};

/// Drops a leading "<Image>" sentinel; the toy model injects visual
/// conditioning as prefix positions instead.
std::string strip_image_sentinel(const std::string& prompt);

/// Patch flattening followed by the patch_embed projection; one row per
/// 4x4 patch, patches in row-major order. Deterministic.
Matrix2D encode_image(const ImageGrid& img, const ToyModelParams& params);

/// log P(c_i | image, prompt, c_1..c_{i-1}) for every continuation token,
/// natural log. Conditioning is [patch rows ; u_mm rows] ++ <bos> [<img>]
/// ++ prompt ++ continuation prefix.
std::vector<double> forward_logprobs(const std::optional<ImageGrid>& img,
                                     const std::vector<int>& prompt_ids,
                                     const std::vector<int>& continuation_ids,
                                     const ToyModelParams& params);

/// Next-token logits (one per vocabulary entry) after the prompt plus the
/// tokens generated so far.
Eigen::RowVectorXd next_token_logits(const std::optional<ImageGrid>& img,
                                     const std::vector<int>& prompt_ids,
                                     const std::vector<int>& generated,
                                     const ToyModelParams& params);

/// Greedy argmax decoding; stops at <eos> (not returned) or after max_len
/// generated tokens.
std::vector<int> generate_greedy(const std::optional<ImageGrid>& img,
                                 const std::vector<int>& prompt_ids, int max_len,
                                 const ToyModelParams& params);

/// Mean per-token NLL of the example's target sequence (teacher forcing).
double example_loss(const TrainExample& ex, const ToyModelParams& params);

/// Sum of target NLLs over the batch divided by the total target-token
/// count; the quantity train() minimizes.
double batch_loss(const std::vector<TrainExample>& batch, const ToyModelParams& params);

/// AdamW (betas 0.9/0.999, decoupled weight decay 0.05) on the trainable
/// tensors under the warmup+cosine schedule. Frozen tensors are returned
/// bit-identical. Loss trace has one entry per step.
TrainResult train(const std::vector<TrainExample>& dataset, ToyModelParams params,
                  const TrainSchedule& sched);

/// Central-difference check (step 1e-5) of the analytic gradients over all
/// trainable scalars; returns the max relative error with denominator
/// max(|analytic|, |numeric|, 1e-8). Requires <= 5000 trainable scalars.
double grad_check(const ToyModelParams& params, const std::vector<TrainExample>& probe);

void write_loss_trace(const std::string& path, const std::vector<TraceEntry>& trace);

}  // namespace lingopt
