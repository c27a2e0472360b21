#include "lingopt/toymodel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>

namespace lingopt {

void ToyModelConfig::validate() const {
  if (d_model <= 0 || d_ff <= 0 || max_seq_len <= 0) {
    throw ConfigError("toymodel: dimensions must be positive");
  }
}

const char* slot_name(TensorSlot slot) {
  switch (slot) {
    case TensorSlot::PatchEmbed: return "patch_embed";
    case TensorSlot::TokenEmbed: return "token_embed";
    case TensorSlot::PosEmbed: return "pos_embed";
    case TensorSlot::AttnQuery: return "attn_wq";
    case TensorSlot::AttnKey: return "attn_wk";
    case TensorSlot::AttnValue: return "attn_wv";
    case TensorSlot::AttnOut: return "attn_wo";
    case TensorSlot::FfIn: return "ff_w1";
    case TensorSlot::FfOut: return "ff_w2";
    case TensorSlot::Head: return "head";
    case TensorSlot::CmaaQuery: return "cmaa_wq";
    case TensorSlot::CmaaKey: return "cmaa_wk";
    case TensorSlot::CmaaValue: return "cmaa_wv";
  }
  return "?";
}

namespace {

// Portable uniform/normal draws; mt19937_64 output is fully specified by
// the standard, distributions are not.
double uniform01(std::mt19937_64& g) {
  return static_cast<double>(g() >> 11) * 0x1.0p-53;
}

double normal01(std::mt19937_64& g) {
  double u1 = uniform01(g);
  while (u1 <= 0.0) u1 = uniform01(g);
  const double u2 = uniform01(g);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Matrix2D random_matrix(Eigen::Index rows, Eigen::Index cols, double std_dev,
                       std::mt19937_64& g) {
  Matrix2D m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) {
      m(i, j) = std_dev * normal01(g);
    }
  }
  return m;
}

}  // namespace

ToyModelParams ToyModelParams::init(const ToyModelConfig& cfg, const Vocabulary& vocab,
                                    std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 g(seed);
  const Eigen::Index d = cfg.d_model;
  const Eigen::Index v = vocab.size();

  ToyModelParams p;
  p.config = cfg;
  p.vocab = vocab;
  auto add = [&](TensorSlot slot, Eigen::Index rows, Eigen::Index cols) {
    p.tensors.push_back({slot_name(slot), random_matrix(rows, cols, cfg.init_std, g), true});
  };
  if (!cfg.linear_only) {
    add(TensorSlot::PatchEmbed, ToyModelConfig::kPatchDim, d);
  }
  add(TensorSlot::TokenEmbed, v, d);
  add(TensorSlot::PosEmbed, cfg.max_seq_len, d);
  if (!cfg.linear_only) {
    add(TensorSlot::AttnQuery, d, d);
    add(TensorSlot::AttnKey, d, d);
    add(TensorSlot::AttnValue, d, d);
    add(TensorSlot::AttnOut, d, d);
    add(TensorSlot::FfIn, d, cfg.d_ff);
    add(TensorSlot::FfOut, cfg.d_ff, d);
  }
  add(TensorSlot::Head, d, v);
  if (!cfg.linear_only && cfg.use_cmaa_projections) {
    add(TensorSlot::CmaaQuery, d, d);
    add(TensorSlot::CmaaKey, d, d);
    add(TensorSlot::CmaaValue, d, d);
  }
  return p;
}

bool ToyModelParams::has(TensorSlot slot) const {
  const std::string name = slot_name(slot);
  return std::any_of(tensors.begin(), tensors.end(),
                     [&](const NamedTensor& t) { return t.name == name; });
}

NamedTensor& ToyModelParams::tensor(TensorSlot slot) {
  const std::string name = slot_name(slot);
  for (auto& t : tensors) {
    if (t.name == name) return t;
  }
  throw ConfigError("toymodel: tensor '" + name + "' not present in this architecture");
}

const Matrix2D& ToyModelParams::at(TensorSlot slot) const {
  return const_cast<ToyModelParams*>(this)->tensor(slot).value;
}

Matrix2D& ToyModelParams::at(TensorSlot slot) { return tensor(slot).value; }

void ToyModelParams::set_trainable(TensorSlot slot, bool trainable) {
  tensor(slot).trainable = trainable;
}

void ToyModelParams::freeze_all_except(const std::vector<TensorSlot>& keep) {
  for (auto& t : tensors) t.trainable = false;
  for (TensorSlot s : keep) set_trainable(s, true);
}

std::size_t ToyModelParams::trainable_scalars() const {
  std::size_t n = 0;
  for (const auto& t : tensors) {
    if (t.trainable) n += static_cast<std::size_t>(t.value.size());
  }
  return n;
}

CmaaConfig ToyModelParams::cmaa_config() const {
  CmaaConfig cfg;
  cfg.d_text = config.d_model;
  cfg.d_vis = config.d_model;
  cfg.use_scaling = false;
  cfg.use_projections = config.use_cmaa_projections;
  cfg.d_model = config.d_model;
  return cfg;
}

void TrainSchedule::validate() const {
  if (total_steps < 1) throw ConfigError("schedule: total_steps must be >= 1");
  if (warmup_steps < 0 || warmup_steps > total_steps) {
    throw ConfigError("schedule: warmup_steps must lie in [0, total_steps]");
  }
  if (!(peak_lr > floor_lr) || floor_lr < 0) {
    throw ConfigError("schedule: need peak_lr > floor_lr >= 0");
  }
  if (batch_size < 1) throw ConfigError("schedule: batch_size must be >= 1");
}

double lr_at(const TrainSchedule& sched, long step) {
  // Linear warmup floor -> peak over [0, warmup), cosine decay peak -> floor
  // over [warmup, total-1]; all three endpoints land exactly.
  const double span = sched.peak_lr - sched.floor_lr;
  if (step < sched.warmup_steps) {
    return sched.floor_lr +
           span * static_cast<double>(step) / static_cast<double>(sched.warmup_steps);
  }
  const long denom = sched.total_steps - 1 - sched.warmup_steps;
  if (denom <= 0 || step >= sched.total_steps - 1) return sched.floor_lr;
  const double t =
      static_cast<double>(step - sched.warmup_steps) / static_cast<double>(denom);
  return sched.floor_lr + span * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

std::string strip_image_sentinel(const std::string& prompt) {
  constexpr std::string_view kSentinel = "<Image>";
  if (prompt.rfind(kSentinel, 0) == 0) {
    return prompt.substr(kSentinel.size());
  }
  return prompt;
}

Matrix2D encode_image(const ImageGrid& img, const ToyModelParams& params) {
  if (params.config.linear_only) {
    throw PreconditionError("toymodel: linear-only architecture has no visual path");
  }
  img.validate();
  constexpr int ps = ToyModelConfig::kPatchSize;
  if (img.height % ps != 0 || img.width % ps != 0) {
    throw ShapeError("encode_image: grid " + std::to_string(img.height) + "x" +
                     std::to_string(img.width) + " not divisible by patch size " +
                     std::to_string(ps));
  }
  const int prows = img.height / ps;
  const int pcols = img.width / ps;
  Matrix2D flat(prows * pcols, ToyModelConfig::kPatchDim);
  for (int pr = 0; pr < prows; ++pr) {
    for (int pc = 0; pc < pcols; ++pc) {
      const int row = pr * pcols + pc;
      for (int r = 0; r < ps; ++r) {
        for (int c = 0; c < ps; ++c) {
          flat(row, r * ps + c) = img.at(pr * ps + r, pc * ps + c);
        }
      }
    }
  }
  return matmul(flat, params.at(TensorSlot::PatchEmbed));
}

namespace {

double inv_sqrt(double x) { return 1.0 / std::sqrt(x); }

void check_ids(const std::vector<int>& ids, const Vocabulary& vocab, const char* what) {
  for (int id : ids) {
    if (id < 0 || id >= vocab.size()) {
      throw VocabError(std::string(what) + ": token id " + std::to_string(id) +
                       " outside vocabulary of size " + std::to_string(vocab.size()));
    }
  }
}

// All activations of one teacher-forced pass, kept for the backward pass.
struct Forward {
  std::vector<int> text_ids;  // <bos> [<img>] prompt continuation
  int prefix_len = 0;         // text tokens before the first continuation token
  int visual_rows = 0;
  Eigen::Index seq_len = 0;

  Matrix2D patch_flat;  // patches x 16
  Matrix2D patches;     // patches x d
  FusedRepresentation fused;
  Matrix2D e_text;  // text embeddings (no positions)
  Matrix2D x0;      // full sequence before positions
  Matrix2D x;       // + positions
  Matrix2D qm, km, vm, attn, av, x1, z, h, x2;
  Matrix2D logits;  // seq_len x vocab
};

Matrix2D embed_tokens(const std::vector<int>& ids, const Matrix2D& table) {
  Matrix2D out(static_cast<Eigen::Index>(ids.size()), table.cols());
  for (size_t i = 0; i < ids.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = table.row(ids[i]);
  }
  return out;
}

Forward run_forward(const std::optional<ImageGrid>& img, const std::vector<int>& prompt_ids,
                    const std::vector<int>& continuation_ids, const ToyModelParams& params) {
  const auto& cfg = params.config;
  const Vocabulary& vocab = params.vocab;
  check_ids(prompt_ids, vocab, "prompt");
  check_ids(continuation_ids, vocab, "continuation");

  Forward f;
  f.text_ids.push_back(vocab.bos_id());
  if (img.has_value()) f.text_ids.push_back(vocab.img_id());
  f.text_ids.insert(f.text_ids.end(), prompt_ids.begin(), prompt_ids.end());
  f.prefix_len = static_cast<int>(f.text_ids.size());
  f.text_ids.insert(f.text_ids.end(), continuation_ids.begin(), continuation_ids.end());

  f.e_text = embed_tokens(f.text_ids, params.at(TensorSlot::TokenEmbed));

  if (img.has_value()) {
    constexpr int ps = ToyModelConfig::kPatchSize;
    img->validate();
    if (img->height % ps != 0 || img->width % ps != 0) {
      throw ShapeError("toymodel: grid " + std::to_string(img->height) + "x" +
                       std::to_string(img->width) + " not divisible by patch size");
    }
    const int prows = img->height / ps;
    const int pcols = img->width / ps;
    f.patch_flat.resize(prows * pcols, ToyModelConfig::kPatchDim);
    for (int pr = 0; pr < prows; ++pr) {
      for (int pc = 0; pc < pcols; ++pc) {
        const int row = pr * pcols + pc;
        for (int r = 0; r < ps; ++r) {
          for (int c = 0; c < ps; ++c) {
            f.patch_flat(row, r * ps + c) = img->at(pr * ps + r, pc * ps + c);
          }
        }
      }
    }
    f.patches = matmul(f.patch_flat, params.at(TensorSlot::PatchEmbed));

    std::optional<CmaaWeights> weights;
    if (cfg.use_cmaa_projections) {
      weights = CmaaWeights{params.at(TensorSlot::CmaaQuery), params.at(TensorSlot::CmaaKey),
                            params.at(TensorSlot::CmaaValue)};
    }
    const Matrix2D prefix_embeds = f.e_text.topRows(f.prefix_len);
    f.fused = cmaa_fuse(prefix_embeds, f.patches, params.cmaa_config(), weights);
    f.visual_rows = static_cast<int>(2 * f.patches.rows());
    f.x0 = concat_rows(cmaa_augment(f.patches, f.fused), f.e_text);
  } else {
    f.x0 = f.e_text;
  }

  f.seq_len = f.x0.rows();
  if (f.seq_len > cfg.max_seq_len) {
    throw PreconditionError("toymodel: sequence length " + std::to_string(f.seq_len) +
                            " exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
  }
  f.x = f.x0 + params.at(TensorSlot::PosEmbed).topRows(f.seq_len);

  if (cfg.linear_only) {
    f.logits = matmul(f.x, params.at(TensorSlot::Head));
    return f;
  }

  f.qm = matmul(f.x, params.at(TensorSlot::AttnQuery));
  f.km = matmul(f.x, params.at(TensorSlot::AttnKey));
  f.vm = matmul(f.x, params.at(TensorSlot::AttnValue));

  Matrix2D scores = f.qm * f.km.transpose() * inv_sqrt(static_cast<double>(cfg.d_model));
  for (Eigen::Index i = 0; i < f.seq_len; ++i) {
    for (Eigen::Index j = i + 1; j < f.seq_len; ++j) {
      scores(i, j) = -std::numeric_limits<double>::infinity();
    }
  }
  f.attn = softmax_rows(scores);
  f.av = matmul(f.attn, f.vm);
  f.x1 = f.x + matmul(f.av, params.at(TensorSlot::AttnOut));

  f.z = matmul(f.x1, params.at(TensorSlot::FfIn));
  f.h = f.z.cwiseMax(0.0);
  f.x2 = f.x1 + matmul(f.h, params.at(TensorSlot::FfOut));

  f.logits = matmul(f.x2, params.at(TensorSlot::Head));
  return f;
}

double row_logsumexp(const Matrix2D& logits, Eigen::Index row) {
  const double m = logits.row(row).maxCoeff();
  return m + std::log((logits.row(row).array() - m).exp().sum());
}

// Target list: (logit row, token id) pairs; row predicts token.
std::vector<std::pair<Eigen::Index, int>> target_rows(const Forward& f, size_t n_cont) {
  std::vector<std::pair<Eigen::Index, int>> targets;
  const Eigen::Index first = f.visual_rows + f.prefix_len;
  for (size_t j = 0; j < n_cont; ++j) {
    const Eigen::Index pos = first + static_cast<Eigen::Index>(j);
    targets.emplace_back(pos - 1, f.text_ids[static_cast<size_t>(f.prefix_len) + j]);
  }
  return targets;
}

using GradSet = std::vector<Matrix2D>;

GradSet zero_grads(const ToyModelParams& params) {
  GradSet g;
  g.reserve(params.tensors.size());
  for (const auto& t : params.tensors) {
    g.push_back(Matrix2D::Zero(t.value.rows(), t.value.cols()));
  }
  return g;
}

Eigen::Index grad_index(const ToyModelParams& params, TensorSlot slot) {
  const std::string name = slot_name(slot);
  for (size_t i = 0; i < params.tensors.size(); ++i) {
    if (params.tensors[i].name == name) return static_cast<Eigen::Index>(i);
  }
  throw ConfigError("toymodel: tensor '" + name + "' not present");
}

// Accumulates d(loss)/d(tensor) for one example into grads. inv_total is
// the 1/(total target tokens) factor of the batch mean.
void run_backward(const Forward& f, const std::vector<std::pair<Eigen::Index, int>>& targets,
                  double inv_total, const ToyModelParams& params, GradSet& grads) {
  const auto& cfg = params.config;
  auto gref = [&](TensorSlot slot) -> Matrix2D& { return grads[grad_index(params, slot)]; };

  Matrix2D d_logits = Matrix2D::Zero(f.seq_len, params.vocab.size());
  for (const auto& [row, token] : targets) {
    const double lse = row_logsumexp(f.logits, row);
    Eigen::RowVectorXd probs = (f.logits.row(row).array() - lse).exp();
    d_logits.row(row) += probs * inv_total;
    d_logits(row, token) -= inv_total;
  }

  if (cfg.linear_only) {
    gref(TensorSlot::Head) += f.x.transpose() * d_logits;
    Matrix2D d_x = d_logits * params.at(TensorSlot::Head).transpose();
    gref(TensorSlot::PosEmbed).topRows(f.seq_len) += d_x;
    for (Eigen::Index t = 0; t < f.seq_len; ++t) {
      gref(TensorSlot::TokenEmbed).row(f.text_ids[static_cast<size_t>(t)]) += d_x.row(t);
    }
    return;
  }

  gref(TensorSlot::Head) += f.x2.transpose() * d_logits;
  Matrix2D d_x2 = d_logits * params.at(TensorSlot::Head).transpose();

  // Feed-forward with residual.
  Matrix2D d_x1 = d_x2;
  gref(TensorSlot::FfOut) += f.h.transpose() * d_x2;
  Matrix2D d_h = d_x2 * params.at(TensorSlot::FfOut).transpose();
  Matrix2D d_z = (f.z.array() > 0.0).select(d_h, 0.0);
  gref(TensorSlot::FfIn) += f.x1.transpose() * d_z;
  d_x1 += d_z * params.at(TensorSlot::FfIn).transpose();

  // Attention with residual.
  Matrix2D d_x = d_x1;
  Matrix2D d_ao = d_x1;
  gref(TensorSlot::AttnOut) += f.av.transpose() * d_ao;
  Matrix2D d_av = d_ao * params.at(TensorSlot::AttnOut).transpose();
  Matrix2D d_attn = d_av * f.vm.transpose();
  Matrix2D d_vm = f.attn.transpose() * d_av;

  Matrix2D d_scores(f.seq_len, f.seq_len);
  for (Eigen::Index i = 0; i < f.seq_len; ++i) {
    const double dot = d_attn.row(i).dot(f.attn.row(i));
    d_scores.row(i) = f.attn.row(i).cwiseProduct(
        d_attn.row(i) - Eigen::RowVectorXd::Constant(f.seq_len, dot));
  }
  d_scores *= inv_sqrt(static_cast<double>(cfg.d_model));
  Matrix2D d_qm = d_scores * f.km;
  Matrix2D d_km = d_scores.transpose() * f.qm;

  gref(TensorSlot::AttnQuery) += f.x.transpose() * d_qm;
  gref(TensorSlot::AttnKey) += f.x.transpose() * d_km;
  gref(TensorSlot::AttnValue) += f.x.transpose() * d_vm;
  d_x += d_qm * params.at(TensorSlot::AttnQuery).transpose() +
         d_km * params.at(TensorSlot::AttnKey).transpose() +
         d_vm * params.at(TensorSlot::AttnValue).transpose();

  gref(TensorSlot::PosEmbed).topRows(f.seq_len) += d_x;

  Matrix2D d_e_text;
  if (f.visual_rows > 0) {
    const Eigen::Index p = f.patches.rows();
    Matrix2D d_patches = d_x.topRows(p);
    const Matrix2D d_u_mm = d_x.middleRows(p, p);
    d_e_text = d_x.bottomRows(f.e_text.rows());

    std::optional<CmaaWeights> weights;
    if (cfg.use_cmaa_projections) {
      weights = CmaaWeights{params.at(TensorSlot::CmaaQuery), params.at(TensorSlot::CmaaKey),
                            params.at(TensorSlot::CmaaValue)};
    }
    const Matrix2D prefix_embeds = f.e_text.topRows(f.prefix_len);
    CmaaGradients cg = cmaa_fuse_backward(prefix_embeds, f.patches, params.cmaa_config(),
                                          weights, f.fused, d_u_mm);
    d_patches += cg.d_emb_vis;
    d_e_text.topRows(f.prefix_len) += cg.d_emb_text;
    if (cg.d_weights) {
      gref(TensorSlot::CmaaQuery) += cg.d_weights->query;
      gref(TensorSlot::CmaaKey) += cg.d_weights->key;
      gref(TensorSlot::CmaaValue) += cg.d_weights->value;
    }
    gref(TensorSlot::PatchEmbed) += f.patch_flat.transpose() * d_patches;
  } else {
    d_e_text = d_x;
  }

  for (Eigen::Index t = 0; t < d_e_text.rows(); ++t) {
    gref(TensorSlot::TokenEmbed).row(f.text_ids[static_cast<size_t>(t)]) += d_e_text.row(t);
  }
}

struct ExampleTokens {
  std::vector<int> prompt_ids;
  std::vector<int> target_ids;  // encoded target text + <eos>
};

ExampleTokens tokenize_example(const TrainExample& ex, const Vocabulary& vocab) {
  ExampleTokens t;
  t.prompt_ids = vocab.encode(strip_image_sentinel(ex.prompt));
  t.target_ids = vocab.encode(ex.target);
  t.target_ids.push_back(vocab.eos_id());
  return t;
}

double example_nll_sum(const Forward& f, size_t n_cont) {
  double sum = 0.0;
  for (const auto& [row, token] : target_rows(f, n_cont)) {
    sum -= f.logits(row, token) - row_logsumexp(f.logits, row);
  }
  return sum;
}

}  // namespace

std::vector<double> forward_logprobs(const std::optional<ImageGrid>& img,
                                     const std::vector<int>& prompt_ids,
                                     const std::vector<int>& continuation_ids,
                                     const ToyModelParams& params) {
  if (continuation_ids.empty()) {
    throw PreconditionError("forward_logprobs: continuation must be nonempty");
  }
  const Forward f = run_forward(img, prompt_ids, continuation_ids, params);
  std::vector<double> out;
  out.reserve(continuation_ids.size());
  for (const auto& [row, token] : target_rows(f, continuation_ids.size())) {
    out.push_back(f.logits(row, token) - row_logsumexp(f.logits, row));
  }
  return out;
}

Eigen::RowVectorXd next_token_logits(const std::optional<ImageGrid>& img,
                                     const std::vector<int>& prompt_ids,
                                     const std::vector<int>& generated,
                                     const ToyModelParams& params) {
  const Forward f = run_forward(img, prompt_ids, generated, params);
  return f.logits.row(f.seq_len - 1);
}

std::vector<int> generate_greedy(const std::optional<ImageGrid>& img,
                                 const std::vector<int>& prompt_ids, int max_len,
                                 const ToyModelParams& params) {
  if (max_len < 1) {
    throw PreconditionError("generate: max_len must be >= 1");
  }
  std::vector<int> out;
  for (int step = 0; step < max_len; ++step) {
    const Eigen::RowVectorXd logits = next_token_logits(img, prompt_ids, out, params);
    int best = 0;
    for (int v = 1; v < params.vocab.size(); ++v) {
      if (logits(v) > logits(best)) best = v;
    }
    if (best == params.vocab.eos_id()) break;
    out.push_back(best);
  }
  return out;
}

double example_loss(const TrainExample& ex, const ToyModelParams& params) {
  const ExampleTokens toks = tokenize_example(ex, params.vocab);
  const Forward f = run_forward(ex.image, toks.prompt_ids, toks.target_ids, params);
  return example_nll_sum(f, toks.target_ids.size()) /
         static_cast<double>(toks.target_ids.size());
}

double batch_loss(const std::vector<TrainExample>& batch, const ToyModelParams& params) {
  if (batch.empty()) throw PreconditionError("batch_loss: empty batch");
  double sum = 0.0;
  size_t total = 0;
  for (const auto& ex : batch) {
    const ExampleTokens toks = tokenize_example(ex, params.vocab);
    const Forward f = run_forward(ex.image, toks.prompt_ids, toks.target_ids, params);
    sum += example_nll_sum(f, toks.target_ids.size());
    total += toks.target_ids.size();
  }
  return sum / static_cast<double>(total);
}

TrainResult train(const std::vector<TrainExample>& dataset, ToyModelParams params,
                  const TrainSchedule& sched) {
  sched.validate();
  if (dataset.empty()) {
    throw PreconditionError("train: dataset must be nonempty");
  }
  if (params.trainable_scalars() == 0) {
    throw ConfigError("train: all tensors are frozen");
  }

  constexpr double kBeta1 = 0.9;
  constexpr double kBeta2 = 0.999;
  constexpr double kEps = 1e-8;
  constexpr double kWeightDecay = 0.05;

  GradSet m = zero_grads(params);
  GradSet v = zero_grads(params);
  std::mt19937_64 rng(sched.seed);
  const size_t n = dataset.size();
  const size_t batch_n = std::min<size_t>(static_cast<size_t>(sched.batch_size), n);

  TrainResult result;
  result.trace.reserve(static_cast<size_t>(sched.total_steps));

  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;

  for (long step = 0; step < sched.total_steps; ++step) {
    const double lr = lr_at(sched, step);

    // Deterministic partial Fisher-Yates; full batch when batch_size >= n.
    std::vector<size_t> batch_idx;
    if (batch_n == n) {
      batch_idx = order;
    } else {
      std::vector<size_t> pool = order;
      for (size_t i = 0; i < batch_n; ++i) {
        const size_t j = i + static_cast<size_t>(rng() % (pool.size() - i));
        std::swap(pool[i], pool[j]);
        batch_idx.push_back(pool[i]);
      }
    }

    double loss;
    GradSet grads = zero_grads(params);
    try {
      size_t total_targets = 0;
      std::vector<Forward> passes;
      std::vector<size_t> cont_lens;
      passes.reserve(batch_idx.size());
      for (size_t idx : batch_idx) {
        const ExampleTokens toks = tokenize_example(dataset[idx], params.vocab);
        passes.push_back(
            run_forward(dataset[idx].image, toks.prompt_ids, toks.target_ids, params));
        cont_lens.push_back(toks.target_ids.size());
        total_targets += toks.target_ids.size();
      }
      double nll_sum = 0.0;
      const double inv_total = 1.0 / static_cast<double>(total_targets);
      for (size_t i = 0; i < passes.size(); ++i) {
        nll_sum += example_nll_sum(passes[i], cont_lens[i]);
        run_backward(passes[i], target_rows(passes[i], cont_lens[i]), inv_total, params,
                     grads);
      }
      loss = nll_sum / static_cast<double>(total_targets);
    } catch (const NumericError& e) {
      throw DivergenceError(
          "train: non-finite values at step " + std::to_string(step) + " (" + e.what() + ")",
          step);
    }
    if (!std::isfinite(loss)) {
      throw DivergenceError("train: non-finite loss at step " + std::to_string(step), step);
    }

    const double t = static_cast<double>(step + 1);
    const double bc1 = 1.0 - std::pow(kBeta1, t);
    const double bc2 = 1.0 - std::pow(kBeta2, t);
    for (size_t i = 0; i < params.tensors.size(); ++i) {
      if (!params.tensors[i].trainable) continue;
      auto& w = params.tensors[i].value;
      m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * grads[i];
      v[i] = (kBeta2 * v[i].array() + (1.0 - kBeta2) * grads[i].array().square()).matrix();
      const auto m_hat = m[i].array() / bc1;
      const auto v_hat = v[i].array() / bc2;
      w.array() -= lr * (m_hat / (v_hat.sqrt() + kEps) + kWeightDecay * w.array());
    }

    result.trace.push_back({step, lr, loss});
  }

  result.params = std::move(params);
  return result;
}

double grad_check(const ToyModelParams& params, const std::vector<TrainExample>& probe) {
  if (probe.empty()) throw PreconditionError("grad_check: empty probe");
  constexpr std::size_t kMaxScalars = 5000;
  if (params.trainable_scalars() > kMaxScalars) {
    throw PreconditionError("grad_check: " + std::to_string(params.trainable_scalars()) +
                            " trainable scalars exceed the finite-difference budget of " +
                            std::to_string(kMaxScalars));
  }

  // Analytic gradients of batch_loss over the probe.
  GradSet grads = zero_grads(params);
  size_t total_targets = 0;
  std::vector<Forward> passes;
  std::vector<size_t> cont_lens;
  for (const auto& ex : probe) {
    const ExampleTokens toks = tokenize_example(ex, params.vocab);
    passes.push_back(run_forward(ex.image, toks.prompt_ids, toks.target_ids, params));
    cont_lens.push_back(toks.target_ids.size());
    total_targets += toks.target_ids.size();
  }
  const double inv_total = 1.0 / static_cast<double>(total_targets);
  for (size_t i = 0; i < passes.size(); ++i) {
    run_backward(passes[i], target_rows(passes[i], cont_lens[i]), inv_total, params, grads);
  }

  constexpr double kStep = 1e-5;
  double max_rel_err = 0.0;
  ToyModelParams work = params;
  for (size_t i = 0; i < work.tensors.size(); ++i) {
    if (!work.tensors[i].trainable) continue;
    auto& w = work.tensors[i].value;
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) {
        const double saved = w(r, c);
        w(r, c) = saved + kStep;
        const double plus = batch_loss(probe, work);
        w(r, c) = saved - kStep;
        const double minus = batch_loss(probe, work);
        w(r, c) = saved;
        const double numeric = (plus - minus) / (2.0 * kStep);
        const double analytic = grads[i](r, c);
        const double rel = std::abs(analytic - numeric) /
                           std::max({std::abs(analytic), std::abs(numeric), 1e-8});
        max_rel_err = std::max(max_rel_err, rel);
      }
    }
  }
  return max_rel_err;
}

void write_loss_trace(const std::string& path, const std::vector<TraceEntry>& trace) {
  std::ofstream out(path);
  if (!out) {
    throw LoadError("loss trace: cannot open '" + path + "' for writing");
  }
  char buf[128];
  for (const auto& e : trace) {
    std::snprintf(buf, sizeof(buf), "%ld\t%.17g\t%.17g\n", e.step, e.lr, e.loss);
    out << buf;
  }
}

}  // namespace lingopt
