#pragma once

#include <optional>

#include "lingopt/tensor.hpp"

namespace lingopt {

/// Dimensional context for cross-modal alignment attention. With
/// use_projections disabled the raw embeddings are used directly, which
/// requires equal text/visual widths; with it enabled, learned Q/K/V maps
/// take both sides to a common width d_model.
struct CmaaConfig {
  Eigen::Index d_text = 0;
  Eigen::Index d_vis = 0;
  bool use_scaling = false;      // divide attention logits by sqrt(d)
  bool use_projections = false;  // learned Q/K/V maps to d_model
  Eigen::Index d_model = 0;

  void validate() const;
};

/// Learned projection weights; the trainable surface of this module.
/// Shapes: query (d_vis x d_model), key/value (d_text x d_model).
struct CmaaWeights {
  Matrix2D query;
  Matrix2D key;
  Matrix2D value;
};

/// Output of cmaa_fuse: one fused row per visual query, plus the
/// row-stochastic attention map (queries x text tokens).
struct FusedRepresentation {
  Matrix2D u_mm;
  Matrix2D attention;
};

/// Cross-attention where visual-query rows attend over text-token rows:
/// attention = softmax_rows(Q K^T [/ sqrt(d)]), u_mm = attention V, with
/// Q from emb_vis and K = V = emb_text (optionally projected).
FusedRepresentation cmaa_fuse(const MatrixRef& emb_text, const MatrixRef& emb_vis,
                              const CmaaConfig& cfg,
                              const std::optional<CmaaWeights>& weights = std::nullopt);

/// Row-concatenates the fused representation onto the visual-query outputs,
/// producing the sequence handed to the language model.
Matrix2D cmaa_augment(const MatrixRef& query_out, const FusedRepresentation& fused);

/// Gradients of a scalar loss with respect to cmaa_fuse inputs, given the
/// upstream gradient d(loss)/d(u_mm).
struct CmaaGradients {
  Matrix2D d_emb_text;
  Matrix2D d_emb_vis;
  std::optional<CmaaWeights> d_weights;
};

CmaaGradients cmaa_fuse_backward(const MatrixRef& emb_text, const MatrixRef& emb_vis,
                                 const CmaaConfig& cfg,
                                 const std::optional<CmaaWeights>& weights,
                                 const FusedRepresentation& fused, const MatrixRef& d_u_mm);

}  // namespace lingopt
