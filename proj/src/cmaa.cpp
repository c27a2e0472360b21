#include "lingopt/cmaa.hpp"

#include <cmath>

namespace lingopt {

void CmaaConfig::validate() const {
  if (d_text <= 0 || d_vis <= 0) {
    throw ConfigError("cmaa: embedding widths must be positive, got d_text=" +
                      std::to_string(d_text) + " d_vis=" + std::to_string(d_vis));
  }
  if (!use_projections && d_text != d_vis) {
    throw ShapeError("cmaa: d_text " + std::to_string(d_text) + " != d_vis " +
                     std::to_string(d_vis) + " requires projections");
  }
  if (use_projections && d_model <= 0) {
    throw ConfigError("cmaa: d_model must be positive when projections are enabled");
  }
}

namespace {

void check_inputs(const MatrixRef& emb_text, const MatrixRef& emb_vis, const CmaaConfig& cfg,
                  const std::optional<CmaaWeights>& weights) {
  cfg.validate();
  if (emb_text.rows() == 0) {
    throw PreconditionError("cmaa_fuse: text embedding has no rows");
  }
  if (emb_vis.rows() == 0) {
    throw PreconditionError("cmaa_fuse: visual embedding has no rows");
  }
  if (emb_text.cols() != cfg.d_text) {
    throw ShapeError("cmaa_fuse: emb_text is " + shape_str(emb_text) + ", expected width " +
                     std::to_string(cfg.d_text));
  }
  if (emb_vis.cols() != cfg.d_vis) {
    throw ShapeError("cmaa_fuse: emb_vis is " + shape_str(emb_vis) + ", expected width " +
                     std::to_string(cfg.d_vis));
  }
  if (cfg.use_projections) {
    if (!weights) {
      throw ConfigError("cmaa_fuse: projections enabled but no weights supplied");
    }
    if (weights->query.rows() != cfg.d_vis || weights->query.cols() != cfg.d_model ||
        weights->key.rows() != cfg.d_text || weights->key.cols() != cfg.d_model ||
        weights->value.rows() != cfg.d_text || weights->value.cols() != cfg.d_model) {
      throw ShapeError("cmaa_fuse: projection weight shapes " + shape_str(weights->query) +
                       "/" + shape_str(weights->key) + "/" + shape_str(weights->value) +
                       " do not match config");
    }
  }
}

double logit_scale(const CmaaConfig& cfg) {
  const Eigen::Index d = cfg.use_projections ? cfg.d_model : cfg.d_text;
  return 1.0 / std::sqrt(static_cast<double>(d));
}

}  // namespace

FusedRepresentation cmaa_fuse(const MatrixRef& emb_text, const MatrixRef& emb_vis,
                              const CmaaConfig& cfg,
                              const std::optional<CmaaWeights>& weights) {
  check_inputs(emb_text, emb_vis, cfg, weights);

  Matrix2D q = cfg.use_projections ? matmul(emb_vis, weights->query) : Matrix2D(emb_vis);
  Matrix2D k = cfg.use_projections ? matmul(emb_text, weights->key) : Matrix2D(emb_text);
  Matrix2D v = cfg.use_projections ? matmul(emb_text, weights->value) : Matrix2D(emb_text);

  Matrix2D logits = matmul(q, k.transpose());
  if (cfg.use_scaling) {
    logits *= logit_scale(cfg);
  }

  FusedRepresentation fused;
  fused.attention = softmax_rows(logits);
  fused.u_mm = matmul(fused.attention, v);
  return fused;
}

Matrix2D cmaa_augment(const MatrixRef& query_out, const FusedRepresentation& fused) {
  if (query_out.cols() != fused.u_mm.cols()) {
    throw ShapeError("cmaa_augment: width mismatch " + shape_str(query_out) + " vs u_mm " +
                     shape_str(fused.u_mm));
  }
  return concat_rows(query_out, fused.u_mm);
}

CmaaGradients cmaa_fuse_backward(const MatrixRef& emb_text, const MatrixRef& emb_vis,
                                 const CmaaConfig& cfg,
                                 const std::optional<CmaaWeights>& weights,
                                 const FusedRepresentation& fused, const MatrixRef& d_u_mm) {
  check_inputs(emb_text, emb_vis, cfg, weights);

  const Matrix2D q = cfg.use_projections ? matmul(emb_vis, weights->query) : Matrix2D(emb_vis);
  const Matrix2D k = cfg.use_projections ? matmul(emb_text, weights->key) : Matrix2D(emb_text);
  const Matrix2D v =
      cfg.use_projections ? matmul(emb_text, weights->value) : Matrix2D(emb_text);
  const Matrix2D& attn = fused.attention;

  // u_mm = attn * v
  Matrix2D d_v = attn.transpose() * d_u_mm;
  Matrix2D d_attn = d_u_mm * v.transpose();

  // Softmax backward, row by row: ds = a .* (da - (da . a))
  Matrix2D d_logits(attn.rows(), attn.cols());
  for (Eigen::Index i = 0; i < attn.rows(); ++i) {
    const double dot = d_attn.row(i).dot(attn.row(i));
    d_logits.row(i) = attn.row(i).cwiseProduct(d_attn.row(i).array().matrix() -
                                               Eigen::RowVectorXd::Constant(attn.cols(), dot));
  }
  if (cfg.use_scaling) {
    d_logits *= logit_scale(cfg);
  }

  Matrix2D d_q = d_logits * k;
  Matrix2D d_k = d_logits.transpose() * q;

  CmaaGradients grads;
  if (cfg.use_projections) {
    CmaaWeights dw;
    dw.query = emb_vis.transpose() * d_q;
    dw.key = emb_text.transpose() * d_k;
    dw.value = emb_text.transpose() * d_v;
    grads.d_emb_vis = d_q * weights->query.transpose();
    grads.d_emb_text =
        d_k * weights->key.transpose() + d_v * weights->value.transpose();
    grads.d_weights = std::move(dw);
  } else {
    grads.d_emb_vis = std::move(d_q);
    grads.d_emb_text = d_k + d_v;
  }
  return grads;
}

}  // namespace lingopt
