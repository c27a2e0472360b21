#include "lingopt/tensor.hpp"

#include <cmath>
#include <limits>

namespace lingopt {

std::string shape_str(const MatrixRef& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

void ensure_finite(const MatrixRef& m, std::string_view what) {
  if (!m.allFinite()) {
    throw NumericError(std::string(what) + ": non-finite entries in " + shape_str(m) +
                       " matrix");
  }
}

Matrix2D matmul(const MatrixRef& a, const MatrixRef& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a) + " * " + shape_str(b));
  }
  Matrix2D out = a * b;
  ensure_finite(out, "matmul");
  return out;
}

Matrix2D softmax_rows(const MatrixRef& m) {
  if (m.rows() == 0 || m.cols() == 0) {
    throw PreconditionError("softmax_rows: empty input " + shape_str(m));
  }
  Matrix2D out(m.rows(), m.cols());
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double row_max = m.row(i).maxCoeff();
    if (!(row_max > -std::numeric_limits<double>::infinity())) {
      throw NumericError("softmax_rows: row " + std::to_string(i) + " has no finite logit");
    }
    Eigen::ArrayXd e = (m.row(i).array() - row_max).exp();
    out.row(i) = (e / e.sum()).matrix();
  }
  ensure_finite(out, "softmax_rows");
  return out;
}

Matrix2D concat_rows(const MatrixRef& a, const MatrixRef& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("concat_rows: column mismatch " + shape_str(a) + " vs " + shape_str(b));
  }
  Matrix2D out(a.rows() + b.rows(), a.cols());
  out.topRows(a.rows()) = a;
  out.bottomRows(b.rows()) = b;
  return out;
}

}  // namespace lingopt
