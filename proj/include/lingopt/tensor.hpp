#pragma once

#include <Eigen/Dense>
#include <string>
#include <string_view>

#include "lingopt/errors.hpp"

namespace lingopt {

/// Dense row-major matrix of 64-bit floats. The universal carrier for
/// embeddings, weights and logits. Row-major layout is fixed so that
/// checkpoints serialize deterministically.
using Matrix2D = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using MatrixRef = Eigen::Ref<const Matrix2D>;

/// "RxC" shape string for error messages.
std::string shape_str(const MatrixRef& m);

/// Throws NumericError if any entry is NaN or infinite.
void ensure_finite(const MatrixRef& m, std::string_view what);

/// Matrix product. No broadcasting; a.cols() must equal b.rows().
Matrix2D matmul(const MatrixRef& a, const MatrixRef& b);

/// Row-wise softmax with per-row max subtraction. Rows of -inf logits get
/// zero weight; a row that is entirely -inf is a NumericError.
Matrix2D softmax_rows(const MatrixRef& m);

/// Stacks a on top of b; both must have the same column count.
Matrix2D concat_rows(const MatrixRef& a, const MatrixRef& b);

}  // namespace lingopt
