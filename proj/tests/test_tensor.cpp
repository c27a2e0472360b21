#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "lingopt/tensor.hpp"

using namespace lingopt;

namespace {

Matrix2D make(std::initializer_list<std::initializer_list<double>> rows) {
  const auto r = static_cast<Eigen::Index>(rows.size());
  const auto c = static_cast<Eigen::Index>(rows.begin()->size());
  Matrix2D m(r, c);
  Eigen::Index i = 0;
  for (const auto& row : rows) {
    Eigen::Index j = 0;
    for (double v : row) m(i, j++) = v;
    ++i;
  }
  return m;
}

}  // namespace

TEST_CASE("matmul: identity leaves the operand unchanged") {
  const Matrix2D m = make({{1, 2, 3}, {4, 5, 6}, {7, 8, 9}});
  const Matrix2D id = Matrix2D::Identity(3, 3);
  CHECK(matmul(id, m) == m);
  CHECK(matmul(m, id) == m);

  const Matrix2D a = make({{1, 2}, {3, 4}});
  CHECK(matmul(a, Matrix2D::Identity(2, 2)) == a);
}

TEST_CASE("matmul: hand-computed product") {
  const Matrix2D a = make({{1, 2}, {3, 4}});
  const Matrix2D b = make({{5}, {6}});
  const Matrix2D p = matmul(a, b);
  REQUIRE(p.rows() == 2);
  REQUIRE(p.cols() == 1);
  CHECK(p(0, 0) == 17.0);
  CHECK(p(1, 0) == 39.0);
}

TEST_CASE("matmul: dimension mismatch names both shapes") {
  const Matrix2D a = Matrix2D::Zero(2, 3);
  const Matrix2D b = Matrix2D::Zero(2, 3);
  try {
    matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("2x3") != std::string::npos);
  }
}

TEST_CASE("softmax_rows: uniform logits give uniform weights") {
  const Matrix2D s = softmax_rows(make({{0, 0, 0}}));
  CHECK(s(0, 0) == doctest::Approx(1.0 / 3).epsilon(1e-15));
  CHECK(s(0, 1) == doctest::Approx(1.0 / 3).epsilon(1e-15));
  CHECK(s(0, 2) == doctest::Approx(1.0 / 3).epsilon(1e-15));
}

TEST_CASE("softmax_rows: stable under large equal logits") {
  const Matrix2D s = softmax_rows(make({{1000, 1000}}));
  CHECK(s(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(s(0, 1) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("softmax_rows: closed-form two-logit case") {
  const Matrix2D s = softmax_rows(make({{0.0, std::log(3.0)}}));
  CHECK(s(0, 0) == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(s(0, 1) == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("softmax_rows: rows sum to one across random inputs") {
  for (unsigned seed = 0; seed < 100; ++seed) {
    std::mt19937_64 g(seed);
    std::uniform_real_distribution<double> u(-30.0, 30.0);
    Matrix2D m(5, 7);
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = u(g);
    const Matrix2D s = softmax_rows(m);
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
      CHECK(std::abs(s.row(i).sum() - 1.0) < 1e-12);
      CHECK(s.row(i).minCoeff() >= 0.0);
    }
  }
}

TEST_CASE("softmax_rows: invariant to per-row constant shifts") {
  std::mt19937_64 g(42);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  Matrix2D m(4, 6);
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = u(g);
  Matrix2D shifted = m;
  for (Eigen::Index i = 0; i < m.rows(); ++i) shifted.row(i).array() += 3.75 * (double)(i + 1);
  const Matrix2D a = softmax_rows(m);
  const Matrix2D b = softmax_rows(shifted);
  CHECK(((a - b).cwiseAbs().maxCoeff()) < 1e-12);
}

TEST_CASE("concat_rows: block order preserved") {
  const Matrix2D a = Matrix2D::Constant(2, 4, 1.0);
  const Matrix2D b = Matrix2D::Constant(3, 4, 2.0);
  const Matrix2D c = concat_rows(a, b);
  REQUIRE(c.rows() == 5);
  REQUIRE(c.cols() == 4);
  CHECK(c.topRows(2) == a);
  CHECK(c.bottomRows(3) == b);
}

TEST_CASE("concat_rows: empty top block is the identity") {
  const Matrix2D empty(0, 4);
  const Matrix2D b = make({{1, 2, 3, 4}, {5, 6, 7, 8}, {9, 10, 11, 12}});
  CHECK(concat_rows(empty, b) == b);
}

TEST_CASE("concat_rows: enumeration case") {
  const Matrix2D c = concat_rows(make({{1, 2}}), make({{3, 4}}));
  CHECK(c == make({{1, 2}, {3, 4}}));
}

TEST_CASE("concat_rows: column mismatch is a shape error") {
  CHECK_THROWS_AS(concat_rows(Matrix2D::Zero(1, 2), Matrix2D::Zero(1, 3)), ShapeError);
}

TEST_CASE("concat_rows: slicing recovers both blocks bit-exactly") {
  std::mt19937_64 g(7);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Matrix2D a(3, 5), b(2, 5);
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) a(i, j) = u(g);
  for (Eigen::Index i = 0; i < b.rows(); ++i)
    for (Eigen::Index j = 0; j < b.cols(); ++j) b(i, j) = u(g);
  const Matrix2D c = concat_rows(a, b);
  CHECK(c.topRows(3) == a);
  CHECK(c.bottomRows(2) == b);
}

TEST_CASE("ensure_finite rejects NaN and infinity") {
  Matrix2D m = Matrix2D::Zero(2, 2);
  CHECK_NOTHROW(ensure_finite(m, "m"));
  m(1, 1) = std::nan("");
  CHECK_THROWS_AS(ensure_finite(m, "m"), NumericError);
  m(1, 1) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(ensure_finite(m, "m"), NumericError);
}
